#include "dmba/cli.hpp"

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "dmba/bench.hpp"
#include "dmba/dataset.hpp"
#include "dmba/errors.hpp"

namespace dmba {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

enum class Level { kError = 0, kInfo = 1, kDebug = 2 };

class Log {
 public:
  explicit Log(std::ostream& err) : err_(err) {
    const char* env = std::getenv("DMBA_LOG");
    const std::string v = env ? env : "info";
    if (v == "error") level_ = Level::kError;
    else if (v == "debug") level_ = Level::kDebug;
    else if (v != "info") err_ << "warning: DMBA_LOG=" << v << " not one of error,info,debug; using info\n";
  }
  void info(const std::string& m) const { emit(Level::kInfo, m); }
  void debug(const std::string& m) const { emit(Level::kDebug, m); }

 private:
  void emit(Level l, const std::string& m) const {
    if (l <= level_) err_ << "[" << (l == Level::kInfo ? "info" : "debug") << "] " << m << "\n";
  }
  std::ostream& err_;
  Level level_ = Level::kInfo;
};

std::string num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : "NA"; }

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

template <class T>
std::vector<T> parse_list(const std::string& text, const std::string& flag) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    T v{};
    const char* end = item.data() + item.size();
    const auto r = std::from_chars(item.data(), end, v);
    if (item.empty() || r.ec != std::errc() || r.ptr != end) {
      throw ValidationError(flag + ": cannot parse '" + item + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ValidationError(flag + " needs at least one value");
  return out;
}

json config_to_json(const TrainConfig& c) {
  return {{"depth", c.depth},     {"d_model", c.d_model},
          {"d_state", c.d_state}, {"alpha", c.alpha},
          {"beta", c.beta},       {"lr", c.lr},
          {"weight_decay", c.weight_decay}, {"epochs", c.epochs},
          {"patience", c.patience}, {"seed", c.seed},
          {"dropout", c.dropout}, {"untied_directions", c.untied_directions}};
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.depth = j.at("depth");
  c.d_model = j.at("d_model");
  c.d_state = j.at("d_state");
  c.alpha = j.at("alpha");
  c.beta = j.at("beta");
  c.lr = j.at("lr");
  c.weight_decay = j.at("weight_decay");
  c.epochs = j.at("epochs");
  c.patience = j.at("patience");
  c.seed = j.at("seed");
  c.dropout = j.at("dropout");
  c.untied_directions = j.value("untied_directions", false);
  return c;
}

struct Shared {
  std::string dataset;
  std::string out = ".";
  std::string config;
  std::string format;
  std::uint64_t seed = 0;
  bool overwrite = false;
  std::size_t jobs = 1;
  std::optional<std::uint64_t> split;
};

void add_shared(CLI::App* sub, Shared& s) {
  sub->add_option("--dataset", s.dataset, "dataset directory");
  sub->add_option("--out", s.out, "output directory")->capture_default_str();
  sub->add_option("--config", s.config, "JSON file whose keys are flag names");
  sub->add_option("--seed", s.seed, "random seed")->capture_default_str();
  sub->add_flag("--overwrite", s.overwrite, "replace existing outputs");
  sub->add_option("--jobs", s.jobs, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--format", s.format, "report format (train and eval default to json, tables to csv)")
      ->check(CLI::IsMember({"json", "csv"}));
  sub->add_option("--split", s.split, "split seed stored with the dataset");
}

void add_train_flags(CLI::App* sub, TrainConfig& c) {
  sub->add_option("--depth", c.depth, "propagation depth L")->capture_default_str();
  sub->add_option("--d-model", c.d_model)->capture_default_str();
  sub->add_option("--d-state", c.d_state)->capture_default_str();
  sub->add_option("--alpha", c.alpha, "fusion weight")->capture_default_str();
  sub->add_option("--beta", c.beta, "GCAMba residual weight")->capture_default_str();
  sub->add_option("--lr", c.lr)->capture_default_str();
  sub->add_option("--weight-decay", c.weight_decay)->capture_default_str();
  sub->add_option("--epochs", c.epochs)->capture_default_str();
  sub->add_option("--patience", c.patience)->capture_default_str();
  sub->add_option("--dropout", c.dropout)->capture_default_str();
  sub->add_flag("--untied", c.untied_directions, "separate weights for the reverse scan");
}

// Injects the keys of a --config JSON file as flags placed before the user's
// own arguments; with take-last parsing the command line wins.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty() || args.size() < 2) return args;
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError(path + ": " + e.what());
  }
  if (!j.is_object()) throw ValidationError(path + ": config must be a JSON object");
  std::vector<std::string> injected;
  for (const auto& [key, value] : j.items()) {
    const std::string flag = "--" + key;
    if (key == "config") continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) injected.push_back(flag);
    } else if (value.is_array()) {
      std::string joined;
      for (const json& v : value) {
        if (!joined.empty()) joined += ',';
        joined += v.is_string() ? v.get<std::string>() : v.dump();
      }
      injected.insert(injected.end(), {flag, joined});
    } else {
      injected.insert(injected.end(), {flag, value.is_string() ? value.get<std::string>() : value.dump()});
    }
  }
  args.insert(args.begin() + 2, injected.begin(), injected.end());
  return args;
}

fs::path output_path(const Shared& s, const std::string& name) {
  fs::path p = fs::path(s.out) / name;
  if (fs::exists(p) && !s.overwrite) {
    throw ValidationError(p.string() + " exists; pass --overwrite to replace it");
  }
  return p;
}

void write_output(const Shared& s, const std::string& name, const std::string& content, const Log& log) {
  const fs::path p = output_path(s, name);
  std::error_code ec;
  fs::create_directories(s.out, ec);
  if (ec) throw IoError("cannot create " + s.out + ": " + ec.message());
  write_file_atomic(p, content);
  log.info("wrote " + p.string());
}

Graph load(const Shared& s, const Log& log) {
  if (s.dataset.empty()) throw ValidationError("--dataset is required");
  Graph g = load_dataset(s.dataset);
  if (s.split) g.use_split(*s.split);
  if (g.masks.empty()) throw ValidationError(s.dataset + " has no splits; regenerate it or add splits.json");
  log.info("loaded " + g.name + ": " + std::to_string(g.n_nodes) + " nodes, " + std::to_string(g.n_edges()) +
           " edges");
  return g;
}

int cmd_train(const Shared& s, TrainConfig c, std::ostream& out, const Log& log) {
  const Graph g = load(s, log);
  c.seed = s.seed;
  // Fail on existing outputs before spending time on training.
  output_path(s, s.format == "json" ? "report.json" : "report.csv");
  for (const char* name : {"curves.csv", "model.json", "timing.json"}) output_path(s, name);
  DmbaModel model = make_model(g.n_features(), g.n_classes(), c);
  const RunReport r = train(model, g, c);

  if (s.format == "json") {
    write_output(s, "report.json", report_to_json(r), log);
  } else {
    std::string csv = "dataset,depth,alpha,beta,seed,best_epoch,best_val_acc,test_accuracy,oversmooth_model,"
                      "oversmooth_plain,peak_memory_bytes\n";
    csv += r.dataset + "," + std::to_string(c.depth) + "," + num(c.alpha) + "," + num(c.beta) + "," +
           std::to_string(c.seed) + "," + std::to_string(r.best_epoch) + "," + num(r.best_val_acc) + "," +
           num(r.test_accuracy) + "," + num(r.oversmooth_model) + "," + num(r.oversmooth_plain) + "," +
           std::to_string(r.peak_memory_bytes) + "\n";
    write_output(s, "report.csv", csv, log);
  }
  std::string curves = "epoch,train_loss,val_acc\n";
  for (const EpochRecord& e : r.epochs)
    curves += std::to_string(e.epoch) + "," + num(e.train_loss) + "," + num(e.val_acc) + "\n";
  write_output(s, "curves.csv", curves, log);
  write_output(s, "model.json", model_to_json(model, c, g.n_features(), g.n_classes()), log);
  write_output(s, "timing.json",
               json{{"wall_clock_ms", r.wall_clock_ms}, {"epochs_run", r.epochs.size()}}.dump(2) + "\n", log);
  out << "test_accuracy " << num(r.test_accuracy) << " (best epoch " << r.best_epoch << ", val "
      << num(r.best_val_acc) << ")\n";
  return kExitOk;
}

int cmd_eval(const Shared& s, const std::string& model_path, std::ostream& out, const Log& log) {
  const Graph g = load(s, log);
  TrainConfig c;
  DmbaModel model = model_from_json(read_file(model_path.empty() ? fs::path(s.out) / "model.json"
                                                                 : fs::path(model_path)),
                                    &c);
  if (model.lsemba.input_proj.value.rows() != g.n_features()) {
    throw ValidationError("model expects " + std::to_string(model.lsemba.input_proj.value.rows()) +
                          " features, dataset has " + std::to_string(g.n_features()));
  }
  json j{{"dataset", g.name},
         {"train_acc", evaluate(model, g, g.masks.train)},
         {"val_acc", evaluate(model, g, g.masks.val)},
         {"test_acc", evaluate(model, g, g.masks.test)}};
  if (s.format == "json") {
    write_output(s, "eval.json", j.dump(2) + "\n", log);
  } else {
    write_output(s, "eval.csv",
                 "dataset,train_acc,val_acc,test_acc\n" + g.name + "," + num(j["train_acc"]) + "," +
                     num(j["val_acc"]) + "," + num(j["test_acc"]) + "\n",
                 log);
  }
  out << "test_acc " << num(j["test_acc"]) << "\n";
  return kExitOk;
}

std::vector<double> unit_grid(const std::string& text, const std::string& flag) {
  const auto v = parse_list<double>(text, flag);
  for (double x : v)
    if (!(x > 0.0 && x < 1.0)) throw ValidationError(flag + " values must lie in (0, 1), got " + num(x));
  return v;
}

int cmd_sweep(const Shared& s, TrainConfig c, const std::string& alphas_text, const std::string& betas_text,
              std::ostream& out, const Log& log) {
  const std::vector<double> alphas = unit_grid(alphas_text, "--alphas");
  const std::vector<double> betas = unit_grid(betas_text, "--betas");
  const std::string file = s.format == "json" ? "sweep.json" : "sweep.csv";
  output_path(s, file);
  const Graph g = load(s, log);
  c.seed = s.seed;
  log.info("sweeping " + std::to_string(alphas.size() * betas.size()) + " cells");
  const SweepResult r = sweep(g, c, alphas, betas, s.jobs);
  for (const SweepCell& cell : r.cells)
    if (!cell.error.empty()) log.info("cell alpha=" + num(cell.alpha) + " beta=" + num(cell.beta) + ": " + cell.error);
  if (s.format == "json") {
    json rows = json::array();
    for (const SweepCell& cell : r.cells)
      rows.push_back({{"alpha", cell.alpha}, {"beta", cell.beta},
                      {"test_acc", cell.test_acc ? json(*cell.test_acc) : json(nullptr)}});
    write_output(s, file, rows.dump(2) + "\n", log);
  } else {
    std::string csv = "alpha,beta,test_acc\n";
    for (const SweepCell& cell : r.cells) csv += num(cell.alpha) + "," + num(cell.beta) + "," + opt_num(cell.test_acc) + "\n";
    write_output(s, file, csv, log);
  }
  const auto best = r.best();
  if (!best) {
    out << "every cell failed\n";
    return kExitRuntime;
  }
  const SweepCell& b = r.cells[*best];
  out << "best alpha " << num(b.alpha) << " beta " << num(b.beta) << " test_acc " << num(*b.test_acc) << "\n";
  return kExitOk;
}

int cmd_depth_study(const Shared& s, TrainConfig c, const std::string& depths_text, std::ostream& out,
                    const Log& log) {
  const std::vector<std::size_t> depths = parse_list<std::size_t>(depths_text, "--depths");
  const std::string file = s.format == "json" ? "depth_study.json" : "depth_study.csv";
  output_path(s, file);
  const Graph g = load(s, log);
  c.seed = s.seed;
  const std::vector<DepthRow> rows = depth_study(g, depths, c, s.jobs);
  std::size_t ok = 0;
  for (const DepthRow& r : rows) {
    if (r.test_acc) ++ok;
    if (!r.error.empty()) log.info("depth " + std::to_string(r.depth) + ": " + r.error);
  }
  if (s.format == "json") {
    json arr = json::array();
    for (const DepthRow& r : rows)
      arr.push_back({{"depth", r.depth},
                     {"test_acc", r.test_acc ? json(*r.test_acc) : json(nullptr)},
                     {"oversmooth_model", r.oversmooth_model ? json(*r.oversmooth_model) : json(nullptr)},
                     {"oversmooth_plain", r.oversmooth_plain},
                     {"plain_test_acc", r.plain_test_acc ? json(*r.plain_test_acc) : json(nullptr)}});
    write_output(s, file, arr.dump(2) + "\n", log);
  } else {
    std::string csv = "depth,test_acc,oversmooth_model,oversmooth_plain,plain_test_acc\n";
    for (const DepthRow& r : rows)
      csv += std::to_string(r.depth) + "," + opt_num(r.test_acc) + "," + opt_num(r.oversmooth_model) + "," +
             num(r.oversmooth_plain) + "," + opt_num(r.plain_test_acc) + "\n";
    write_output(s, file, csv, log);
  }
  for (const DepthRow& r : rows)
    out << "depth " << r.depth << " test_acc " << opt_num(r.test_acc) << " plain " << opt_num(r.plain_test_acc)
        << "\n";
  return ok > 0 ? kExitOk : kExitRuntime;
}

struct GenerateArgs {
  SbmSpec sbm;
  std::string name = "sbm";
  std::size_t splits = 10;
  bool allow_disconnected = false;
  double train = 0.6, val = 0.2, test = 0.2;
};

int cmd_generate(const Shared& s, GenerateArgs a, std::ostream& out, const Log& log) {
  a.sbm.seed = s.seed;
  a.sbm.require_connected = !a.allow_disconnected;
  if (a.splits == 0) throw ValidationError("--splits must be >= 1");
  Graph g = generate_sbm(a.sbm);
  g.name = a.name;
  for (std::size_t k = 0; k < a.splits; ++k) {
    SplitSpec sp{a.train, a.val, a.test, s.seed * 1000003ULL + k, true};
    g.splits[k] = make_splits(g, sp);
  }
  g.use_split(0);
  save_dataset(g, s.out, s.overwrite);
  log.info("wrote dataset to " + s.out);
  out << g.n_nodes << " nodes, " << g.n_edges() << " edges, " << g.n_classes() << " classes\n";
  return kExitOk;
}

int cmd_bench(const Shared& s, const std::string& sizes_text, BenchOptions o, std::size_t guard_mb,
              std::ostream& out, const Log& log) {
  const std::vector<std::size_t> sizes = parse_list<std::size_t>(sizes_text, "--sizes");
  const std::string file = s.format == "json" ? "bench.json" : "bench.csv";
  output_path(s, file);
  o.seed = s.seed;
  o.dense_memory_guard = guard_mb << 20;
  std::vector<BenchRow> rows;
  for (std::size_t n : sizes) {
    const std::size_t one[] = {n};
    rows.push_back(run_bench(one, o).front());
    log.info("n=" + std::to_string(n) + " gcamba " + num(rows.back().gcamba_ms) + " ms, dense " +
             opt_num(rows.back().dense_attention_ms) + " ms");
  }
  if (s.format == "json") {
    json arr = json::array();
    for (const BenchRow& r : rows)
      arr.push_back({{"n_nodes", r.n_nodes},
                     {"gcamba_ms", r.gcamba_ms},
                     {"dense_attention_ms", r.dense_attention_ms ? json(*r.dense_attention_ms) : json(nullptr)},
                     {"peak_mem_estimate", r.peak_mem_estimate},
                     {"dense_peak_mem_estimate", r.dense_peak_mem_estimate}});
    write_output(s, file, arr.dump(2) + "\n", log);
  } else {
    std::string csv = "n_nodes,gcamba_ms,dense_attention_ms,peak_mem_estimate,dense_peak_mem_estimate\n";
    for (const BenchRow& r : rows)
      csv += std::to_string(r.n_nodes) + "," + num(r.gcamba_ms) + "," + opt_num(r.dense_attention_ms) + "," +
             std::to_string(r.peak_mem_estimate) + "," + std::to_string(r.dense_peak_mem_estimate) + "\n";
    write_output(s, file, csv, log);
  }
  for (std::size_t i = 1; i < rows.size(); ++i) {
    out << rows[i - 1].n_nodes << " -> " << rows[i].n_nodes << ": gcamba x" << num(rows[i].gcamba_ms / rows[i - 1].gcamba_ms);
    if (rows[i].dense_attention_ms && rows[i - 1].dense_attention_ms)
      out << ", dense x" << num(*rows[i].dense_attention_ms / *rows[i - 1].dense_attention_ms);
    out << "\n";
  }
  return kExitOk;
}

}  // namespace

std::string report_to_json(const RunReport& r) {
  json epochs = json::array();
  for (const EpochRecord& e : r.epochs)
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"train_acc", e.train_acc},
                      {"val_loss", e.val_loss},
                      {"val_acc", e.val_acc}});
  const json j{{"dataset", r.dataset},
               {"config", config_to_json(r.config)},
               {"best_epoch", r.best_epoch},
               {"best_val_acc", r.best_val_acc},
               {"test_accuracy", r.test_accuracy},
               {"early_stopped", r.early_stopped},
               {"oversmoothing", {{"depth", r.config.depth}, {"model", r.oversmooth_model}, {"plain", r.oversmooth_plain}}},
               {"peak_memory_bytes", r.peak_memory_bytes},
               {"epochs", epochs}};
  return j.dump(2) + "\n";
}

std::string model_to_json(DmbaModel& model, const TrainConfig& config, std::size_t in_features,
                          std::size_t n_classes) {
  json params = json::object();
  for (const Parameter* p : model.parameters())
    params[p->name] = {{"shape", p->value.shape()}, {"data", p->value.data()}};
  const json j{{"kind", "dmba-model"},
               {"version", 1},
               {"n_features", in_features},
               {"n_classes", n_classes},
               {"config", config_to_json(config)},
               {"parameters", params}};
  return j.dump() + "\n";
}

DmbaModel model_from_json(const std::string& text, TrainConfig* config) {
  try {
    const json j = json::parse(text);
    if (j.at("kind") != "dmba-model" || j.at("version") != 1) throw ValidationError("not a dmba model file");
    const TrainConfig c = config_from_json(j.at("config"));
    DmbaModel m = make_model(j.at("n_features"), j.at("n_classes"), c);
    const json& params = j.at("parameters");
    for (Parameter* p : m.parameters()) {
      if (!params.contains(p->name)) throw ValidationError("model file lacks parameter " + p->name);
      const json& e = params.at(p->name);
      Tensor v(e.at("shape").get<std::vector<std::size_t>>(), e.at("data").get<std::vector<double>>());
      if (!v.same_shape(p->value)) throw ValidationError("parameter " + p->name + " has the wrong shape");
      p->value = std::move(v);
    }
    if (config) *config = c;
    return m;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed model file: ") + e.what());
  }
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  const Log log(err);
  CLI::App app{"DMbaGCN: dual selective state-space graph convolution", "dmba"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  Shared shared;
  TrainConfig cfg;
  std::string model_path, alphas = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9", betas = alphas;
  std::string depths = "2,4,8,16,32";
  std::string sizes = "256,512,1024,2048,4096,8192,16384,32768,65536";
  GenerateArgs gen;
  BenchOptions bench;
  std::size_t guard_mb = 1024;

  CLI::App* train = app.add_subcommand("train", "train one model and write report.json, curves.csv, model.json");
  add_shared(train, shared);
  add_train_flags(train, cfg);

  CLI::App* eval = app.add_subcommand("eval", "score a saved model on the dataset's split");
  add_shared(eval, shared);
  eval->add_option("--model", model_path, "model.json from train (default <out>/model.json)");

  CLI::App* sw = app.add_subcommand("sweep", "grid over alpha and beta, writes sweep.csv");
  add_shared(sw, shared);
  add_train_flags(sw, cfg);
  sw->add_option("--alphas", alphas, "comma separated grid")->capture_default_str();
  sw->add_option("--betas", betas, "comma separated grid")->capture_default_str();

  CLI::App* ds = app.add_subcommand("depth-study", "train at several depths, writes depth_study.csv");
  add_shared(ds, shared);
  add_train_flags(ds, cfg);
  ds->add_option("--depths", depths, "comma separated depths")->capture_default_str();

  CLI::App* ge = app.add_subcommand("generate", "write a stochastic block model dataset to --out");
  add_shared(ge, shared);
  ge->add_option("--name", gen.name)->capture_default_str();
  ge->add_option("--nodes", gen.sbm.n_nodes)->capture_default_str();
  ge->add_option("--blocks", gen.sbm.blocks)->capture_default_str();
  ge->add_option("--p-in", gen.sbm.p_in)->capture_default_str();
  ge->add_option("--p-out", gen.sbm.p_out)->capture_default_str();
  ge->add_option("--feat-dim", gen.sbm.feat_dim)->capture_default_str();
  ge->add_option("--feat-sigma", gen.sbm.feat_sigma)->capture_default_str();
  ge->add_flag("--center", gen.sbm.center_features, "subtract feature column means");
  ge->add_flag("--allow-disconnected", gen.allow_disconnected);
  ge->add_option("--splits", gen.splits, "number of stored random splits")->capture_default_str();
  ge->add_option("--train", gen.train)->capture_default_str();
  ge->add_option("--val", gen.val)->capture_default_str();
  ge->add_option("--test", gen.test)->capture_default_str();

  CLI::App* be = app.add_subcommand("bench", "time GCAMba against dense attention, writes bench.csv");
  add_shared(be, shared);
  be->add_option("--sizes", sizes, "comma separated node counts")->capture_default_str();
  be->add_option("--d-model", bench.d_model)->capture_default_str();
  be->add_option("--d-state", bench.d_state)->capture_default_str();
  be->add_option("--memory-guard-mb", guard_mb, "largest dense score matrix")->capture_default_str();

  try {
    std::vector<std::string> args(argv, argv + argc);
    args = expand_config(std::move(args));
    std::vector<const char*> ptrs;
    for (const std::string& a : args) ptrs.push_back(a.c_str());
    try {
      app.parse(static_cast<int>(ptrs.size()), ptrs.data());
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
      out << app.help("", CLI::AppFormatMode::All);
      return kExitOk;
    } catch (const CLI::ParseError& e) {
      err << "error: " << e.what() << "\n";
      return kExitUsage;
    }
    if (!shared.config.empty()) log.debug("config file " + shared.config);
    if (shared.format.empty()) shared.format = train->parsed() || eval->parsed() ? "json" : "csv";

    if (train->parsed()) return cmd_train(shared, cfg, out, log);
    if (eval->parsed()) return cmd_eval(shared, model_path, out, log);
    if (sw->parsed()) return cmd_sweep(shared, cfg, alphas, betas, out, log);
    if (ds->parsed()) return cmd_depth_study(shared, cfg, depths, out, log);
    if (ge->parsed()) return cmd_generate(shared, gen, out, log);
    if (be->parsed()) return cmd_bench(shared, sizes, bench, guard_mb, out, log);
    return kExitUsage;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const TrainingDiverged& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace dmba
