#include "dmba/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

#include "dmba/errors.hpp"

namespace dmba {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    start = end + 1;
  }
  return lines;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    std::string_view f = line.substr(start, comma == std::string_view::npos ? line.npos : comma - start);
    while (!f.empty() && f.front() == ' ') f.remove_prefix(1);
    while (!f.empty() && f.back() == ' ') f.remove_suffix(1);
    out.push_back(f);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && !s.empty();
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

json masks_to_json(const Masks& m) {
  auto ids = [](const std::vector<bool>& mask) {
    std::vector<std::size_t> v;
    for (std::size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) v.push_back(i);
    return v;
  };
  return json{{"train", ids(m.train)}, {"val", ids(m.val)}, {"test", ids(m.test)}};
}

Masks masks_from_json(const json& j, std::size_t n, const std::string& where) {
  Masks m{std::vector<bool>(n), std::vector<bool>(n), std::vector<bool>(n)};
  auto fill = [&](const char* key, std::vector<bool>& mask) {
    if (!j.contains(key)) throw ValidationError(where + ": missing \"" + key + "\"");
    for (const auto& id : j.at(key)) {
      if (!id.is_number_unsigned()) throw ValidationError(where + ": non-integer node id in " + key);
      const auto i = id.get<std::size_t>();
      if (i >= n) throw ValidationError(where + ": node id " + std::to_string(i) + " out of range");
      mask[i] = true;
    }
  };
  fill("train", m.train);
  fill("val", m.val);
  fill("test", m.test);
  return m;
}

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

DatasetManifest read_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  if (!fs::exists(path)) throw IoError("missing manifest: " + path.string());
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  try {
    DatasetManifest m;
    m.name = j.at("name").get<std::string>();
    m.n_nodes = j.at("n_nodes").get<std::size_t>();
    m.n_edges = j.value("n_edges", std::size_t{0});
    m.n_features = j.at("n_features").get<std::size_t>();
    m.n_classes = j.at("n_classes").get<std::size_t>();
    m.version = j.value("version", kDatasetFormatVersion);
    if (j.contains("files")) {
      const json& f = j.at("files");
      m.edges_file = f.value("edges", m.edges_file);
      m.features_file = f.value("features", m.features_file);
      m.labels_file = f.value("labels", m.labels_file);
      m.splits_file = f.value("splits", m.splits_file);
    }
    if (j.contains("active_split") && !j.at("active_split").is_null()) {
      m.active_split = j.at("active_split").get<std::uint64_t>();
    }
    if (m.version != kDatasetFormatVersion) {
      throw ValidationError("unsupported dataset format version " + std::to_string(m.version));
    }
    return m;
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

Graph load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  const DatasetManifest man = read_manifest(dir);
  const std::size_t n = man.n_nodes;

  const fs::path edges_path = dir / man.edges_file;
  const auto edge_lines = split_lines(read_text(edges_path));
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t ln = 0; ln < edge_lines.size(); ++ln) {
    const std::string& line = edge_lines[ln];
    if (ln == 0) {
      if (line != "src,dst") throw ParseError(edges_path.string(), 1, "expected header 'src,dst'");
      continue;
    }
    if (line.empty()) continue;
    const auto f = split_fields(line);
    std::size_t a = 0, b = 0;
    if (f.size() != 2 || !parse_number(f[0], a) || !parse_number(f[1], b)) {
      throw ParseError(edges_path.string(), ln + 1, "expected 'src,dst' node ids");
    }
    if (a >= n || b >= n) throw ParseError(edges_path.string(), ln + 1, "node id out of range");
    edges.emplace_back(a, b);
  }

  const fs::path feat_path = dir / man.features_file;
  const auto feat_lines = split_lines(read_text(feat_path));
  Tensor features({n, man.n_features});
  std::size_t row = 0;
  for (std::size_t ln = 0; ln < feat_lines.size(); ++ln) {
    if (feat_lines[ln].empty()) continue;
    const auto f = split_fields(feat_lines[ln]);
    if (f.size() != man.n_features) {
      throw ParseError(feat_path.string(), ln + 1,
                       "expected " + std::to_string(man.n_features) + " values, found " +
                           std::to_string(f.size()));
    }
    if (row >= n) throw ParseError(feat_path.string(), ln + 1, "more feature rows than n_nodes");
    for (std::size_t c = 0; c < f.size(); ++c) {
      if (!parse_number(f[c], features(row, c))) {
        throw ParseError(feat_path.string(), ln + 1, "malformed number '" + std::string(f[c]) + "'");
      }
    }
    ++row;
  }
  if (row != n) {
    throw ValidationError(feat_path.string() + ": " + std::to_string(row) + " rows, manifest says " +
                          std::to_string(n));
  }

  const fs::path label_path = dir / man.labels_file;
  const auto label_lines = split_lines(read_text(label_path));
  std::vector<int> labels;
  for (std::size_t ln = 0; ln < label_lines.size(); ++ln) {
    if (label_lines[ln].empty()) continue;
    int v = 0;
    if (!parse_number(std::string_view(label_lines[ln]), v)) {
      throw ParseError(label_path.string(), ln + 1, "non-integer label '" + label_lines[ln] + "'");
    }
    if (v < 0 || static_cast<std::size_t>(v) >= man.n_classes) {
      throw ParseError(label_path.string(), ln + 1, "label outside [0, n_classes)");
    }
    labels.push_back(v);
  }
  if (labels.size() != n) {
    throw ValidationError(label_path.string() + ": " + std::to_string(labels.size()) +
                          " labels, manifest says " + std::to_string(n));
  }

  Graph g = Graph::from_edges(n, edges, std::move(features), std::move(labels));
  g.name = man.name;
  if (man.n_edges != 0 && g.n_edges() != man.n_edges) {
    throw ValidationError("edge count " + std::to_string(g.n_edges()) + " != manifest n_edges " +
                          std::to_string(man.n_edges));
  }

  const fs::path split_path = dir / man.splits_file;
  if (fs::exists(split_path)) {
    json j;
    try {
      j = json::parse(read_text(split_path));
    } catch (const json::parse_error& e) {
      throw ValidationError(split_path.string() + ": " + e.what());
    }
    for (const auto& [key, value] : j.items()) {
      std::uint64_t seed = 0;
      if (!parse_number(std::string_view(key), seed)) {
        throw ValidationError(split_path.string() + ": split key '" + key + "' is not a seed");
      }
      g.splits[seed] = masks_from_json(value, n, split_path.string());
    }
    if (man.active_split) {
      g.use_split(*man.active_split);
    } else if (!g.splits.empty()) {
      g.masks = g.splits.begin()->second;
    }
  }
  g.validate();
  return g;
}

DatasetManifest save_dataset(const Graph& graph, const fs::path& dir, bool overwrite) {
  graph.validate();
  if (graph.n_features() == 0) throw ValidationError("save_dataset: graph has no features (d must be >= 1)");
  if (fs::exists(dir / "manifest.json") && !overwrite) {
    throw IoError("dataset already exists at " + dir.string() + " (pass overwrite to replace it)");
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  DatasetManifest man;
  man.name = graph.name;
  man.n_nodes = graph.n_nodes;
  man.n_edges = graph.n_edges();
  man.n_features = graph.n_features();
  man.n_classes = graph.n_classes();

  std::map<std::uint64_t, Masks> splits = graph.splits;
  if (!graph.masks.empty()) {
    for (const auto& [seed, m] : splits) {
      if (m == graph.masks) {
        man.active_split = seed;
        break;
      }
    }
    if (!man.active_split) {
      std::uint64_t seed = 0;
      while (splits.count(seed)) ++seed;
      splits[seed] = graph.masks;
      man.active_split = seed;
    }
  }

  std::string edges = "src,dst\n";
  const CsrMatrix& a = graph.adjacency;
  for (std::size_t i = 0; i < graph.n_nodes; ++i)
    for (std::size_t k = a.row_ptr[i]; k < a.row_ptr[i + 1]; ++k)
      if (i < a.cols[k]) edges += std::to_string(i) + "," + std::to_string(a.cols[k]) + "\n";

  std::string feats;
  for (std::size_t i = 0; i < graph.n_nodes; ++i) {
    const auto r = graph.features.row(i);
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (c) feats += ',';
      feats += format_double(r[c]);
    }
    feats += '\n';
  }

  std::string labels;
  for (int l : graph.labels) labels += std::to_string(l) + "\n";

  json sj = json::object();
  for (const auto& [seed, m] : splits) sj[std::to_string(seed)] = masks_to_json(m);

  json mj = {{"name", man.name},
             {"n_nodes", man.n_nodes},
             {"n_edges", man.n_edges},
             {"n_features", man.n_features},
             {"n_classes", man.n_classes},
             {"version", man.version},
             {"files",
              {{"edges", man.edges_file},
               {"features", man.features_file},
               {"labels", man.labels_file},
               {"splits", man.splits_file}}}};
  mj["active_split"] = man.active_split ? json(*man.active_split) : json(nullptr);

  write_file_atomic(dir / man.edges_file, edges);
  write_file_atomic(dir / man.features_file, feats);
  write_file_atomic(dir / man.labels_file, labels);
  write_file_atomic(dir / man.splits_file, sj.dump(1) + "\n");
  write_file_atomic(dir / "manifest.json", mj.dump(2) + "\n");
  return man;
}

Graph generate_sbm(const SbmSpec& spec) {
  if (spec.blocks < 2) throw ValidationError("generate_sbm: need at least 2 blocks");
  if (spec.n_nodes < spec.blocks) throw ValidationError("generate_sbm: fewer nodes than blocks");
  if (!(spec.p_out >= 0.0 && spec.p_out <= spec.p_in && spec.p_in <= 1.0)) {
    throw ValidationError("generate_sbm: require 0 <= p_out <= p_in <= 1");
  }
  if (spec.feat_dim < spec.blocks) {
    throw ValidationError("generate_sbm: feat_dim must be >= blocks for orthogonal class means");
  }
  if (!(spec.feat_sigma >= 0.0)) throw ValidationError("generate_sbm: feat_sigma must be >= 0");

  const std::size_t n = spec.n_nodes;
  const int attempts = spec.require_connected ? 10 : 1;
  for (int attempt = 0; attempt < attempts; ++attempt) {
    std::mt19937_64 rng(spec.seed + static_cast<std::uint64_t>(attempt) * 0x9e3779b97f4a7c15ULL);
    std::vector<int> labels(n);
    for (std::size_t b = 0, i = 0; b < spec.blocks; ++b) {
      const std::size_t size = n / spec.blocks + (b < n % spec.blocks ? 1 : 0);
      for (std::size_t k = 0; k < size; ++k) labels[i++] = static_cast<int>(b);
    }
    std::shuffle(labels.begin(), labels.end(), rng);

    std::uniform_real_distribution<double> coin(0.0, 1.0);
    std::vector<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double p = labels[i] == labels[j] ? spec.p_in : spec.p_out;
        if (coin(rng) < p) edges.emplace_back(i, j);
      }

    std::normal_distribution<double> noise(0.0, 1.0);
    Tensor x({n, spec.feat_dim});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < spec.feat_dim; ++c) x(i, c) = spec.feat_sigma * noise(rng);
      x(i, static_cast<std::size_t>(labels[i])) += 1.0;
    }
    if (spec.center_features) {
      for (std::size_t c = 0; c < spec.feat_dim; ++c) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += x(i, c);
        mean /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) x(i, c) -= mean;
      }
    }

    Graph g = Graph::from_edges(n, edges, std::move(x), std::move(labels));
    g.name = "sbm";
    if (!spec.require_connected || is_connected(g)) return g;
  }
  throw ValidationError("generate_sbm: no connected graph after 10 seeds; raise p_in/p_out");
}

Masks make_splits(const Graph& graph, const SplitSpec& spec) {
  const std::size_t n = graph.n_nodes;
  if (n < 10) throw ValidationError("make_splits: need at least 10 nodes");
  if (!(spec.train > 0.0 && spec.val > 0.0 && spec.test > 0.0) ||
      std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9) {
    throw ValidationError("make_splits: ratios must be positive and sum to 1");
  }
  std::mt19937_64 rng(spec.seed);
  Masks m{std::vector<bool>(n), std::vector<bool>(n), std::vector<bool>(n)};

  auto assign = [&](std::vector<std::size_t> nodes, bool at_least_one) {
    std::shuffle(nodes.begin(), nodes.end(), rng);
    const double sz = static_cast<double>(nodes.size());
    std::size_t n_val = static_cast<std::size_t>(std::llround(spec.val * sz));
    std::size_t n_test = static_cast<std::size_t>(std::llround(spec.test * sz));
    if (at_least_one) {
      n_val = std::max<std::size_t>(n_val, 1);
      n_test = std::max<std::size_t>(n_test, 1);
    }
    const std::size_t n_train = nodes.size() - n_val - n_test;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      if (k < n_train)
        m.train[nodes[k]] = true;
      else if (k < n_train + n_val)
        m.val[nodes[k]] = true;
      else
        m.test[nodes[k]] = true;
    }
  };

  if (spec.stratified) {
    std::vector<std::vector<std::size_t>> by_class(graph.n_classes());
    for (std::size_t i = 0; i < n; ++i) by_class[graph.labels[i]].push_back(i);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
      if (by_class[c].empty()) continue;
      if (by_class[c].size() < 3) {
        throw ValidationError("make_splits: class " + std::to_string(c) +
                              " has fewer than 3 nodes, cannot stratify");
      }
      assign(by_class[c], true);
    }
  } else {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    assign(std::move(all), true);
  }
  if (count(m.train) == 0 || count(m.val) == 0 || count(m.test) == 0) {
    throw ValidationError("make_splits: a split came out empty");
  }
  return m;
}

}  // namespace dmba
