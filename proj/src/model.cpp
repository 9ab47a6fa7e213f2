#include "dmba/model.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "dmba/errors.hpp"
#include "dmba/optim.hpp"

namespace dmba {

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ValidationError("invalid config: " + what); };
  if (depth == 0) fail("depth must be >= 1");
  if (d_model == 0) fail("d_model must be >= 1");
  if (d_state == 0) fail("d_state must be >= 1");
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail("alpha must lie in [0, 1]");
  if (!(beta >= 0.0 && beta <= 1.0)) fail("beta must lie in [0, 1]");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (epochs <= 0) fail("epochs must be positive");
  if (patience <= 0) fail("patience must be positive");
}

std::vector<Parameter*> DmbaModel::parameters() {
  std::vector<Parameter*> ps = lsemba.parameters();
  for (Parameter* p : gcamba.parameters()) ps.push_back(p);
  ps.push_back(&classifier_w);
  ps.push_back(&classifier_b);
  return ps;
}

DmbaModel make_model(std::size_t in_features, std::size_t n_classes, const TrainConfig& config) {
  config.validate();
  if (n_classes < 2) throw ValidationError("model needs at least 2 classes");
  std::mt19937_64 rng(config.seed);
  DmbaModel m;
  m.lsemba = make_lsemba(in_features, config.d_model, config.d_state, config.depth, rng());
  m.gcamba = make_gcamba(in_features, config.d_model, config.d_state, config.beta, rng(),
                         config.untied_directions);
  m.alpha = config.alpha;
  m.dropout = config.dropout;
  const double s = 1.0 / std::sqrt(static_cast<double>(config.d_model));
  std::uniform_real_distribution<double> uni(-s, s);
  Tensor w({config.d_model, n_classes});
  for (double& v : w.data()) v = uni(rng);
  m.classifier_w = Parameter("classifier.w", std::move(w));
  m.classifier_b = Parameter("classifier.b", Tensor({1, n_classes}));
  return m;
}

ForwardOutput forward(Tape& tape, DmbaModel& model, const Graph& graph,
                      const NormalizedPropagator& prop, std::mt19937_64* dropout_rng) {
  if (model.lsemba.d_model() != model.gcamba.d_model()) {
    throw DimensionError("LSEMba and GCAMba widths differ");
  }
  if (!(model.alpha >= 0.0 && model.alpha <= 1.0)) {
    throw ValidationError("alpha must lie in [0, 1], got " + std::to_string(model.alpha));
  }
  Var z;
  if (model.alpha == 1.0) {
    z = lsemba_forward(tape, model.lsemba, graph, prop);
  } else if (model.alpha == 0.0) {
    z = gcamba_forward(tape, model.gcamba, graph);
  } else {
    const Var local = lsemba_forward(tape, model.lsemba, graph, prop);
    const Var global = gcamba_forward(tape, model.gcamba, graph);
    z = ad::add(ad::scale(local, model.alpha), ad::scale(global, 1.0 - model.alpha));
  }
  Var h = z;
  if (dropout_rng != nullptr) h = ad::dropout(z, model.dropout, *dropout_rng);
  const Var logits =
      ad::add(ad::matmul(h, tape.param(model.classifier_w)), tape.param(model.classifier_b));
  return {z, logits};
}

double accuracy(const Tensor& logits, std::span<const int> labels, const std::vector<bool>& mask) {
  if (labels.size() != logits.rows() || mask.size() != logits.rows()) {
    throw DimensionError("accuracy: logits, labels and mask disagree on node count");
  }
  std::size_t total = 0, correct = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const auto row = logits.row(i);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c)
      if (row[c] > row[best]) best = c;
    ++total;
    correct += static_cast<int>(best) == labels[i];
  }
  if (total == 0) throw EmptySelectionError("accuracy: mask selects no nodes");
  return static_cast<double>(correct) / static_cast<double>(total);
}

double evaluate(DmbaModel& model, const Graph& graph, const std::vector<bool>& mask) {
  if (count(mask) == 0) throw EmptySelectionError("evaluate: mask selects no nodes");
  const NormalizedPropagator prop = normalize(graph);
  Tape tape;
  return accuracy(forward(tape, model, graph, prop).logits.value(), graph.labels, mask);
}

namespace {

void check_training_inputs(const Graph& graph) {
  graph.validate();
  const Masks& m = graph.masks;
  if (m.empty() || count(m.train) == 0) throw EmptySelectionError("train mask is empty");
  if (count(m.val) == 0) throw EmptySelectionError("validation mask is empty");
  if (count(m.test) == 0) throw EmptySelectionError("test mask is empty");
  std::vector<bool> seen(graph.n_classes(), false);
  std::size_t distinct = 0;
  for (std::size_t i = 0; i < graph.n_nodes; ++i) {
    if (m.train[i] && !seen[graph.labels[i]]) {
      seen[graph.labels[i]] = true;
      ++distinct;
    }
  }
  if (distinct < 2) throw ValidationError("train mask covers fewer than 2 classes");
}

std::vector<Tensor> snapshot(const std::vector<Parameter*>& params) {
  std::vector<Tensor> s;
  s.reserve(params.size());
  for (const Parameter* p : params) s.push_back(p->value);
  return s;
}

void restore(const std::vector<Parameter*>& params, const std::vector<Tensor>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

Tensor plain_propagation(const Graph& graph, const NormalizedPropagator& prop, std::size_t depth) {
  Tensor h = graph.features;
  for (std::size_t l = 0; l < depth; ++l) h = propagate(prop, h);
  return h;
}

}  // namespace

RunReport train(DmbaModel& model, const Graph& graph, const TrainConfig& config) {
  const auto started = std::chrono::steady_clock::now();
  config.validate();
  check_training_inputs(graph);
  const NormalizedPropagator prop = normalize(graph);
  const Masks& masks = graph.masks;

  RunReport report;
  report.dataset = graph.name;
  report.config = config;

  const std::vector<Parameter*> params = model.parameters();
  std::size_t param_bytes = 0;
  for (const Parameter* p : params) param_bytes += p->value.size() * sizeof(double);
  Adam adam(params, AdamOptions{config.lr, 0.9, 0.999, 1e-8, config.weight_decay});
  std::mt19937_64 dropout_rng(config.seed ^ 0xd2097ULL);

  std::vector<Tensor> best = snapshot(params);
  double best_val_loss = 0.0;
  bool have_best = false;
  int since_best = 0;
  int last_finite = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    adam.zero_grad();
    EpochRecord rec;
    rec.epoch = epoch;
    {
      Tape tape;
      const ForwardOutput out = forward(tape, model, graph, prop, &dropout_rng);
      const Var loss = ad::cross_entropy(out.logits, graph.labels, masks.train);
      rec.train_loss = loss.value().item();
      if (!std::isfinite(rec.train_loss)) {
        throw TrainingDiverged("non-finite training loss at epoch " + std::to_string(epoch) +
                                   " (last finite epoch " + std::to_string(last_finite) + ")",
                               last_finite);
      }
      last_finite = epoch;
      tape.backward(loss);
      report.peak_memory_bytes =
          std::max(report.peak_memory_bytes, 2 * tape.value_bytes() + 3 * param_bytes);
    }
    adam.step();

    double test_acc = 0.0;
    {
      Tape tape;
      const ForwardOutput out = forward(tape, model, graph, prop);
      const Tensor logits = out.logits.value();
      rec.train_acc = accuracy(logits, graph.labels, masks.train);
      rec.val_acc = accuracy(logits, graph.labels, masks.val);
      rec.val_loss = ad::cross_entropy(out.logits, graph.labels, masks.val).value().item();
      test_acc = accuracy(logits, graph.labels, masks.test);
    }
    report.epochs.push_back(rec);

    const bool improved = !have_best || rec.val_acc > report.best_val_acc ||
                          (rec.val_acc == report.best_val_acc && rec.val_loss < best_val_loss);
    if (improved) {
      have_best = true;
      report.best_epoch = epoch;
      report.best_val_acc = rec.val_acc;
      report.test_accuracy = test_acc;
      best_val_loss = rec.val_loss;
      best = snapshot(params);
      since_best = 0;
    } else if (++since_best >= config.patience) {
      report.early_stopped = true;
      break;
    }
  }

  restore(params, best);
  {
    Tape tape;
    report.oversmooth_model = oversmoothing_metric(forward(tape, model, graph, prop).z.value());
  }
  report.oversmooth_plain = oversmoothing_metric(plain_propagation(graph, prop, config.depth));
  report.wall_clock_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  return report;
}

RunReport train(const Graph& graph, const TrainConfig& config) {
  DmbaModel model = make_model(graph.n_features(), graph.n_classes(), config);
  return train(model, graph, config);
}

BaselineReport train_plain_baseline(const Graph& graph, std::size_t depth, const TrainConfig& config) {
  config.validate();
  check_training_inputs(graph);
  const NormalizedPropagator prop = normalize(graph);
  const Tensor h = plain_propagation(graph, prop, depth);
  const std::size_t classes = graph.n_classes();

  std::mt19937_64 rng(config.seed ^ 0xba5eULL);
  const double s = 1.0 / std::sqrt(static_cast<double>(h.cols()));
  std::uniform_real_distribution<double> uni(-s, s);
  Tensor w0({h.cols(), classes});
  for (double& v : w0.data()) v = uni(rng);
  Parameter w("baseline.w", std::move(w0));
  Parameter b("baseline.b", Tensor({1, classes}));
  std::vector<Parameter*> params{&w, &b};
  Adam adam(params, AdamOptions{config.lr, 0.9, 0.999, 1e-8, config.weight_decay});

  BaselineReport report;
  report.depth = depth;
  report.oversmooth = h.rows() >= 2 ? oversmoothing_metric(h) : 0.0;
  double best_val_loss = 0.0;
  bool have_best = false;
  int since_best = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    adam.zero_grad();
    {
      Tape tape;
      const Var logits = ad::add(ad::matmul(tape.constant(h), tape.param(w)), tape.param(b));
      const Var loss = ad::cross_entropy(logits, graph.labels, graph.masks.train);
      if (!std::isfinite(loss.value().item())) {
        throw TrainingDiverged("baseline: non-finite loss at epoch " + std::to_string(epoch), epoch - 1);
      }
      tape.backward(loss);
    }
    adam.step();
    Tape tape;
    const Var logits = ad::add(ad::matmul(tape.constant(h), tape.param(w)), tape.param(b));
    const double val_acc = accuracy(logits.value(), graph.labels, graph.masks.val);
    const double val_loss = ad::cross_entropy(logits, graph.labels, graph.masks.val).value().item();
    if (!have_best || val_acc > report.best_val_acc ||
        (val_acc == report.best_val_acc && val_loss < best_val_loss)) {
      have_best = true;
      report.best_epoch = epoch;
      report.best_val_acc = val_acc;
      report.test_accuracy = accuracy(logits.value(), graph.labels, graph.masks.test);
      best_val_loss = val_loss;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return report;
}

void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::optional<std::size_t> SweepResult::best() const {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!cells[i].test_acc) continue;
    if (!best || *cells[i].test_acc > *cells[*best].test_acc) best = i;
  }
  return best;
}

SweepResult sweep(const Graph& graph, const TrainConfig& config, std::span<const double> alphas,
                  std::span<const double> betas, std::size_t jobs) {
  if (alphas.empty() || betas.empty()) throw ValidationError("sweep grid is empty");
  SweepResult result;
  for (double a : alphas)
    for (double b : betas) result.cells.push_back(SweepCell{a, b, std::nullopt, {}});
  parallel_for(result.cells.size(), jobs, [&](std::size_t i) {
    SweepCell& cell = result.cells[i];
    try {
      TrainConfig cfg = config;
      cfg.alpha = cell.alpha;
      cfg.beta = cell.beta;
      cell.test_acc = train(graph, cfg).test_accuracy;
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
  });
  return result;
}

std::vector<DepthRow> depth_study(const Graph& graph, std::span<const std::size_t> depths,
                                  const TrainConfig& config, std::size_t jobs) {
  if (depths.empty()) throw ValidationError("depth study needs at least one depth");
  for (std::size_t d : depths) {
    if (d == 0) throw ValidationError("depth study depths must be >= 1");
  }
  const NormalizedPropagator prop = normalize(graph);
  std::vector<DepthRow> rows(depths.size());
  parallel_for(depths.size(), jobs, [&](std::size_t i) {
    DepthRow& row = rows[i];
    row.depth = depths[i];
    row.oversmooth_plain = oversmoothing_metric(plain_propagation(graph, prop, row.depth));
    TrainConfig cfg = config;
    cfg.depth = row.depth;
    try {
      const RunReport r = train(graph, cfg);
      row.test_acc = r.test_accuracy;
      row.oversmooth_model = r.oversmooth_model;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    try {
      row.plain_test_acc = train_plain_baseline(graph, row.depth, cfg).test_accuracy;
    } catch (const std::exception& e) {
      if (row.error.empty()) row.error = e.what();
    }
  });
  return rows;
}

}  // namespace dmba
