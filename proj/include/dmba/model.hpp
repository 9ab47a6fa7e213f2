#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dmba/autodiff.hpp"
#include "dmba/gcamba.hpp"
#include "dmba/graph.hpp"
#include "dmba/lsemba.hpp"

namespace dmba {

struct TrainConfig {
  std::size_t depth = 4;
  std::size_t d_model = 16;
  std::size_t d_state = 16;
  double alpha = 0.5;
  double beta = 0.5;
  double lr = 0.01;
  double weight_decay = 5e-4;
  int epochs = 1000;
  int patience = 100;
  std::uint64_t seed = 0;
  double dropout = 0.5;
  bool untied_directions = false;

  // Throws ValidationError on the first out-of-range field.
  void validate() const;
};

// Z = α·LSEMba + (1-α)·GCAMba, followed by a linear classifier.
struct DmbaModel {
  LsembaLayer lsemba;
  GcambaLayer gcamba;
  double alpha = 0.5;
  double dropout = 0.0;
  Parameter classifier_w;  // d_model x classes
  Parameter classifier_b;  // 1 x classes

  std::vector<Parameter*> parameters();
  std::size_t d_model() const { return lsemba.d_model(); }
};

DmbaModel make_model(std::size_t in_features, std::size_t n_classes, const TrainConfig& config);

struct ForwardOutput {
  Var z;
  Var logits;
};

// Dropout on Z is applied only when `dropout_rng` is given (training mode).
// α = 1 never evaluates GCAMba and α = 0 never evaluates LSEMba.
ForwardOutput forward(Tape& tape, DmbaModel& model, const Graph& graph,
                      const NormalizedPropagator& prop, std::mt19937_64* dropout_rng = nullptr);

// Argmax accuracy over `mask`; ties go to the lowest class index.
double accuracy(const Tensor& logits, std::span<const int> labels, const std::vector<bool>& mask);
double evaluate(DmbaModel& model, const Graph& graph, const std::vector<bool>& mask);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

struct RunReport {
  std::string dataset;
  TrainConfig config;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val_acc = 0.0;
  double test_accuracy = 0.0;
  bool early_stopped = false;
  // Mean pairwise distance of Z (trained model) and of Â^L·X at the model depth.
  double oversmooth_model = 0.0;
  double oversmooth_plain = 0.0;
  // Deterministic estimate: training tape values and gradients plus
  // optimizer state.
  std::size_t peak_memory_bytes = 0;
  // Not deterministic; kept out of serialized reports.
  double wall_clock_ms = 0.0;
};

// Adam on the train-mask cross-entropy with early stopping on validation
// accuracy (ties broken by lower validation loss). On return `model` holds
// the best-validation parameters.
RunReport train(DmbaModel& model, const Graph& graph, const TrainConfig& config);
// Builds the model from `config` and trains it.
RunReport train(const Graph& graph, const TrainConfig& config);

// Plain propagation baseline: logits = (Â^L·X)·W + b. depth 0 is
// features-only logistic regression.
struct BaselineReport {
  std::size_t depth = 0;
  int best_epoch = 0;
  double best_val_acc = 0.0;
  double test_accuracy = 0.0;
  double oversmooth = 0.0;
};

BaselineReport train_plain_baseline(const Graph& graph, std::size_t depth, const TrainConfig& config);

struct SweepCell {
  double alpha = 0.0;
  double beta = 0.0;
  std::optional<double> test_acc;
  std::string error;
};

struct SweepResult {
  std::vector<SweepCell> cells;
  // Index of the best successful cell; nullopt if every cell failed.
  std::optional<std::size_t> best() const;
};

// One training run per (α, β) pair, every cell with config.seed. A failing
// cell is recorded and the sweep continues. `jobs` > 1 trains cells on
// worker threads.
SweepResult sweep(const Graph& graph, const TrainConfig& config, std::span<const double> alphas,
                  std::span<const double> betas, std::size_t jobs = 1);

struct DepthRow {
  std::size_t depth = 0;
  std::optional<double> test_acc;
  std::optional<double> oversmooth_model;
  double oversmooth_plain = 0.0;
  std::optional<double> plain_test_acc;
  std::string error;
};

// Trains DMbaGCN and the plain baseline at each depth.
std::vector<DepthRow> depth_study(const Graph& graph, std::span<const std::size_t> depths,
                                  const TrainConfig& config, std::size_t jobs = 1);

// Runs fn(i) for i in [0, count) on up to `jobs` threads.
void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace dmba
