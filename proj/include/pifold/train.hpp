#pragma once

// Loss, metrics, the Adam training loop and evaluation reports.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pifold/model.hpp"

namespace pifold {

// Mean over unmasked residues of -log_softmax(logits)[label]. Throws when
// every residue is masked.
template <class T>
ad::Var<T> sequence_loss(ad::Var<T> logits, std::span<const std::int32_t> labels,
                         std::span<const std::uint8_t> mask);
double sequence_loss(const MatrixXd& logits, std::span<const std::int32_t> labels,
                     std::span<const std::uint8_t> mask);

// exp(loss); throws on a negative or non-finite loss.
double perplexity(double loss);

// Percent of unmasked positions where predicted == label.
double recovery(std::span<const std::int32_t> predicted, std::span<const std::int32_t> labels,
                std::span<const std::uint8_t> mask);

// Median (mean of the middle pair for even counts); throws when empty.
double median(std::vector<double> values);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

enum class Schedule { kConstant, kOneCycle };

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 8;
  int epochs = 1;
  // Stops after this many optimizer steps when positive.
  std::int64_t max_steps = 0;
  std::uint64_t seed = 0;
  Precision precision = Precision::kFloat32;
  AdamConfig adam;
  // Global gradient-norm clip; <= 0 disables.
  double clip_norm = 1.0;
  Schedule schedule = Schedule::kConstant;

  void validate() const;
};

// Warm-up from max_lr/25 over the first 30% of steps, then cosine decay to
// max_lr/1e4.
double one_cycle_lr(std::int64_t step, std::int64_t total_steps, double max_lr);

class Adam {
 public:
  Adam(const ModelParams& params, const AdamConfig& config);

  void step(ModelParams& params, const std::vector<MatrixXd>& grads, double lr);
  std::int64_t steps() const { return t_; }

 private:
  AdamConfig config_;
  std::vector<MatrixXd> m_, v_;
  std::int64_t t_ = 0;
};

// Scales every gradient so the global L2 norm is at most max_norm; returns
// the norm before clipping.
double clip_global_norm(std::vector<MatrixXd>& grads, double max_norm);

// Loss and parameter gradients of one batch, in the configured precision.
struct LossAndGrads {
  double loss = 0.0;
  std::vector<MatrixXd> grads;
};
LossAndGrads compute_gradients(const ProteinGraph& batch, const ModelParams& params,
                               Precision precision, const ForwardOptions& options);

struct StepResult {
  double loss = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
};

// One Adam step on every parameter, virtual atoms re-projected to unit norm
// afterwards. Throws kNumeric on a non-finite loss or gradient.
StepResult train_step(const ProteinGraph& batch, ModelParams& params, Adam& optimizer,
                      const TrainConfig& config, double lr);

struct TrainSummary {
  std::int64_t steps = 0;
  std::vector<double> losses;
};

// Called after every step; returning false stops training.
using StepCallback = std::function<bool(std::int64_t step, const StepResult&, const ModelParams&)>;

// Shuffled mini-batches per epoch; one JSON line per step to `metrics`
// (step, epoch, loss, lr, grad_norm, wall_time).
TrainSummary train(const std::vector<ProteinGraph>& graphs, ModelParams& params,
                   const TrainConfig& config, std::ostream* metrics = nullptr,
                   const StepCallback& callback = {});

struct EvalOptions {
  Precision precision = Precision::kFloat64;
  // Length filter, inclusive; 0 disables a bound ("Short" = max_length 100).
  std::int32_t min_length = 0;
  std::int32_t max_length = 0;
};

struct ProteinScore {
  std::string name;
  std::int32_t length = 0;
  double recovery = 0.0;
  double loss = 0.0;
};

struct EvalReport {
  bool empty = false;  // no protein passed the filter
  std::int64_t residues = 0;
  double perplexity = 0.0;
  double median_recovery = 0.0;
  double worst_recovery = 0.0;
  std::vector<ProteinScore> proteins;
  double wall_time = 0.0;
  EvalOptions options;
};

// Perplexity over all unmasked residues of the subset (teacher-forced for
// autoregressive models); recovery from greedy decoding, per protein.
EvalReport evaluate(const std::vector<ProteinGraph>& graphs, const ModelParams& params,
                    const EvalOptions& options = {});

}  // namespace pifold
