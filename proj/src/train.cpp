#include "pifold/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>

#include "json.hpp"
#include "pifold/decode.hpp"
#include "pifold/error.hpp"
#include "pifold/random.hpp"

namespace pifold {

namespace {

using Clock = std::chrono::steady_clock;

template <class T>
std::vector<T> mask_weights(std::span<const std::uint8_t> mask) {
  std::vector<T> w(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) w[i] = mask[i] ? T(1) : T(0);
  return w;
}

}  // namespace

template <class T>
ad::Var<T> sequence_loss(ad::Var<T> logits, std::span<const std::int32_t> labels,
                         std::span<const std::uint8_t> mask) {
  require(static_cast<std::size_t>(logits.rows()) == labels.size() && labels.size() == mask.size(),
          "sequence_loss: logits, labels and mask differ in length");
  if (std::none_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; }))
    fail(ErrorKind::kInvalidArgument, "sequence_loss: every residue is masked");
  const auto w = mask_weights<T>(mask);
  return ad::nll_loss(logits, labels, std::span<const T>(w));
}

template ad::Var<float> sequence_loss<float>(ad::Var<float>, std::span<const std::int32_t>,
                                             std::span<const std::uint8_t>);
template ad::Var<double> sequence_loss<double>(ad::Var<double>, std::span<const std::int32_t>,
                                               std::span<const std::uint8_t>);

double sequence_loss(const MatrixXd& logits, std::span<const std::int32_t> labels,
                     std::span<const std::uint8_t> mask) {
  ad::Tape<double> tape;
  return sequence_loss(tape.constant(logits), labels, mask).value()(0, 0);
}

double perplexity(double loss) {
  if (!(loss >= 0.0) || !std::isfinite(loss))
    fail(ErrorKind::kInvalidArgument, "perplexity: loss must be finite and non-negative");
  return std::exp(loss);
}

double recovery(std::span<const std::int32_t> predicted, std::span<const std::int32_t> labels,
                std::span<const std::uint8_t> mask) {
  require(predicted.size() == labels.size() && labels.size() == mask.size(),
          "recovery: sequences differ in length");
  std::int64_t hit = 0, total = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!mask[i]) continue;
    ++total;
    hit += predicted[i] == labels[i];
  }
  if (total == 0) fail(ErrorKind::kInvalidArgument, "recovery: every residue is masked");
  return 100.0 * static_cast<double>(hit) / static_cast<double>(total);
}

double median(std::vector<double> values) {
  require(!values.empty(), "median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

void TrainConfig::validate() const {
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), "train config: learning_rate must be >= 0");
  require(batch_size >= 1, "train config: batch_size must be >= 1");
  require(epochs >= 1, "train config: epochs must be >= 1");
  require(max_steps >= 0, "train config: max_steps must be >= 0");
  require(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0,
          "train config: Adam betas must be in [0, 1)");
  require(adam.eps > 0.0, "train config: Adam eps must be positive");
}

double one_cycle_lr(std::int64_t step, std::int64_t total_steps, double max_lr) {
  require(total_steps >= 1, "one_cycle_lr: total_steps must be >= 1");
  const double initial = max_lr / 25.0;
  const double final_lr = initial / 1e4;
  const double warm = std::max(1.0, 0.3 * static_cast<double>(total_steps));
  const double s = static_cast<double>(std::clamp<std::int64_t>(step, 0, total_steps));
  auto cosine = [](double from, double to, double frac) {
    return to + 0.5 * (from - to) * (1.0 + std::cos(std::numbers::pi * frac));
  };
  if (s <= warm) return cosine(initial, max_lr, s / warm);
  const double rest = std::max(1.0, static_cast<double>(total_steps) - warm);
  return cosine(max_lr, final_lr, std::min(1.0, (s - warm) / rest));
}

// --- Adam -------------------------------------------------------------------

Adam::Adam(const ModelParams& params, const AdamConfig& config) : config_(config) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.push_back(MatrixXd::Zero(params.tensor(i).rows(), params.tensor(i).cols()));
    v_.push_back(m_.back());
  }
}

void Adam::step(ModelParams& params, const std::vector<MatrixXd>& grads, double lr) {
  require(grads.size() == params.size() && m_.size() == params.size(), "Adam: parameter count mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * grads[i];
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * grads[i].cwiseAbs2();
    params.tensor(i).array() -=
        lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + config_.eps);
  }
}

double clip_global_norm(std::vector<MatrixXd>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads) g *= s;
  }
  return norm;
}

// --- steps ------------------------------------------------------------------

namespace {

template <class T>
LossAndGrads gradients_impl(const ProteinGraph& batch, const ModelParams& params,
                            const ForwardOptions& options) {
  ad::Tape<T> tape;
  const auto bound = bind_params(tape, params, true);
  const auto logits = model_forward(tape, batch, bound, options);
  const auto loss = sequence_loss(logits, std::span<const std::int32_t>(batch.labels),
                                  std::span<const std::uint8_t>(batch.mask));
  LossAndGrads out;
  out.loss = static_cast<double>(loss.value()(0, 0));
  if (!std::isfinite(out.loss))
    fail(ErrorKind::kNumeric, "non-finite training loss (" + std::to_string(out.loss) + ") on a batch of " +
                                  std::to_string(batch.names.size()) + " proteins, first '" +
                                  (batch.names.empty() ? std::string("?") : batch.names[0]) + "'");
  tape.backward(loss);
  out.grads.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.grads.push_back(bound.vars[i].grad().template cast<double>());
    if (!out.grads.back().allFinite())
      fail(ErrorKind::kNumeric, "non-finite gradient for parameter " + params.name(i));
  }
  return out;
}

}  // namespace

LossAndGrads compute_gradients(const ProteinGraph& batch, const ModelParams& params,
                               Precision precision, const ForwardOptions& options) {
  return precision == Precision::kFloat32 ? gradients_impl<float>(batch, params, options)
                                          : gradients_impl<double>(batch, params, options);
}

StepResult train_step(const ProteinGraph& batch, ModelParams& params, Adam& optimizer,
                      const TrainConfig& config, double lr) {
  ForwardOptions options;
  options.training = true;
  options.dropout_seed = mix_seed(config.seed, static_cast<std::uint64_t>(optimizer.steps()) + 1000);
  auto lg = compute_gradients(batch, params, config.precision, options);
  StepResult r;
  r.loss = lg.loss;
  r.lr = lr;
  r.grad_norm = clip_global_norm(lg.grads, config.clip_norm);
  optimizer.step(params, lg.grads, lr);
  params.project_virtual_atoms();
  return r;
}

TrainSummary train(const std::vector<ProteinGraph>& graphs, ModelParams& params,
                   const TrainConfig& config, std::ostream* metrics, const StepCallback& callback) {
  config.validate();
  require(!graphs.empty(), "train: empty training set");
  const auto start = Clock::now();
  Adam optimizer(params, config.adam);
  const std::int64_t per_epoch =
      (static_cast<std::int64_t>(graphs.size()) + config.batch_size - 1) / config.batch_size;
  std::int64_t total = per_epoch * config.epochs;
  if (config.max_steps > 0) total = std::min(total, config.max_steps);

  TrainSummary summary;
  std::vector<std::size_t> order(graphs.size());
  for (int epoch = 0; epoch < config.epochs && summary.steps < total; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(config.seed, 500 + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t b = 0; b < order.size() && summary.steps < total; b += config.batch_size) {
      std::vector<ProteinGraph> parts;
      for (std::size_t k = b; k < std::min(order.size(), b + config.batch_size); ++k)
        parts.push_back(graphs[order[k]]);
      const ProteinGraph batch = batch_graphs(parts);
      const double lr = config.schedule == Schedule::kOneCycle
                            ? one_cycle_lr(summary.steps, total, config.learning_rate)
                            : config.learning_rate;
      const StepResult r = train_step(batch, params, optimizer, config, lr);
      ++summary.steps;
      summary.losses.push_back(r.loss);
      if (metrics) {
        nlohmann::json line = {{"step", summary.steps},
                               {"epoch", epoch},
                               {"loss", r.loss},
                               {"lr", r.lr},
                               {"grad_norm", r.grad_norm},
                               {"wall_time", std::chrono::duration<double>(Clock::now() - start).count()}};
        *metrics << line.dump() << '\n';
      }
      if (callback && !callback(summary.steps, r, params)) return summary;
    }
  }
  return summary;
}

// --- evaluation ---------------------------------------------------------------

namespace {

template <class T>
MatrixXd teacher_forced_logits(const ProteinGraph& graph, const ModelParams& params) {
  ad::Tape<T> tape;
  const auto bound = bind_params(tape, params, false);
  return model_forward(tape, graph, bound).value().template cast<double>();
}

}  // namespace

EvalReport evaluate(const std::vector<ProteinGraph>& graphs, const ModelParams& params,
                    const EvalOptions& options) {
  const auto start = Clock::now();
  EvalReport report;
  report.options = options;
  double nll_total = 0.0;
  std::vector<double> recs;
  for (const auto& g : graphs) {
    require(g.topology.num_proteins == 1, "evaluate: expects one protein per graph");
    const auto n = g.num_nodes();
    if (options.min_length > 0 && n < options.min_length) continue;
    if (options.max_length > 0 && n > options.max_length) continue;
    const std::int64_t valid = std::count(g.mask.begin(), g.mask.end(), std::uint8_t{1});
    if (valid == 0) continue;
    ProteinScore score;
    score.name = g.names.empty() ? std::string() : g.names[0];
    score.length = n;
    DecodeOutput decoded;
    MatrixXd logits;
    if (params.config().autoregressive()) {
      logits = options.precision == Precision::kFloat32 ? teacher_forced_logits<float>(g, params)
                                                        : teacher_forced_logits<double>(g, params);
      decoded = autoregressive_decode(g, params, options.precision);
    } else {
      decoded = one_shot_decode(g, params, options.precision);
      logits = decoded.log_probs;
    }
    score.loss = sequence_loss(logits, g.labels, g.mask);
    score.recovery = recovery(decoded.sequence, g.labels, g.mask);
    nll_total += score.loss * static_cast<double>(valid);
    report.residues += valid;
    recs.push_back(score.recovery);
    report.proteins.push_back(std::move(score));
  }
  if (report.proteins.empty()) {
    report.empty = true;
  } else {
    report.perplexity = perplexity(nll_total / static_cast<double>(report.residues));
    report.median_recovery = median(recs);
    report.worst_recovery = *std::min_element(recs.begin(), recs.end());
  }
  report.wall_time = std::chrono::duration<double>(Clock::now() - start).count();
  return report;
}

}  // namespace pifold
