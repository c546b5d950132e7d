#include "pifold/decode.hpp"

#include <chrono>
#include <numeric>

#include "pifold/error.hpp"

namespace pifold {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

template <class T>
DecodeOutput one_shot_impl(const ProteinGraph& graph, const ModelParams& params) {
  const auto start = Clock::now();
  ad::Tape<T> tape;
  const auto bound = bind_params(tape, params, false);
  const auto logits = pifold_forward(tape, graph, bound);
  DecodeOutput out;
  out.log_probs = ad::log_softmax_rows<T>(logits.value()).template cast<double>();
  out.sequence = argmax_rows(out.log_probs);
  out.wall_time = seconds_since(start);
  return out;
}

template <class T>
DecodeOutput autoregressive_impl(const ProteinGraph& graph, const ModelParams& params) {
  const ModelConfig& config = params.config();
  require(config.autoregressive(), "autoregressive_decode: model has no decoder layers");
  require(graph.topology.num_proteins == 1, "autoregressive_decode: graph must hold one protein");
  const auto start = Clock::now();
  const std::int32_t n = graph.num_nodes();

  ad::Tape<T> tape;
  const auto bound = bind_params(tape, params, false);
  ad::Matrix<T> h_enc, e_enc;
  {
    const std::size_t mark = tape.size();
    auto [h, e] = encoder_forward(tape, graph, bound, ForwardOptions{});
    h_enc = h.value();
    e_enc = e.value();
    tape.rewind(mark);
  }
  const auto enc = tape.constant(std::move(h_enc));
  const auto& dst = *graph.topology.dst;

  DecodeOutput out;
  out.sequence.assign(static_cast<std::size_t>(n), 0);
  out.log_probs.resize(n, kNumResidueTypes);
  const std::size_t mark = tape.size();
  std::size_t m_prefix = 0;
  for (std::int32_t t = 0; t < n; ++t) {
    while (m_prefix < dst.size() && dst[m_prefix] <= t) ++m_prefix;
    const auto ctx = make_decoder_context(graph, enc, t + 1);
    std::vector<std::int32_t> rows(static_cast<std::size_t>(t + 1));
    std::iota(rows.begin(), rows.end(), 0);
    auto h = ad::gather_rows(enc, ad::make_indices(std::move(rows)));
    auto e = tape.constant(e_enc.topRows(static_cast<Eigen::Index>(m_prefix)));
    e = add_label_embedding(e, ctx, bound, std::span<const std::int32_t>(out.sequence));
    for (int l = 0; l < config.decoder_layers; ++l) {
      const auto step = decoder_layer(h, e, ctx, bound.layers[config.encoder_layers + l]);
      h = step.h;
      e = step.e;
    }
    const auto logits = readout(ad::gather_rows(h, ad::make_indices({t})), bound);
    const MatrixXd lp = ad::log_softmax_rows<T>(logits.value()).template cast<double>();
    out.log_probs.row(t) = lp.row(0);
    out.sequence[t] = argmax_rows(lp)[0];
    tape.rewind(mark);
  }
  out.wall_time = seconds_since(start);
  return out;
}

}  // namespace

std::vector<std::int32_t> argmax_rows(const MatrixXd& scores) {
  std::vector<std::int32_t> out(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < scores.cols(); ++c)
      if (scores(i, c) > scores(i, best)) best = c;
    out[i] = static_cast<std::int32_t>(best);
  }
  return out;
}

DecodeOutput one_shot_decode(const ProteinGraph& graph, const ModelParams& params, Precision precision) {
  return precision == Precision::kFloat32 ? one_shot_impl<float>(graph, params)
                                          : one_shot_impl<double>(graph, params);
}

DecodeOutput autoregressive_decode(const ProteinGraph& graph, const ModelParams& params,
                                   Precision precision) {
  return precision == Precision::kFloat32 ? autoregressive_impl<float>(graph, params)
                                          : autoregressive_impl<double>(graph, params);
}

DecodeOutput decode(const ProteinGraph& graph, const ModelParams& params, Precision precision) {
  return params.config().autoregressive() ? autoregressive_decode(graph, params, precision)
                                          : one_shot_decode(graph, params, precision);
}

}  // namespace pifold
