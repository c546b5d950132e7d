#pragma once

// Greedy sequence decoding: one-shot from a single forward pass, and the
// autoregressive variant that re-runs the decoder layers per position.

#include <cstdint>
#include <vector>

#include "pifold/model.hpp"

namespace pifold {

struct DecodeOutput {
  std::vector<std::int32_t> sequence;
  MatrixXd log_probs;  // n×20, row-wise log-softmax
  double wall_time = 0.0;  // seconds, monotonic clock
};

// Row-wise argmax; ties go to the lowest residue code.
std::vector<std::int32_t> argmax_rows(const MatrixXd& scores);

DecodeOutput one_shot_decode(const ProteinGraph& graph, const ModelParams& params,
                             Precision precision = Precision::kFloat64);

// Encoder once, then for t = 0..n-1 the decoder layers over residues 0..t with
// the labels decoded so far; residue t takes the argmax of its logits.
// The graph must hold a single protein.
DecodeOutput autoregressive_decode(const ProteinGraph& graph, const ModelParams& params,
                                   Precision precision = Precision::kFloat64);

// Dispatches on the model kind.
DecodeOutput decode(const ProteinGraph& graph, const ModelParams& params,
                    Precision precision = Precision::kFloat64);

}  // namespace pifold
