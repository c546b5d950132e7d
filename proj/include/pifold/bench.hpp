#pragma once

// Decoding-latency benchmark: one-shot versus autoregressive greedy decoding
// on synthetic chains of increasing length.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "pifold/model.hpp"

namespace pifold {

struct BenchOptions {
  std::vector<std::int32_t> lengths = {200, 400, 800, 1600};
  int reps = 5;
  int warmups = 2;
  std::uint64_t seed = 0;
  Precision precision = Precision::kFloat32;
  // Runs the repetitions of one length concurrently (throughput mode).
  bool parallel = false;
  // A single decode faster than this is repeated until the batch of inner
  // repetitions takes at least this long.
  double min_sample_seconds = 1e-3;

  void validate() const;
};

struct TimingStats {
  double median = 0.0;
  double p95 = 0.0;
  int inner_reps = 1;
  std::vector<double> samples;  // seconds per decode
};

struct LengthTiming {
  std::int32_t length = 0;
  TimingStats one_shot;
  TimingStats autoregressive;
  double ratio = 0.0;  // autoregressive median / one-shot median
};

struct BenchReport {
  BenchOptions options;
  std::vector<LengthTiming> lengths;
  std::vector<std::string> notes;
  std::string config_hash;
  nlohmann::json environment;
  nlohmann::json models;
  double wall_time = 0.0;
};

// Nearest-rank p95 and the median of `samples` (seconds).
TimingStats timing_stats(std::vector<double> samples, int inner_reps);

// Both models must share the feature configuration; `autoregressive` must
// have decoder layers and `one_shot` none.
BenchReport bench_decoding(const ModelParams& one_shot, const ModelParams& autoregressive,
                           const BenchOptions& options);

// Compiler, build flags, CPU model and thread count.
nlohmann::json environment_fingerprint();

nlohmann::json to_json(const BenchReport& report);

// Reasons two reports are not comparable; empty when they are.
std::vector<std::string> incomparable_reasons(const nlohmann::json& a, const nlohmann::json& b);

// True when every ratio is strictly larger than the one at the previous length.
bool ratios_increasing(const BenchReport& report);

// Least-squares slope of log(one-shot median) against log(L).
double one_shot_scaling_exponent(const BenchReport& report);

}  // namespace pifold
