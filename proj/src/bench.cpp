#include "pifold/bench.hpp"

#include <sys/utsname.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <thread>

#include "pifold/dataset.hpp"
#include "pifold/decode.hpp"
#include "pifold/error.hpp"
#include "pifold/random.hpp"
#include "pifold/serialization.hpp"

namespace pifold {

namespace {

using Clock = std::chrono::steady_clock;

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Seconds per decode, repeating the call `inner` times.
template <class F>
double time_call(F&& f, int inner) {
  const auto t0 = Clock::now();
  for (int i = 0; i < inner; ++i) f();
  return std::chrono::duration<double>(Clock::now() - t0).count() / inner;
}

// Picks the inner repetition count so one sample lasts at least `min_s`.
template <class F>
int calibrate(F&& f, double min_s) {
  int inner = 1;
  while (inner < (1 << 20)) {
    const double per = time_call(f, inner);
    if (per * inner >= min_s) break;
    inner *= 2;
  }
  return inner;
}

template <class F>
std::vector<double> run_samples(F&& f, int count, int inner, bool parallel) {
  std::vector<double> out(static_cast<std::size_t>(count));
  if (!parallel) {
    for (int r = 0; r < count; ++r) out[static_cast<std::size_t>(r)] = time_call([&] { f(r); }, inner);
    return out;
  }
  std::vector<std::thread> threads;
  for (int r = 0; r < count; ++r)
    threads.emplace_back([&, r] { out[static_cast<std::size_t>(r)] = time_call([&] { f(r); }, inner); });
  for (auto& t : threads) t.join();
  return out;
}

std::string cpu_model() {
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) return line.substr(line.find_first_not_of(' ', colon + 1));
    }
  }
  return "unknown";
}

nlohmann::json timing_json(const TimingStats& s) {
  return {{"median", s.median}, {"p95", s.p95}, {"inner_reps", s.inner_reps}, {"samples", s.samples}};
}

}  // namespace

void BenchOptions::validate() const {
  require(!lengths.empty(), "bench: no lengths given");
  for (auto l : lengths) require(l >= 2, "bench: lengths must be >= 2");
  require(reps >= 1, "bench: reps must be >= 1");
  require(warmups >= 0, "bench: warmups must be >= 0");
  require(min_sample_seconds >= 0.0, "bench: min_sample_seconds must be >= 0");
}

TimingStats timing_stats(std::vector<double> samples, int inner_reps) {
  require(!samples.empty(), "timing_stats: no samples");
  TimingStats s;
  s.samples = samples;
  s.inner_reps = inner_reps;
  std::sort(samples.begin(), samples.end());
  const std::size_t n = samples.size();
  s.median = n % 2 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  s.p95 = samples[std::max<std::size_t>(rank, 1) - 1];
  return s;
}

nlohmann::json environment_fingerprint() {
  nlohmann::json env;
  env["compiler"] = std::string(__VERSION__);
#ifdef NDEBUG
  env["assertions"] = false;
#else
  env["assertions"] = true;
#endif
  std::vector<std::string> isa;
#ifdef __AVX2__
  isa.push_back("avx2");
#endif
#ifdef __FMA__
  isa.push_back("fma");
#endif
#ifdef __AVX512F__
  isa.push_back("avx512f");
#endif
  env["isa"] = isa;
  env["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                 std::to_string(EIGEN_MINOR_VERSION);
  env["cpu"] = cpu_model();
  env["hardware_threads"] = std::thread::hardware_concurrency();
  utsname u{};
  if (uname(&u) == 0) env["os"] = std::string(u.sysname) + " " + u.release + " " + u.machine;
  return env;
}

BenchReport bench_decoding(const ModelParams& one_shot, const ModelParams& autoregressive,
                           const BenchOptions& options) {
  options.validate();
  require(!one_shot.config().autoregressive(), "bench: the one-shot model has decoder layers");
  require(autoregressive.config().autoregressive(), "bench: the autoregressive model has no decoder layers");
  require(one_shot.config().features == autoregressive.config().features,
          "bench: the two models use different feature configurations");
  const auto start = Clock::now();

  BenchReport report;
  report.options = options;
  report.environment = environment_fingerprint();
  report.models = {{"one_shot", one_shot.config()}, {"autoregressive", autoregressive.config()}};
  report.notes.push_back("times cover decoding only; featurization is done beforehand");
  report.notes.push_back(std::to_string(options.warmups) + " warm-up decodes per scheme and length are excluded");
  report.notes.push_back(options.parallel ? "parallel mode: repetitions of a length run concurrently"
                                          : "single-threaded mode");
  const auto features = one_shot.config().features;
  const auto vos = one_shot.virtual_atoms();
  const auto var = autoregressive.virtual_atoms();

  for (const auto length : options.lengths) {
    const int total = options.warmups + options.reps;
    std::vector<ProteinGraph> g_os, g_ar;
    for (int r = 0; r < total; ++r) {
      const Protein p = synth_protein(mix_seed(options.seed, static_cast<std::uint64_t>(length) * 1000 + r), length);
      g_os.push_back(featurize(p, features, vos));
      g_ar.push_back(featurize(p, features, var));
    }
    auto os = [&](int r) { one_shot_decode(g_os[static_cast<std::size_t>(r)], one_shot, options.precision); };
    auto ar = [&](int r) {
      autoregressive_decode(g_ar[static_cast<std::size_t>(r)], autoregressive, options.precision);
    };
    // The last warm-up doubles as the timer-resolution probe.
    double warm_os = 0.0, warm_ar = 0.0;
    for (int r = 0; r < options.warmups; ++r) {
      warm_os = time_call([&] { os(r); }, 1);
      warm_ar = time_call([&] { ar(r); }, 1);
    }
    const int w = options.warmups;
    auto os_timed = [&](int r) { os(w + r); };
    auto ar_timed = [&](int r) { ar(w + r); };
    const double min_s = options.min_sample_seconds;
    const int inner_os = w > 0 && warm_os >= min_s ? 1 : calibrate([&] { os_timed(0); }, min_s);
    const int inner_ar = w > 0 && warm_ar >= min_s ? 1 : calibrate([&] { ar_timed(0); }, min_s);
    for (auto [name, inner] : {std::pair{"one-shot", inner_os}, std::pair{"autoregressive", inner_ar}}) {
      if (inner > 1)
        report.notes.push_back(std::string(name) + " at L=" + std::to_string(length) + ": a decode took under " +
                               std::to_string(options.min_sample_seconds) + " s, so each sample averages " +
                               std::to_string(inner) + " inner repetitions");
    }
    LengthTiming lt;
    lt.length = length;
    lt.one_shot = timing_stats(run_samples(os_timed, options.reps, inner_os, options.parallel), inner_os);
    lt.autoregressive = timing_stats(run_samples(ar_timed, options.reps, inner_ar, options.parallel), inner_ar);
    if (!(lt.one_shot.median > 0.0 && lt.autoregressive.median > 0.0))
      fail(ErrorKind::kNumeric, "bench: non-positive median time at L=" + std::to_string(length));
    lt.ratio = lt.autoregressive.median / lt.one_shot.median;
    report.lengths.push_back(std::move(lt));
  }

  nlohmann::json key = {{"models", report.models},
                        {"one_shot_layout", hex64(one_shot.layout_hash())},
                        {"autoregressive_layout", hex64(autoregressive.layout_hash())},
                        {"precision", precision_name(options.precision)},
                        {"lengths", options.lengths},
                        {"seed", options.seed}};
  report.config_hash = hex64(fnv1a(key.dump()));
  report.wall_time = std::chrono::duration<double>(Clock::now() - start).count();
  return report;
}

nlohmann::json to_json(const BenchReport& report) {
  nlohmann::json lengths = nlohmann::json::array();
  for (const auto& lt : report.lengths)
    lengths.push_back({{"length", lt.length},
                       {"one_shot", timing_json(lt.one_shot)},
                       {"autoregressive", timing_json(lt.autoregressive)},
                       {"ratio", lt.ratio}});
  const auto& o = report.options;
  return {{"config_hash", report.config_hash},
          {"precision", precision_name(o.precision)},
          {"mode", o.parallel ? "parallel" : "single"},
          {"reps", o.reps},
          {"warmups", o.warmups},
          {"seed", o.seed},
          {"min_sample_seconds", o.min_sample_seconds},
          {"lengths", lengths},
          {"models", report.models},
          {"environment", report.environment},
          {"notes", report.notes},
          {"wall_time", report.wall_time}};
}

std::vector<std::string> incomparable_reasons(const nlohmann::json& a, const nlohmann::json& b) {
  std::vector<std::string> reasons;
  for (const char* key : {"config_hash", "precision", "mode", "reps", "warmups"}) {
    if (a.value(key, nlohmann::json()) != b.value(key, nlohmann::json()))
      reasons.push_back(std::string(key) + " differs");
  }
  const auto env_a = a.value("environment", nlohmann::json::object());
  const auto env_b = b.value("environment", nlohmann::json::object());
  for (const char* key : {"cpu", "compiler", "isa"}) {
    if (env_a.value(key, nlohmann::json()) != env_b.value(key, nlohmann::json()))
      reasons.push_back(std::string("environment.") + key + " differs");
  }
  return reasons;
}

bool ratios_increasing(const BenchReport& report) {
  for (std::size_t i = 1; i < report.lengths.size(); ++i)
    if (!(report.lengths[i].ratio > report.lengths[i - 1].ratio)) return false;
  return true;
}

double one_shot_scaling_exponent(const BenchReport& report) {
  const auto n = static_cast<double>(report.lengths.size());
  require(report.lengths.size() >= 2, "scaling exponent needs at least two lengths");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& lt : report.lengths) {
    const double x = std::log(static_cast<double>(lt.length));
    const double y = std::log(lt.one_shot.median);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace pifold
