#include "pifold/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pifold/bench.hpp"
#include "pifold/dataset.hpp"
#include "pifold/decode.hpp"
#include "pifold/error.hpp"
#include "pifold/random.hpp"
#include "pifold/serialization.hpp"
#include "pifold/train.hpp"

namespace pifold {

namespace {

using nlohmann::json;

// Writes `text` to `path`, or to `out` when the path is empty.
void emit(const std::string& text, const std::string& path, std::ostream& out) {
  if (path.empty()) {
    out << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::kNotFound, "cannot open output file: " + path);
  f << text;
  if (!f) fail(ErrorKind::kData, "failed writing " + path);
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kNotFound, "config not found: " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::kData, "malformed JSON in " + path + ": " + e.what());
  }
}

// {"model": {...}, "train": {...}}; both parts optional.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

RunConfig load_run_config(const std::string& path) {
  RunConfig rc;
  if (path.empty()) return rc;
  const json j = read_json_file(path);
  check_keys(j, {"model", "train"}, "config file");
  try {
    if (j.contains("model")) rc.model = j.at("model").get<ModelConfig>();
    if (j.contains("train")) rc.train = j.at("train").get<TrainConfig>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kInvalidArgument, "config " + path + ": " + e.what());
  }
  rc.model.validate();
  rc.train.validate();
  return rc;
}

std::vector<ProteinGraph> featurize_all(const std::vector<Protein>& proteins, const ModelParams& params) {
  std::vector<ProteinGraph> graphs;
  graphs.reserve(proteins.size());
  const auto vparams = params.virtual_atoms();
  for (const auto& p : proteins) graphs.push_back(featurize(p, params.config().features, vparams));
  return graphs;
}

std::vector<Protein> select_split(const std::vector<Protein>& records, const std::string& manifest,
                                  const std::string& split) {
  if (manifest.empty()) return records;
  DatasetSplit s = split_dataset(records, parse_manifest(manifest));
  if (split == "train") return s.train;
  if (split == "validation") return s.validation;
  return s.test;
}

struct Options {
  std::string config, out, precision, input, checkpoint, manifest, split = "test", metrics;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::int32_t n = 100, count = 10, min_length = 0, max_length = 0;
  bool describe = false, parallel = false;
  std::int64_t max_steps = 0;
  int epochs = 0, reps = 5, warmups = 2, hidden = 16;
  std::vector<std::int32_t> lengths = {200, 400, 800, 1600};
};

int cmd_synth(const Options& o, std::ostream& out) {
  require(o.n >= 1, "synth: --n must be >= 1");
  require(o.count >= 0, "synth: --count must be >= 0");
  std::ostringstream os;
  write_jsonl(os, synth_dataset(o.seed, o.count, o.n));
  emit(os.str(), o.out, out);
  return kExitOk;
}

int cmd_featurize(const Options& o, std::ostream& out) {
  const RunConfig rc = load_run_config(o.config);
  const FeatureConfig& fc = rc.model.features;
  if (o.describe) {
    // Validates the dataset as a side effect when one is given.
    if (!o.input.empty()) parse_jsonl(o.input);
    emit(describe_layout(fc) + "\n", o.out, out);
    return kExitOk;
  }
  require(!o.input.empty(), "featurize: a dataset path is required");
  const auto proteins = parse_jsonl(o.input);
  const auto vparams = VirtualAtomParams::initial(fc.num_virtual, mix_seed(o.seed, 1));
  std::ostringstream os;
  for (const auto& p : proteins) {
    const ProteinGraph g = featurize(p, fc, vparams);
    json line = {{"name", p.name},
                 {"nodes", g.num_nodes()},
                 {"edges", g.num_edges()},
                 {"node_width", g.node_features.cols()},
                 {"edge_width", g.edge_features.cols()},
                 {"masked", std::count(p.mask.begin(), p.mask.end(), std::uint8_t{0})}};
    os << line.dump() << '\n';
  }
  emit(os.str(), o.out, out);
  return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out) {
  RunConfig rc = load_run_config(o.config);
  if (o.seed_set) rc.train.seed = o.seed;
  if (!o.precision.empty()) rc.train.precision = parse_precision(o.precision);
  if (o.max_steps > 0) rc.train.max_steps = o.max_steps;
  if (o.epochs > 0) rc.train.epochs = o.epochs;
  rc.train.validate();
  require(!o.out.empty(), "train: --out <checkpoint> is required");
  const auto proteins = select_split(parse_jsonl(o.input), o.manifest, "train");
  if (proteins.empty()) fail(ErrorKind::kData, "train: no training proteins in " + o.input);
  ModelParams params = ModelParams::init(rc.model, rc.train.seed);
  const auto graphs = featurize_all(proteins, params);
  std::ofstream metrics;
  if (!o.metrics.empty()) {
    metrics.open(o.metrics, std::ios::binary);
    if (!metrics) fail(ErrorKind::kNotFound, "cannot open metrics file: " + o.metrics);
  }
  const TrainSummary summary = train(graphs, params, rc.train, o.metrics.empty() ? nullptr : &metrics);
  save_checkpoint(o.out, params);
  json result = {{"steps", summary.steps},
                 {"final_loss", summary.losses.empty() ? json() : json(summary.losses.back())},
                 {"checkpoint", o.out},
                 {"proteins", proteins.size()},
                 {"train", rc.train}};
  out << result.dump(2) << '\n';
  return kExitOk;
}

int cmd_design(const Options& o, std::ostream& out) {
  const ModelParams params = load_checkpoint(o.checkpoint);
  const Precision precision = o.precision.empty() ? Precision::kFloat64 : parse_precision(o.precision);
  const auto proteins = select_split(parse_jsonl(o.input), o.manifest, o.split);
  std::ostringstream fasta;
  json sidecar = {{"checkpoint", o.checkpoint},
                  {"precision", precision_name(precision)},
                  {"model", params.config()},
                  {"designs", json::array()}};
  for (const auto& p : proteins) {
    const ProteinGraph g = featurize(p, params.config().features, params.virtual_atoms());
    const DecodeOutput d = decode(g, params, precision);
    std::string seq;
    double logp = 0.0;
    std::vector<double> per_residue;
    for (std::size_t i = 0; i < d.sequence.size(); ++i) {
      seq += residue_letter(d.sequence[i]);
      per_residue.push_back(d.log_probs(static_cast<Eigen::Index>(i), d.sequence[i]));
      logp += per_residue.back();
    }
    fasta << '>' << p.name << '\n' << seq << '\n';
    json entry = {{"name", p.name},
                  {"length", p.size()},
                  {"sequence", seq},
                  {"mean_log_prob", logp / std::max<std::size_t>(1, d.sequence.size())},
                  {"log_probs", per_residue},
                  {"wall_time", d.wall_time}};
    const bool any_valid = std::any_of(p.mask.begin(), p.mask.end(), [](std::uint8_t m) { return m != 0; });
    entry["native_recovery"] = any_valid ? json(recovery(d.sequence, g.labels, g.mask)) : json();
    sidecar["designs"].push_back(entry);
  }
  emit(fasta.str(), o.out, out);
  if (!o.out.empty()) emit(sidecar.dump(2) + "\n", o.out + ".json", out);
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const ModelParams params = load_checkpoint(o.checkpoint);
  EvalOptions eo;
  if (!o.precision.empty()) eo.precision = parse_precision(o.precision);
  eo.min_length = o.min_length;
  eo.max_length = o.max_length;
  const auto proteins = select_split(parse_jsonl(o.input), o.manifest, o.split);
  const EvalReport report = evaluate(featurize_all(proteins, params), params, eo);
  json j = report;
  j["checkpoint"] = o.checkpoint;
  emit(j.dump(2) + "\n", o.out, out);
  return kExitOk;
}

int cmd_bench(const Options& o, std::ostream& out) {
  const RunConfig rc = load_run_config(o.config);
  ModelConfig os_cfg = rc.model;
  if (o.config.empty()) os_cfg.hidden = o.hidden;
  os_cfg.encoder_layers = 5;
  os_cfg.decoder_layers = 0;
  ModelConfig ar_cfg = os_cfg;
  ar_cfg.encoder_layers = 3;
  ar_cfg.decoder_layers = 2;
  BenchOptions bo;
  bo.lengths = o.lengths;
  bo.reps = o.reps;
  bo.warmups = o.warmups;
  bo.seed = o.seed;
  bo.parallel = o.parallel;
  if (!o.precision.empty()) bo.precision = parse_precision(o.precision);
  const BenchReport report = bench_decoding(ModelParams::init(os_cfg, mix_seed(o.seed, 11)),
                                            ModelParams::init(ar_cfg, mix_seed(o.seed, 12)), bo);
  json j = to_json(report);
  j["ratios_increasing"] = ratios_increasing(report);
  if (report.lengths.size() >= 2) j["one_shot_scaling_exponent"] = one_shot_scaling_exponent(report);
  emit(j.dump(2) + "\n", o.out, out);
  return kExitOk;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return kExitUsage;
    case ErrorKind::kNotFound: return kExitNotFound;
    case ErrorKind::kData: return kExitData;
    case ErrorKind::kNumeric: return kExitNumeric;
    case ErrorKind::kState: return kExitInternal;
  }
  return kExitInternal;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Protein sequence design from backbone structure", "pifold"};
  app.require_subcommand(1, 1);
  Options o;

  auto seed_opt = [&](CLI::App* c) {
    c->add_option_function<std::uint64_t>(
        "--seed", [&](std::uint64_t s) { o.seed = s, o.seed_set = true; }, "Random seed");
  };
  auto common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "JSON config file");
    c->add_option("--out", o.out, "Output path (stdout when omitted)");
  };
  auto precision = [&](CLI::App* c) {
    c->add_option("--precision", o.precision, "Compute precision")->check(CLI::IsMember({"f32", "f64"}));
  };

  auto* synth = app.add_subcommand("synth", "Write synthetic backbones as JSON lines");
  seed_opt(synth);
  synth->add_option("--out", o.out, "Output path (stdout when omitted)");
  synth->add_option("--n", o.n, "Residues per protein");
  synth->add_option("--count", o.count, "Number of proteins");

  auto* feat = app.add_subcommand("featurize", "Featurize a dataset or describe the feature layout");
  common(feat);
  seed_opt(feat);
  feat->add_option("input", o.input, "JSON-lines dataset");
  feat->add_flag("--describe", o.describe, "Print the feature layout table");

  auto* tr = app.add_subcommand("train", "Train a model and write a checkpoint");
  common(tr);
  seed_opt(tr);
  precision(tr);
  tr->add_option("input", o.input, "JSON-lines dataset")->required();
  tr->add_option("--manifest", o.manifest, "Split manifest; trains on its train list");
  tr->add_option("--metrics", o.metrics, "JSON-lines metrics log");
  tr->add_option("--max-steps", o.max_steps, "Stop after this many steps");
  tr->add_option("--epochs", o.epochs, "Override the configured epoch count");

  auto* design = app.add_subcommand("design", "Greedy-decode sequences (FASTA, plus a JSON sidecar with --out)");
  common(design);
  seed_opt(design);
  precision(design);
  design->add_option("input", o.input, "JSON-lines dataset")->required();
  design->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
  design->add_option("--manifest", o.manifest, "Split manifest");
  design->add_option("--split", o.split, "Split to use with --manifest")
      ->check(CLI::IsMember({"train", "validation", "test"}));

  auto* ev = app.add_subcommand("eval", "Perplexity and recovery report");
  common(ev);
  seed_opt(ev);
  precision(ev);
  ev->add_option("input", o.input, "JSON-lines dataset")->required();
  ev->add_option("--checkpoint", o.checkpoint, "Model checkpoint")->required();
  ev->add_option("--manifest", o.manifest, "Split manifest");
  ev->add_option("--split", o.split, "Split to use with --manifest")
      ->check(CLI::IsMember({"train", "validation", "test"}));
  ev->add_option("--min-length", o.min_length, "Skip proteins shorter than this");
  ev->add_option("--max-length", o.max_length, "Skip proteins longer than this (100 gives the short set)");

  auto* bench = app.add_subcommand("bench", "One-shot versus autoregressive decoding latency");
  common(bench);
  seed_opt(bench);
  precision(bench);
  bench->add_option("--lengths", o.lengths, "Chain lengths")->delimiter(',');
  bench->add_option("--reps", o.reps, "Timed repetitions per length");
  bench->add_option("--warmups", o.warmups, "Untimed warm-up decodes per length");
  bench->add_option("--hidden", o.hidden, "Hidden width when no --config is given");
  bench->add_flag("--parallel", o.parallel, "Run repetitions concurrently");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*synth) return cmd_synth(o, out);
    if (*feat) return cmd_featurize(o, out);
    if (*tr) return cmd_train(o, out);
    if (*design) return cmd_design(o, out);
    if (*ev) return cmd_eval(o, out);
    return cmd_bench(o, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}

}  // namespace pifold
