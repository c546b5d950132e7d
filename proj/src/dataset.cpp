#include "pifold/dataset.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "pifold/error.hpp"
#include "pifold/random.hpp"

namespace pifold {

namespace {

using nlohmann::json;

constexpr std::array<const char*, 4> kAtomKeys = {"N", "CA", "C", "O"};

// Bare NaN is not JSON; read it as null. Strings are left untouched.
std::string nan_to_null(std::string_view line) {
  std::string out;
  out.reserve(line.size());
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (in_string) {
      out.push_back(c);
      if (c == '\\' && i + 1 < line.size()) out.push_back(line[++i]);
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    if (line.compare(i, 3, "NaN") == 0) {
      out += "null";
      i += 2;
      continue;
    }
    out.push_back(c);
  }
  return out;
}

[[noreturn]] void line_error(std::size_t line, const std::string& reason) {
  fail(ErrorKind::kData, reason + ", line " + std::to_string(line));
}

Protein record_to_protein(const json& rec, std::size_t line) {
  if (!rec.is_object()) line_error(line, "record is not a JSON object");
  Protein p;
  if (!rec.contains("name") || !rec.at("name").is_string()) line_error(line, "missing string field 'name'");
  p.name = rec.at("name").get<std::string>();
  if (!rec.contains("seq") || !rec.at("seq").is_string()) line_error(line, "missing string field 'seq'");
  const auto seq = rec.at("seq").get<std::string>();
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const auto code = residue_code(seq[i]);
    if (!code) line_error(line, std::string("unknown residue letter '") + seq[i] + "' at position " + std::to_string(i));
    p.sequence.push_back(*code);
  }
  const std::size_t n = seq.size();
  if (!rec.contains("coords") || !rec.at("coords").is_object()) line_error(line, "missing object field 'coords'");
  const json& coords = rec.at("coords");
  std::array<std::vector<Vec3>*, 4> dst = {&p.n, &p.ca, &p.c, &p.o};
  p.mask.assign(n, 1);
  for (std::size_t a = 0; a < kAtomKeys.size(); ++a) {
    const char* key = kAtomKeys[a];
    if (!coords.contains(key) || !coords.at(key).is_array())
      line_error(line, std::string("missing coordinate list '") + key + "'");
    const json& rows = coords.at(key);
    if (rows.size() != n)
      line_error(line, std::string("length mismatch: seq has ") + std::to_string(n) + " residues but " + key +
                           " has " + std::to_string(rows.size()) + " rows");
    dst[a]->resize(n, Vec3::Zero());
    for (std::size_t i = 0; i < n; ++i) {
      const json& row = rows[i];
      if (row.is_null()) {
        p.mask[i] = 0;
        continue;
      }
      if (!row.is_array() || row.size() != 3)
        line_error(line, std::string(key) + " row " + std::to_string(i) + " is not an [x, y, z] triple");
      Vec3 v;
      for (int k = 0; k < 3; ++k) {
        const json& x = row[k];
        if (x.is_null()) {
          p.mask[i] = 0;
          v[k] = 0.0;
        } else if (x.is_number()) {
          v[k] = x.get<double>();
          if (!std::isfinite(v[k])) p.mask[i] = 0;
        } else {
          line_error(line, std::string("non-numeric coordinate in ") + key + " row " + std::to_string(i));
        }
      }
      (*dst[a])[i] = v;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (p.mask[i]) continue;
    p.n[i] = p.ca[i] = p.c[i] = p.o[i] = Vec3::Zero();
  }
  if (rec.contains("chain_breaks")) {
    const json& br = rec.at("chain_breaks");
    if (!br.is_array()) line_error(line, "'chain_breaks' must be a list of residue indices");
    for (const auto& b : br) {
      if (!b.is_number_integer()) line_error(line, "'chain_breaks' must be a list of residue indices");
      p.chain_breaks.push_back(b.get<std::int32_t>());
    }
  }
  try {
    p.validate();
  } catch (const Error& e) {
    line_error(line, e.what());
  }
  return p;
}

}  // namespace

std::vector<Protein> parse_jsonl_text(const std::string& text) {
  std::vector<Protein> out;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(nan_to_null(line));
    } catch (const json::parse_error& e) {
      line_error(lineno, std::string("malformed JSON (") + e.what() + ")");
    }
    out.push_back(record_to_protein(rec, lineno));
  }
  return out;
}

std::vector<Protein> parse_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::kNotFound, "dataset not found: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return parse_jsonl_text(ss.str());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kData) fail(ErrorKind::kData, path + ": " + e.what());
    throw;
  }
}

std::string protein_to_jsonl(const Protein& p) {
  p.validate();
  json rec;
  rec["name"] = p.name;
  rec["seq"] = p.sequence_string();
  json coords = json::object();
  for (std::size_t a = 0; a < kAtomKeys.size(); ++a) {
    json rows = json::array();
    for (std::int32_t i = 0; i < p.size(); ++i) {
      if (!p.valid(i)) {
        rows.push_back(nullptr);
        continue;
      }
      const Vec3& v = p.atom(static_cast<Atom>(a), i);
      rows.push_back({v.x(), v.y(), v.z()});
    }
    coords[kAtomKeys[a]] = std::move(rows);
  }
  rec["coords"] = std::move(coords);
  if (!p.chain_breaks.empty()) rec["chain_breaks"] = p.chain_breaks;
  return rec.dump();
}

void write_jsonl(std::ostream& os, const std::vector<Protein>& proteins) {
  for (const auto& p : proteins) os << protein_to_jsonl(p) << '\n';
}

void write_jsonl(const std::string& path, const std::vector<Protein>& proteins) {
  std::ofstream os(path);
  if (!os) fail(ErrorKind::kNotFound, "cannot open for writing: " + path);
  write_jsonl(os, proteins);
}

// --- synthetic backbones ----------------------------------------------------

namespace {

constexpr double kBondNCa = 1.458;
constexpr double kBondCaC = 1.525;
constexpr double kBondCN = 1.329;
constexpr double kBondCO = 1.231;
constexpr double kAngleNCaC = 111.2;
constexpr double kAngleCaCN = 116.2;
constexpr double kAngleCNCa = 121.7;
constexpr double kAngleCaCO = 120.5;

constexpr std::array<double, 5> kPhiCenters = {-100.0, -80.0, -60.0, -40.0, -20.0};
constexpr std::array<double, 4> kPsiCenters = {-81.0, -57.0, -33.0, -9.0};
constexpr double kBucketSpread = 3.0;
// Terminal residues lack phi (first) or psi (last); those use fixed buckets.
constexpr int kFirstPhiBucket = 2;
constexpr int kLastPsiBucket = 1;

double rad(double deg) { return deg * std::numbers::pi / 180.0; }

// Places d with |cd| = bond, angle(b, c, d) = angle, dihedral(a, b, c, d) = torsion.
Vec3 place(const Vec3& a, const Vec3& b, const Vec3& c, double bond, double angle, double torsion) {
  const Vec3 bc = (c - b).normalized();
  const Vec3 n = (b - a).cross(bc).normalized();
  const Vec3 m = n.cross(bc);
  const double th = rad(angle), ph = rad(torsion);
  const Vec3 d2(-bond * std::cos(th), bond * std::sin(th) * std::cos(ph), bond * std::sin(th) * std::sin(ph));
  return c + bc * d2.x() + m * d2.y() + n * d2.z();
}

Vec3 jitter(Rng& rng) {
  Vec3 v;
  do {
    v = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
  } while (v.squaredNorm() > 1.0);
  return v * kSynthJitter;
}

}  // namespace

Protein synth_protein(std::uint64_t seed, std::int32_t n) {
  require(n >= 1, "synth_protein: n must be >= 1");
  Rng rng(seed);
  std::vector<int> phi_b(n), psi_b(n);
  std::vector<double> phi(n), psi(n);
  for (std::int32_t i = 0; i < n; ++i) {
    phi_b[i] = i == 0 ? kFirstPhiBucket : static_cast<int>(rng.below(kPhiCenters.size()));
    psi_b[i] = i == n - 1 ? kLastPsiBucket : static_cast<int>(rng.below(kPsiCenters.size()));
    phi[i] = kPhiCenters[phi_b[i]] + rng.uniform(-kBucketSpread, kBucketSpread);
    psi[i] = kPsiCenters[psi_b[i]] + rng.uniform(-kBucketSpread, kBucketSpread);
  }
  Protein p;
  p.name = "synth-" + std::to_string(seed) + "-" + std::to_string(n);
  p.n.resize(n);
  p.ca.resize(n);
  p.c.resize(n);
  p.o.resize(n);
  p.n[0] = Vec3::Zero();
  p.ca[0] = Vec3(kBondNCa, 0, 0);
  const double th = rad(180.0 - kAngleNCaC);
  p.c[0] = p.ca[0] + kBondCaC * Vec3(std::cos(th), std::sin(th), 0);
  for (std::int32_t i = 0; i + 1 < n; ++i) {
    p.n[i + 1] = place(p.n[i], p.ca[i], p.c[i], kBondCN, kAngleCaCN, psi[i]);
    p.ca[i + 1] = place(p.ca[i], p.c[i], p.n[i + 1], kBondNCa, kAngleCNCa, 180.0);
    p.c[i + 1] = place(p.c[i], p.n[i + 1], p.ca[i + 1], kBondCaC, kAngleNCaC, phi[i + 1]);
  }
  for (std::int32_t i = 0; i < n; ++i)
    p.o[i] = place(p.n[i], p.ca[i], p.c[i], kBondCO, kAngleCaCO, psi[i] + 180.0);
  for (std::int32_t i = 0; i < n; ++i) {
    p.n[i] += jitter(rng);
    p.ca[i] += jitter(rng);
    p.c[i] += jitter(rng);
    p.o[i] += jitter(rng);
  }
  p.sequence.resize(n);
  for (std::int32_t i = 0; i < n; ++i)
    p.sequence[i] = phi_b[i] * static_cast<int>(kPsiCenters.size()) + psi_b[i];
  p.mask.assign(n, 1);
  return p;
}

std::vector<Protein> synth_dataset(std::uint64_t seed, std::int32_t count, std::int32_t n) {
  require(count >= 0, "synth_dataset: negative count");
  std::vector<Protein> out;
  out.reserve(static_cast<std::size_t>(count));
  for (std::int32_t k = 0; k < count; ++k) {
    Protein p = synth_protein(mix_seed(seed, static_cast<std::uint64_t>(k)), n);
    p.name = "synth-" + std::to_string(seed) + "-" + std::to_string(k);
    out.push_back(std::move(p));
  }
  return out;
}

// --- splits -----------------------------------------------------------------

SplitManifest parse_manifest_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::kData, std::string("split manifest: malformed JSON (") + e.what() + ")");
  }
  if (!j.is_object()) fail(ErrorKind::kData, "split manifest: expected an object");
  SplitManifest m;
  auto list = [&](const char* key, std::vector<std::string>& out) {
    if (!j.contains(key)) return;
    const auto& arr = j.at(key);
    if (!arr.is_array()) fail(ErrorKind::kData, std::string("split manifest: '") + key + "' must be a list");
    for (const auto& v : arr) {
      if (!v.is_string()) fail(ErrorKind::kData, std::string("split manifest: '") + key + "' holds a non-string");
      out.push_back(v.get<std::string>());
    }
  };
  list("train", m.train);
  list("validation", m.validation);
  list("test", m.test);
  return m;
}

SplitManifest parse_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::kNotFound, "split manifest not found: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_manifest_text(ss.str());
}

DatasetSplit split_dataset(const std::vector<Protein>& records, const SplitManifest& manifest,
                           bool allow_missing) {
  std::unordered_map<std::string, std::size_t> by_name;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!by_name.emplace(records[i].name, i).second)
      fail(ErrorKind::kData, "duplicate record name: " + records[i].name);
  }
  std::set<std::string> listed;
  DatasetSplit out;
  auto route = [&](const std::vector<std::string>& names, std::vector<Protein>& into, const char* split) {
    for (const auto& name : names) {
      if (!listed.insert(name).second)
        fail(ErrorKind::kData, "split manifest lists '" + name + "' more than once (" + split + ")");
      const auto it = by_name.find(name);
      if (it == by_name.end()) {
        if (allow_missing) continue;
        fail(ErrorKind::kData, std::string("split manifest name not found in records: ") + name + " (" + split + ")");
      }
      into.push_back(records[it->second]);
    }
  };
  route(manifest.train, out.train, "train");
  route(manifest.validation, out.validation, "validation");
  route(manifest.test, out.test, "test");
  for (const auto& r : records)
    if (!listed.count(r.name)) out.unlisted.push_back(r.name);
  return out;
}

}  // namespace pifold
