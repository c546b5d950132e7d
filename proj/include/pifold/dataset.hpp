#pragma once

// JSON-lines backbone datasets, split manifests and the synthetic generator.
//
// One record per line:
//   {"name": "1abc.A", "seq": "MKV...",
//    "coords": {"N": [[x, y, z], ...], "CA": [...], "C": [...], "O": [...]},
//    "chain_breaks": [57]}                                   (optional)
// A missing coordinate is written as null (a bare NaN token is also read);
// any missing atom masks the whole residue. Unknown keys are ignored so the
// CATH inverse-folding files load unmodified.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "pifold/protein.hpp"

namespace pifold {

// Throws kData with "line k: <reason>" for the first malformed record.
std::vector<Protein> parse_jsonl(const std::string& path);
std::vector<Protein> parse_jsonl_text(const std::string& text);

// Canonical form: sorted keys, shortest round-trip numbers, masked residues
// as null rows.
std::string protein_to_jsonl(const Protein& protein);
void write_jsonl(std::ostream& os, const std::vector<Protein>& proteins);
void write_jsonl(const std::string& path, const std::vector<Protein>& proteins);

// Idealised backbone built from standard bond lengths and angles with
// per-residue (phi, psi) drawn from 5 x 4 buckets; the residue code is the
// bucket index, so local geometry determines the sequence. Coordinates get
// seeded jitter of at most kSynthJitter Å per atom.
inline constexpr double kSynthJitter = 0.05;
Protein synth_protein(std::uint64_t seed, std::int32_t n);
std::vector<Protein> synth_dataset(std::uint64_t seed, std::int32_t count, std::int32_t n);

struct SplitManifest {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
};

SplitManifest parse_manifest(const std::string& path);
SplitManifest parse_manifest_text(const std::string& text);

struct DatasetSplit {
  std::vector<Protein> train;
  std::vector<Protein> validation;
  std::vector<Protein> test;
  std::vector<std::string> unlisted;  // record names in no list
};

// Routes records by name. Duplicate record names, names listed twice and
// (unless allow_missing) listed names without a record are errors.
DatasetSplit split_dataset(const std::vector<Protein>& records, const SplitManifest& manifest,
                           bool allow_missing = false);

}  // namespace pifold
