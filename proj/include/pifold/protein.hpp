#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace pifold {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr int kNumResidueTypes = 20;
// Residue code k is kAlphabet[k].
inline constexpr std::string_view kAlphabet = "ACDEFGHIKLMNPQRSTVWY";

std::optional<int> residue_code(char letter);
char residue_letter(int code);

enum class Atom : std::uint8_t { kN = 0, kCA = 1, kC = 2, kO = 3 };
inline constexpr int kNumBackboneAtoms = 4;
std::string_view atom_name(Atom a);

// Backbone-only protein chain. Residues with mask == 0 have no usable
// coordinates: they are excluded from neighbour search, their features are
// zero and they never carry a label into the loss or the metrics.
struct Protein {
  std::string name;
  std::vector<Vec3> n, ca, c, o;
  std::vector<std::int32_t> sequence;
  std::vector<std::uint8_t> mask;
  // Residue indices that start a new chain segment (no peptide bond to the
  // previous residue). Sorted, unique, never 0.
  std::vector<std::int32_t> chain_breaks;

  std::int32_t size() const { return static_cast<std::int32_t>(ca.size()); }
  const Vec3& atom(Atom a, std::int32_t i) const;
  bool valid(std::int32_t i) const { return mask[i] != 0; }
  // True when residue i is peptide-bonded to residue i-1 and both are valid.
  bool linked_to_previous(std::int32_t i) const;
  std::string sequence_string() const;

  // Throws pifold::Error (kData) describing the first violated invariant.
  void validate() const;
};

}  // namespace pifold
