#include "pifold/protein.hpp"

#include <algorithm>

#include "pifold/error.hpp"

namespace pifold {

std::optional<int> residue_code(char letter) {
  const auto pos = kAlphabet.find(letter);
  if (pos == std::string_view::npos) return std::nullopt;
  return static_cast<int>(pos);
}

char residue_letter(int code) {
  require(code >= 0 && code < kNumResidueTypes, "residue code out of range");
  return kAlphabet[static_cast<std::size_t>(code)];
}

std::string_view atom_name(Atom a) {
  switch (a) {
    case Atom::kN: return "N";
    case Atom::kCA: return "CA";
    case Atom::kC: return "C";
    case Atom::kO: return "O";
  }
  return "?";
}

const Vec3& Protein::atom(Atom a, std::int32_t i) const {
  switch (a) {
    case Atom::kN: return n[i];
    case Atom::kCA: return ca[i];
    case Atom::kC: return c[i];
    case Atom::kO: return o[i];
  }
  return ca[i];
}

bool Protein::linked_to_previous(std::int32_t i) const {
  if (i <= 0 || i >= size()) return false;
  if (!valid(i) || !valid(i - 1)) return false;
  return !std::binary_search(chain_breaks.begin(), chain_breaks.end(), i);
}

std::string Protein::sequence_string() const {
  std::string s;
  s.reserve(sequence.size());
  for (auto code : sequence) s.push_back(residue_letter(code));
  return s;
}

void Protein::validate() const {
  const std::size_t len = ca.size();
  if (len == 0) fail(ErrorKind::kData, "protein '" + name + "' has no residues");
  if (n.size() != len || c.size() != len || o.size() != len)
    fail(ErrorKind::kData, "protein '" + name + "': backbone atom arrays differ in length");
  if (sequence.size() != len)
    fail(ErrorKind::kData, "protein '" + name + "': sequence length does not match coordinates");
  if (mask.size() != len) fail(ErrorKind::kData, "protein '" + name + "': mask length mismatch");
  for (std::size_t i = 0; i < len; ++i) {
    if (sequence[i] < 0 || sequence[i] >= kNumResidueTypes)
      fail(ErrorKind::kData, "protein '" + name + "': residue code out of range at " + std::to_string(i));
    if (mask[i] && !(n[i].allFinite() && ca[i].allFinite() && c[i].allFinite() && o[i].allFinite()))
      fail(ErrorKind::kData, "protein '" + name + "': non-finite coordinate on unmasked residue " +
                                 std::to_string(i));
  }
  for (std::size_t k = 0; k < chain_breaks.size(); ++k) {
    const auto b = chain_breaks[k];
    if (b <= 0 || b >= static_cast<std::int32_t>(len) || (k > 0 && chain_breaks[k - 1] >= b))
      fail(ErrorKind::kData, "protein '" + name + "': chain breaks must be sorted indices in [1, n)");
  }
}

}  // namespace pifold
