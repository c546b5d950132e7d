#pragma once

// Rotation- and translation-invariant per-residue and per-pair geometry:
// local frames, RBF distance encodings, backbone angles, relative-rotation
// quaternions, frame-relative directions and learnable virtual atoms.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "pifold/protein.hpp"

namespace pifold {

inline constexpr double kGeometryEps = 1e-8;

// Columns of `rotation` are b, n and b x n.
struct LocalFrame {
  Mat3 rotation = Mat3::Identity();
  Vec3 origin = Vec3::Zero();
  bool degenerate = false;
};

// u = CA - N, v = C - CA, b = (u - v)/|u - v|, n = (u x v)/|u x v|.
// When u x v vanishes, n falls back to the unit axis of b's smallest
// component, orthogonalised against b. When u - v vanishes too, b = e_x.
LocalFrame frame_from_backbone(const Vec3& n, const Vec3& ca, const Vec3& c);

// Masked residues get the identity frame at the origin, flagged degenerate.
std::vector<LocalFrame> local_frames(const Protein& protein);

struct RbfEncoder {
  int count = 16;
  double min_distance = 0.0;
  double max_distance = 20.0;

  double center(int r) const;
  // Width equals the spacing between neighbouring centres.
  double sigma() const;
  // exp(-(d - mu_r)^2 / sigma^2) for every centre; throws on d < 0.
  void encode(double distance, std::span<double> out) const;
  std::vector<double> encode(double distance) const;
};

std::vector<double> rbf_encode(double distance, const RbfEncoder& encoder = {});

enum class BackboneAngle : int { kAlpha = 0, kBeta, kGamma, kPhi, kPsi, kOmega };
inline constexpr int kNumBackboneAngles = 6;

// (sin, cos) per angle in BackboneAngle order; undefined angles are (0, 0).
struct AngleRecord {
  std::array<double, 2 * kNumBackboneAngles> values{};
  std::array<bool, kNumBackboneAngles> defined{};
  bool degenerate = false;
};

// alpha = angle(C[i-1], N, CA), beta = angle(N, CA, C), gamma = angle(CA, C, N[i+1]),
// omega = dihedral(CA[i-1], C[i-1], N, CA), phi = dihedral(C[i-1], N, CA, C),
// psi = dihedral(N, CA, C, N[i+1]). A single-residue chain reports nothing.
std::vector<AngleRecord> backbone_angles(const Protein& protein);

// Angle at b; false when either arm is shorter than kGeometryEps.
bool bond_angle_sincos(const Vec3& a, const Vec3& b, const Vec3& c, double& s, double& co);
// Torsion about b-c; false when either plane normal vanishes.
bool dihedral_sincos(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d, double& s,
                     double& co);

// (w, x, y, z) with w >= 0, largest-pivot extraction.
Eigen::Vector4d rotation_to_quaternion(const Mat3& r);
// Quaternion of Q_i^T Q_j. Throws when either frame is not orthonormal.
Eigen::Vector4d quaternion_rel(const LocalFrame& frame_i, const LocalFrame& frame_j);

// Q^T (atom - origin) / |atom - origin|; zero and flagged when the atom sits
// on the origin.
Vec3 direction_in_frame(const LocalFrame& frame, const Vec3& atom, bool* flagged = nullptr);

struct DirectionFeatures {
  Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> rows;
  std::vector<std::uint8_t> flagged;
};
DirectionFeatures direction_features(const LocalFrame& frame, std::span<const Vec3> atoms);

// Shared relative positions (x_k, y_k, z_k) of the learnable virtual atoms.
struct VirtualAtomParams {
  Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor> positions;

  int count() const { return static_cast<int>(positions.rows()); }
  // Seeded Gaussian draws, normalised to unit length.
  static VirtualAtomParams initial(int count, std::uint64_t seed);
  void project_to_unit();
  bool is_unit(double tol = 1e-6) const;
};

// Row i holds V_i^1..V_i^K as consecutive xyz triples:
// V_i^k = x_k b_i + y_k n_i + z_k (b_i x n_i) + CA_i.
Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> virtual_atom_positions(
    const VirtualAtomParams& params, std::span<const LocalFrame> frames);

}  // namespace pifold
