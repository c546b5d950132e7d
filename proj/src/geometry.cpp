#include "pifold/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pifold/error.hpp"
#include "pifold/random.hpp"

namespace pifold {

namespace {

Vec3 fallback_normal(const Vec3& b) {
  int axis = 0;
  for (int k = 1; k < 3; ++k)
    if (std::abs(b[k]) < std::abs(b[axis])) axis = k;
  Vec3 e = Vec3::Zero();
  e[axis] = 1.0;
  return (e - e.dot(b) * b).normalized();
}

bool orthonormal(const Mat3& q, double tol) {
  return ((q.transpose() * q - Mat3::Identity()).cwiseAbs().maxCoeff() < tol) &&
         std::abs(q.determinant() - 1.0) < tol;
}

}  // namespace

LocalFrame frame_from_backbone(const Vec3& n, const Vec3& ca, const Vec3& c) {
  LocalFrame frame;
  frame.origin = ca;
  const Vec3 u = ca - n;
  const Vec3 v = c - ca;
  Vec3 b = u - v;
  const double bn = b.norm();
  if (bn < kGeometryEps) {
    b = Vec3::UnitX();
    frame.degenerate = true;
  } else {
    b /= bn;
  }
  Vec3 normal = u.cross(v);
  const double nn = normal.norm();
  if (nn < kGeometryEps || frame.degenerate) {
    normal = fallback_normal(b);
    frame.degenerate = true;
  } else {
    normal /= nn;
  }
  frame.rotation.col(0) = b;
  frame.rotation.col(1) = normal;
  frame.rotation.col(2) = b.cross(normal);
  return frame;
}

std::vector<LocalFrame> local_frames(const Protein& protein) {
  std::vector<LocalFrame> frames(static_cast<std::size_t>(protein.size()));
  for (std::int32_t i = 0; i < protein.size(); ++i) {
    if (!protein.valid(i)) {
      frames[i].degenerate = true;
      continue;
    }
    frames[i] = frame_from_backbone(protein.n[i], protein.ca[i], protein.c[i]);
  }
  return frames;
}

// --- RBF --------------------------------------------------------------------

double RbfEncoder::center(int r) const {
  if (count == 1) return min_distance;
  return min_distance + (max_distance - min_distance) * r / (count - 1);
}

double RbfEncoder::sigma() const {
  if (count == 1) return max_distance - min_distance;
  return (max_distance - min_distance) / (count - 1);
}

void RbfEncoder::encode(double distance, std::span<double> out) const {
  if (!(distance >= 0.0)) fail(ErrorKind::kInvalidArgument, "rbf_encode: negative or NaN distance");
  require(static_cast<int>(out.size()) == count, "rbf_encode: output size mismatch");
  const double s2 = sigma() * sigma();
  for (int r = 0; r < count; ++r) {
    const double z = distance - center(r);
    out[r] = std::exp(-z * z / s2);
  }
}

std::vector<double> RbfEncoder::encode(double distance) const {
  std::vector<double> out(static_cast<std::size_t>(count));
  encode(distance, out);
  return out;
}

std::vector<double> rbf_encode(double distance, const RbfEncoder& encoder) {
  return encoder.encode(distance);
}

// --- angles -----------------------------------------------------------------

bool bond_angle_sincos(const Vec3& a, const Vec3& b, const Vec3& c, double& s, double& co) {
  const Vec3 x = a - b;
  const Vec3 y = c - b;
  const double nx = x.norm(), ny = y.norm();
  if (nx < kGeometryEps || ny < kGeometryEps) {
    s = co = 0.0;
    return false;
  }
  co = x.dot(y) / (nx * ny);
  s = x.cross(y).norm() / (nx * ny);
  const double r = std::hypot(s, co);
  s /= r;
  co /= r;
  return true;
}

bool dihedral_sincos(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d, double& s,
                     double& co) {
  const Vec3 b1 = b - a;
  const Vec3 b2 = c - b;
  const Vec3 b3 = d - c;
  const Vec3 n1 = b1.cross(b2);
  const Vec3 n2 = b2.cross(b3);
  const double l2 = b2.norm();
  if (n1.norm() < kGeometryEps || n2.norm() < kGeometryEps || l2 < kGeometryEps) {
    s = co = 0.0;
    return false;
  }
  const double y = l2 * b1.dot(n2);
  const double x = n1.dot(n2);
  const double r = std::hypot(x, y);
  s = y / r;
  co = x / r;
  return true;
}

std::vector<AngleRecord> backbone_angles(const Protein& protein) {
  const std::int32_t n = protein.size();
  std::vector<AngleRecord> out(static_cast<std::size_t>(n));
  if (n < 2) return out;
  auto put = [](AngleRecord& rec, BackboneAngle which, bool ok, double s, double c) {
    const int k = static_cast<int>(which);
    rec.values[2 * k] = ok ? s : 0.0;
    rec.values[2 * k + 1] = ok ? c : 0.0;
    rec.defined[k] = ok;
  };
  for (std::int32_t i = 0; i < n; ++i) {
    AngleRecord& rec = out[i];
    if (!protein.valid(i)) continue;
    const bool has_prev = protein.linked_to_previous(i);
    const bool has_next = protein.linked_to_previous(i + 1);
    double s = 0, c = 0;
    bool ok;
    bool attempted_fail = false;
    if (has_prev) {
      ok = bond_angle_sincos(protein.c[i - 1], protein.n[i], protein.ca[i], s, c);
      put(rec, BackboneAngle::kAlpha, ok, s, c);
      attempted_fail |= !ok;
      ok = dihedral_sincos(protein.c[i - 1], protein.n[i], protein.ca[i], protein.c[i], s, c);
      put(rec, BackboneAngle::kPhi, ok, s, c);
      attempted_fail |= !ok;
      ok = dihedral_sincos(protein.ca[i - 1], protein.c[i - 1], protein.n[i], protein.ca[i], s, c);
      put(rec, BackboneAngle::kOmega, ok, s, c);
      attempted_fail |= !ok;
    }
    ok = bond_angle_sincos(protein.n[i], protein.ca[i], protein.c[i], s, c);
    put(rec, BackboneAngle::kBeta, ok, s, c);
    attempted_fail |= !ok;
    if (has_next) {
      ok = bond_angle_sincos(protein.ca[i], protein.c[i], protein.n[i + 1], s, c);
      put(rec, BackboneAngle::kGamma, ok, s, c);
      attempted_fail |= !ok;
      ok = dihedral_sincos(protein.n[i], protein.ca[i], protein.c[i], protein.n[i + 1], s, c);
      put(rec, BackboneAngle::kPsi, ok, s, c);
      attempted_fail |= !ok;
    }
    rec.degenerate = attempted_fail;
  }
  return out;
}

// --- quaternions ------------------------------------------------------------

Eigen::Vector4d rotation_to_quaternion(const Mat3& r) {
  const double tr = r.trace();
  const double cand[4] = {1.0 + tr, 1.0 + r(0, 0) - r(1, 1) - r(2, 2),
                          1.0 - r(0, 0) + r(1, 1) - r(2, 2), 1.0 - r(0, 0) - r(1, 1) + r(2, 2)};
  const int pivot = static_cast<int>(std::max_element(cand, cand + 4) - cand);
  Eigen::Vector4d q;
  const double s = 0.5 * std::sqrt(std::max(cand[pivot], 0.0));
  const double f = 0.25 / s;
  switch (pivot) {
    case 0:
      q << s, (r(2, 1) - r(1, 2)) * f, (r(0, 2) - r(2, 0)) * f, (r(1, 0) - r(0, 1)) * f;
      break;
    case 1:
      q << (r(2, 1) - r(1, 2)) * f, s, (r(0, 1) + r(1, 0)) * f, (r(0, 2) + r(2, 0)) * f;
      break;
    case 2:
      q << (r(0, 2) - r(2, 0)) * f, (r(0, 1) + r(1, 0)) * f, s, (r(1, 2) + r(2, 1)) * f;
      break;
    default:
      q << (r(1, 0) - r(0, 1)) * f, (r(0, 2) + r(2, 0)) * f, (r(1, 2) + r(2, 1)) * f, s;
      break;
  }
  q.normalize();
  if (q[0] < 0.0) q = -q;
  if (q[0] == 0.0) {
    // Half-turn: make the first non-zero vector component positive.
    for (int k = 1; k < 4; ++k) {
      if (q[k] != 0.0) {
        if (q[k] < 0.0) q = -q;
        break;
      }
    }
  }
  return q;
}

Eigen::Vector4d quaternion_rel(const LocalFrame& frame_i, const LocalFrame& frame_j) {
  if (!orthonormal(frame_i.rotation, 1e-6) || !orthonormal(frame_j.rotation, 1e-6))
    fail(ErrorKind::kInvalidArgument, "quaternion_rel: frame is not a proper rotation");
  return rotation_to_quaternion(frame_i.rotation.transpose() * frame_j.rotation);
}

// --- directions -------------------------------------------------------------

Vec3 direction_in_frame(const LocalFrame& frame, const Vec3& atom, bool* flagged) {
  const Vec3 d = atom - frame.origin;
  const double len = d.norm();
  if (len < kGeometryEps) {
    if (flagged) *flagged = true;
    return Vec3::Zero();
  }
  if (flagged) *flagged = false;
  return frame.rotation.transpose() * (d / len);
}

DirectionFeatures direction_features(const LocalFrame& frame, std::span<const Vec3> atoms) {
  DirectionFeatures out;
  out.rows.resize(static_cast<Eigen::Index>(atoms.size()), 3);
  out.flagged.resize(atoms.size());
  for (std::size_t k = 0; k < atoms.size(); ++k) {
    bool flag = false;
    out.rows.row(static_cast<Eigen::Index>(k)) = direction_in_frame(frame, atoms[k], &flag).transpose();
    out.flagged[k] = flag;
  }
  return out;
}

// --- virtual atoms ----------------------------------------------------------

VirtualAtomParams VirtualAtomParams::initial(int count, std::uint64_t seed) {
  require(count >= 0, "virtual atom count must be non-negative");
  VirtualAtomParams p;
  p.positions.resize(count, 3);
  Rng rng(seed);
  for (int k = 0; k < count; ++k) {
    Vec3 v;
    do {
      v = Vec3(rng.normal(), rng.normal(), rng.normal());
    } while (v.norm() < 1e-3);
    p.positions.row(k) = v.normalized().transpose();
  }
  return p;
}

void VirtualAtomParams::project_to_unit() {
  for (int k = 0; k < count(); ++k) {
    const double len = positions.row(k).norm();
    if (len < kGeometryEps) {
      positions.row(k) << 1.0, 0.0, 0.0;
    } else {
      positions.row(k) /= len;
    }
  }
}

bool VirtualAtomParams::is_unit(double tol) const {
  for (int k = 0; k < count(); ++k)
    if (std::abs(positions.row(k).squaredNorm() - 1.0) > tol) return false;
  return true;
}

Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> virtual_atom_positions(
    const VirtualAtomParams& params, std::span<const LocalFrame> frames) {
  if (!params.is_unit(1e-6))
    fail(ErrorKind::kInvalidArgument, "virtual_atom_positions: relative positions must be unit vectors");
  const int k_count = params.count();
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out(
      static_cast<Eigen::Index>(frames.size()), 3 * k_count);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    for (int k = 0; k < k_count; ++k) {
      const Vec3 rel = params.positions.row(k).transpose();
      const Vec3 v = frames[i].rotation * rel + frames[i].origin;
      out.block(static_cast<Eigen::Index>(i), 3 * k, 1, 3) = v.transpose();
    }
  }
  return out;
}

}  // namespace pifold
