#pragma once

#include <Eigen/Geometry>

#include <cstdint>
#include <vector>

#include "pifold/protein.hpp"
#include "pifold/random.hpp"
#include "pifold/tensor.hpp"

namespace pifold::testing {

inline ad::Matrix<double> random_matrix(Rng& rng, ad::Index rows, ad::Index cols, double scale = 1.0) {
  ad::Matrix<double> m(rows, cols);
  for (ad::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.uniform(-1.0, 1.0);
  return m;
}

// Random segment ids covering every segment at least once.
inline std::vector<std::int32_t> random_segments(Rng& rng, int rows, int segments) {
  std::vector<std::int32_t> ids(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) ids[static_cast<std::size_t>(r)] = r < segments ? r : static_cast<std::int32_t>(rng.below(segments));
  for (int r = rows - 1; r > 0; --r) std::swap(ids[static_cast<std::size_t>(r)], ids[rng.below(static_cast<std::uint64_t>(r) + 1)]);
  return ids;
}

// Fixed random projection to a scalar, so every output coordinate matters.
inline ad::Var<double> probe(ad::Var<double> y, std::uint64_t seed) {
  Rng rng(seed);
  auto w = y.tape()->constant(random_matrix(rng, y.rows(), y.cols()));
  return ad::sum(ad::mul(y, w));
}

// Uniform random rotation from a normalised Gaussian quaternion.
inline Mat3 random_rotation(Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return q.toRotationMatrix();
}

inline Vec3 random_vec(Rng& rng, double scale) {
  return Vec3(rng.uniform(-scale, scale), rng.uniform(-scale, scale), rng.uniform(-scale, scale));
}

// Random walk backbone with roughly bond-length steps and random residues;
// not protein-like, but generic enough that every frame and angle exists.
inline Protein random_chain(std::uint64_t seed, int n) {
  Rng rng(seed);
  Protein p;
  p.name = "random-" + std::to_string(seed);
  Vec3 at = Vec3::Zero();
  auto step = [&] {
    Vec3 d = random_vec(rng, 1.0);
    at += 1.45 * d.normalized();
    return at;
  };
  for (int i = 0; i < n; ++i) {
    p.n.push_back(step());
    p.ca.push_back(step());
    p.c.push_back(step());
    p.o.push_back(p.c.back() + 1.23 * random_vec(rng, 1.0).normalized());
    p.sequence.push_back(static_cast<std::int32_t>(rng.below(20)));
    p.mask.push_back(1);
  }
  return p;
}

inline Protein transform(const Protein& p, const Mat3& r, const Vec3& t) {
  Protein q = p;
  for (auto* atoms : {&q.n, &q.ca, &q.c, &q.o})
    for (auto& a : *atoms) a = r * a + t;
  return q;
}

}  // namespace pifold::testing
