#include "pifold/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "json.hpp"
#include "pifold/error.hpp"
#include "pifold/serialization.hpp"

namespace pifold {

namespace {

constexpr std::array<Atom, 4> kAllAtoms = {Atom::kN, Atom::kCA, Atom::kC, Atom::kO};
constexpr std::array<Atom, 3> kNodeDirectionAtoms = {Atom::kN, Atom::kC, Atom::kO};
constexpr std::array<const char*, kNumBackboneAngles> kAngleNames = {"alpha", "beta", "gamma",
                                                                     "phi",   "psi",  "omega"};

int choose2(int k) { return k * (k - 1) / 2; }

std::vector<std::pair<int, int>> node_virtual_pairs(int k_count) {
  std::vector<std::pair<int, int>> out;
  for (int a = 0; a < k_count; ++a)
    for (int b = a + 1; b < k_count; ++b) out.emplace_back(a, b);
  return out;
}

std::vector<std::pair<int, int>> edge_virtual_pairs(int k_count) {
  std::vector<std::pair<int, int>> out;
  for (int a = 0; a < k_count; ++a)
    for (int b = 0; b < k_count; ++b) out.emplace_back(a, b);
  return out;
}

void position_encoding(int offset, int max_offset, std::span<double> out) {
  const int clipped = std::clamp(offset, -max_offset, max_offset);
  const int half = static_cast<int>(out.size()) / 2;
  for (int f = 0; f < half; ++f) {
    const double freq = std::exp(-std::log(10000.0) * (2.0 * f) / static_cast<double>(out.size()));
    out[2 * f] = std::sin(clipped * freq);
    out[2 * f + 1] = std::cos(clipped * freq);
  }
}

MatrixXd pack_frames(std::span<const LocalFrame> frames, std::span<const std::uint8_t> mask) {
  MatrixXd out = MatrixXd::Zero(static_cast<Eigen::Index>(frames.size()), 12);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) out(static_cast<Eigen::Index>(i), 3 * r + c) = frames[i].rotation(r, c);
    out.block(static_cast<Eigen::Index>(i), 9, 1, 3) = frames[i].origin.transpose();
  }
  return out;
}

Mat3 frame_rotation(const MatrixXd& frames, Eigen::Index row) {
  Mat3 r;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) r(a, b) = frames(row, 3 * a + b);
  return r;
}

Vec3 frame_origin(const MatrixXd& frames, Eigen::Index row) {
  return frames.block(row, 9, 1, 3).transpose();
}

// Fused RBF of virtual-atom distances |V_a^k - V_b^l| for (a, b) row pairs
// and (k, l) atom pairs, differentiable in the shared relative positions.
template <class T>
ad::Var<T> virtual_pair_rbf(ad::Var<T> positions, MatrixXd frames, ad::IndexList a_nodes,
                            ad::IndexList b_nodes, std::vector<std::pair<int, int>> atom_pairs,
                            std::vector<std::uint8_t> active, RbfEncoder rbf) {
  ad::Tape<T>& tape = *positions.tape();
  require(positions.cols() == 3, "virtual atom positions must be K x 3");
  const Eigen::Index rows = static_cast<Eigen::Index>(a_nodes->size());
  const int nr = rbf.count;
  const Eigen::Index cols = static_cast<Eigen::Index>(atom_pairs.size()) * nr;
  const Eigen::MatrixXd p = positions.value().template cast<double>();
  ad::Matrix<T> out = ad::Matrix<T>::Zero(rows, cols);
  std::vector<double> buf(static_cast<std::size_t>(nr));
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (!active[r]) continue;
    const auto a = (*a_nodes)[r], b = (*b_nodes)[r];
    const Mat3 ra = frame_rotation(frames, a), rb = frame_rotation(frames, b);
    const Vec3 oa = frame_origin(frames, a), ob = frame_origin(frames, b);
    for (std::size_t q = 0; q < atom_pairs.size(); ++q) {
      const auto [k, l] = atom_pairs[q];
      const Vec3 diff = ra * p.row(k).transpose() + oa - rb * p.row(l).transpose() - ob;
      rbf.encode(diff.norm(), buf);
      for (int c = 0; c < nr; ++c) out(r, static_cast<Eigen::Index>(q) * nr + c) = static_cast<T>(buf[c]);
    }
  }
  return tape.record(
      std::move(out), positions.requires_grad(),
      [ip = positions.id(), frames = std::move(frames), a_nodes, b_nodes,
       atom_pairs = std::move(atom_pairs), active = std::move(active),
       rbf](ad::Tape<T>& tp, std::size_t self) {
        const ad::Matrix<T>& g = tp.grad(self);
        const ad::Matrix<T>& y = tp.value(self);
        const Eigen::MatrixXd pv = tp.value(ip).template cast<double>();
        Eigen::MatrixXd gp = Eigen::MatrixXd::Zero(pv.rows(), 3);
        const int nr = rbf.count;
        const double s2 = rbf.sigma() * rbf.sigma();
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
          if (!active[r]) continue;
          const auto a = (*a_nodes)[r], b = (*b_nodes)[r];
          const Mat3 ra = frame_rotation(frames, a), rb = frame_rotation(frames, b);
          const Vec3 oa = frame_origin(frames, a), ob = frame_origin(frames, b);
          for (std::size_t q = 0; q < atom_pairs.size(); ++q) {
            const auto [k, l] = atom_pairs[q];
            const Vec3 diff = ra * pv.row(k).transpose() + oa - rb * pv.row(l).transpose() - ob;
            const double dist = diff.norm();
            if (dist < kGeometryEps) continue;
            double dd = 0.0;
            for (int c = 0; c < nr; ++c) {
              const Eigen::Index col = static_cast<Eigen::Index>(q) * nr + c;
              dd += static_cast<double>(g(r, col)) * static_cast<double>(y(r, col)) *
                    (-2.0 * (dist - rbf.center(c)) / s2);
            }
            const Vec3 u = diff * (dd / dist);
            gp.row(k) += (ra.transpose() * u).transpose();
            gp.row(l) -= (rb.transpose() * u).transpose();
          }
        }
        tp.grad_accumulator(ip) += gp.cast<T>();
      });
}

void rbf_block(const RbfEncoder& rbf, double d, MatrixXd& out, Eigen::Index row, int col) {
  rbf.encode(d, std::span<double>(out.row(row).data() + col, static_cast<std::size_t>(rbf.count)));
}

}  // namespace

std::string pair_name(const AtomPair& p) {
  return std::string(atom_name(p.first)) + "-" + std::string(atom_name(p.second));
}

// --- FeatureConfig ----------------------------------------------------------

void FeatureConfig::validate() const {
  if (!node.any() && !edge.any() && !edge_position)
    fail(ErrorKind::kInvalidArgument, "feature config: at least one feature family must be enabled");
  require(k >= 1, "feature config: k must be >= 1");
  require(num_virtual >= 0, "feature config: num_virtual must be >= 0");
  require(num_rbf >= 1, "feature config: num_rbf must be >= 1");
  require(position_width >= 0 && position_width % 2 == 0,
          "feature config: position_width must be even and non-negative");
  require(max_offset >= 1, "feature config: max_offset must be >= 1");
  for (std::size_t i = 0; i < edge_pairs.size(); ++i) {
    require(edge_pairs[i] >= 0 && edge_pairs[i] < static_cast<int>(kEdgeDistancePairs.size()),
            "feature config: edge pair index out of range");
    require(i == 0 || edge_pairs[i - 1] < edge_pairs[i],
            "feature config: edge pairs must be ascending and unique");
  }
}

std::vector<LayoutEntry> FeatureConfig::node_layout() const {
  std::vector<LayoutEntry> out;
  int col = 0;
  auto add = [&](std::string name, int width) {
    out.push_back({std::move(name), col, col + width});
    col += width;
  };
  if (node.distance) {
    for (const auto& p : kNodeDistancePairs) add("dist." + pair_name(p), num_rbf);
    for (auto [a, b] : node_virtual_pairs(num_virtual))
      add("vdist." + std::to_string(a) + "-" + std::to_string(b), num_rbf);
  }
  if (node.angle)
    for (const char* name : kAngleNames) add(std::string("angle.") + name, 2);
  if (node.direction)
    for (Atom a : kNodeDirectionAtoms) add("dir." + std::string(atom_name(a)), 3);
  return out;
}

std::vector<LayoutEntry> FeatureConfig::edge_layout() const {
  std::vector<LayoutEntry> out;
  int col = 0;
  auto add = [&](std::string name, int width) {
    out.push_back({std::move(name), col, col + width});
    col += width;
  };
  if (edge.distance) {
    for (int idx : edge_pairs) add("dist." + pair_name(kEdgeDistancePairs[idx]), num_rbf);
    for (auto [a, b] : edge_virtual_pairs(num_virtual))
      add("vdist." + std::to_string(a) + "-" + std::to_string(b), num_rbf);
  }
  if (edge.angle) add("quat", 4);
  if (edge.direction)
    for (Atom a : kAllAtoms) add("dir." + std::string(atom_name(a)), 3);
  if (edge_position && position_width > 0) add("pos", position_width);
  return out;
}

int FeatureConfig::node_width() const {
  int w = 0;
  if (node.distance) w += (static_cast<int>(kNodeDistancePairs.size()) + choose2(num_virtual)) * num_rbf;
  if (node.angle) w += 2 * kNumBackboneAngles;
  if (node.direction) w += 3 * static_cast<int>(kNodeDirectionAtoms.size());
  return w;
}

int FeatureConfig::edge_width() const {
  int w = 0;
  if (edge.distance)
    w += (static_cast<int>(edge_pairs.size()) + num_virtual * num_virtual) * num_rbf;
  if (edge.angle) w += 4;
  if (edge.direction) w += 3 * kNumBackboneAtoms;
  if (edge_position) w += position_width;
  return w;
}

std::pair<int, int> FeatureConfig::node_virtual_columns() const {
  if (!node.distance) return {0, 0};
  const int begin = static_cast<int>(kNodeDistancePairs.size()) * num_rbf;
  return {begin, begin + choose2(num_virtual) * num_rbf};
}

std::pair<int, int> FeatureConfig::edge_virtual_columns() const {
  if (!edge.distance) return {0, 0};
  const int begin = static_cast<int>(edge_pairs.size()) * num_rbf;
  return {begin, begin + num_virtual * num_virtual * num_rbf};
}

// --- k-NN -------------------------------------------------------------------

EdgeList build_knn_graph(std::span<const Vec3> ca, int k, std::span<const std::uint8_t> mask) {
  const auto n = static_cast<std::int32_t>(ca.size());
  if (n < 2) fail(ErrorKind::kInvalidArgument, "build_knn_graph: need at least 2 residues");
  require(k >= 1, "build_knn_graph: k must be >= 1");
  require(mask.empty() || mask.size() == ca.size(), "build_knn_graph: mask length mismatch");
  auto valid = [&](std::int32_t i) { return mask.empty() || mask[i] != 0; };

  EdgeList edges;
  edges.src.reserve(static_cast<std::size_t>(n) * std::min(k, n - 1));
  edges.dst.reserve(edges.src.capacity());
  std::vector<std::pair<double, std::int32_t>> cand;
  cand.reserve(static_cast<std::size_t>(n));
  for (std::int32_t i = 0; i < n; ++i) {
    cand.clear();
    for (std::int32_t j = 0; j < n; ++j) {
      if (j == i || !valid(j)) continue;
      const double key = valid(i) ? (ca[j] - ca[i]).squaredNorm() : std::abs(j - i);
      cand.emplace_back(key, j);
    }
    const auto take = std::min<std::size_t>(static_cast<std::size_t>(k), cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end());
    for (std::size_t r = 0; r < take; ++r) {
      edges.src.push_back(cand[r].second);
      edges.dst.push_back(i);
    }
  }
  return edges;
}

// --- feature assembly -------------------------------------------------------

MatrixXd assemble_node_features(const Protein& protein, std::span<const LocalFrame> frames,
                                const VirtualAtomParams& vparams, const FeatureConfig& config) {
  config.validate();
  const auto n = protein.size();
  require(static_cast<std::int32_t>(frames.size()) == n, "assemble_node_features: frame count mismatch");
  require(vparams.count() == config.num_virtual,
          "assemble_node_features: virtual atom count does not match config");
  const RbfEncoder rbf = config.rbf();
  MatrixXd out = MatrixXd::Zero(n, config.node_width());
  const auto angles = backbone_angles(protein);
  int col = 0;
  if (config.node.distance) {
    for (std::int32_t i = 0; i < n; ++i) {
      if (!protein.valid(i)) continue;
      int c = 0;
      for (const auto& p : kNodeDistancePairs) {
        rbf_block(rbf, (protein.atom(p.first, i) - protein.atom(p.second, i)).norm(), out, i, c);
        c += rbf.count;
      }
    }
    col += static_cast<int>(kNodeDistancePairs.size()) * rbf.count;
    const auto [vb, ve] = config.node_virtual_columns();
    if (ve > vb) {
      std::vector<std::int32_t> ids(static_cast<std::size_t>(n));
      std::iota(ids.begin(), ids.end(), 0);
      auto idx = ad::make_indices(std::move(ids));
      ad::Tape<double> tape;
      auto pos = tape.constant(vparams.positions);
      auto v = virtual_pair_rbf<double>(pos, pack_frames(frames, protein.mask), idx, idx,
                                        node_virtual_pairs(config.num_virtual), protein.mask, rbf);
      out.middleCols(vb, ve - vb) = v.value();
    }
    col = ve > vb ? ve : col;
  }
  if (config.node.angle) {
    for (std::int32_t i = 0; i < n; ++i)
      for (int a = 0; a < 2 * kNumBackboneAngles; ++a) out(i, col + a) = angles[i].values[a];
    col += 2 * kNumBackboneAngles;
  }
  if (config.node.direction) {
    for (std::int32_t i = 0; i < n; ++i) {
      if (!protein.valid(i)) continue;
      for (std::size_t a = 0; a < kNodeDirectionAtoms.size(); ++a) {
        const Vec3 d = direction_in_frame(frames[i], protein.atom(kNodeDirectionAtoms[a], i));
        out.block(i, col + 3 * static_cast<int>(a), 1, 3) = d.transpose();
      }
    }
    col += 3 * static_cast<int>(kNodeDirectionAtoms.size());
  }
  return out;
}

MatrixXd assemble_edge_features(const Protein& protein, std::span<const LocalFrame> frames,
                                const VirtualAtomParams& vparams, const EdgeList& edges,
                                const FeatureConfig& config) {
  config.validate();
  const auto n = protein.size();
  require(static_cast<std::int32_t>(frames.size()) == n, "assemble_edge_features: frame count mismatch");
  require(vparams.count() == config.num_virtual,
          "assemble_edge_features: virtual atom count does not match config");
  const RbfEncoder rbf = config.rbf();
  const auto m = static_cast<Eigen::Index>(edges.size());
  MatrixXd out = MatrixXd::Zero(m, config.edge_width());
  std::vector<std::uint8_t> active(static_cast<std::size_t>(m));
  for (Eigen::Index e = 0; e < m; ++e) {
    const auto j = edges.src[e], i = edges.dst[e];
    require(j != i, "assemble_edge_features: self-loop");
    active[e] = protein.valid(i) && protein.valid(j);
  }
  int col = 0;
  if (config.edge.distance) {
    for (Eigen::Index e = 0; e < m; ++e) {
      if (!active[e]) continue;
      const auto j = edges.src[e], i = edges.dst[e];
      int c = 0;
      for (int idx : config.edge_pairs) {
        const auto& p = kEdgeDistancePairs[idx];
        rbf_block(rbf, (protein.atom(p.first, j) - protein.atom(p.second, i)).norm(), out, e, c);
        c += rbf.count;
      }
    }
    col = static_cast<int>(config.edge_pairs.size()) * rbf.count;
    const auto [vb, ve] = config.edge_virtual_columns();
    if (ve > vb && m > 0) {
      ad::Tape<double> tape;
      auto pos = tape.constant(vparams.positions);
      auto v = virtual_pair_rbf<double>(pos, pack_frames(frames, protein.mask),
                                        ad::make_indices(edges.src), ad::make_indices(edges.dst),
                                        edge_virtual_pairs(config.num_virtual), active, rbf);
      out.middleCols(vb, ve - vb) = v.value();
    }
    col = std::max(col, ve);
  }
  if (config.edge.angle) {
    for (Eigen::Index e = 0; e < m; ++e) {
      if (!active[e]) continue;
      out.block(e, col, 1, 4) = quaternion_rel(frames[edges.dst[e]], frames[edges.src[e]]).transpose();
    }
    col += 4;
  }
  if (config.edge.direction) {
    for (Eigen::Index e = 0; e < m; ++e) {
      if (!active[e]) continue;
      const auto j = edges.src[e], i = edges.dst[e];
      for (std::size_t a = 0; a < kAllAtoms.size(); ++a) {
        const Vec3 d = direction_in_frame(frames[i], protein.atom(kAllAtoms[a], j));
        out.block(e, col + 3 * static_cast<int>(a), 1, 3) = d.transpose();
      }
    }
    col += 3 * kNumBackboneAtoms;
  }
  if (config.edge_position && config.position_width > 0) {
    for (Eigen::Index e = 0; e < m; ++e) {
      if (!active[e]) continue;
      position_encoding(edges.src[e] - edges.dst[e], config.max_offset,
                        std::span<double>(out.row(e).data() + col, static_cast<std::size_t>(config.position_width)));
    }
    col += config.position_width;
  }
  return out;
}

ProteinGraph featurize(const Protein& protein, const FeatureConfig& config,
                       const VirtualAtomParams& vparams) {
  protein.validate();
  config.validate();
  const auto frames = local_frames(protein);
  const auto n = protein.size();
  EdgeList edges;
  if (n >= 2) edges = build_knn_graph(protein.ca, config.k, protein.mask);

  ProteinGraph g;
  g.config = config;
  g.node_features = assemble_node_features(protein, frames, vparams, config);
  g.edge_features = assemble_edge_features(protein, frames, vparams, edges, config);
  g.frames = pack_frames(frames, protein.mask);
  g.mask = protein.mask;
  g.labels = protein.sequence;
  g.names = {protein.name};
  g.offsets = {0};
  g.topology = make_topology(n, std::move(edges.src), std::move(edges.dst),
                             std::vector<std::int32_t>(static_cast<std::size_t>(n), 0));
  return g;
}

GraphTopology make_topology(std::int32_t num_nodes, std::vector<std::int32_t> src,
                            std::vector<std::int32_t> dst, std::vector<std::int32_t> protein_ids) {
  require(src.size() == dst.size(), "make_topology: src and dst differ in length");
  require(protein_ids.size() == static_cast<std::size_t>(num_nodes), "make_topology: protein id count mismatch");
  GraphTopology topo;
  topo.num_nodes = num_nodes;
  topo.in_degree.assign(static_cast<std::size_t>(num_nodes), 0);
  for (std::size_t k = 0; k < src.size(); ++k) {
    if (src[k] < 0 || src[k] >= num_nodes || dst[k] < 0 || dst[k] >= num_nodes)
      fail(ErrorKind::kInvalidArgument, "make_topology: edge endpoint out of range");
    ++topo.in_degree[static_cast<std::size_t>(dst[k])];
  }
  for (std::size_t i = 0; i < protein_ids.size(); ++i) {
    const auto p = protein_ids[i];
    require(p >= 0 && (i == 0 ? p == 0 : p == protein_ids[i - 1] || p == protein_ids[i - 1] + 1),
            "make_topology: protein ids must be non-decreasing from 0");
    if (static_cast<std::size_t>(p) == topo.protein_sizes.size()) topo.protein_sizes.push_back(0);
    ++topo.protein_sizes[static_cast<std::size_t>(p)];
  }
  topo.num_proteins = static_cast<std::int32_t>(topo.protein_sizes.size());
  topo.src = ad::make_indices(std::move(src));
  topo.dst = ad::make_indices(std::move(dst));
  topo.protein_ids = ad::make_indices(std::move(protein_ids));
  return topo;
}

ProteinGraph batch_graphs(std::span<const ProteinGraph> graphs) {
  require(!graphs.empty(), "batch_graphs: no graphs");
  ProteinGraph out;
  out.config = graphs[0].config;
  Eigen::Index total_nodes = 0, total_edges = 0;
  for (const auto& g : graphs) {
    require(g.node_features.cols() == graphs[0].node_features.cols() &&
                g.edge_features.cols() == graphs[0].edge_features.cols(),
            "batch_graphs: feature layouts differ");
    total_nodes += g.num_nodes();
    total_edges += g.num_edges();
  }
  out.node_features.resize(total_nodes, graphs[0].node_features.cols());
  out.edge_features.resize(total_edges, graphs[0].edge_features.cols());
  out.frames.resize(total_nodes, 12);
  std::vector<std::int32_t> src, dst, pid;
  src.reserve(static_cast<std::size_t>(total_edges));
  dst.reserve(static_cast<std::size_t>(total_edges));
  pid.reserve(static_cast<std::size_t>(total_nodes));
  auto& topo = out.topology;
  std::int32_t node_off = 0, protein_off = 0;
  Eigen::Index edge_off = 0;
  for (const auto& g : graphs) {
    const auto n = g.num_nodes();
    const auto m = g.num_edges();
    out.node_features.middleRows(node_off, n) = g.node_features;
    if (m > 0) out.edge_features.middleRows(edge_off, m) = g.edge_features;
    out.frames.middleRows(node_off, n) = g.frames;
    for (std::int64_t e = 0; e < m; ++e) {
      src.push_back((*g.topology.src)[e] + node_off);
      dst.push_back((*g.topology.dst)[e] + node_off);
    }
    for (std::int32_t i = 0; i < n; ++i) pid.push_back((*g.topology.protein_ids)[i] + protein_off);
    out.mask.insert(out.mask.end(), g.mask.begin(), g.mask.end());
    out.labels.insert(out.labels.end(), g.labels.begin(), g.labels.end());
    out.names.insert(out.names.end(), g.names.begin(), g.names.end());
    for (auto o : g.offsets) out.offsets.push_back(o + node_off);
    topo.in_degree.insert(topo.in_degree.end(), g.topology.in_degree.begin(), g.topology.in_degree.end());
    topo.protein_sizes.insert(topo.protein_sizes.end(), g.topology.protein_sizes.begin(),
                              g.topology.protein_sizes.end());
    node_off += n;
    edge_off += m;
    protein_off += g.topology.num_proteins;
  }
  topo.num_nodes = node_off;
  topo.num_proteins = protein_off;
  topo.src = ad::make_indices(std::move(src));
  topo.dst = ad::make_indices(std::move(dst));
  topo.protein_ids = ad::make_indices(std::move(pid));
  return out;
}

template <class T>
ad::Var<T> virtual_node_features(ad::Var<T> positions, const ProteinGraph& graph) {
  const auto& cfg = graph.config;
  const auto n = graph.num_nodes();
  std::vector<std::int32_t> ids(static_cast<std::size_t>(n));
  std::iota(ids.begin(), ids.end(), 0);
  auto idx = ad::make_indices(std::move(ids));
  return virtual_pair_rbf<T>(positions, graph.frames, idx, idx, node_virtual_pairs(cfg.num_virtual),
                             graph.mask, cfg.rbf());
}

template <class T>
ad::Var<T> virtual_edge_features(ad::Var<T> positions, const ProteinGraph& graph) {
  const auto& cfg = graph.config;
  const auto m = graph.num_edges();
  std::vector<std::uint8_t> active(static_cast<std::size_t>(m));
  for (std::int64_t e = 0; e < m; ++e)
    active[e] = graph.mask[(*graph.topology.src)[e]] && graph.mask[(*graph.topology.dst)[e]];
  return virtual_pair_rbf<T>(positions, graph.frames, graph.topology.src, graph.topology.dst,
                             edge_virtual_pairs(cfg.num_virtual), std::move(active), cfg.rbf());
}

template ad::Var<float> virtual_node_features<float>(ad::Var<float>, const ProteinGraph&);
template ad::Var<double> virtual_node_features<double>(ad::Var<double>, const ProteinGraph&);
template ad::Var<float> virtual_edge_features<float>(ad::Var<float>, const ProteinGraph&);
template ad::Var<double> virtual_edge_features<double>(ad::Var<double>, const ProteinGraph&);

std::string describe_layout(const FeatureConfig& config) {
  config.validate();
  nlohmann::json j;
  j["layout_version"] = kFeatureLayoutVersion;
  j["config"] = config;
  j["node_width"] = config.node_width();
  j["edge_width"] = config.edge_width();
  auto table = [](const std::vector<LayoutEntry>& entries) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : entries) arr.push_back({{"name", e.name}, {"begin", e.begin}, {"end", e.end}});
    return arr;
  };
  j["node"] = table(config.node_layout());
  j["edge"] = table(config.edge_layout());
  return j.dump(2);
}

}  // namespace pifold
