#pragma once

// k-NN residue graphs and node/edge feature assembly.
//
// Column layout (every block optional through FeatureConfig, kept in this
// order; R = num_rbf, K = num_virtual):
//
//   node: dist.<pair>  6 unordered intra-residue pairs        6·R
//         vdist.<k>-<l> virtual pairs k < l                    C(K,2)·R
//         angle.<name>  alpha beta gamma phi psi omega (sin, cos)  12
//         dir.<atom>    N, C, O seen from CA_i in frame i      9
//
//   edge j -> i (A from residue j, B from residue i):
//         dist.<A>-<B>  whitelisted typed pairs               |pairs|·R
//         vdist.<k>-<l> virtual atom k of j to l of i          K²·R
//         quat          q(Q_i^T Q_j)                           4
//         dir.<atom>    N, CA, C, O of j seen from CA_i        12
//         pos           sinusoidal clip(j - i, ±max_offset)    position_width

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pifold/geometry.hpp"
#include "pifold/protein.hpp"
#include "pifold/tensor.hpp"

namespace pifold {

using MatrixXd = ad::Matrix<double>;

inline constexpr int kFeatureLayoutVersion = 1;

struct AtomPair {
  Atom first;
  Atom second;
};

// Ten unordered atom-type pairs, in the order used for edge distance blocks.
inline constexpr std::array<AtomPair, 10> kEdgeDistancePairs = {{
    {Atom::kCA, Atom::kCA},
    {Atom::kCA, Atom::kC},
    {Atom::kCA, Atom::kN},
    {Atom::kCA, Atom::kO},
    {Atom::kC, Atom::kC},
    {Atom::kC, Atom::kN},
    {Atom::kC, Atom::kO},
    {Atom::kN, Atom::kN},
    {Atom::kN, Atom::kO},
    {Atom::kO, Atom::kO},
}};

inline constexpr std::array<AtomPair, 6> kNodeDistancePairs = {{
    {Atom::kN, Atom::kCA},
    {Atom::kN, Atom::kC},
    {Atom::kN, Atom::kO},
    {Atom::kCA, Atom::kC},
    {Atom::kCA, Atom::kO},
    {Atom::kC, Atom::kO},
}};

std::string pair_name(const AtomPair& p);

struct FeatureFamilies {
  bool distance = true;
  bool angle = true;
  bool direction = true;
  bool any() const { return distance || angle || direction; }
  bool operator==(const FeatureFamilies&) const = default;
};

struct LayoutEntry {
  std::string name;
  int begin = 0;
  int end = 0;
};

struct FeatureConfig {
  FeatureFamilies node;
  FeatureFamilies edge;
  bool edge_position = true;
  // Indices into kEdgeDistancePairs; ascending, unique.
  std::vector<int> edge_pairs = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  int num_virtual = 3;
  int k = 30;
  int num_rbf = 16;
  int position_width = 16;
  int max_offset = 32;

  bool operator==(const FeatureConfig&) const = default;

  void validate() const;
  RbfEncoder rbf() const { return RbfEncoder{num_rbf, 0.0, 20.0}; }

  int node_width() const;
  int edge_width() const;
  std::vector<LayoutEntry> node_layout() const;
  std::vector<LayoutEntry> edge_layout() const;

  // Column range [begin, end) of the virtual-atom distance block; empty when
  // absent.
  std::pair<int, int> node_virtual_columns() const;
  std::pair<int, int> edge_virtual_columns() const;
};

struct EdgeList {
  std::vector<std::int32_t> src;
  std::vector<std::int32_t> dst;
  std::size_t size() const { return src.size(); }
};

// For every node i, edges j -> i from the k nearest residues by CA-CA
// distance (ties to the lower index), sorted by target then by rank. Masked
// residues are never sources; a masked target draws its sources from the
// nearest valid residues along the chain instead.
EdgeList build_knn_graph(std::span<const Vec3> ca, int k,
                         std::span<const std::uint8_t> mask = {});

struct GraphTopology {
  std::int32_t num_nodes = 0;
  std::int32_t num_proteins = 0;
  ad::IndexList src;
  ad::IndexList dst;
  ad::IndexList protein_ids;
  std::vector<std::int32_t> in_degree;
  std::vector<std::int32_t> protein_sizes;

  std::int64_t num_edges() const { return src ? static_cast<std::int64_t>(src->size()) : 0; }
};

// Topology from edge lists; protein ids must be non-decreasing from 0.
GraphTopology make_topology(std::int32_t num_nodes, std::vector<std::int32_t> src,
                            std::vector<std::int32_t> dst, std::vector<std::int32_t> protein_ids);

struct ProteinGraph {
  FeatureConfig config;
  GraphTopology topology;
  MatrixXd node_features;
  MatrixXd edge_features;
  // Per node: rotation (row-major 3×3) then origin; rows of masked nodes are
  // zero. Used to recompute the virtual-atom columns on a tape.
  MatrixXd frames;
  std::vector<std::uint8_t> mask;
  std::vector<std::int32_t> labels;
  std::vector<std::string> names;
  std::vector<std::int32_t> offsets;  // first node of each protein

  std::int32_t num_nodes() const { return topology.num_nodes; }
  std::int64_t num_edges() const { return topology.num_edges(); }
};

MatrixXd assemble_node_features(const Protein& protein, std::span<const LocalFrame> frames,
                                const VirtualAtomParams& vparams, const FeatureConfig& config);
MatrixXd assemble_edge_features(const Protein& protein, std::span<const LocalFrame> frames,
                                const VirtualAtomParams& vparams, const EdgeList& edges,
                                const FeatureConfig& config);

ProteinGraph featurize(const Protein& protein, const FeatureConfig& config,
                       const VirtualAtomParams& vparams);

// Concatenates graphs node-wise; protein ids and edge endpoints are offset.
ProteinGraph batch_graphs(std::span<const ProteinGraph> graphs);

// Virtual-atom distance RBF blocks recomputed on a tape from the stored
// frames; differentiable with respect to `positions` (K×3).
template <class T>
ad::Var<T> virtual_node_features(ad::Var<T> positions, const ProteinGraph& graph);
template <class T>
ad::Var<T> virtual_edge_features(ad::Var<T> positions, const ProteinGraph& graph);

// Versioned column table, as emitted by `pifold featurize --describe`.
std::string describe_layout(const FeatureConfig& config);

}  // namespace pifold
