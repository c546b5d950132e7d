#pragma once

// PiGNN encoder: input projections, stacked PiGNN layers and the residue-type
// readout, plus the causal decoder layers of the autoregressive variant.

#include <atomic>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pifold/graph.hpp"
#include "pifold/tensor.hpp"

namespace pifold {

enum class Precision { kFloat32, kFloat64 };

// "f32" / "f64"; throws kInvalidArgument otherwise.
Precision parse_precision(const std::string& text);
const char* precision_name(Precision p);

struct ModelConfig {
  FeatureConfig features;
  int hidden = 128;
  int encoder_layers = 10;
  // Causal decoder layers; 0 gives the one-shot model.
  int decoder_layers = 0;
  int heads = 4;
  double dropout = 0.1;

  void validate() const;
  bool autoregressive() const { return decoder_layers > 0; }
  int total_layers() const { return encoder_layers + decoder_layers; }
};

struct MlpIndex {
  int w1 = -1, b1 = -1, w2 = -1, b2 = -1;
};

struct LayerIndex {
  MlpIndex att, node, edge, gate;
  int node_gamma = -1, node_beta = -1, edge_gamma = -1, edge_beta = -1;
};

// Flat, named parameter store in a fixed order. Master copies are double;
// a forward pass casts them to its compute precision.
class ModelParams {
 public:
  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const MatrixXd& tensor(std::size_t i) const { return tensors_[i]; }
  MatrixXd& tensor(std::size_t i) { return tensors_[i]; }
  // Throws kNotFound.
  std::size_t find(const std::string& name) const;
  std::size_t num_scalars() const;

  // FNV-1a over names and shapes; equal hashes mean interchangeable layouts.
  std::uint64_t layout_hash() const;

  int virtual_index() const { return virtual_; }
  VirtualAtomParams virtual_atoms() const;
  void set_virtual_atoms(const VirtualAtomParams& v);
  void project_virtual_atoms();

  const MlpIndex& node_input() const { return node_in_; }
  const MlpIndex& edge_input() const { return edge_in_; }
  int node_constant() const { return node_const_; }
  int edge_constant() const { return edge_const_; }
  int readout_weight() const { return readout_w_; }
  int readout_bias() const { return readout_b_; }
  int label_embedding() const { return label_embed_; }
  // Encoder layers first, then decoder layers.
  const std::vector<LayerIndex>& layers() const { return layers_; }

  // Empty store with the layout of `config`; values are zero.
  static ModelParams layout(const ModelConfig& config);

 private:
  int add(std::string name, Eigen::Index rows, Eigen::Index cols);
  MlpIndex add_mlp(const std::string& prefix, int in, int hidden, int out);

  ModelConfig config_;
  std::vector<std::string> names_;
  std::vector<MatrixXd> tensors_;
  MlpIndex node_in_, edge_in_;
  int node_const_ = -1, edge_const_ = -1;
  int readout_w_ = -1, readout_b_ = -1;
  int label_embed_ = -1;
  int virtual_ = -1;
  std::vector<LayerIndex> layers_;
};

void save_checkpoint(const std::string& path, const ModelParams& params);
// Throws kNotFound for a missing file and kData for a malformed one.
ModelParams load_checkpoint(const std::string& path);

// --- tape-bound parameters --------------------------------------------------

template <class T>
struct MlpVars {
  ad::Var<T> w1, b1, w2, b2;
};

template <class T>
struct LayerVars {
  MlpVars<T> att, node, edge, gate;
  ad::Var<T> node_gamma, node_beta, edge_gamma, edge_beta;
};

template <class T>
struct BoundParams {
  const ModelParams* params = nullptr;
  std::vector<ad::Var<T>> vars;  // same order as the store
  std::vector<LayerVars<T>> layers;

  const ad::Var<T>& operator[](int i) const { return vars[static_cast<std::size_t>(i)]; }
  MlpVars<T> mlp(const MlpIndex& idx) const;
};

// Places every parameter on `tape`, as variables when `trainable`.
template <class T>
BoundParams<T> bind_params(ad::Tape<T>& tape, const ModelParams& params, bool trainable);
// Same, from caller-supplied tape values in store order (e.g. to probe one
// tensor's gradient).
template <class T>
BoundParams<T> bind_vars(const ModelParams& params, std::vector<ad::Var<T>> vars);

// --- layer operations -------------------------------------------------------

template <class T>
ad::Var<T> apply_mlp(ad::Var<T> x, const MlpVars<T>& mlp);

// a_ji = softmax over the in-edges of i of AttMLP(h_j ‖ e_ji ‖ h_i), per head.
// Throws when a node of a multi-residue protein has no in-edge.
template <class T>
ad::Var<T> attention_weights(ad::Var<T> h, ad::Var<T> e, const GraphTopology& topo,
                             const LayerVars<T>& layer);

// ĥ_i = LayerNorm(h_i + concat_heads Σ_j a_ji v_j), v_j = NodeMLP(e_ji ‖ h_j).
template <class T>
ad::Var<T> node_update(ad::Var<T> h, ad::Var<T> e, ad::Var<T> a, const GraphTopology& topo,
                       const LayerVars<T>& layer);

// e_ji <- LayerNorm(e_ji + EdgeMLP(ĥ_j ‖ e_ji ‖ ĥ_i)).
template <class T>
ad::Var<T> edge_update(ad::Var<T> h_hat, ad::Var<T> e, const GraphTopology& topo,
                       const LayerVars<T>& layer);

// h_i = ĥ_i ⊙ sigmoid(GateMLP(mean of ĥ over i's protein)).
template <class T>
ad::Var<T> global_gate(ad::Var<T> h_hat, const GraphTopology& topo, const LayerVars<T>& layer);

template <class T>
struct LayerOutput {
  ad::Var<T> h;
  ad::Var<T> e;
  ad::Var<T> attention;  // invalid when the graph has no edges
};

template <class T>
LayerOutput<T> pignn_layer(ad::Var<T> h, ad::Var<T> e, const GraphTopology& topo,
                           const LayerVars<T>& layer);

// --- full forward passes ------------------------------------------------------

struct ForwardOptions {
  bool training = false;
  std::uint64_t dropout_seed = 0;
  // When set, receives each layer's attention weights (m×heads), in order.
  std::vector<MatrixXd>* attention_trace = nullptr;
};

// Input projections (with virtual-atom columns recomputed from the bound
// positions) and dropout; returns (h0, e0).
template <class T>
std::pair<ad::Var<T>, ad::Var<T>> embed_inputs(ad::Tape<T>& tape, const ProteinGraph& graph,
                                               const BoundParams<T>& bound,
                                               const ForwardOptions& options);

// One-shot logits, n×20. Counts one forward pass.
template <class T>
ad::Var<T> pifold_forward(ad::Tape<T>& tape, const ProteinGraph& graph,
                          const BoundParams<T>& bound, const ForwardOptions& options = {});

// Teacher-forced autoregressive logits: row i only depends on labels of
// residues before i.
template <class T>
ad::Var<T> autoregressive_forward(ad::Tape<T>& tape, const ProteinGraph& graph,
                                  const BoundParams<T>& bound,
                                  std::span<const std::int32_t> labels,
                                  const ForwardOptions& options = {});

// Either of the above, by model kind, with the graph's own labels.
template <class T>
ad::Var<T> model_forward(ad::Tape<T>& tape, const ProteinGraph& graph,
                         const BoundParams<T>& bound, const ForwardOptions& options = {});

// Evaluation-mode logits in double precision.
MatrixXd pifold_logits(const ProteinGraph& graph, const ModelParams& params);

// Number of pifold_forward calls so far, process-wide.
std::uint64_t forward_pass_count();

// --- causal decoder pieces, shared by training and greedy decoding ------------

template <class T>
struct DecoderContext {
  GraphTopology topo;  // sub-graph: nodes [0, n'), edges with target < n'
  // Per edge, the row of concat_rows(decoder states, encoder states) that
  // supplies its source: the decoder row when the source precedes the target
  // and is valid, the encoder row otherwise.
  ad::IndexList mixed_src;
  std::vector<std::uint8_t> forward;  // 1 where the decoder row is used
  ad::Var<T> encoder_states;
};

// Causal PiGNN layer: sources before the target contribute decoder states,
// the rest contribute encoder states; the gate uses a running mean.
template <class T>
LayerOutput<T> decoder_layer(ad::Var<T> h, ad::Var<T> e, const DecoderContext<T>& ctx,
                             const LayerVars<T>& layer);

// Context over the first `prefix` nodes of `graph` (edges must be sorted by
// target, as featurize and batch_graphs produce them).
template <class T>
DecoderContext<T> make_decoder_context(const ProteinGraph& graph, ad::Var<T> encoder_states,
                                       std::int32_t prefix);

// Input projections followed by the encoder layers; returns (h, e).
template <class T>
std::pair<ad::Var<T>, ad::Var<T>> encoder_forward(ad::Tape<T>& tape, const ProteinGraph& graph,
                                                  const BoundParams<T>& bound,
                                                  const ForwardOptions& options);

// Adds the embedding of labels[src] to the forward edges of the context.
template <class T>
ad::Var<T> add_label_embedding(ad::Var<T> e, const DecoderContext<T>& ctx,
                               const BoundParams<T>& bound,
                               std::span<const std::int32_t> labels);

template <class T>
ad::Var<T> readout(ad::Var<T> h, const BoundParams<T>& bound);

}  // namespace pifold
