#include "pifold/model.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "pifold/error.hpp"
#include "pifold/random.hpp"
#include "pifold/serialization.hpp"

namespace pifold {

namespace {

std::atomic<std::uint64_t> g_forward_passes{0};

constexpr char kCheckpointMagic[8] = {'P', 'I', 'F', 'O', 'L', 'D', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t fnv1a(std::uint64_t h, std::string_view bytes) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

Precision parse_precision(const std::string& text) {
  if (text == "f32") return Precision::kFloat32;
  if (text == "f64") return Precision::kFloat64;
  fail(ErrorKind::kInvalidArgument, "precision must be f32 or f64, got '" + text + "'");
}

const char* precision_name(Precision p) { return p == Precision::kFloat32 ? "f32" : "f64"; }

void ModelConfig::validate() const {
  features.validate();
  require(hidden >= 1, "model config: hidden must be >= 1");
  require(heads >= 1 && hidden % heads == 0, "model config: heads must divide hidden");
  require(encoder_layers >= 0 && decoder_layers >= 0, "model config: negative layer count");
  require(total_layers() >= 1, "model config: need at least one layer");
  require(dropout >= 0.0 && dropout < 1.0, "model config: dropout must be in [0, 1)");
}

// --- parameter store --------------------------------------------------------

int ModelParams::add(std::string name, Eigen::Index rows, Eigen::Index cols) {
  names_.push_back(std::move(name));
  tensors_.push_back(MatrixXd::Zero(rows, cols));
  return static_cast<int>(tensors_.size()) - 1;
}

MlpIndex ModelParams::add_mlp(const std::string& prefix, int in, int hidden, int out) {
  MlpIndex m;
  m.w1 = add(prefix + ".w1", in, hidden);
  m.b1 = add(prefix + ".b1", 1, hidden);
  m.w2 = add(prefix + ".w2", hidden, out);
  m.b2 = add(prefix + ".b2", 1, out);
  return m;
}

ModelParams ModelParams::layout(const ModelConfig& config) {
  config.validate();
  ModelParams p;
  p.config_ = config;
  const int d = config.hidden;
  const int fn = config.features.node_width();
  const int fe = config.features.edge_width();
  if (fn > 0) {
    p.node_in_ = p.add_mlp("node_in", fn, d, d);
  } else {
    p.node_const_ = p.add("node_in.const", 1, d);
  }
  if (fe > 0) {
    p.edge_in_ = p.add_mlp("edge_in", fe, d, d);
  } else {
    p.edge_const_ = p.add("edge_in.const", 1, d);
  }
  auto add_layer = [&](const std::string& prefix) {
    LayerIndex l;
    l.att = p.add_mlp(prefix + ".att", 3 * d, d, config.heads);
    l.node = p.add_mlp(prefix + ".node", 2 * d, d, d);
    l.node_gamma = p.add(prefix + ".node_norm.gamma", 1, d);
    l.node_beta = p.add(prefix + ".node_norm.beta", 1, d);
    l.edge = p.add_mlp(prefix + ".edge", 3 * d, d, d);
    l.edge_gamma = p.add(prefix + ".edge_norm.gamma", 1, d);
    l.edge_beta = p.add(prefix + ".edge_norm.beta", 1, d);
    l.gate = p.add_mlp(prefix + ".gate", d, d, d);
    p.layers_.push_back(l);
  };
  for (int l = 0; l < config.encoder_layers; ++l) add_layer("enc." + std::to_string(l));
  for (int l = 0; l < config.decoder_layers; ++l) add_layer("dec." + std::to_string(l));
  if (config.autoregressive()) p.label_embed_ = p.add("label_embed", kNumResidueTypes, d);
  p.readout_w_ = p.add("readout.w", d, kNumResidueTypes);
  p.readout_b_ = p.add("readout.b", 1, kNumResidueTypes);
  if (config.features.num_virtual > 0) p.virtual_ = p.add("virtual_atoms", config.features.num_virtual, 3);
  return p;
}

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = layout(config);
  Rng rng(mix_seed(seed, 0));
  for (std::size_t i = 0; i < p.tensors_.size(); ++i) {
    const std::string& name = p.names_[i];
    MatrixXd& t = p.tensors_[i];
    auto ends_with = [&](std::string_view suffix) {
      return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    if (static_cast<int>(i) == p.virtual_) continue;
    if (ends_with(".gamma")) {
      t.setOnes();
    } else if (ends_with(".beta") || ends_with(".b1") || ends_with(".b2") || ends_with(".b")) {
      t.setZero();
    } else if (ends_with(".const") || name == "label_embed") {
      const double s = 1.0 / std::sqrt(static_cast<double>(t.cols()));
      for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] = s * rng.normal();
    } else {
      // Xavier/Glorot uniform.
      const double a = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
      for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] = rng.uniform(-a, a);
    }
  }
  if (p.virtual_ >= 0)
    p.tensors_[p.virtual_] = VirtualAtomParams::initial(config.features.num_virtual, mix_seed(seed, 1)).positions;
  return p;
}

std::size_t ModelParams::find(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  fail(ErrorKind::kNotFound, "parameter not found: " + name);
}

std::size_t ModelParams::num_scalars() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.size());
  return n;
}

std::uint64_t ModelParams::layout_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < names_.size(); ++i) {
    h = fnv1a(h, names_[i]);
    h = fnv1a(h, ":" + std::to_string(tensors_[i].rows()) + "x" + std::to_string(tensors_[i].cols()) + ";");
  }
  return h;
}

VirtualAtomParams ModelParams::virtual_atoms() const {
  VirtualAtomParams v;
  if (virtual_ >= 0) v.positions = tensors_[virtual_];
  else v.positions.resize(0, 3);
  return v;
}

void ModelParams::set_virtual_atoms(const VirtualAtomParams& v) {
  require(v.count() == config_.features.num_virtual, "set_virtual_atoms: count mismatch");
  if (virtual_ >= 0) tensors_[virtual_] = v.positions;
}

void ModelParams::project_virtual_atoms() {
  if (virtual_ < 0) return;
  VirtualAtomParams v = virtual_atoms();
  v.project_to_unit();
  tensors_[virtual_] = v.positions;
}

// --- checkpoints --------------------------------------------------------------

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int k = 0; k < 4; ++k) b[k] = static_cast<char>((v >> (8 * k)) & 0xff);
  os.write(b, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int k = 0; k < 8; ++k) b[k] = static_cast<char>((v >> (8 * k)) & 0xff);
  os.write(b, 8);
}

std::uint64_t get_uint(std::istream& is, int bytes) {
  unsigned char b[8] = {};
  is.read(reinterpret_cast<char*>(b), bytes);
  if (!is) fail(ErrorKind::kData, "checkpoint truncated");
  std::uint64_t v = 0;
  for (int k = bytes - 1; k >= 0; --k) v = (v << 8) | b[k];
  return v;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::kNotFound, "cannot open checkpoint for writing: " + path);
  nlohmann::json manifest;
  manifest["config"] = params.config();
  manifest["layout_hash"] = hex64(params.layout_hash());
  manifest["feature_layout_version"] = kFeatureLayoutVersion;
  nlohmann::json tensors = nlohmann::json::array();
  for (std::size_t i = 0; i < params.size(); ++i)
    tensors.push_back({{"name", params.name(i)}, {"shape", {params.tensor(i).rows(), params.tensor(i).cols()}}});
  manifest["tensors"] = std::move(tensors);
  const std::string text = manifest.dump();
  os.write(kCheckpointMagic, 8);
  put_u32(os, kCheckpointVersion);
  put_u32(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  put_u32(os, static_cast<std::uint32_t>(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& name = params.name(i);
    const auto& t = params.tensor(i);
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, 2);
    put_u64(os, static_cast<std::uint64_t>(t.rows()));
    put_u64(os, static_cast<std::uint64_t>(t.cols()));
    for (Eigen::Index k = 0; k < t.size(); ++k) put_u64(os, std::bit_cast<std::uint64_t>(t.data()[k]));
  }
  if (!os) fail(ErrorKind::kData, "failed writing checkpoint: " + path);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::kNotFound, "checkpoint not found: " + path);
  char magic[8] = {};
  is.read(magic, 8);
  if (!is || !std::equal(magic, magic + 8, kCheckpointMagic))
    fail(ErrorKind::kData, "not a checkpoint (bad magic): " + path);
  const auto version = get_uint(is, 4);
  if (version != kCheckpointVersion)
    fail(ErrorKind::kData, "unsupported checkpoint version " + std::to_string(version));
  const auto mlen = get_uint(is, 4);
  std::string text(mlen, '\0');
  is.read(text.data(), static_cast<std::streamsize>(mlen));
  if (!is) fail(ErrorKind::kData, "checkpoint truncated in manifest");
  ModelConfig config;
  std::string stored_hash;
  try {
    const auto manifest = nlohmann::json::parse(text);
    config = manifest.at("config").get<ModelConfig>();
    stored_hash = manifest.at("layout_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kData, std::string("checkpoint manifest: ") + e.what());
  }
  ModelParams p = ModelParams::layout(config);
  if (stored_hash != hex64(p.layout_hash()))
    fail(ErrorKind::kData, "checkpoint layout hash does not match its config");
  const auto count = get_uint(is, 4);
  if (count != p.size()) fail(ErrorKind::kData, "checkpoint tensor count mismatch");
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto nlen = get_uint(is, 4);
    std::string name(nlen, '\0');
    is.read(name.data(), static_cast<std::streamsize>(nlen));
    if (!is || name != p.name(i)) fail(ErrorKind::kData, "checkpoint tensor name mismatch at " + std::to_string(i));
    if (get_uint(is, 4) != 2) fail(ErrorKind::kData, "checkpoint tensor " + name + ": expected 2 dims");
    const auto rows = get_uint(is, 8), cols = get_uint(is, 8);
    MatrixXd& t = p.tensor(i);
    if (rows != static_cast<std::uint64_t>(t.rows()) || cols != static_cast<std::uint64_t>(t.cols()))
      fail(ErrorKind::kData, "checkpoint tensor " + name + ": shape mismatch");
    for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] = std::bit_cast<double>(get_uint(is, 8));
  }
  return p;
}

// --- binding ----------------------------------------------------------------

template <class T>
MlpVars<T> BoundParams<T>::mlp(const MlpIndex& idx) const {
  return {(*this)[idx.w1], (*this)[idx.b1], (*this)[idx.w2], (*this)[idx.b2]};
}

template <class T>
BoundParams<T> bind_vars(const ModelParams& params, std::vector<ad::Var<T>> vars) {
  require(vars.size() == params.size(), "bind_vars: tensor count mismatch");
  BoundParams<T> b;
  b.params = &params;
  b.vars = std::move(vars);
  for (const auto& l : params.layers()) {
    LayerVars<T> lv;
    lv.att = b.mlp(l.att);
    lv.node = b.mlp(l.node);
    lv.edge = b.mlp(l.edge);
    lv.gate = b.mlp(l.gate);
    lv.node_gamma = b[l.node_gamma];
    lv.node_beta = b[l.node_beta];
    lv.edge_gamma = b[l.edge_gamma];
    lv.edge_beta = b[l.edge_beta];
    b.layers.push_back(lv);
  }
  return b;
}

template <class T>
BoundParams<T> bind_params(ad::Tape<T>& tape, const ModelParams& params, bool trainable) {
  std::vector<ad::Var<T>> vars;
  vars.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Matrix<T> v = params.tensor(i).template cast<T>();
    vars.push_back(trainable ? tape.variable(std::move(v)) : tape.constant(std::move(v)));
  }
  return bind_vars(params, std::move(vars));
}

// --- layer ------------------------------------------------------------------

namespace {

template <class T>
using SourceFn = std::function<ad::Var<T>(ad::Var<T>)>;

template <class T>
void check_in_degrees(const GraphTopology& topo) {
  for (std::int32_t i = 0; i < topo.num_nodes; ++i) {
    if (topo.in_degree[i] == 0 && topo.protein_sizes[(*topo.protein_ids)[i]] > 1)
      fail(ErrorKind::kInvalidArgument,
           "attention: node " + std::to_string(i) + " has no in-edges and cannot be normalized");
  }
}

template <class T>
ad::Var<T> attention_from_sources(ad::Var<T> hs, ad::Var<T> h, ad::Var<T> e,
                                  const GraphTopology& topo, const LayerVars<T>& layer) {
  check_in_degrees<T>(topo);
  const auto hd = ad::gather_rows(h, topo.dst);
  const auto logits = apply_mlp(ad::concat_cols<T>({hs, e, hd}), layer.att);
  return ad::segment_softmax(logits, topo.dst, topo.num_nodes);
}

template <class T>
ad::Var<T> node_update_from_sources(ad::Var<T> hs, ad::Var<T> h, ad::Var<T> e, ad::Var<T> a,
                                    const GraphTopology& topo, const LayerVars<T>& layer) {
  const auto v = apply_mlp(ad::concat_cols<T>({e, hs}), layer.node);
  const auto agg = ad::segment_weighted_sum(a, v, topo.dst, topo.num_nodes);
  return ad::layer_norm(ad::add(h, agg), layer.node_gamma, layer.node_beta);
}

template <class T>
ad::Var<T> edge_update_from_sources(ad::Var<T> hs, ad::Var<T> h_hat, ad::Var<T> e,
                                    const GraphTopology& topo, const LayerVars<T>& layer) {
  const auto hd = ad::gather_rows(h_hat, topo.dst);
  const auto upd = apply_mlp(ad::concat_cols<T>({hs, e, hd}), layer.edge);
  return ad::layer_norm(ad::add(e, upd), layer.edge_gamma, layer.edge_beta);
}

template <class T>
LayerOutput<T> layer_core(ad::Var<T> h, ad::Var<T> e, const GraphTopology& topo,
                          const LayerVars<T>& layer, const SourceFn<T>& source_of, bool causal) {
  require(h.rows() == topo.num_nodes, "pignn_layer: node count mismatch");
  require(e.rows() == topo.num_edges(), "pignn_layer: edge count mismatch");
  require(h.cols() == e.cols(), "pignn_layer: node and edge widths differ");
  LayerOutput<T> out;
  ad::Var<T> h_hat;
  if (topo.num_edges() == 0) {
    check_in_degrees<T>(topo);
    h_hat = ad::layer_norm(h, layer.node_gamma, layer.node_beta);
    out.e = e;
  } else {
    const auto hs = source_of(h);
    out.attention = attention_from_sources(hs, h, e, topo, layer);
    h_hat = node_update_from_sources(hs, h, e, out.attention, topo, layer);
    out.e = edge_update_from_sources(source_of(h_hat), h_hat, e, topo, layer);
  }
  if (causal) {
    const auto c = ad::prefix_mean(h_hat, topo.protein_ids, topo.num_proteins);
    out.h = ad::mul(h_hat, ad::sigmoid(apply_mlp(c, layer.gate)));
  } else {
    out.h = global_gate(h_hat, topo, layer);
  }
  return out;
}

template <class T>
ad::Var<T> dropout(ad::Tape<T>& tape, ad::Var<T> x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  ad::Matrix<T> mask(x.rows(), x.cols());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  for (Eigen::Index k = 0; k < mask.size(); ++k) mask.data()[k] = rng.uniform() < p ? T(0) : keep_scale;
  return ad::mul(x, tape.constant(std::move(mask)));
}

template <class T>
ad::Var<T> project_input(ad::Tape<T>& tape, const MatrixXd& features, std::pair<int, int> vcols,
                         ad::Var<T> vblock, const MlpVars<T>& mlp) {
  if (!vblock.valid()) return apply_mlp(tape.constant(features.cast<T>()), mlp);
  std::vector<ad::Var<T>> parts;
  const auto [vb, ve] = vcols;
  if (vb > 0) parts.push_back(tape.constant(features.leftCols(vb).cast<T>()));
  parts.push_back(vblock);
  if (ve < features.cols()) parts.push_back(tape.constant(features.rightCols(features.cols() - ve).cast<T>()));
  return apply_mlp(ad::concat_cols<T>(parts), mlp);
}

template <class T>
ad::Var<T> constant_rows(ad::Var<T> row, Eigen::Index n) {
  return ad::gather_rows(row, ad::make_indices(std::vector<std::int32_t>(static_cast<std::size_t>(n), 0)));
}

void check_graph(const ProteinGraph& graph, const ModelConfig& config) {
  if (!(graph.config == config.features))
    fail(ErrorKind::kInvalidArgument, "graph was featurized with a different feature config than the model");
  require(graph.node_features.cols() == config.features.node_width() &&
              graph.edge_features.cols() == config.features.edge_width(),
          "graph feature widths do not match the model");
}

}  // namespace

template <class T>
ad::Var<T> apply_mlp(ad::Var<T> x, const MlpVars<T>& mlp) {
  return ad::affine(ad::gelu(ad::affine(x, mlp.w1, mlp.b1)), mlp.w2, mlp.b2);
}

template <class T>
ad::Var<T> attention_weights(ad::Var<T> h, ad::Var<T> e, const GraphTopology& topo,
                             const LayerVars<T>& layer) {
  require(e.rows() == topo.num_edges(), "attention_weights: edge count mismatch");
  return attention_from_sources(ad::gather_rows(h, topo.src), h, e, topo, layer);
}

template <class T>
ad::Var<T> node_update(ad::Var<T> h, ad::Var<T> e, ad::Var<T> a, const GraphTopology& topo,
                       const LayerVars<T>& layer) {
  require(a.rows() == topo.num_edges() && e.rows() == topo.num_edges(), "node_update: edge count mismatch");
  require(h.rows() == topo.num_nodes, "node_update: node count mismatch");
  return node_update_from_sources(ad::gather_rows(h, topo.src), h, e, a, topo, layer);
}

template <class T>
ad::Var<T> edge_update(ad::Var<T> h_hat, ad::Var<T> e, const GraphTopology& topo,
                       const LayerVars<T>& layer) {
  require(e.rows() == topo.num_edges(), "edge_update: edge count mismatch");
  require(h_hat.rows() == topo.num_nodes, "edge_update: node count mismatch");
  return edge_update_from_sources(ad::gather_rows(h_hat, topo.src), h_hat, e, topo, layer);
}

template <class T>
ad::Var<T> global_gate(ad::Var<T> h_hat, const GraphTopology& topo, const LayerVars<T>& layer) {
  require(h_hat.rows() == topo.num_nodes, "global_gate: node count mismatch");
  const auto c = ad::segment_mean(h_hat, topo.protein_ids, topo.num_proteins);
  const auto g = ad::sigmoid(apply_mlp(c, layer.gate));
  return ad::mul(h_hat, ad::gather_rows(g, topo.protein_ids));
}

template <class T>
LayerOutput<T> pignn_layer(ad::Var<T> h, ad::Var<T> e, const GraphTopology& topo,
                           const LayerVars<T>& layer) {
  const auto src = topo.src;
  return layer_core<T>(h, e, topo, layer, [src](ad::Var<T> x) { return ad::gather_rows(x, src); },
                       false);
}

template <class T>
LayerOutput<T> decoder_layer(ad::Var<T> h, ad::Var<T> e, const DecoderContext<T>& ctx,
                             const LayerVars<T>& layer) {
  require(h.rows() == ctx.topo.num_nodes, "decoder_layer: node count mismatch");
  const auto& c = ctx;
  auto source_of = [&c](ad::Var<T> x) {
    return ad::gather_rows(ad::concat_rows(x, c.encoder_states), c.mixed_src);
  };
  return layer_core<T>(h, e, ctx.topo, layer, source_of, true);
}

template <class T>
DecoderContext<T> make_decoder_context(const ProteinGraph& graph, ad::Var<T> encoder_states,
                                       std::int32_t prefix) {
  const auto& full = graph.topology;
  require(prefix >= 1 && prefix <= full.num_nodes, "decoder context: prefix out of range");
  require(encoder_states.rows() == full.num_nodes, "decoder context: encoder state count mismatch");
  const auto& src = *full.src;
  const auto& dst = *full.dst;
  std::size_t m = 0;
  while (m < dst.size() && dst[m] < prefix) ++m;
  for (std::size_t k = m; k < dst.size(); ++k)
    require(dst[k] >= prefix, "decoder context: edges must be sorted by target");

  DecoderContext<T> ctx;
  ctx.encoder_states = encoder_states;
  auto& topo = ctx.topo;
  topo.num_nodes = prefix;
  topo.num_proteins = full.num_proteins;
  topo.protein_sizes = full.protein_sizes;
  topo.in_degree.assign(full.in_degree.begin(), full.in_degree.begin() + prefix);
  topo.protein_ids = ad::make_indices(std::vector<std::int32_t>(full.protein_ids->begin(),
                                                                full.protein_ids->begin() + prefix));
  std::vector<std::int32_t> s(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(m));
  std::vector<std::int32_t> t(dst.begin(), dst.begin() + static_cast<std::ptrdiff_t>(m));
  std::vector<std::int32_t> mixed(m);
  ctx.forward.resize(m);
  for (std::size_t k = 0; k < m; ++k) {
    const bool before = s[k] < t[k] && graph.mask[s[k]] != 0;
    ctx.forward[k] = before;
    mixed[k] = before ? s[k] : prefix + s[k];
  }
  topo.src = ad::make_indices(std::move(s));
  topo.dst = ad::make_indices(std::move(t));
  ctx.mixed_src = ad::make_indices(std::move(mixed));
  return ctx;
}

template <class T>
ad::Var<T> add_label_embedding(ad::Var<T> e, const DecoderContext<T>& ctx,
                               const BoundParams<T>& bound,
                               std::span<const std::int32_t> labels) {
  const ModelParams& params = *bound.params;
  require(params.label_embedding() >= 0, "label embedding requires an autoregressive model");
  require(e.rows() == ctx.topo.num_edges(), "label embedding: edge count mismatch");
  const auto& src = *ctx.topo.src;
  // Row kNumResidueTypes of the table is all zeros.
  std::vector<std::int32_t> rows(src.size(), kNumResidueTypes);
  for (std::size_t k = 0; k < src.size(); ++k) {
    if (!ctx.forward[k]) continue;
    require(static_cast<std::size_t>(src[k]) < labels.size(), "label embedding: label missing");
    const auto l = labels[src[k]];
    require(l >= 0 && l < kNumResidueTypes, "label embedding: residue code out of range");
    rows[k] = l;
  }
  const auto& table = bound[params.label_embedding()];
  const auto zero = e.tape()->constant(ad::Matrix<T>::Zero(1, table.cols()));
  return ad::add(e, ad::gather_rows(ad::concat_rows(table, zero), ad::make_indices(std::move(rows))));
}

template <class T>
ad::Var<T> readout(ad::Var<T> h, const BoundParams<T>& bound) {
  const ModelParams& params = *bound.params;
  return ad::affine(h, bound[params.readout_weight()], bound[params.readout_bias()]);
}

template <class T>
std::pair<ad::Var<T>, ad::Var<T>> embed_inputs(ad::Tape<T>& tape, const ProteinGraph& graph,
                                               const BoundParams<T>& bound,
                                               const ForwardOptions& options) {
  const ModelParams& params = *bound.params;
  const ModelConfig& config = params.config();
  check_graph(graph, config);
  const auto& fc = config.features;
  const Eigen::Index n = graph.num_nodes();
  const Eigen::Index m = graph.num_edges();

  ad::Var<T> positions;
  if (params.virtual_index() >= 0) positions = bound[params.virtual_index()];

  ad::Var<T> h, e;
  if (params.node_constant() >= 0) {
    h = constant_rows(bound[params.node_constant()], n);
  } else {
    const auto vc = fc.node_virtual_columns();
    ad::Var<T> vblock;
    if (vc.second > vc.first) vblock = virtual_node_features(positions, graph);
    h = project_input(tape, graph.node_features, vc, vblock, bound.mlp(params.node_input()));
  }
  if (params.edge_constant() >= 0) {
    e = constant_rows(bound[params.edge_constant()], m);
  } else {
    const auto vc = fc.edge_virtual_columns();
    ad::Var<T> vblock;
    if (vc.second > vc.first) vblock = virtual_edge_features(positions, graph);
    e = project_input(tape, graph.edge_features, vc, vblock, bound.mlp(params.edge_input()));
  }
  if (options.training && config.dropout > 0.0) {
    Rng rng(mix_seed(options.dropout_seed, 17));
    h = dropout(tape, h, config.dropout, rng);
    e = dropout(tape, e, config.dropout, rng);
  }
  return {h, e};
}

template <class T>
std::pair<ad::Var<T>, ad::Var<T>> encoder_forward(ad::Tape<T>& tape, const ProteinGraph& graph,
                                                  const BoundParams<T>& bound,
                                                  const ForwardOptions& options) {
  auto [h, e] = embed_inputs(tape, graph, bound, options);
  const int enc = bound.params->config().encoder_layers;
  for (int l = 0; l < enc; ++l) {
    auto out = pignn_layer(h, e, graph.topology, bound.layers[l]);
    if (options.attention_trace && out.attention.valid())
      options.attention_trace->push_back(out.attention.value().template cast<double>());
    h = out.h;
    e = out.e;
  }
  return {h, e};
}

template <class T>
ad::Var<T> pifold_forward(ad::Tape<T>& tape, const ProteinGraph& graph,
                          const BoundParams<T>& bound, const ForwardOptions& options) {
  require(!bound.params->config().autoregressive(),
          "pifold_forward: model has decoder layers; use autoregressive_forward");
  g_forward_passes.fetch_add(1, std::memory_order_relaxed);
  auto [h, e] = encoder_forward(tape, graph, bound, options);
  return readout(h, bound);
}

template <class T>
ad::Var<T> autoregressive_forward(ad::Tape<T>& tape, const ProteinGraph& graph,
                                  const BoundParams<T>& bound,
                                  std::span<const std::int32_t> labels,
                                  const ForwardOptions& options) {
  const ModelConfig& config = bound.params->config();
  require(config.autoregressive(), "autoregressive_forward: model has no decoder layers");
  require(static_cast<std::int32_t>(labels.size()) == graph.num_nodes(),
          "autoregressive_forward: label count mismatch");
  auto [h, e] = encoder_forward(tape, graph, bound, options);
  const auto ctx = make_decoder_context(graph, h, graph.num_nodes());
  e = add_label_embedding(e, ctx, bound, labels);
  for (int l = 0; l < config.decoder_layers; ++l) {
    auto out = decoder_layer(h, e, ctx, bound.layers[config.encoder_layers + l]);
    if (options.attention_trace && out.attention.valid())
      options.attention_trace->push_back(out.attention.value().template cast<double>());
    h = out.h;
    e = out.e;
  }
  return readout(h, bound);
}

template <class T>
ad::Var<T> model_forward(ad::Tape<T>& tape, const ProteinGraph& graph,
                         const BoundParams<T>& bound, const ForwardOptions& options) {
  if (bound.params->config().autoregressive())
    return autoregressive_forward(tape, graph, bound, std::span<const std::int32_t>(graph.labels), options);
  return pifold_forward(tape, graph, bound, options);
}

MatrixXd pifold_logits(const ProteinGraph& graph, const ModelParams& params) {
  ad::Tape<double> tape;
  const auto bound = bind_params(tape, params, false);
  return pifold_forward(tape, graph, bound).value();
}

std::uint64_t forward_pass_count() { return g_forward_passes.load(std::memory_order_relaxed); }

#define PIFOLD_MODEL_INSTANTIATE(T)                                                                     \
  template struct BoundParams<T>;                                                                       \
  template BoundParams<T> bind_params<T>(ad::Tape<T>&, const ModelParams&, bool);                       \
  template BoundParams<T> bind_vars<T>(const ModelParams&, std::vector<ad::Var<T>>);                    \
  template ad::Var<T> apply_mlp<T>(ad::Var<T>, const MlpVars<T>&);                                      \
  template ad::Var<T> attention_weights<T>(ad::Var<T>, ad::Var<T>, const GraphTopology&,                \
                                           const LayerVars<T>&);                                        \
  template ad::Var<T> node_update<T>(ad::Var<T>, ad::Var<T>, ad::Var<T>, const GraphTopology&,          \
                                     const LayerVars<T>&);                                              \
  template ad::Var<T> edge_update<T>(ad::Var<T>, ad::Var<T>, const GraphTopology&, const LayerVars<T>&); \
  template ad::Var<T> global_gate<T>(ad::Var<T>, const GraphTopology&, const LayerVars<T>&);            \
  template LayerOutput<T> pignn_layer<T>(ad::Var<T>, ad::Var<T>, const GraphTopology&,                  \
                                         const LayerVars<T>&);                                          \
  template LayerOutput<T> decoder_layer<T>(ad::Var<T>, ad::Var<T>, const DecoderContext<T>&,            \
                                           const LayerVars<T>&);                                        \
  template DecoderContext<T> make_decoder_context<T>(const ProteinGraph&, ad::Var<T>, std::int32_t);    \
  template std::pair<ad::Var<T>, ad::Var<T>> embed_inputs<T>(ad::Tape<T>&, const ProteinGraph&,         \
                                                             const BoundParams<T>&,                     \
                                                             const ForwardOptions&);                    \
  template std::pair<ad::Var<T>, ad::Var<T>> encoder_forward<T>(ad::Tape<T>&, const ProteinGraph&,      \
                                                                const BoundParams<T>&,                  \
                                                                const ForwardOptions&);                 \
  template ad::Var<T> add_label_embedding<T>(ad::Var<T>, const DecoderContext<T>&,                      \
                                             const BoundParams<T>&, std::span<const std::int32_t>);     \
  template ad::Var<T> readout<T>(ad::Var<T>, const BoundParams<T>&);                                    \
  template ad::Var<T> pifold_forward<T>(ad::Tape<T>&, const ProteinGraph&, const BoundParams<T>&,       \
                                        const ForwardOptions&);                                         \
  template ad::Var<T> autoregressive_forward<T>(ad::Tape<T>&, const ProteinGraph&,                      \
                                                const BoundParams<T>&, std::span<const std::int32_t>,   \
                                                const ForwardOptions&);                                 \
  template ad::Var<T> model_forward<T>(ad::Tape<T>&, const ProteinGraph&, const BoundParams<T>&,        \
                                       const ForwardOptions&);

PIFOLD_MODEL_INSTANTIATE(float)
PIFOLD_MODEL_INSTANTIATE(double)

}  // namespace pifold
