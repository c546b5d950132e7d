#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "model_util.hpp"
#include "pifold/dataset.hpp"
#include "pifold/model.hpp"
#include "test_util.hpp"

namespace pifold {
namespace {

using ad::Matrix;
using ad::Tape;
using ad::Var;
using testing::perturbed;
using testing::random_chain;
using testing::random_graph;
using testing::topology_of;
using testing::random_matrix;
using testing::random_rotation;
using testing::random_vec;
using testing::transform;

ModelConfig small_config(int hidden = 8, int layers = 2, int heads = 2) {
  ModelConfig c;
  c.hidden = hidden;
  c.encoder_layers = layers;
  c.heads = heads;
  return c;
}

double max_diff(const MatrixXd& a, const MatrixXd& b) {
  EXPECT_EQ(a.rows(), b.rows());
  EXPECT_EQ(a.cols(), b.cols());
  return a.size() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
}

TEST(LayerOracle, SegmentOpsMatchLoopsOnSmallGraphs) {
  const ModelParams p = perturbed(small_config(8, 1, 2), 3);
  const oracle::Layer L = oracle::read_layer(p, 0);
  Rng rng(101);
  for (int trial = 0; trial < 200; ++trial) {
    const oracle::Graph g = random_graph(rng);
    const auto topo = topology_of(g);
    const MatrixXd h = random_matrix(rng, g.n, 8, 2.0);
    const MatrixXd e = random_matrix(rng, static_cast<Eigen::Index>(g.src.size()), 8, 2.0);
    Tape<double> t;
    const auto b = bind_params(t, p, false);
    const auto& lv = b.layers[0];
    const auto hv = t.constant(h), ev = t.constant(e);
    const auto expect = oracle::layer(h, e, g, L);
    if (!g.src.empty()) {
      const auto a = attention_weights(hv, ev, topo, lv);
      EXPECT_LT(max_diff(a.value(), expect.a), 1e-9);
      const auto hh = node_update(hv, ev, a, topo, lv);
      EXPECT_LT(max_diff(hh.value(), oracle::node_update(h, e, expect.a, g, L)), 1e-9);
      const auto hh_o = oracle::node_update(h, e, expect.a, g, L);
      EXPECT_LT(max_diff(edge_update(t.constant(hh_o), ev, topo, lv).value(), oracle::edge_update(hh_o, e, g, L)), 1e-9);
      EXPECT_LT(max_diff(global_gate(t.constant(hh_o), topo, lv).value(), oracle::global_gate(hh_o, g, L)), 1e-9);
    }
    const auto out = pignn_layer(hv, ev, topo, lv);
    if (!g.src.empty()) {
      EXPECT_LT(max_diff(out.h.value(), expect.h), 1e-9) << "n=" << g.n;
      EXPECT_LT(max_diff(out.e.value(), expect.e), 1e-9);
    }
  }
}

TEST(Attention, SingleInEdgeIsOne) {
  const ModelParams p = perturbed(small_config(8, 1, 4), 1);
  Rng rng(2);
  oracle::Graph g{3, {1, 0, 0}, {0, 1, 2}, {0, 0, 0}};
  Tape<double> t;
  const auto b = bind_params(t, p, false);
  const auto a = attention_weights(t.constant(random_matrix(rng, 3, 8)), t.constant(random_matrix(rng, 3, 8)),
                                   topology_of(g), b.layers[0]);
  EXPECT_LT((a.value().array() - 1.0).abs().maxCoeff(), 1e-15);
}

TEST(Attention, NodeWithoutInEdgesThrows) {
  const ModelParams p = perturbed(small_config(8, 1, 2), 1);
  oracle::Graph g{3, {1, 0}, {0, 1}, {0, 0, 0}};
  Tape<double> t;
  const auto b = bind_params(t, p, false);
  Rng rng(1);
  EXPECT_THROW(attention_weights(t.constant(random_matrix(rng, 3, 8)), t.constant(random_matrix(rng, 2, 8)),
                                 topology_of(g), b.layers[0]),
               Error);
}

TEST(Attention, NormalizedPerTargetEveryLayerAndHead) {
  const ModelParams p = perturbed(small_config(16, 3, 4), 5);
  std::vector<ProteinGraph> parts;
  for (std::uint64_t s = 0; s < 3; ++s)
    parts.push_back(featurize(synth_protein(s, 20 + 7 * static_cast<int>(s)), p.config().features, p.virtual_atoms()));
  const auto batch = batch_graphs(parts);
  std::vector<MatrixXd> trace;
  ForwardOptions o;
  o.attention_trace = &trace;
  Tape<double> t;
  pifold_forward(t, batch, bind_params(t, p, false), o);
  ASSERT_EQ(trace.size(), 3u);
  for (const auto& a : trace) {
    ASSERT_EQ(a.cols(), 4);
    MatrixXd sums = MatrixXd::Zero(batch.num_nodes(), 4);
    for (std::int64_t r = 0; r < batch.num_edges(); ++r) sums.row((*batch.topology.dst)[static_cast<std::size_t>(r)]) += a.row(r);
    EXPECT_LT((sums.array() - 1.0).abs().maxCoeff(), 1e-9);
  }
}

TEST(NodeUpdate, SingleInEdgeIsNormOfSum) {
  const ModelParams p = perturbed(small_config(8, 1, 2), 4);
  const oracle::Layer L = oracle::read_layer(p, 0);
  oracle::Graph g{2, {1, 0}, {0, 1}, {0, 0}};
  Rng rng(6);
  const MatrixXd h = random_matrix(rng, 2, 8), e = random_matrix(rng, 2, 8);
  Tape<double> t;
  const auto b = bind_params(t, p, false);
  const auto topo = topology_of(g);
  const auto a = attention_weights(t.constant(h), t.constant(e), topo, b.layers[0]);
  const auto hh = node_update(t.constant(h), t.constant(e), a, topo, b.layers[0]);
  const oracle::Row v = oracle::mlp(oracle::cat({e.row(0), h.row(1)}), L.node);
  EXPECT_LT((hh.value().row(0) - oracle::layer_norm(h.row(0) + v, L.node_gamma, L.node_beta)).cwiseAbs().maxCoeff(),
            1e-12);
}

TEST(NodeUpdate, ZeroNodeWeightsLeaveBiasOnly) {
  ModelParams p = perturbed(small_config(8, 1, 2), 4);
  p.tensor(p.layers()[0].node.w2).setZero();
  const oracle::Layer L = oracle::read_layer(p, 0);
  oracle::Graph g{3, {1, 2, 0}, {0, 0, 2}, {0, 0, 0}};
  g.src.push_back(0);
  g.dst.push_back(1);
  Rng rng(7);
  const MatrixXd h = random_matrix(rng, 3, 8), e = random_matrix(rng, 4, 8);
  Tape<double> t;
  const auto b = bind_params(t, p, false);
  const auto topo = topology_of(g);
  const auto a = attention_weights(t.constant(h), t.constant(e), topo, b.layers[0]);
  const auto hh = node_update(t.constant(h), t.constant(e), a, topo, b.layers[0]);
  for (int i = 0; i < 3; ++i)
    EXPECT_LT((hh.value().row(i) - oracle::layer_norm(h.row(i) + L.node.b2, L.node_gamma, L.node_beta)).cwiseAbs().maxCoeff(),
              1e-12);
}

TEST(EdgeUpdate, ZeroEdgeWeightsNormalizeBias) {
  ModelParams p = perturbed(small_config(8, 1, 2), 8);
  p.tensor(p.layers()[0].edge.w2).setZero();
  const oracle::Layer L = oracle::read_layer(p, 0);
  oracle::Graph g{2, {1, 0}, {0, 1}, {0, 0}};
  Rng rng(9);
  const MatrixXd hh = random_matrix(rng, 2, 8), e = random_matrix(rng, 2, 8);
  Tape<double> t;
  const auto b = bind_params(t, p, false);
  const auto out = edge_update(t.constant(hh), t.constant(e), topology_of(g), b.layers[0]);
  for (int r = 0; r < 2; ++r)
    EXPECT_LT((out.value().row(r) - oracle::layer_norm(e.row(r) + L.edge.b2, L.edge_gamma, L.edge_beta)).cwiseAbs().maxCoeff(),
              1e-12);
}

TEST(EdgeUpdate, DirectionMatters) {
  const ModelParams p = perturbed(small_config(8, 1, 2), 8);
  oracle::Graph g{2, {1, 0}, {0, 1}, {0, 0}};
  Rng rng(10);
  const MatrixXd hh = random_matrix(rng, 2, 8);
  MatrixXd e(2, 8);
  e.row(0) = random_matrix(rng, 1, 8);
  e.row(1) = e.row(0);
  Tape<double> t;
  const auto b = bind_params(t, p, false);
  const auto out = edge_update(t.constant(hh), t.constant(e), topology_of(g), b.layers[0]).value();
  EXPECT_GT((out.row(0) - out.row(1)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(GlobalGate, ZeroGateGivesHalf) {
  ModelParams p = perturbed(small_config(8, 1, 2), 11);
  p.tensor(p.layers()[0].gate.w2).setZero();
  p.tensor(p.layers()[0].gate.b2).setZero();
  oracle::Graph g{3, {}, {}, {0, 0, 1}};
  Rng rng(12);
  const MatrixXd hh = random_matrix(rng, 3, 8);
  Tape<double> t;
  const auto b = bind_params(t, p, false);
  EXPECT_EQ(global_gate(t.constant(hh), topology_of(g), b.layers[0]).value(), MatrixXd(0.5 * hh));
}

TEST(GlobalGate, BatchMatchesSingles) {
  const ModelParams p = perturbed(small_config(8, 1, 2), 13);
  Rng rng(14);
  const MatrixXd hh = random_matrix(rng, 5, 8);
  Tape<double> t;
  const auto b = bind_params(t, p, false);
  const auto both = global_gate(t.constant(hh), topology_of({5, {}, {}, {0, 0, 1, 1, 1}}), b.layers[0]).value();
  const auto first = global_gate(t.constant(MatrixXd(hh.topRows(2))), topology_of({2, {}, {}, {0, 0}}), b.layers[0]).value();
  const auto second =
      global_gate(t.constant(MatrixXd(hh.bottomRows(3))), topology_of({3, {}, {}, {0, 0, 0}}), b.layers[0]).value();
  EXPECT_LT(max_diff(both.topRows(2), first), 1e-15);
  EXPECT_LT(max_diff(both.bottomRows(3), second), 1e-15);
}

TEST(GlobalGate, SingleNodeContextIsItself) {
  const ModelParams p = perturbed(small_config(8, 1, 2), 15);
  const oracle::Layer L = oracle::read_layer(p, 0);
  Rng rng(16);
  const MatrixXd hh = random_matrix(rng, 1, 8);
  Tape<double> t;
  const auto b = bind_params(t, p, false);
  const auto out = global_gate(t.constant(hh), topology_of({1, {}, {}, {0}}), b.layers[0]).value();
  const oracle::Row gate = oracle::mlp(hh.row(0), L.gate);
  for (int c = 0; c < 8; ++c) EXPECT_NEAR(out(0, c), hh(0, c) * oracle::sigmoid(gate(c)), 1e-15);
}

TEST(PignnLayer, ShapesStackingAndStability) {
  const ModelParams p = perturbed(small_config(8, 1, 2), 17);
  Rng rng(18);
  oracle::Graph g{4, {1, 2, 3, 0, 2, 1}, {0, 0, 1, 2, 3, 3}, {0, 0, 0, 0}};
  const auto topo = topology_of(g);
  const MatrixXd h = random_matrix(rng, 4, 8), e = random_matrix(rng, 6, 8);
  Tape<double> t;
  const auto b = bind_params(t, p, false);
  const auto one = pignn_layer(t.constant(h), t.constant(e), topo, b.layers[0]);
  EXPECT_EQ(one.h.rows(), 4);
  EXPECT_EQ(one.h.cols(), 8);
  EXPECT_EQ(one.e.rows(), 6);
  EXPECT_EQ(one.e.cols(), 8);
  const auto two = pignn_layer(one.h, one.e, topo, b.layers[0]);
  EXPECT_GT(max_diff(two.h.value(), one.h.value()), 1e-6);
  const auto big = pignn_layer(t.constant(MatrixXd(100.0 * h)), t.constant(MatrixXd(100.0 * e)), topo, b.layers[0]);
  EXPECT_TRUE(big.h.value().allFinite());
  EXPECT_TRUE(big.e.value().allFinite());
}

// --- full model -----------------------------------------------------------------

TEST(Forward, LogitShapeAndForwardCount) {
  const ModelParams p = ModelParams::init(small_config(16, 2, 4), 1);
  for (int n : {1, 2, 7, 40}) {
    const auto g = featurize(synth_protein(static_cast<std::uint64_t>(n), n), p.config().features, p.virtual_atoms());
    const auto before = forward_pass_count();
    Tape<float> t;
    const auto logits = pifold_forward(t, g, bind_params(t, p, false));
    EXPECT_EQ(forward_pass_count(), before + 1);
    EXPECT_EQ(logits.rows(), n);
    EXPECT_EQ(logits.cols(), 20);
    EXPECT_TRUE(logits.value().allFinite());
  }
}

TEST(Forward, SequenceNeverEntersOneShotPass) {
  const ModelParams p = ModelParams::init(small_config(16, 2, 4), 2);
  auto g = featurize(synth_protein(4, 25), p.config().features, p.virtual_atoms());
  const MatrixXd a = pifold_logits(g, p);
  for (auto& l : g.labels) l = 0;
  g.mask.assign(g.mask.size(), 1);
  EXPECT_EQ(pifold_logits(g, p), a);
}

TEST(Forward, InvariantUnderRigidMotion) {
  const ModelParams p = perturbed(small_config(16, 2, 4), 3);
  Rng rng(19);
  const Protein prot = random_chain(20, 30);
  const MatrixXd a = pifold_logits(featurize(prot, p.config().features, p.virtual_atoms()), p);
  for (int trial = 0; trial < 5; ++trial) {
    const Protein moved = transform(prot, random_rotation(rng), random_vec(rng, 60.0));
    EXPECT_LT(max_diff(pifold_logits(featurize(moved, p.config().features, p.virtual_atoms()), p), a), 1e-4);
  }
}

ProteinGraph permute_graph(const ProteinGraph& g, const std::vector<std::int32_t>& perm) {
  // perm[old] = new position.
  ProteinGraph out = g;
  const auto n = g.num_nodes();
  for (std::int32_t i = 0; i < n; ++i) {
    out.node_features.row(perm[i]) = g.node_features.row(i);
    out.frames.row(perm[i]) = g.frames.row(i);
    out.mask[perm[i]] = g.mask[i];
    out.labels[perm[i]] = g.labels[i];
  }
  std::vector<std::int32_t> src, dst;
  for (std::int64_t e = 0; e < g.num_edges(); ++e) {
    src.push_back(perm[(*g.topology.src)[static_cast<std::size_t>(e)]]);
    dst.push_back(perm[(*g.topology.dst)[static_cast<std::size_t>(e)]]);
  }
  out.topology = make_topology(n, src, dst, std::vector<std::int32_t>(static_cast<std::size_t>(n), 0));
  return out;
}

TEST(Forward, PermutationEquivariant) {
  const ModelParams p = perturbed(small_config(16, 2, 4), 4);
  const auto g = featurize(synth_protein(6, 18), p.config().features, p.virtual_atoms());
  std::vector<std::int32_t> perm(18);
  for (int i = 0; i < 18; ++i) perm[static_cast<std::size_t>(i)] = (7 * i + 3) % 18;
  const MatrixXd a = pifold_logits(g, p);
  const MatrixXd b = pifold_logits(permute_graph(g, perm), p);
  for (int i = 0; i < 18; ++i) EXPECT_LT((a.row(i) - b.row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Forward, GradientsOfEveryTensor) {
  const ModelParams p = perturbed(small_config(8, 2, 2), 5);
  const auto g = featurize(random_chain(21, 6), p.config().features, p.virtual_atoms());
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto f = [&](Tape<double>& t, Var<double> x) {
      std::vector<Var<double>> vars;
      for (std::size_t j = 0; j < p.size(); ++j) vars.push_back(j == i ? x : t.constant(p.tensor(j)));
      return ad::mean(pifold_forward(t, g, bind_vars(p, std::move(vars))));
    };
    EXPECT_LT(ad::grad_check(f, p.tensor(i), 1e-4).max_rel_error, 1e-4) << p.name(i);
  }
}

TEST(Forward, DropoutOnlyInTraining) {
  const ModelParams p = ModelParams::init(small_config(16, 1, 4), 6);
  const auto g = featurize(synth_protein(7, 15), p.config().features, p.virtual_atoms());
  auto run = [&](bool training, std::uint64_t seed) {
    Tape<double> t;
    ForwardOptions o;
    o.training = training;
    o.dropout_seed = seed;
    return pifold_forward(t, g, bind_params(t, p, false), o).value();
  };
  EXPECT_EQ(run(false, 1), run(false, 2));
  EXPECT_EQ(run(true, 1), run(true, 1));
  EXPECT_GT(max_diff(run(true, 1), run(false, 1)), 1e-6);
}

TEST(Forward, EmptyNodeFeaturesUseConstantEmbedding) {
  ModelConfig c = small_config(8, 1, 2);
  c.features.node = {false, false, false};
  const ModelParams p = ModelParams::init(c, 7);
  EXPECT_GE(p.node_constant(), 0);
  const auto g = featurize(synth_protein(8, 10), c.features, p.virtual_atoms());
  EXPECT_EQ(g.node_features.cols(), 0);
  EXPECT_TRUE(pifold_logits(g, p).allFinite());
}

TEST(Forward, MismatchedFeatureConfigThrows) {
  const ModelParams p = ModelParams::init(small_config(8, 1, 2), 7);
  FeatureConfig other = p.config().features;
  other.k = 5;
  const auto g = featurize(synth_protein(8, 10), other, p.virtual_atoms());
  EXPECT_THROW(pifold_logits(g, p), Error);
}

TEST(Config, Validation) {
  ModelConfig c = small_config(10, 1, 4);
  EXPECT_THROW(c.validate(), Error);
  c = small_config(8, 0, 2);
  EXPECT_THROW(c.validate(), Error);
  c = small_config();
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), Error);
  EXPECT_EQ(parse_precision("f32"), Precision::kFloat32);
  EXPECT_THROW(parse_precision("f16"), Error);
}

TEST(Params, InitIsSeededAndVirtualAtomsUnit) {
  const auto a = ModelParams::init(small_config(), 9), b = ModelParams::init(small_config(), 9);
  const auto c = ModelParams::init(small_config(), 10);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.tensor(i), b.tensor(i));
    differs |= a.tensor(i) != c.tensor(i);
  }
  EXPECT_TRUE(differs);
  EXPECT_TRUE(a.virtual_atoms().is_unit(1e-12));
  EXPECT_EQ(a.layout_hash(), c.layout_hash());
  EXPECT_NE(a.layout_hash(), ModelParams::init(small_config(16), 9).layout_hash());
  EXPECT_EQ(a.find("readout.w"), static_cast<std::size_t>(a.readout_weight()));
  EXPECT_THROW(a.find("nope"), Error);
}

// --- checkpoints ----------------------------------------------------------------

class Checkpoint : public ::testing::Test {
 protected:
  std::filesystem::path dir = std::filesystem::temp_directory_path() /
                              ("pifold_ck_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                               "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
  void SetUp() override { std::filesystem::create_directories(dir); }
  void TearDown() override { std::filesystem::remove_all(dir); }
};

TEST_F(Checkpoint, RoundTrip) {
  ModelConfig c = small_config(8, 1, 2);
  c.decoder_layers = 1;
  const ModelParams p = perturbed(c, 11);
  const auto path = (dir / "m.ck").string();
  save_checkpoint(path, p);
  const ModelParams q = load_checkpoint(path);
  ASSERT_EQ(q.size(), p.size());
  EXPECT_EQ(q.config().decoder_layers, 1);
  EXPECT_EQ(q.config().features, p.config().features);
  for (std::size_t i = 0; i < p.size(); ++i) {
    EXPECT_EQ(q.name(i), p.name(i));
    EXPECT_EQ(q.tensor(i), p.tensor(i));
  }
  // Saving the loaded model reproduces the file byte for byte.
  const auto path2 = (dir / "m2.ck").string();
  save_checkpoint(path2, q);
  std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
  EXPECT_EQ(std::string(std::istreambuf_iterator<char>(a), {}), std::string(std::istreambuf_iterator<char>(b), {}));
}

TEST_F(Checkpoint, MissingFile) {
  try {
    load_checkpoint((dir / "absent.ck").string());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNotFound);
    EXPECT_NE(std::string(e.what()).find("checkpoint not found"), std::string::npos);
  }
}

TEST_F(Checkpoint, CorruptFiles) {
  const ModelParams p = ModelParams::init(small_config(8, 1, 2), 12);
  const auto path = (dir / "m.ck").string();
  save_checkpoint(path, p);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto expect_data_error = [&](const std::string& content) {
    const auto bad = (dir / "bad.ck").string();
    std::ofstream(bad, std::ios::binary) << content;
    try {
      load_checkpoint(bad);
      ADD_FAILURE() << "accepted a corrupt checkpoint";
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kData) << e.what();
    }
  };
  expect_data_error("NOTACKPT" + bytes.substr(8));
  expect_data_error(bytes.substr(0, bytes.size() / 2));
  expect_data_error(bytes.substr(0, 10));
  std::string flipped = bytes;
  flipped[20] = '#';  // inside the JSON manifest
  expect_data_error(flipped);
}

}  // namespace
}  // namespace pifold
