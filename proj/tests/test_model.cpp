#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "helpers.hpp"
#include "mnlp/model.hpp"

using namespace mnlp;
using namespace mnlp::testing;

namespace {

std::size_t scalars(const ad::ParameterSet& ps, bool (*keep)(const std::string&) = nullptr) {
  std::size_t n = 0;
  for (const auto& p : ps)
    if (!keep || keep(p.name)) n += p.value.size();
  return n;
}

std::vector<double> values(const ad::Tensor& t) { return {t.data().begin(), t.data().end()}; }

struct Forward {
  std::vector<double> main_logits;
  std::vector<std::vector<double>> depth_logits;
  std::vector<std::vector<double>> depth_probs;
  double main_loss = 0;
};

Forward forward(const Model& m, const Instance& inst, const PartialSample& s, int t) {
  ad::Graph g(false);
  Bound P(g, m.params);
  const auto v = local_view(inst, s);
  const auto H = encode(P, m.config, inst, v.nodes);
  const auto fw = teacher_forced_forward(P, m.config, inst, s, v, H, t);
  Forward out;
  out.main_logits = values(fw.main.logits);
  out.main_loss = fw.main.loss.item();
  for (const auto& d : fw.depths) {
    if (!d.active) break;
    out.depth_logits.push_back(values(d.logits));
    out.depth_probs.push_back(values(ad::masked_softmax(d.logits, d.mask)));
  }
  return out;
}

void perturb(Model& m, const std::string& prefix, double by = 0.25) {
  for (auto& p : m.params)
    if (p.name.rfind(prefix, 0) == 0)
      for (auto& x : p.value) x += by;
}

struct Fixture {
  Instance inst;
  Solution sol;
  PartialSample sample;
};

Fixture fixture(ProblemKind kind, int n, int np, std::uint64_t seed) {
  Fixture f;
  f.inst = random_instance(kind, n, seed);
  f.sol = label_instance(f.inst).solution;
  f.sample = sample_of_length(f.inst, f.sol, np, seed);
  return f;
}

}  // namespace

TEST(Census, MatchesConfig) {
  for (auto kind : {ProblemKind::tsp, ProblemKind::cvrp})
    for (int K = 0; K <= 3; ++K) {
      const auto cfg = tiny_config(kind, K);
      const auto m = init_model(cfg, 1);
      EXPECT_EQ(scalars(m.params), expected_census(cfg));
      EXPECT_EQ(scalars(m.params, is_mnlp_param), mnlp_census(cfg));
    }
}

TEST(Census, StripLeavesBaseline) {
  for (auto kind : {ProblemKind::tsp, ProblemKind::cvrp}) {
    const auto cfg = tiny_config(kind, 3);
    const auto s = strip_mnlp(init_model(cfg, 4));
    EXPECT_EQ(s.config.mnlp_depths, 0);
    EXPECT_EQ(scalars(s.params), expected_census(cfg, false));
    const auto base = init_model(s.config, 4);
    ASSERT_EQ(base.params.size(), s.params.size());
    for (std::size_t i = 0; i < s.params.size(); ++i) {
      EXPECT_EQ(base.params[i].name, s.params[i].name);
      EXPECT_EQ(base.params[i].value, s.params[i].value);  // per-name init streams
    }
  }
}

TEST(Attention, SingleTokenAttendsToItself) {
  const auto m = init_model(tiny_config(ProblemKind::tsp), 2);
  ad::Graph g(false);
  Bound P(g, m.params);
  std::vector<ad::Tensor> attn;
  const auto X = g.constant({1, 16}, std::vector<double>(16, 0.3));
  attention_block(P, "enc.block", X, 2, &attn);
  ASSERT_EQ(attn.size(), 2u);
  for (const auto& A : attn) EXPECT_DOUBLE_EQ(A.item(), 1.0);
}

TEST(Attention, RowsSumToOne) {
  const auto m = init_model(tiny_config(ProblemKind::tsp), 2);
  ad::Graph g(false);
  Bound P(g, m.params);
  Rng rng(3);
  std::vector<double> x(7 * 16);
  for (auto& v : x) v = rng.uniform(-2, 2);
  std::vector<ad::Tensor> attn;
  attention_block(P, "dec.block0", g.constant({7, 16}, x), 2, &attn);
  for (const auto& A : attn)
    for (std::size_t r = 0; r < 7; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 7; ++c) s += A.data()[r * 7 + c];
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Attention, RejectsIndivisibleHeads) {
  const auto m = init_model(tiny_config(ProblemKind::tsp), 2);
  ad::Graph g(false);
  Bound P(g, m.params);
  EXPECT_THROW(attention_block(P, "enc.block", g.constant({2, 16}, std::vector<double>(32, 0)), 3),
               ad::ShapeError);
}

TEST(Encoder, PermutationEquivariant) {
  for (auto kind : {ProblemKind::tsp, ProblemKind::cvrp}) {
    const auto m = init_model(tiny_config(kind), 5);
    const auto inst = random_instance(kind, 9, 6);
    std::vector<int> a(inst.size());
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<int>(i);
    auto b = a;
    std::reverse(b.begin(), b.end());
    ad::Graph g(false);
    Bound P(g, m.params);
    const auto Ha = values(encode(P, m.config, inst, a)), Hb = values(encode(P, m.config, inst, b));
    const std::size_t n = a.size(), d = 16;
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c) EXPECT_NEAR(Ha[r * d + c], Hb[(n - 1 - r) * d + c], 1e-12);
  }
}

TEST(Encoder, IdenticalNodesIdenticalRows) {
  const auto m = init_model(tiny_config(ProblemKind::tsp), 5);
  const auto inst = tsp({{0.2, 0.3}, {0.7, 0.1}, {0.2, 0.3}, {0.9, 0.9}});
  ad::Graph g(false);
  Bound P(g, m.params);
  const auto H = values(encode(P, m.config, inst, {0, 1, 2, 3}));
  for (std::size_t c = 0; c < 16; ++c) EXPECT_EQ(H[c], H[2 * 16 + c]);
}

TEST(Encoder, KindMismatchThrows) {
  const auto m = init_model(tiny_config(ProblemKind::tsp), 5);
  ad::Graph g(false);
  Bound P(g, m.params);
  EXPECT_THROW(encode(P, m.config, random_instance(ProblemKind::cvrp, 5, 1), {0, 1, 2, 3, 4}),
               std::invalid_argument);
}

TEST(Decoder, DistributionSumsToOneAndRespectsMask) {
  const auto m = init_model(tiny_config(ProblemKind::tsp), 8);
  const auto inst = random_instance(ProblemKind::tsp, 8, 2);
  ad::Graph g(false);
  Bound P(g, m.params);
  const auto H = encode(P, m.config, inst, {0, 1, 2, 3, 4, 5, 6, 7});
  DecoderInput in{0, 3, {1, 2, 4, 5, 6, 7}, 0.0};
  const std::vector<char> mask{1, 0, 1, 1, 0, 1};
  const auto p = values(decode_step(P, m.config, H, in, mask));
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    s += p[i];
    if (!mask[i]) EXPECT_EQ(p[i], 0.0);
  }
  EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(Decoder, SingleFeasibleIsPointMass) {
  const auto m = init_model(tiny_config(ProblemKind::tsp), 8);
  const auto inst = random_instance(ProblemKind::tsp, 5, 2);
  ad::Graph g(false);
  Bound P(g, m.params);
  const auto H = encode(P, m.config, inst, {0, 1, 2, 3, 4});
  const auto p = values(decode_step(P, m.config, H, {0, 1, {2, 3, 4}, 0.0}, {0, 1, 0}));
  EXPECT_EQ(p, (std::vector<double>{0, 1, 0}));
}

TEST(Decoder, EmptyFeasibleSetThrows) {
  const auto m = init_model(tiny_config(ProblemKind::tsp), 8);
  ad::Graph g(false);
  Bound P(g, m.params);
  const auto H = encode(P, m.config, random_instance(ProblemKind::tsp, 4, 1), {0, 1, 2, 3});
  EXPECT_THROW(decode_step(P, m.config, H, {0, 1, {}, 0.0}, {}), std::invalid_argument);
}

TEST(Lookahead, MainPathIgnoresLookaheadParams) {
  for (auto kind : {ProblemKind::tsp, ProblemKind::cvrp}) {
    const auto f = fixture(kind, 12, 9, 21);
    auto m = init_model(tiny_config(kind, 3), 9);
    const auto a = forward(m, f.inst, f.sample, 3);
    perturb(m, "mnlp");
    const auto b = forward(m, f.inst, f.sample, 3);
    EXPECT_EQ(a.main_logits, b.main_logits);
    EXPECT_EQ(a.main_loss, b.main_loss);
    EXPECT_NE(a.depth_logits[0], b.depth_logits[0]);
  }
}

TEST(Lookahead, DepthOnlySeesShallowerModules) {
  for (auto kind : {ProblemKind::tsp, ProblemKind::cvrp}) {
    const auto f = fixture(kind, 12, 10, 22);
    auto m = init_model(tiny_config(kind, 3), 9);
    const auto a = forward(m, f.inst, f.sample, 2);
    perturb(m, mnlp_prefix(3));
    const auto b = forward(m, f.inst, f.sample, 2);
    ASSERT_EQ(a.depth_logits.size(), 3u);
    EXPECT_EQ(a.depth_logits[0], b.depth_logits[0]);
    EXPECT_EQ(a.depth_logits[1], b.depth_logits[1]);
    EXPECT_NE(a.depth_logits[2], b.depth_logits[2]);
  }
}

TEST(Lookahead, SupportShrinksWithDepth) {
  const auto f = fixture(ProblemKind::tsp, 14, 9, 23);
  const auto m = init_model(tiny_config(ProblemKind::tsp, 4), 9);
  for (int t = 2; t <= 9; ++t) {
    const auto fw = forward(m, f.inst, f.sample, t);
    EXPECT_EQ(static_cast<int>(fw.depth_probs.size()), std::min(4, 9 - t));
    for (std::size_t k = 1; k <= fw.depth_probs.size(); ++k) {
      const auto& p = fw.depth_probs[k - 1];
      const auto support = std::count_if(p.begin(), p.end(), [](double x) { return x > 0; });
      EXPECT_EQ(support, 9 - (t + static_cast<int>(k) - 1));
    }
  }
}

TEST(Lookahead, DecoderVariantReadsTrunk) {
  const auto f = fixture(ProblemKind::tsp, 12, 8, 24);
  for (auto variant : {Variant::mnlp_e, Variant::mnlp_d}) {
    auto m = init_model(tiny_config(ProblemKind::tsp, 2, variant), 9);
    const auto a = forward(m, f.inst, f.sample, 3);
    perturb(m, "dec.block1");
    const auto b = forward(m, f.inst, f.sample, 3);
    if (variant == Variant::mnlp_e)
      EXPECT_EQ(a.depth_logits[0], b.depth_logits[0]);
    else
      EXPECT_NE(a.depth_logits[0], b.depth_logits[0]);
  }
}

TEST(Lookahead, CvrpNeedsCapacity) {
  const auto m = init_model(tiny_config(ProblemKind::cvrp, 2), 1);
  ad::Graph g(false);
  Bound P(g, m.params);
  const auto h = g.constant({1, 16}, std::vector<double>(16, 0.1));
  EXPECT_THROW(mnlp_step(P, m.config, 1, h, h), std::invalid_argument);
  EXPECT_THROW(mnlp_step(P, m.config, 3, h, h, 0.5), std::invalid_argument);
}

TEST(TeacherForcing, TargetIsFeasibleAndStepRange) {
  for (auto kind : {ProblemKind::tsp, ProblemKind::cvrp}) {
    const auto f = fixture(kind, 15, 12, 25);
    const auto m = init_model(tiny_config(kind, 2), 3);
    ad::Graph g(false);
    Bound P(g, m.params);
    const auto v = local_view(f.inst, f.sample);
    const auto H = encode(P, m.config, f.inst, v.nodes);
    for (int t = 2; t <= 12; ++t) {
      const auto fw = teacher_forced_forward(P, m.config, f.inst, f.sample, v, H, t);
      EXPECT_TRUE(fw.main.mask[fw.main.target]);
      EXPECT_EQ(v.nodes[fw.main.action_node[fw.main.target]], f.sample.nodes[t - 1]);
      for (int k = 1; k <= 2; ++k) {
        const auto& d = fw.depths[k - 1];
        EXPECT_EQ(d.active, t + k <= 12);
        if (d.active) EXPECT_EQ(v.nodes[d.action_node[d.target]], f.sample.nodes[t + k - 1]);
      }
    }
    EXPECT_THROW(teacher_forced_forward(P, m.config, f.inst, f.sample, v, H, 1), std::invalid_argument);
    EXPECT_THROW(teacher_forced_forward(P, m.config, f.inst, f.sample, v, H, 13), std::invalid_argument);
  }
}

TEST(Checkpoint, RoundTripBitExact) {
  for (auto kind : {ProblemKind::tsp, ProblemKind::cvrp}) {
    const auto m = init_model(tiny_config(kind, 2, Variant::mnlp_d), 11);
    const auto path = temp_path(std::string("ckpt_") + to_string(kind) + ".bin");
    save_checkpoint(m, path);
    const auto back = load_checkpoint(path);
    EXPECT_EQ(back.config.variant, Variant::mnlp_d);
    EXPECT_EQ(back.config.mnlp_depths, 2);
    ASSERT_EQ(back.params.size(), m.params.size());
    for (std::size_t i = 0; i < m.params.size(); ++i) {
      EXPECT_EQ(back.params[i].name, m.params[i].name);
      EXPECT_EQ(back.params[i].value, m.params[i].value);
    }
  }
}

TEST(Checkpoint, StrippedLoadsAsBaseline) {
  const auto s = strip_mnlp(init_model(tiny_config(ProblemKind::tsp, 2), 11));
  const auto back = decode_checkpoint(encode_checkpoint(s));
  EXPECT_EQ(back.config.mnlp_depths, 0);
  EXPECT_EQ(back.params.size(), s.params.size());
}

TEST(Checkpoint, CorruptionDetected) {
  const auto bytes = encode_checkpoint(init_model(tiny_config(ProblemKind::tsp, 1), 1));
  auto flipped = bytes;
  flipped[flipped.size() - 100] ^= 1;
  EXPECT_THROW(decode_checkpoint(flipped), ChecksumMismatch);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(magic), FormatError);
  EXPECT_THROW(load_checkpoint(temp_path("no_such_checkpoint.bin")), std::exception);
}
