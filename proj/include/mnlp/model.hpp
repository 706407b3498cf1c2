#pragma once

// Light-encoder heavy-decoder policy with K causal lookahead modules.
//
// Tokens are rows. The network always runs on a local node list: the nodes of
// a partial sample during training, the whole instance at inference. For CVRP
// local node 0 is the depot and every customer carries two actions, "go
// directly" and "go through the depot first", laid out as an (m x 2) logit
// matrix over the m available customers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mnlp/autodiff.hpp"
#include "mnlp/config.hpp"
#include "mnlp/io.hpp"
#include "mnlp/vrp.hpp"

namespace mnlp {

enum class Variant { mnlp_e, mnlp_d };

inline const char* to_string(Variant v) { return v == Variant::mnlp_e ? "mnlp_e" : "mnlp_d"; }

inline Variant parse_variant(const std::string& s) {
  if (s == "mnlp_e" || s == "E" || s == "e") return Variant::mnlp_e;
  if (s == "mnlp_d" || s == "D" || s == "d") return Variant::mnlp_d;
  throw ConfigError("unknown variant '" + s + "' (expected mnlp_e or mnlp_d)");
}

struct ModelConfig {
  ProblemKind kind = ProblemKind::tsp;
  int embed_dim = 128;
  int heads = 8;
  int ffn_dim = 512;
  int decoder_blocks = 6;  // L - 1; the output head adds one more block
  int mnlp_depths = 4;     // K
  Variant variant = Variant::mnlp_e;

  int feature_dim() const { return kind == ProblemKind::tsp ? 2 : 3; }
  int actions() const { return kind == ProblemKind::tsp ? 1 : 2; }
  int head_dim() const { return embed_dim / heads; }

  void check() const {
    if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0)
      throw ConfigError("embed_dim " + std::to_string(embed_dim) + " must be a positive multiple of heads " +
                        std::to_string(heads));
    if (ffn_dim < 1) throw ConfigError("ffn_dim must be positive");
    if (decoder_blocks < 1) throw ConfigError("decoder_blocks must be at least 1");
    if (mnlp_depths < 0) throw ConfigError("mnlp_depths must be >= 0");
  }

  static inline const std::vector<std::string> keys = {"kind",           "embed_dim",   "heads",  "ffn_dim",
                                                       "decoder_blocks", "mnlp_depths", "variant"};

  void write(KeyValues& kv) const {
    kv.set("kind", to_string(kind));
    kv.set_num("embed_dim", embed_dim);
    kv.set_num("heads", heads);
    kv.set_num("ffn_dim", ffn_dim);
    kv.set_num("decoder_blocks", decoder_blocks);
    kv.set_num("mnlp_depths", mnlp_depths);
    kv.set("variant", to_string(variant));
  }

  void read(const KeyValues& kv) {
    if (kv.contains("kind")) kind = parse_kind(kv.get("kind"));
    kv.read("embed_dim", embed_dim);
    kv.read("heads", heads);
    kv.read("ffn_dim", ffn_dim);
    kv.read("decoder_blocks", decoder_blocks);
    kv.read("mnlp_depths", mnlp_depths);
    if (kv.contains("variant")) variant = parse_variant(kv.get("variant"));
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct Model {
  ModelConfig config;
  ad::ParameterSet params;
};

// ---------------------------------------------------------------------------
// Parameters

namespace detail {

inline void add_block(ad::ParameterSet& ps, const std::string& p, int d, int dff, std::uint64_t seed) {
  using ad::Init;
  const auto D = static_cast<std::size_t>(d), F = static_cast<std::size_t>(dff);
  ps.add(p + ".wq", {D, D}, Init::uniform_fan_in, seed);
  ps.add(p + ".wk", {D, D}, Init::uniform_fan_in, seed);
  ps.add(p + ".wv", {D, D}, Init::uniform_fan_in, seed);
  ps.add(p + ".wo", {D, D}, Init::uniform_fan_in, seed);
  ps.add(p + ".ff1", {D, F}, Init::uniform_fan_in, seed);
  ps.add(p + ".b1", {1, F}, Init::zeros, seed);
  ps.add(p + ".ff2", {F, D}, Init::uniform_fan_in, seed);
  ps.add(p + ".b2", {1, D}, Init::zeros, seed);
}

inline void add_layernorm(ad::ParameterSet& ps, const std::string& p, int d, std::uint64_t seed) {
  ps.add(p + ".gain", {1, static_cast<std::size_t>(d)}, ad::Init::ones, seed);
  ps.add(p + ".shift", {1, static_cast<std::size_t>(d)}, ad::Init::zeros, seed);
}

inline std::size_t block_census(std::size_t d, std::size_t f) { return 4 * d * d + 2 * d * f + f + d; }

}  // namespace detail

inline std::string mnlp_prefix(int k) { return "mnlp" + std::to_string(k); }

/// True for every parameter that only the lookahead modules use.
inline bool is_mnlp_param(const std::string& name) { return name.rfind("mnlp", 0) == 0; }

inline Model init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.check();
  using ad::Init;
  Model m;
  m.config = cfg;
  auto& ps = m.params;
  const int d = cfg.embed_dim, f = cfg.ffn_dim;
  const auto D = static_cast<std::size_t>(d);
  const bool cvrp = cfg.kind == ProblemKind::cvrp;

  ps.add("enc.we", {static_cast<std::size_t>(cfg.feature_dim()), D}, Init::uniform_fan_in, seed);
  detail::add_block(ps, "enc.block", d, f, seed);

  ps.add("dec.w1", {D, D}, Init::uniform_fan_in, seed);
  ps.add("dec.w2", {D, D}, Init::uniform_fan_in, seed);
  if (cvrp) ps.add("dec.wcap", {1, D}, Init::uniform_fan_in, seed);
  for (int b = 0; b < cfg.decoder_blocks; ++b) detail::add_block(ps, "dec.block" + std::to_string(b), d, f, seed);
  detail::add_block(ps, "head.block", d, f, seed);
  ps.add("head.wo", {D, static_cast<std::size_t>(cfg.actions())}, Init::uniform_fan_in, seed);

  if (cvrp && cfg.mnlp_depths > 0) ps.add("mnlp.wc", {1, D}, Init::uniform_fan_in, seed);
  for (int k = 1; k <= cfg.mnlp_depths; ++k) {
    const auto p = mnlp_prefix(k);
    detail::add_layernorm(ps, p + ".ln_h", d, seed);
    detail::add_layernorm(ps, p + ".ln_e", d, seed);
    ps.add(p + ".wi", {(cvrp ? 3 : 2) * D, D}, Init::uniform_fan_in, seed);
    ps.add(p + ".ff1", {D, static_cast<std::size_t>(f)}, Init::uniform_fan_in, seed);
    ps.add(p + ".b1", {1, static_cast<std::size_t>(f)}, Init::zeros, seed);
    ps.add(p + ".ff2", {static_cast<std::size_t>(f), D}, Init::uniform_fan_in, seed);
    ps.add(p + ".b2", {1, D}, Init::zeros, seed);
    detail::add_layernorm(ps, p + ".ln_out", d, seed);
    if (cvrp) {
      detail::add_block(ps, p + ".head.block", d, f, seed);
      ps.add(p + ".head.wo", {D, 2}, Init::uniform_fan_in, seed);
    } else {
      ps.add(p + ".wm", {D, D}, Init::uniform_fan_in, seed);
      ps.add(p + ".we", {D, D}, Init::uniform_fan_in, seed);
    }
  }
  return m;
}

inline std::size_t mnlp_census(const ModelConfig& cfg) {
  const std::size_t d = cfg.embed_dim, f = cfg.ffn_dim, K = cfg.mnlp_depths;
  if (K == 0) return 0;
  const bool cvrp = cfg.kind == ProblemKind::cvrp;
  const std::size_t per = 6 * d + (cvrp ? 3 : 2) * d * d + 2 * d * f + f + d +
                          (cvrp ? detail::block_census(d, f) + 2 * d : 2 * d * d);
  return K * per + (cvrp ? d : 0);
}

/// Scalar count implied by the config alone.
inline std::size_t expected_census(const ModelConfig& cfg, bool include_mnlp = true) {
  const std::size_t d = cfg.embed_dim, f = cfg.ffn_dim;
  const bool cvrp = cfg.kind == ProblemKind::cvrp;
  std::size_t c = cfg.feature_dim() * d + detail::block_census(d, f);
  c += 2 * d * d + (cvrp ? d : 0) + cfg.decoder_blocks * detail::block_census(d, f);
  c += detail::block_census(d, f) + d * cfg.actions();
  if (include_mnlp) c += mnlp_census(cfg);
  return c;
}

/// Drops every lookahead parameter. The result is a valid K = 0 model.
inline Model strip_mnlp(const Model& m) {
  Model out;
  out.config = m.config;
  out.config.mnlp_depths = 0;
  out.params = m.params.without(is_mnlp_param);
  return out;
}

// ---------------------------------------------------------------------------
// Forward pieces

/// Binds parameters into one graph on first use.
class Bound {
 public:
  Bound(ad::Graph& g, const ad::ParameterSet& ps) : g_(g), ps_(ps), cache_(ps.size()) {}

  ad::Tensor operator()(const std::string& name) {
    const auto s = ps_.slot(name);
    if (!cache_[s].valid()) cache_[s] = g_.parameter(ps_[s], s);
    return cache_[s];
  }
  ad::Graph& graph() { return g_; }

 private:
  ad::Graph& g_;
  const ad::ParameterSet& ps_;
  std::vector<ad::Tensor> cache_;
};

inline ad::Tensor ffn(Bound& P, const std::string& p, const ad::Tensor& x) {
  auto hidden = ad::relu(ad::add(ad::matmul(x, P(p + ".ff1")), P(p + ".b1")));
  return ad::add(ad::matmul(hidden, P(p + ".ff2")), P(p + ".b2"));
}

/// X' = X + MHA(X); out = X' + FFN(X'). If `attn` is given, the per-head
/// softmax matrices are appended to it.
inline ad::Tensor attention_block(Bound& P, const std::string& p, const ad::Tensor& X, int heads,
                                  std::vector<ad::Tensor>* attn = nullptr) {
  const std::size_t d = X.cols();
  if (heads < 1 || d % static_cast<std::size_t>(heads) != 0)
    throw ad::ShapeError("attention_block: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
  const std::size_t dh = d / heads;
  const auto Q = ad::matmul(X, P(p + ".wq"));
  const auto K = ad::matmul(X, P(p + ".wk"));
  const auto V = ad::matmul(X, P(p + ".wv"));
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<ad::Tensor> outs;
  outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    const std::size_t c0 = h * dh, c1 = c0 + dh;
    auto A = ad::softmax_rows(ad::scale(ad::matmul_nt(ad::slice_cols(Q, c0, c1), ad::slice_cols(K, c0, c1)), inv));
    if (attn) attn->push_back(A);
    outs.push_back(ad::matmul(A, ad::slice_cols(V, c0, c1)));
  }
  const auto mha = ad::matmul(heads == 1 ? outs[0] : ad::concat_cols(outs), P(p + ".wo"));
  const auto X1 = ad::add(X, mha);
  return ad::add(X1, ffn(P, p, X1));
}

inline std::vector<double> node_features(const Instance& inst, const std::vector<int>& nodes) {
  const std::size_t F = inst.is_cvrp() ? 3 : 2;
  std::vector<double> v;
  v.reserve(nodes.size() * F);
  for (int i : nodes) {
    v.push_back(inst.coords[i].x);
    v.push_back(inst.coords[i].y);
    if (inst.is_cvrp())
      v.push_back(i == Instance::depot ? 0.0 : static_cast<double>(inst.demands[i]) / inst.capacity);
  }
  return v;
}

/// H = VW_E; H~ = H + MHA(H); H^E = H~ + FFN(H~). Rows follow `nodes`.
inline ad::Tensor encode(Bound& P, const ModelConfig& cfg, const Instance& inst, const std::vector<int>& nodes) {
  if (inst.kind != cfg.kind)
    throw std::invalid_argument(std::string("encode: model is for ") + to_string(cfg.kind) + ", instance is " +
                                to_string(inst.kind));
  const auto F = static_cast<std::size_t>(cfg.feature_dim());
  if (P("enc.we").rows() != F)
    throw ad::ShapeError("encode: feature width " + std::to_string(F) + " vs projection " +
                         ad::to_string(P("enc.we").shape()));
  auto V = P.graph().constant({nodes.size(), F}, node_features(inst, nodes));
  return attention_block(P, "enc.block", ad::matmul(V, P("enc.we")), cfg.heads);
}

/// Decoding context in local indices.
struct DecoderInput {
  int first = 0;               // x_1
  int prev = 0;                // x_{t-1}
  std::vector<int> available;  // unvisited customers / nodes, ascending
  double capacity = 0.0;       // CVRP: remaining capacity divided by D
};

struct DecoderOutput {
  ad::Tensor logits;  // available.size() x actions
  ad::Tensor trunk;   // 1 x d: previous-node token after the L-1 decoder blocks
};

inline DecoderOutput decode_logits(Bound& P, const ModelConfig& cfg, const ad::Tensor& H, const DecoderInput& in) {
  if (in.available.empty()) throw std::invalid_argument("decode: empty feasible set");
  const bool cvrp = cfg.kind == ProblemKind::cvrp;
  const auto first = ad::matmul(ad::gather_rows(H, {in.first}), P("dec.w1"));
  auto prev = ad::matmul(ad::gather_rows(H, {in.prev}), P("dec.w2"));
  if (cvrp) prev = ad::add(prev, ad::scale(P("dec.wcap"), in.capacity));
  std::vector<ad::Tensor> parts{first, prev};
  if (cvrp) parts.push_back(ad::gather_rows(H, {Instance::depot}));
  parts.push_back(ad::gather_rows(H, in.available));
  const std::size_t ctx = parts.size() - 1;
  auto X = ad::concat_rows(parts);
  for (int b = 0; b < cfg.decoder_blocks; ++b)
    X = attention_block(P, "dec.block" + std::to_string(b), X, cfg.heads);
  DecoderOutput out;
  out.trunk = ad::gather_rows(X, {1});
  X = attention_block(P, "head.block", X, cfg.heads);
  std::vector<int> rows(in.available.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int>(ctx + i);
  out.logits = ad::matmul(ad::gather_rows(X, rows), P("head.wo"));
  return out;
}

/// p_t over the (available x actions) grid; context tokens never carry mass.
inline ad::Tensor decode_step(Bound& P, const ModelConfig& cfg, const ad::Tensor& H, const DecoderInput& in,
                              const std::vector<char>& mask) {
  return ad::masked_softmax(decode_logits(P, cfg, H, in).logits, mask);
}

/// h'^(k) = W_I concat(LN(h^(k-1)), LN(h^(0)_{x_{t+k-1}}) [, W_c C^(k)]); h^(k) = LN(FFN(h')).
inline ad::Tensor mnlp_step(Bound& P, const ModelConfig& cfg, int k, const ad::Tensor& h_prev,
                            const ad::Tensor& h_node, std::optional<double> capacity = std::nullopt) {
  if (k < 1 || k > cfg.mnlp_depths)
    throw std::invalid_argument("mnlp_step: depth " + std::to_string(k) + " outside 1.." +
                                std::to_string(cfg.mnlp_depths));
  const auto p = mnlp_prefix(k);
  std::vector<ad::Tensor> parts{ad::layernorm(h_prev, P(p + ".ln_h.gain"), P(p + ".ln_h.shift")),
                                ad::layernorm(h_node, P(p + ".ln_e.gain"), P(p + ".ln_e.shift"))};
  if (cfg.kind == ProblemKind::cvrp) {
    if (!capacity) throw std::invalid_argument("mnlp_step: CVRP needs the depth capacity");
    parts.push_back(ad::scale(P("mnlp.wc"), *capacity));
  }
  const auto hp = ad::matmul(ad::concat_cols(parts), P(p + ".wi"));
  return ad::layernorm(ffn(P, p, hp), P(p + ".ln_out.gain"), P(p + ".ln_out.shift"));
}

/// (W_M h)(W_E H)^T over every local node; the caller masks to A^(k)_t.
inline ad::Tensor mnlp_head_tsp(Bound& P, int k, const ad::Tensor& h, const ad::Tensor& H) {
  const auto p = mnlp_prefix(k);
  return ad::matmul_nt(ad::matmul(h, P(p + ".wm")), ad::matmul(H, P(p + ".we")));
}

/// One attention block over [h, depot, available] and a per-customer
/// (direct, via depot) readout.
inline ad::Tensor mnlp_head_cvrp(Bound& P, const ModelConfig& cfg, int k, const ad::Tensor& h, const ad::Tensor& H,
                                 const std::vector<int>& available) {
  const auto p = mnlp_prefix(k);
  auto X = ad::concat_rows({h, ad::gather_rows(H, {Instance::depot}), ad::gather_rows(H, available)});
  X = attention_block(P, p + ".head.block", X, cfg.heads);
  std::vector<int> rows(available.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<int>(2 + i);
  return ad::matmul(ad::gather_rows(X, rows), P(p + ".head.wo"));
}

// ---------------------------------------------------------------------------
// Teacher-forced forward on a partial sample

/// Local node list of a sample. CVRP puts the depot first.
struct LocalView {
  std::vector<int> nodes;     // local -> instance node
  std::vector<int> position;  // sample position -> local index
};

inline LocalView local_view(const Instance& inst, const PartialSample& s) {
  LocalView v;
  v.nodes = s.nodes;
  std::sort(v.nodes.begin(), v.nodes.end());
  if (inst.is_cvrp()) v.nodes.insert(v.nodes.begin(), Instance::depot);
  v.position.resize(s.nodes.size());
  for (std::size_t i = 0; i < s.nodes.size(); ++i)
    v.position[i] = static_cast<int>(std::lower_bound(v.nodes.begin(), v.nodes.end(), s.nodes[i]) - v.nodes.begin());
  return v;
}

/// Remaining capacity after each sample position has been served.
inline std::vector<int> capacity_after(const Instance& inst, const PartialSample& s) {
  std::vector<int> out(s.nodes.size());
  int c = s.remaining_capacity_at_start;
  for (std::size_t i = 0; i < s.nodes.size(); ++i) {
    if (!s.via_depot.empty() && s.via_depot[i]) c = inst.capacity;
    c -= inst.demands[s.nodes[i]];
    out[i] = c;
  }
  return out;
}

/// One prediction head at one step: logits, feasibility and the target.
struct HeadOutput {
  bool active = false;            // false once t + k > n_p (loss masked)
  ad::Tensor logits;              // flattened row-major
  std::vector<char> mask;         // per flat entry
  std::vector<int> action_node;   // per flat entry: local node it selects
  std::size_t target = 0;         // flat index of the teacher-forced action
  ad::Tensor loss;                // 1 x 1 cross-entropy when active
};

struct StepForward {
  HeadOutput main;
  std::vector<HeadOutput> depths;  // index k-1
};

namespace detail {

// Main head feasibility: TSP takes any available node; a CVRP customer is
// reachable directly if it fits, and through the depot unless the vehicle
// is standing at the depot already.
inline void main_mask(const Instance& inst, const LocalView& v, const DecoderInput& in, int remaining,
                      HeadOutput& out) {
  const std::size_t m = in.available.size();
  if (!inst.is_cvrp()) {
    out.mask.assign(m, 1);
    out.action_node = in.available;
    return;
  }
  out.mask.assign(2 * m, 0);
  out.action_node.resize(2 * m);
  for (std::size_t i = 0; i < m; ++i) {
    const int node = in.available[i];
    out.mask[2 * i] = inst.demands[v.nodes[node]] <= remaining;
    out.mask[2 * i + 1] = in.prev != Instance::depot;
    out.action_node[2 * i] = out.action_node[2 * i + 1] = node;
  }
}

inline std::vector<int> sorted_locals(const LocalView& v, int from) {
  std::vector<int> out(v.position.begin() + from, v.position.end());
  std::sort(out.begin(), out.end());
  return out;
}

inline std::size_t index_in(const std::vector<int>& sorted, int x) {
  return static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), x) - sorted.begin());
}

}  // namespace detail

/// Forward at step t (2 <= t <= n_p) under teacher forcing: x_1..x_{t-1} are
/// the sample's first t-1 nodes; the main head predicts x_t and depth k
/// predicts x_{t+k}. Builds cross-entropy losses for every active head.
inline StepForward teacher_forced_forward(Bound& P, const ModelConfig& cfg, const Instance& inst,
                                          const PartialSample& s, const LocalView& v, const ad::Tensor& H, int t) {
  const int np = s.size();
  if (t < 2 || t > np) throw std::invalid_argument("teacher_forced_forward: step " + std::to_string(t) +
                                                   " outside 2.." + std::to_string(np));
  const bool cvrp = inst.is_cvrp();
  const std::vector<int> cap = cvrp ? capacity_after(inst, s) : std::vector<int>{};
  const double D = cvrp ? static_cast<double>(inst.capacity) : 1.0;
  auto via = [&](int pos) { return cvrp && s.via_depot[pos] ? 1 : 0; };

  StepForward out;
  DecoderInput in;
  in.first = v.position[0];
  in.prev = v.position[t - 2];
  in.available = detail::sorted_locals(v, t - 1);
  in.capacity = cvrp ? cap[t - 2] / D : 0.0;
  auto dec = decode_logits(P, cfg, H, in);
  auto& mh = out.main;
  mh.active = true;
  mh.logits = dec.logits;
  detail::main_mask(inst, v, in, cvrp ? cap[t - 2] : 0, mh);
  mh.target = detail::index_in(in.available, v.position[t - 1]) * cfg.actions() + via(t - 1);
  mh.loss = ad::cross_entropy(mh.logits, mh.mask, mh.target);

  out.depths.resize(cfg.mnlp_depths);
  ad::Tensor h = cfg.variant == Variant::mnlp_e ? ad::gather_rows(H, {in.prev}) : dec.trunk;
  for (int k = 1; k <= cfg.mnlp_depths; ++k) {
    auto& dh = out.depths[k - 1];
    if (t + k > np) break;
    dh.active = true;
    const int known = t + k - 2;  // sample position of x_{t+k-1}
    const auto h_node = ad::gather_rows(H, {v.position[known]});
    h = mnlp_step(P, cfg, k, h, h_node, cvrp ? std::optional<double>(cap[known] / D) : std::nullopt);
    const auto avail = detail::sorted_locals(v, known + 1);
    const int target_local = v.position[known + 1];
    if (!cvrp) {
      dh.logits = mnlp_head_tsp(P, k, h, H);
      const std::size_t n = v.nodes.size();
      dh.mask.assign(n, 0);
      for (int a : avail) dh.mask[a] = 1;
      dh.action_node.resize(n);
      for (std::size_t i = 0; i < n; ++i) dh.action_node[i] = static_cast<int>(i);
      dh.target = static_cast<std::size_t>(target_local);
    } else {
      dh.logits = mnlp_head_cvrp(P, cfg, k, h, H, avail);
      dh.mask.assign(2 * avail.size(), 0);
      dh.action_node.resize(2 * avail.size());
      for (std::size_t i = 0; i < avail.size(); ++i) {
        dh.mask[2 * i] = inst.demands[v.nodes[avail[i]]] <= cap[known];
        dh.mask[2 * i + 1] = 1;
        dh.action_node[2 * i] = dh.action_node[2 * i + 1] = avail[i];
      }
      dh.target = detail::index_in(avail, target_local) * 2 + via(known + 1);
    }
    dh.loss = ad::cross_entropy(dh.logits, dh.mask, dh.target);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: text header, little-endian doubles in manifest order, CRC-32.

inline constexpr std::string_view kCheckpointMagic = "MNLP-CHECKPOINT";
inline constexpr int kCheckpointVersion = 1;

inline std::vector<std::uint8_t> encode_checkpoint(const Model& m) {
  KeyValues kv;
  kv.set_num("version", kCheckpointVersion);
  m.config.write(kv);
  kv.set_num("param_count", m.params.size());
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    const auto& p = m.params[i];
    kv.set("param." + std::to_string(i),
           p.name + " " + std::to_string(p.shape.rows) + " " + std::to_string(p.shape.cols));
  }
  ByteWriter w;
  w.text(std::string(kCheckpointMagic) + "\n" + kv.str() + "end\n");
  for (const auto& p : m.params)
    for (double x : p.value) w.f64(x);
  w.seal();
  return w.data();
}

inline Model decode_checkpoint(const std::vector<std::uint8_t>& file) {
  const std::string_view all(reinterpret_cast<const char*>(file.data()), file.size());
  if (all.substr(0, kCheckpointMagic.size()) != kCheckpointMagic)
    throw FormatError("not a checkpoint file (bad magic)");
  const std::size_t body = verify_sealed(file);
  const auto end = all.find("\nend\n");
  if (end == std::string_view::npos || end + 5 > body) throw TruncatedFile("truncated checkpoint header");
  const auto kv = KeyValues::parse(std::string(all.substr(kCheckpointMagic.size(), end + 1 - kCheckpointMagic.size())));
  const int version = kv.num<int>("version");
  if (version != kCheckpointVersion)
    throw VersionMismatch("checkpoint version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  Model m;
  m.config.read(kv);
  m.config.check();
  const auto count = kv.num<std::size_t>("param_count");
  ByteReader r(file.data() + end + 5, body - (end + 5));
  for (std::size_t i = 0; i < count; ++i) {
    std::istringstream ls(kv.get("param." + std::to_string(i)));
    ad::Parameter p;
    if (!(ls >> p.name >> p.shape.rows >> p.shape.cols))
      throw FormatError("bad manifest entry param." + std::to_string(i));
    if (p.shape.size() > r.remaining() / 8) throw TruncatedFile("truncated checkpoint payload at " + p.name);
    p.value.resize(p.shape.size());
    for (auto& x : p.value) x = r.f64();
    p.m.assign(p.value.size(), 0.0);
    p.v.assign(p.value.size(), 0.0);
    m.params.insert(std::move(p));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint payload");
  // The manifest must describe exactly the network the config builds.
  const Model ref = init_model(m.config, 0);
  if (ref.params.size() != m.params.size()) throw FormatError("checkpoint manifest does not match its config");
  for (std::size_t i = 0; i < ref.params.size(); ++i)
    if (ref.params[i].name != m.params[i].name || ref.params[i].shape != m.params[i].shape)
      throw FormatError("checkpoint parameter " + m.params[i].name + " does not match its config");
  return m;
}

inline void save_checkpoint(const Model& m, const std::string& path) { write_file_bytes(path, encode_checkpoint(m)); }
inline Model load_checkpoint(const std::string& path) { return decode_checkpoint(read_file_bytes(path)); }

}  // namespace mnlp
