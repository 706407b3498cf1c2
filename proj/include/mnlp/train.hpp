#pragma once

// Teacher-forced supervised training with the multi-depth lookahead loss.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "mnlp/autodiff.hpp"
#include "mnlp/config.hpp"
#include "mnlp/dataset.hpp"
#include "mnlp/model.hpp"
#include "mnlp/oracle.hpp"
#include "mnlp/rng.hpp"

namespace mnlp {

struct TrainConfig {
  int epochs = 10;
  std::size_t episodes = 0;  // instances drawn per epoch; 0 means the dataset size
  int batch_size = 64;
  double gamma = 0.2;
  int warmup_epochs = 5;     // W
  double warmup_ratio = 3;   // alpha
  double lr = 1e-4;
  double lr_decay = 0.97;
  std::uint64_t seed = 1;
  int threads = 1;
  int reduce_groups = 8;     // fixed so gradients do not depend on `threads`
  bool accumulate_per_trajectory = false;

  void check() const {
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(gamma >= 0)) throw ConfigError("gamma must be >= 0");
    if (warmup_epochs < 1) throw ConfigError("warmup_epochs must be >= 1");
    if (!(warmup_ratio > 0)) throw ConfigError("warmup_ratio must be > 0");
    if (!(lr > 0)) throw ConfigError("lr must be > 0");
    if (!(lr_decay > 0)) throw ConfigError("lr_decay must be > 0");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (reduce_groups < 1) throw ConfigError("reduce_groups must be >= 1");
  }

  static inline const std::vector<std::string> keys = {
      "epochs", "episodes", "batch_size", "gamma", "warmup_epochs", "warmup_ratio", "lr", "lr_decay", "seed",
      "threads", "reduce_groups", "accumulate_per_trajectory"};

  void write(KeyValues& kv) const {
    kv.set_num("epochs", epochs);
    kv.set_num("episodes", episodes);
    kv.set_num("batch_size", batch_size);
    kv.set_num("gamma", gamma);
    kv.set_num("warmup_epochs", warmup_epochs);
    kv.set_num("warmup_ratio", warmup_ratio);
    kv.set_num("lr", lr);
    kv.set_num("lr_decay", lr_decay);
    kv.set_num("seed", seed);
    kv.set_num("threads", threads);
    kv.set_num("reduce_groups", reduce_groups);
    kv.set("accumulate_per_trajectory", accumulate_per_trajectory ? "true" : "false");
  }

  void read(const KeyValues& kv) {
    kv.read("epochs", epochs);
    kv.read("episodes", episodes);
    kv.read("batch_size", batch_size);
    kv.read("gamma", gamma);
    kv.read("warmup_epochs", warmup_epochs);
    kv.read("warmup_ratio", warmup_ratio);
    kv.read("lr", lr);
    kv.read("lr_decay", lr_decay);
    kv.read("seed", seed);
    kv.read("threads", threads);
    kv.read("reduce_groups", reduce_groups);
    kv.read("accumulate_per_trajectory", accumulate_per_trajectory);
  }
};

/// Reads a flat config file holding both model and training keys. Unknown
/// keys are rejected so typos do not silently fall back to defaults.
inline void read_run_config(const KeyValues& kv, ModelConfig& model, TrainConfig& train) {
  std::vector<std::string> known = ModelConfig::keys;
  known.insert(known.end(), TrainConfig::keys.begin(), TrainConfig::keys.end());
  known.push_back("K");
  const auto bad = kv.unknown(known);
  if (!bad.empty()) throw ConfigError("unknown config key '" + bad.front() + "'");
  model.read(kv);
  kv.read("K", model.mnlp_depths);
  train.read(kv);
  model.check();
  train.check();
}

// ---------------------------------------------------------------------------
// Loss algebra

/// gamma_e = gamma * min(1, e / (alpha W)).
inline double gamma_schedule(int epoch, double gamma, int warmup_epochs, double warmup_ratio) {
  return gamma * std::min(1.0, epoch / (warmup_ratio * warmup_epochs));
}

/// Depth-k cross-entropy on a probability vector; exactly 0 once t + k > n_p.
inline double depth_loss(const std::vector<double>& probs, std::size_t target, int t, int k, int np) {
  if (t + k > np) return 0.0;
  if (target >= probs.size() || !(probs[target] > 0.0))
    throw std::invalid_argument("depth_loss: target " + std::to_string(target) + " is not feasible");
  return -std::log(probs[target]);
}

inline double mnlp_loss(const std::vector<double>& depth_losses) {
  if (depth_losses.empty()) return 0.0;
  double s = 0.0;
  for (double l : depth_losses) s += l;
  return s / static_cast<double>(depth_losses.size());
}

inline double total_loss(double main, double mnlp, double gamma_e) { return main + gamma_e * mnlp; }

// ---------------------------------------------------------------------------
// Training loop

struct EpochRecord {
  int epoch = 0;
  double main_loss = 0.0;
  std::vector<double> mnlp_loss;  // per depth
  double gamma_e = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
  std::string checkpoint;
};

struct TrainReport {
  int depths = 0;
  std::vector<EpochRecord> epochs;

  std::string csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "epoch,main_loss";
    for (int k = 1; k <= depths; ++k) os << ",mnlp_loss_k" << k;
    os << ",gamma_e,lr,seconds\n";
    for (const auto& r : epochs) {
      os << r.epoch << ',' << r.main_loss;
      for (double l : r.mnlp_loss) os << ',' << l;
      os << ',' << r.gamma_e << ',' << r.lr << ',' << r.seconds << '\n';
    }
    return os.str();
  }
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int epoch, std::size_t batch, int step, std::uint64_t batch_seed)
      : std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + " batch " + std::to_string(batch) +
                           " step " + std::to_string(step) + " (batch seed " + std::to_string(batch_seed) + ")"),
        epoch(epoch), batch(batch), step(step), batch_seed(batch_seed) {}
  int epoch;
  std::size_t batch;
  int step;
  std::uint64_t batch_seed;
};

/// Per-instance losses from one teacher-forced step.
struct StepLosses {
  double main = 0.0;
  std::vector<double> depth;  // exactly 0 where masked
  std::vector<char> depth_active;
  double total = 0.0;
  std::uint64_t signature = 0;  // ReLU activation pattern of the step graph
};

/// Forward (and, if `grads` is given, backward of scale * total) for one
/// instance at step t. The encoder is re-run because parameters change
/// between steps.
inline StepLosses instance_step(const Model& model, const Instance& inst, const PartialSample& s, const LocalView& v,
                                int t, double gamma_e, double scale, ad::GradBuffer* grads) {
  ad::Graph g(grads != nullptr);
  Bound P(g, model.params);
  const auto H = encode(P, model.config, inst, v.nodes);
  const auto fw = teacher_forced_forward(P, model.config, inst, s, v, H, t);
  const int K = model.config.mnlp_depths;
  StepLosses out;
  out.main = fw.main.loss.item();
  out.depth.assign(K, 0.0);
  out.depth_active.assign(K, 0);
  ad::Tensor total = fw.main.loss;
  if (K > 0) {
    ad::Tensor sum;
    for (int k = 0; k < K; ++k) {
      if (!fw.depths[k].active) continue;
      out.depth[k] = fw.depths[k].loss.item();
      out.depth_active[k] = 1;
      sum = sum.valid() ? ad::add(sum, fw.depths[k].loss) : fw.depths[k].loss;
    }
    if (sum.valid()) total = ad::add(total, ad::scale(ad::scale(sum, 1.0 / K), gamma_e));
  }
  out.total = total.item();
  out.signature = g.relu_signature();
  if (grads && std::isfinite(out.total)) g.backward(ad::scale(total, scale), *grads);
  return out;
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  pool.clear();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

namespace detail {

struct BatchItem {
  const Instance* inst;
  PartialSample sample;
  LocalView view;
};

inline std::vector<BatchItem> draw_batch(const Dataset& ds, const std::vector<std::size_t>& order, std::size_t begin,
                                         std::size_t end, std::uint64_t epoch_seed) {
  std::vector<BatchItem> items;
  for (std::size_t pos = begin; pos < end; ++pos) {
    const std::size_t idx = order[pos];
    Rng rng(derive_seed(epoch_seed, "partial", pos));
    BatchItem it{&ds.instances[idx], sample_partial(ds.instances[idx], ds.labels[idx].solution, rng), {}};
    it.view = local_view(*it.inst, it.sample);
    items.push_back(std::move(it));
  }
  return items;
}

// Epoch ordering: concatenated shuffles of the dataset until `episodes` are drawn.
inline std::vector<std::size_t> epoch_order(std::size_t size, std::size_t episodes, std::uint64_t epoch_seed) {
  std::vector<std::size_t> order;
  Rng rng(derive_seed(epoch_seed, "shuffle"));
  while (order.size() < episodes) {
    std::vector<std::size_t> perm(size);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm.begin(), perm.end());
    order.insert(order.end(), perm.begin(), perm.end());
  }
  order.resize(episodes);
  return order;
}

}  // namespace detail

using CheckpointHook = std::function<std::string(int epoch, const Model&)>;

/// Trains `model` in place. Deterministic given (seed, config, dataset) and
/// independent of the thread count.
inline TrainReport train(Model& model, const Dataset& ds, const TrainConfig& cfg,
                         const CheckpointHook& on_epoch = {}) {
  cfg.check();
  model.config.check();
  if (!ds.labeled()) throw std::invalid_argument("train: dataset has no labels");
  if (ds.kind != model.config.kind) throw std::invalid_argument("train: dataset kind does not match the model");
  check_dataset(ds);
  if (ds.instances.empty()) throw std::invalid_argument("train: empty dataset");

  const int K = model.config.mnlp_depths;
  const std::size_t episodes = cfg.episodes ? cfg.episodes : ds.size();
  const std::size_t B = static_cast<std::size_t>(cfg.batch_size);
  TrainReport report;
  report.depths = K;
  ad::AdamConfig adam;
  adam.lr = cfg.lr;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double gamma_e = gamma_schedule(epoch, cfg.gamma, cfg.warmup_epochs, cfg.warmup_ratio);
    const std::uint64_t epoch_seed = derive_seed(cfg.seed, "epoch", static_cast<std::uint64_t>(epoch));
    const auto order = detail::epoch_order(ds.size(), episodes, epoch_seed);

    double main_sum = 0.0;
    std::size_t main_count = 0;
    std::vector<double> depth_sum(K, 0.0);
    std::vector<std::size_t> depth_count(K, 0);

    for (std::size_t b = 0, begin = 0; begin < episodes; ++b, begin += B) {
      const std::size_t end = std::min(episodes, begin + B);
      auto items = detail::draw_batch(ds, order, begin, end, epoch_seed);
      int max_np = 0;
      for (const auto& it : items) max_np = std::max(max_np, it.sample.size());
      ad::GradBuffer trajectory;

      for (int t = 2; t <= max_np; ++t) {
        std::vector<std::size_t> active;
        for (std::size_t i = 0; i < items.size(); ++i)
          if (t <= items[i].sample.size()) active.push_back(i);
        const double scale = 1.0 / static_cast<double>(active.size());

        // Contiguous groups, each reduced in instance order, then summed in
        // group order.
        const std::size_t G = std::min<std::size_t>(static_cast<std::size_t>(cfg.reduce_groups), active.size());
        std::vector<ad::GradBuffer> group_grads(G);
        std::vector<StepLosses> losses(active.size());
        parallel_for(G, cfg.threads, [&](std::size_t gi) {
          const std::size_t lo = active.size() * gi / G, hi = active.size() * (gi + 1) / G;
          for (std::size_t a = lo; a < hi; ++a) {
            const auto& it = items[active[a]];
            // A TSP step with one node left and no lookahead has no loss and
            // no gradient.
            if (!it.inst->is_cvrp() && t == it.sample.size()) {
              losses[a].depth.assign(K, 0.0);
              losses[a].depth_active.assign(K, 0);
              continue;
            }
            losses[a] = instance_step(model, *it.inst, it.sample, it.view, t, gamma_e, scale, &group_grads[gi]);
          }
        });
        for (std::size_t a = 0; a < active.size(); ++a) {
          if (!std::isfinite(losses[a].total))
            throw TrainingDiverged(epoch, b, t, derive_seed(epoch_seed, "partial", begin));
          main_sum += losses[a].main;
          ++main_count;
          for (int k = 0; k < K; ++k)
            if (losses[a].depth_active[k]) {
              depth_sum[k] += losses[a].depth[k];
              ++depth_count[k];
            }
        }
        ad::GradBuffer step_grad = std::move(group_grads[0]);
        for (std::size_t gi = 1; gi < G; ++gi) step_grad.accumulate(group_grads[gi]);
        if (cfg.accumulate_per_trajectory) {
          trajectory.accumulate(step_grad);
        } else {
          ad::adam_step(model.params, step_grad, adam);
        }
      }
      if (cfg.accumulate_per_trajectory) ad::adam_step(model.params, trajectory, adam);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.main_loss = main_count ? main_sum / static_cast<double>(main_count) : 0.0;
    for (int k = 0; k < K; ++k)
      rec.mnlp_loss.push_back(depth_count[k] ? depth_sum[k] / static_cast<double>(depth_count[k]) : 0.0);
    rec.gamma_e = gamma_e;
    rec.lr = adam.lr;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (on_epoch) rec.checkpoint = on_epoch(epoch, model);
    report.epochs.push_back(std::move(rec));
    adam.lr *= cfg.lr_decay;
  }
  return report;
}

/// Sum of per-step total losses over a whole partial sample, with gradients
/// if `grads` is given.
inline ad::Probe sample_loss(const Model& model, const Instance& inst, const PartialSample& s, double gamma_e,
                             ad::GradBuffer* grads) {
  const auto v = local_view(inst, s);
  ad::Probe p;
  for (int t = 2; t <= s.size(); ++t) {
    const auto l = instance_step(model, inst, s, v, t, gamma_e, 1.0, grads);
    p.value += l.total;
    p.signature = p.signature * 0x100000001b3ULL ^ l.signature;
  }
  return p;
}

/// Finite-difference check of the full training loss of one sample against
/// backprop, over every parameter.
inline ad::GradCheckReport sample_grad_check(Model& model, const Instance& inst, const PartialSample& s,
                                             double gamma_e, double h = 1e-6) {
  ad::GradBuffer analytic;
  sample_loss(model, inst, s, gamma_e, &analytic);
  return ad::grad_check([&] { return sample_loss(model, inst, s, gamma_e, nullptr); }, model.params, analytic, h);
}

/// Mean teacher-forced main loss over one epoch's worth of samples, without
/// updating anything.
inline double mean_main_loss(const Model& model, const Dataset& ds, std::uint64_t seed, int threads = 1) {
  const auto order = detail::epoch_order(ds.size(), ds.size(), seed);
  auto items = detail::draw_batch(ds, order, 0, ds.size(), seed);
  std::vector<double> per(items.size(), 0.0);
  std::vector<int> steps(items.size(), 0);
  parallel_for(items.size(), threads, [&](std::size_t i) {
    const auto& it = items[i];
    for (int t = 2; t <= it.sample.size(); ++t) {
      per[i] += instance_step(model, *it.inst, it.sample, it.view, t, 0.0, 1.0, nullptr).main;
      ++steps[i];
    }
  });
  double s = 0.0;
  int c = 0;
  for (std::size_t i = 0; i < items.size(); ++i) s += per[i], c += steps[i];
  return c ? s / c : 0.0;
}

}  // namespace mnlp
