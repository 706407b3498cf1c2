// mnlp command-line front end.
//
// Every failure prints exactly one line "mnlp: error[<category>]: <message>"
// on stderr and exits nonzero.

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mnlp/dataset.hpp"
#include "mnlp/infer.hpp"
#include "mnlp/manifest.hpp"
#include "mnlp/model.hpp"
#include "mnlp/train.hpp"

namespace {

using namespace mnlp;

struct CliError : std::runtime_error {
  CliError(std::string category, const std::string& msg, int code)
      : std::runtime_error(msg), category(std::move(category)), code(code) {}
  std::string category;
  int code;
};

[[noreturn]] void usage_error(const std::string& msg) { throw CliError("usage", msg, 2); }

int default_threads() {
  if (const char* env = std::getenv("MNLP_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) usage_error(std::string("MNLP_THREADS must be a positive integer, got '") + env + "'");
    return static_cast<int>(v);
  }
  return 1;
}

void require_file(const std::string& path) {
  if (!std::filesystem::is_regular_file(path)) throw CliError("io", "no such file '" + path + "'", 3);
}

void write_text(const std::string& path, const std::string& text) {
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string seconds_since(std::chrono::steady_clock::time_point t0) {
  std::ostringstream os;
  os << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return os.str();
}

// Splits "label=path"; a bare path is labeled by its file stem.
std::pair<std::string, std::string> labeled_path(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos) return {std::filesystem::path(s).stem().string(), s};
  return {s.substr(0, eq), s.substr(eq + 1)};
}

struct Common {
  std::uint64_t seed = 1;
  int threads = 1;
  std::vector<std::string> argv;
};

RunManifest manifest_for(const std::string& verb, const Common& c) {
  RunManifest m;
  m.command = verb;
  m.argv = c.argv;
  m.seed = c.seed;
  return m;
}

// -- gen ---------------------------------------------------------------------

struct GenArgs {
  std::string kind = "tsp", dist = "uniform", out;
  int n = 20, capacity = 0, demand_lo = 1, demand_hi = 9;
  std::size_t count = 1000;
  double rotation_p = 0.5, explosion_radius = 0.3, explosion_mean = 0.1;
};

void cmd_gen(const GenArgs& a, const Common& c) {
  GenSpec spec;
  spec.kind = parse_kind(a.kind);
  spec.distribution = parse_distribution(a.dist);
  spec.n = a.n;
  spec.seed = derive_seed(c.seed, "dataset");
  spec.capacity = a.capacity;
  spec.demand_lo = a.demand_lo;
  spec.demand_hi = a.demand_hi;
  spec.rotation_probability = a.rotation_p;
  spec.explosion_radius = a.explosion_radius;
  spec.explosion_mean = a.explosion_mean;
  spec.check();
  const auto t0 = std::chrono::steady_clock::now();
  const auto ds = make_dataset(spec, a.count);
  save_dataset(ds, a.out);

  auto m = manifest_for("gen", c);
  m.config.set("kind", a.kind);
  m.config.set_num("n", a.n);
  m.config.set_num("count", a.count);
  m.config.set("dist", a.dist);
  if (spec.kind == ProblemKind::cvrp) {
    m.config.set_num("capacity", spec.effective_capacity());
    m.config.set_num("demand_lo", a.demand_lo);
    m.config.set_num("demand_hi", a.demand_hi);
  }
  if (spec.distribution == Distribution::rotation) m.config.set_num("rotation_p", a.rotation_p);
  if (spec.distribution == Distribution::explosion) {
    m.config.set_num("explosion_radius", a.explosion_radius);
    m.config.set_num("explosion_mean", a.explosion_mean);
  }
  m.outputs.push_back(a.out);
  m.timings.emplace_back("seconds", seconds_since(t0));
  m.write(a.out);
  std::cout << "wrote " << ds.size() << " instances to " << a.out << "\n";
}

// -- label -------------------------------------------------------------------

struct LabelArgs {
  std::string in, out, oracle = "auto";
};

void cmd_label(const LabelArgs& a, const Common& c) {
  require_file(a.in);
  const auto kind = parse_oracle(a.oracle);
  auto ds = load_dataset(a.in);
  if (kind == OracleKind::held_karp && ds.n > kHeldKarpMaxN)
    throw CliError("oracle", "held_karp refused: n=" + std::to_string(ds.n) + " exceeds " + std::to_string(kHeldKarpMaxN), 2);
  if (kind == OracleKind::brute_force && ds.n > kBruteForceMaxN)
    throw CliError("oracle", "brute_force refused: n=" + std::to_string(ds.n) + " exceeds " + std::to_string(kBruteForceMaxN), 2);
  const auto t0 = std::chrono::steady_clock::now();
  auto m = manifest_for("label", c);
  m.add_input(a.in);
  ds.labels.assign(ds.size(), {});
  parallel_for(ds.size(), c.threads, [&](std::size_t i) { ds.labels[i] = label_instance(ds.instances[i], kind); });
  const std::string out = a.out.empty() ? a.in : a.out;
  save_dataset(ds, out);
  m.config.set("oracle", a.oracle);
  m.outputs.push_back(out);
  m.timings.emplace_back("seconds", seconds_since(t0));
  m.write(out);
  std::cout << "labeled " << ds.size() << " instances into " << out << "\n";
}

// -- train -------------------------------------------------------------------

struct TrainArgs {
  std::string config, data, out, report;
  std::vector<std::string> sets;
  bool epoch_checkpoints = false;
};

void cmd_train(const TrainArgs& a, const Common& c) {
  require_file(a.data);
  KeyValues kv;
  if (!a.config.empty()) {
    require_file(a.config);
    kv = KeyValues::parse(read_file_text(a.config));
  }
  for (const auto& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) usage_error("--set expects key=value, got '" + s + "'");
    kv.set(s.substr(0, eq), s.substr(eq + 1));
  }
  const auto ds = load_dataset(a.data);
  ModelConfig mc;
  mc.kind = ds.kind;
  TrainConfig tc;
  if (ds.kind == ProblemKind::cvrp) {  // CVRP defaults; the config file can still override
    tc.gamma = 0.1;
    tc.lr_decay = 0.9;
  }
  read_run_config(kv, mc, tc);
  tc.seed = derive_seed(c.seed, "sampling");
  tc.threads = c.threads;

  auto model = init_model(mc, derive_seed(c.seed, "init"));
  auto m = manifest_for("train", c);
  m.add_input(a.data);
  if (!a.config.empty()) m.add_input(a.config);
  mc.write(m.config);
  tc.write(m.config);
  m.config.set("threads", "-");  // does not affect results

  CheckpointHook hook;
  if (a.epoch_checkpoints)
    hook = [&](int epoch, const Model& md) {
      const std::string p = a.out + ".epoch" + std::to_string(epoch);
      save_checkpoint(md, p);
      m.outputs.push_back(p);
      std::cout << "epoch " << epoch << " checkpoint " << p << "\n";
      return p;
    };
  const auto t0 = std::chrono::steady_clock::now();
  const auto rep = train(model, ds, tc, hook);
  save_checkpoint(model, a.out);
  m.outputs.push_back(a.out);
  const std::string report = a.report.empty() ? a.out + ".report.csv" : a.report;
  write_text(report, rep.csv());
  m.outputs.push_back(report);
  m.timings.emplace_back("seconds", seconds_since(t0));
  m.write(a.out);
  for (const auto& r : rep.epochs) {
    std::cout << "epoch " << r.epoch << " main_loss " << r.main_loss;
    for (std::size_t k = 0; k < r.mnlp_loss.size(); ++k) std::cout << " mnlp_k" << k + 1 << " " << r.mnlp_loss[k];
    std::cout << " gamma_e " << r.gamma_e << "\n";
  }
}

// -- eval / rrc ----------------------------------------------------------------

struct EvalArgs {
  std::string model, data, labels, out;
  int iters = 0;
};

void cmd_eval(const std::string& verb, const EvalArgs& a, const Common& c) {
  require_file(a.model);
  require_file(a.data);
  const auto model = load_checkpoint(a.model);
  auto ds = load_dataset(a.data);
  auto m = manifest_for(verb, c);
  m.add_input(a.model);
  m.add_input(a.data);
  if (!a.labels.empty()) {
    require_file(a.labels);
    const auto lab = load_dataset(a.labels);
    if (lab.instances != ds.instances) throw CliError("format", "label file instances differ from '" + a.data + "'", 3);
    ds.labels = lab.labels;
    m.add_input(a.labels);
  }
  if (!ds.labeled()) throw CliError("format", "no oracle labels: label the dataset or pass --labels", 3);
  if (ds.kind != model.config.kind) throw CliError("config", "checkpoint and dataset problem kinds differ", 2);
  EvalOptions opt;
  opt.rrc_iterations = a.iters;
  opt.seed = derive_seed(c.seed, "rrc");
  opt.threads = c.threads;
  const auto res = evaluate(model, ds, opt);
  write_text(a.out, res.csv());
  m.config.set_num("rrc_iterations", a.iters);
  m.outputs.push_back(a.out);
  m.timings.emplace_back("seconds", std::to_string(res.total_seconds));
  m.write(a.out);
  std::cout << std::setprecision(6) << "instances " << res.rows.size() << " mean_cost " << res.mean_cost
            << " mean_gap " << 100.0 * res.mean_gap << "%\n";
}

// -- report ----------------------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> results, curves;
  std::string out, curves_out;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name, const std::string& file) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw CliError("format", "'" + file + "' has no column '" + name + "'", 3);
  }
};

CsvTable read_csv(const std::string& path) {
  require_file(path);
  std::istringstream in(read_file_text(path));
  CsvTable t;
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(l);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    return f;
  };
  if (!std::getline(in, line)) throw CliError("format", "'" + path + "' is empty", 3);
  t.header = split(line);
  while (std::getline(in, line))
    if (!line.empty()) t.rows.push_back(split(line));
  return t;
}

double to_double(const std::string& s, const std::string& file) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw CliError("format", "'" + file + "': not a number: '" + s + "'", 3);
}

void cmd_report(const ReportArgs& a, const Common& c) {
  if (a.results.empty() && a.curves.empty()) usage_error("report needs --result and/or --curve inputs");
  if (!a.curves.empty() && a.curves_out.empty()) usage_error("--curve requires --curves-out");
  auto m = manifest_for("report", c);
  std::ostringstream table;
  if (!a.results.empty()) {
    table << "| Method | Obj. | Gap | Time |\n|---|---|---|---|\n";
    table << std::fixed;
    for (const auto& spec : a.results) {
      const auto [label, path] = labeled_path(spec);
      const auto t = read_csv(path);
      m.add_input(path);
      const auto ci = t.column("cost", path), gi = t.column("gap", path), ti = t.column("decode_ms", path);
      double cost = 0, gap = 0, ms = 0;
      for (const auto& r : t.rows) {
        if (r.size() < t.header.size() - 1) throw CliError("format", "'" + path + "': short row", 3);
        cost += to_double(r[ci], path);
        gap += to_double(r[gi], path);
        ms += to_double(r[ti], path);
      }
      const double n = t.rows.empty() ? 1.0 : static_cast<double>(t.rows.size());
      table << "| " << label << " | " << std::setprecision(4) << cost / n << " | " << std::setprecision(3)
            << 100.0 * gap / n << "% | " << std::setprecision(2) << ms / 1000.0 << "s |\n";
    }
  }
  std::cout << table.str();
  if (!a.out.empty()) {
    write_text(a.out, table.str());
    m.outputs.push_back(a.out);
  }
  if (!a.curves.empty()) {
    std::ostringstream cs;
    cs << "run,epoch,main_loss,mnlp_loss_mean,gamma_e\n";
    for (const auto& spec : a.curves) {
      const auto [label, path] = labeled_path(spec);
      const auto t = read_csv(path);
      m.add_input(path);
      const auto ei = t.column("epoch", path), li = t.column("main_loss", path), gi = t.column("gamma_e", path);
      std::vector<std::size_t> depth_cols;
      for (std::size_t i = 0; i < t.header.size(); ++i)
        if (t.header[i].rfind("mnlp_loss_k", 0) == 0) depth_cols.push_back(i);
      for (const auto& r : t.rows) {
        if (r.size() != t.header.size()) throw CliError("format", "'" + path + "': ragged row", 3);
        double ml = 0;
        for (auto i : depth_cols) ml += to_double(r[i], path);
        cs << label << ',' << r[ei] << ',' << r[li] << ',';
        if (!depth_cols.empty()) cs << std::setprecision(17) << ml / static_cast<double>(depth_cols.size());
        cs << ',' << r[gi] << '\n';
      }
    }
    write_text(a.curves_out, cs.str());
    m.outputs.push_back(a.curves_out);
  }
  if (!m.outputs.empty()) m.write(m.outputs.front());
}

// -- strip -------------------------------------------------------------------------

void cmd_strip(const std::string& in, const std::string& out, const Common& c) {
  require_file(in);
  const auto model = load_checkpoint(in);
  const auto stripped = strip_mnlp(model);
  save_checkpoint(stripped, out);
  auto m = manifest_for("strip", c);
  m.add_input(in);
  m.outputs.push_back(out);
  m.write(out);
  std::cout << "kept " << stripped.params.size() << " of " << model.params.size() << " parameter tensors\n";
}

// -- gradcheck -----------------------------------------------------------------------

struct GradcheckArgs {
  std::string config;
  std::vector<std::string> sets;
  int np = 6;
  double tol = 1e-5, h = 1e-6, gamma_e = 0.2;
};

bool cmd_gradcheck(const GradcheckArgs& a, const Common& c) {
  KeyValues kv = KeyValues::parse("embed_dim = 16\nheads = 2\nffn_dim = 16\ndecoder_blocks = 2\nmnlp_depths = 2\n");
  if (!a.config.empty()) {
    require_file(a.config);
    kv.merge(KeyValues::parse(read_file_text(a.config)));
  }
  for (const auto& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) usage_error("--set expects key=value, got '" + s + "'");
    kv.set(s.substr(0, eq), s.substr(eq + 1));
  }
  ModelConfig mc;
  TrainConfig unused;
  read_run_config(kv, mc, unused);
  if (a.np < kMinPartialLength) usage_error("--np must be at least " + std::to_string(kMinPartialLength));
  auto model = init_model(mc, derive_seed(c.seed, "init"));

  // Smallest instance admitting an n_p-step sample; resample until the
  // length matches.
  GenSpec spec;
  spec.kind = mc.kind;
  spec.n = mc.kind == ProblemKind::cvrp ? a.np + 1 : a.np;
  spec.seed = derive_seed(c.seed, "dataset");
  const auto inst = generate(spec, 0);
  const auto label = label_instance(inst);
  PartialSample sample;
  for (std::uint64_t i = 0;; ++i) {
    Rng rng(derive_seed(c.seed, "sampling", i));
    sample = sample_partial(inst, label.solution, rng);
    if (sample.size() == a.np) break;
  }
  const auto t0 = std::chrono::steady_clock::now();
  const auto rep = sample_grad_check(model, inst, sample, a.gamma_e, a.h);
  const bool ok = rep.passed(a.tol);
  std::cout << (ok ? "PASS" : "FAIL") << " max_rel_error " << rep.max_rel_error << " tol " << a.tol << " checked "
            << rep.checked << " skipped " << rep.skipped << " worst " << rep.worst << " seconds "
            << seconds_since(t0) << "\n";
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mnlp: neural routing toolkit"};
  app.require_subcommand(1);
  Common common;
  common.argv.assign(argv, argv + argc);

  auto add_common = [&](CLI::App* sub, bool seeded = true) {
    if (seeded) sub->add_option("--seed", common.seed, "root seed");
    sub->add_option("--threads", common.threads, "worker threads (default $MNLP_THREADS or 1)")->check(CLI::PositiveNumber);
  };

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "generate a dataset");
  g->add_option("--kind", gen.kind)->check(CLI::IsMember({"tsp", "cvrp"}));
  g->add_option("--n", gen.n, "nodes per instance (CVRP: including the depot)");
  g->add_option("--count", gen.count);
  g->add_option("--dist", gen.dist)->check(CLI::IsMember({"uniform", "rotation", "explosion"}));
  g->add_option("--capacity", gen.capacity, "vehicle capacity (0: size default)");
  g->add_option("--demand-lo", gen.demand_lo);
  g->add_option("--demand-hi", gen.demand_hi);
  g->add_option("--rotation-p", gen.rotation_p);
  g->add_option("--explosion-radius", gen.explosion_radius);
  g->add_option("--explosion-mean", gen.explosion_mean);
  g->add_option("-o,--out", gen.out)->required();
  add_common(g);

  LabelArgs lab;
  auto* l = app.add_subcommand("label", "attach oracle solutions");
  l->add_option("-i,--in", lab.in)->required();
  l->add_option("-o,--out", lab.out, "defaults to rewriting the input");
  l->add_option("--oracle", lab.oracle)->check(CLI::IsMember({"auto", "held_karp", "brute_force", "two_opt", "savings"}));
  add_common(l, false);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a model");
  t->add_option("-c,--config", tr.config, "key = value file");
  t->add_option("-d,--data", tr.data)->required();
  t->add_option("-o,--out", tr.out, "checkpoint path")->required();
  t->add_option("--report", tr.report, "per-epoch CSV (default <out>.report.csv)");
  t->add_option("--set", tr.sets, "override a config key, key=value");
  t->add_flag("--epoch-checkpoints", tr.epoch_checkpoints, "also write <out>.epoch<e>");
  add_common(t);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "greedy evaluation against oracle labels");
  e->add_option("-m,--model", ev.model)->required();
  e->add_option("-d,--data", ev.data)->required();
  e->add_option("--labels", ev.labels, "labeled copy of the dataset");
  e->add_option("-o,--out", ev.out)->required();
  add_common(e, false);

  EvalArgs rr;
  auto* r = app.add_subcommand("rrc", "greedy decoding followed by random re-construction");
  r->add_option("-m,--model", rr.model)->required();
  r->add_option("-d,--data", rr.data)->required();
  r->add_option("--labels", rr.labels);
  r->add_option("--iters", rr.iters)->required()->check(CLI::NonNegativeNumber);
  r->add_option("-o,--out", rr.out)->required();
  add_common(r);

  ReportArgs rp;
  auto* p = app.add_subcommand("report", "gap table and convergence data");
  p->add_option("--result", rp.results, "[label=]eval.csv");
  p->add_option("--curve", rp.curves, "[label=]train report CSV");
  p->add_option("-o,--out", rp.out, "write the table here too");
  p->add_option("--curves-out", rp.curves_out);

  std::string strip_in, strip_out;
  auto* s = app.add_subcommand("strip", "drop lookahead parameters from a checkpoint");
  s->add_option("-m,--model", strip_in)->required();
  s->add_option("-o,--out", strip_out)->required();

  GradcheckArgs gc;
  auto* k = app.add_subcommand("gradcheck", "finite-difference check of the full training loss");
  k->add_option("-c,--config", gc.config);
  k->add_option("--set", gc.sets);
  k->add_option("--np", gc.np, "partial sample length");
  k->add_option("--tol", gc.tol);
  k->add_option("--step", gc.h);
  k->add_option("--gamma", gc.gamma_e);
  add_common(k);

  try {
    common.threads = default_threads();
    app.parse(argc, argv);
    if (*g) cmd_gen(gen, common);
    else if (*l) cmd_label(lab, common);
    else if (*t) cmd_train(tr, common);
    else if (*e) cmd_eval("eval", ev, common);
    else if (*r) cmd_eval("rrc", rr, common);
    else if (*p) cmd_report(rp, common);
    else if (*s) cmd_strip(strip_in, strip_out, common);
    else if (*k) return cmd_gradcheck(gc, common) ? 0 : 1;
    return 0;
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    std::cerr << "mnlp: error[usage]: " << ex.what() << "\n";
    return 2;
  } catch (const CliError& ex) {
    std::cerr << "mnlp: error[" << ex.category << "]: " << ex.what() << "\n";
    return ex.code;
  } catch (const OracleRefused& ex) {
    std::cerr << "mnlp: error[oracle]: " << ex.what() << "\n";
    return 2;
  } catch (const ConfigError& ex) {
    std::cerr << "mnlp: error[config]: " << ex.what() << "\n";
    return 2;
  } catch (const ChecksumMismatch& ex) {
    std::cerr << "mnlp: error[checksum]: " << ex.what() << "\n";
    return 3;
  } catch (const VersionMismatch& ex) {
    std::cerr << "mnlp: error[version]: " << ex.what() << "\n";
    return 3;
  } catch (const FormatError& ex) {
    std::cerr << "mnlp: error[format]: " << ex.what() << "\n";
    return 3;
  } catch (const TrainingDiverged& ex) {
    std::cerr << "mnlp: error[diverged]: " << ex.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& ex) {
    std::cerr << "mnlp: error[invalid]: " << ex.what() << "\n";
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "mnlp: error[runtime]: " << ex.what() << "\n";
    return 4;
  }
}
