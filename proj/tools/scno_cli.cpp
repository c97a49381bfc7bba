// SPDX-FileCopyrightText: 2026 The scno authors
// SPDX-License-Identifier: Apache-2.0

// Command-line entry point: dataset generation, stage-wise training,
// evaluation, the continual and isolation experiments, and report assembly.

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "scno/checkpoint.hpp"
#include "scno/composition.hpp"
#include "scno/dataset.hpp"
#include "scno/evaluator.hpp"
#include "scno/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace scno;

namespace {

std::vector<std::string> g_argv;  // for re-exec in --jobs mode

// ---------------------------------------------------------------------------
// Run configuration: profile defaults, JSON config file, flag overrides.
// ---------------------------------------------------------------------------

enum class Stage { Block, Baseline, Composition };

struct RunConfig {
  std::string profile = "desk";  // desk | full
  fs::path data_dir = "data";
  fs::path ckpt_dir = "checkpoints";
  fs::path report_dir = "reports";
  std::vector<std::uint64_t> seeds;  // empty = profile default
  bool strict = false;
  int jobs = 1;
  GridSpec grid;
  PdeFamily coeffs;  // tag is set per use
  int n_train = -1;  // -1 = profile default
  int n_test = -1;
  int epochs = -1;
  int batch_size = -1;
  TrainConfig train;  // epochs/seed filled in per run

  void validate_profile() const {
    if (profile != "desk" && profile != "full")
      throw CLI::ValidationError("profile must be 'desk' or 'full'");
  }
  int eff_n_train() const { return n_train > 0 ? n_train : (profile == "full" ? 1500 : 400); }
  int eff_n_test() const { return n_test > 0 ? n_test : (profile == "full" ? 400 : 100); }
  std::vector<std::uint64_t> eff_seeds() const {
    if (!seeds.empty()) return seeds;
    return profile == "full" ? std::vector<std::uint64_t>{0, 1, 2}
                             : std::vector<std::uint64_t>{0};
  }
  int eff_epochs(Stage stage) const {
    if (epochs > 0) return epochs;
    if (profile == "full") return stage == Stage::Composition ? 300 : 800;
    return 200;
  }
  // The smaller desk datasets train noticeably better at batch 32.
  int eff_batch() const { return batch_size > 0 ? batch_size : (profile == "full" ? 64 : 32); }
  TrainConfig train_config(Stage stage, std::uint64_t seed) const {
    TrainConfig t = train;
    t.epochs = eff_epochs(stage);
    t.batch_size = eff_batch();
    // Scale the milestone fallback into the shorter desk run.
    if (profile == "desk" && t.milestones == std::vector<int>{400, 600})
      t.milestones = {t.epochs / 2, (3 * t.epochs) / 4};
    t.seed = seed;
    return t;
  }
};

void check_keys(const json& j, const std::vector<std::string>& allowed,
                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const auto& k : allowed) ok = ok || it.key() == k;
    if (!ok)
      throw CLI::ValidationError("unknown config key '" + where + it.key() + "'");
  }
}

void load_config_file(const fs::path& path, RunConfig& cfg) {
  std::ifstream is(path);
  if (!is) throw CLI::ValidationError("cannot read config file: " + path.string());
  json j = json::parse(is);
  check_keys(j, {"profile", "data_dir", "ckpt_dir", "report_dir", "seeds", "strict",
                 "jobs", "grid", "pde", "samples", "train"},
             "");
  cfg.profile = j.value("profile", cfg.profile);
  if (j.contains("data_dir")) cfg.data_dir = j.at("data_dir").get<std::string>();
  if (j.contains("ckpt_dir")) cfg.ckpt_dir = j.at("ckpt_dir").get<std::string>();
  if (j.contains("report_dir")) cfg.report_dir = j.at("report_dir").get<std::string>();
  if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  cfg.strict = j.value("strict", cfg.strict);
  cfg.jobs = j.value("jobs", cfg.jobs);
  if (j.contains("grid")) {
    const json& g = j.at("grid");
    check_keys(g, {"m", "length", "dt", "steps", "substep_multiplier"}, "grid.");
    cfg.grid.m = g.value("m", cfg.grid.m);
    cfg.grid.length = g.value("length", cfg.grid.length);
    cfg.grid.dt = g.value("dt", cfg.grid.dt);
    cfg.grid.steps = g.value("steps", cfg.grid.steps);
    cfg.grid.substep_multiplier = g.value("substep_multiplier", cfg.grid.substep_multiplier);
  }
  if (j.contains("pde")) {
    const json& p = j.at("pde");
    check_keys(p, {"c", "nu", "k_r", "D", "sigma_a", "nu_sigma_f"}, "pde.");
    cfg.coeffs.c = p.value("c", cfg.coeffs.c);
    cfg.coeffs.nu = p.value("nu", cfg.coeffs.nu);
    cfg.coeffs.k_r = p.value("k_r", cfg.coeffs.k_r);
    cfg.coeffs.D = p.value("D", cfg.coeffs.D);
    cfg.coeffs.sigma_a = p.value("sigma_a", cfg.coeffs.sigma_a);
    cfg.coeffs.nu_sigma_f = p.value("nu_sigma_f", cfg.coeffs.nu_sigma_f);
  }
  if (j.contains("samples")) {
    const json& s = j.at("samples");
    check_keys(s, {"n_train", "n_test"}, "samples.");
    cfg.n_train = s.value("n_train", cfg.n_train);
    cfg.n_test = s.value("n_test", cfg.n_test);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t, {"epochs", "batch_size", "lr", "weight_decay", "eval_every",
                   "plateau_factor", "plateau_patience", "milestones", "cosine_floor"},
               "train.");
    cfg.epochs = t.value("epochs", cfg.epochs);
    cfg.batch_size = t.value("batch_size", cfg.batch_size);
    cfg.train.lr = t.value("lr", cfg.train.lr);
    cfg.train.weight_decay = t.value("weight_decay", cfg.train.weight_decay);
    cfg.train.eval_every = t.value("eval_every", cfg.train.eval_every);
    cfg.train.plateau_factor = t.value("plateau_factor", cfg.train.plateau_factor);
    cfg.train.plateau_patience = t.value("plateau_patience", cfg.train.plateau_patience);
    if (t.contains("milestones"))
      cfg.train.milestones = t.at("milestones").get<std::vector<int>>();
    cfg.train.cosine_floor = t.value("cosine_floor", cfg.train.cosine_floor);
  }
  cfg.validate_profile();
}

json resolved_config_json(const RunConfig& cfg) {
  return {{"profile", cfg.profile},
          {"data_dir", cfg.data_dir.string()},
          {"ckpt_dir", cfg.ckpt_dir.string()},
          {"report_dir", cfg.report_dir.string()},
          {"seeds", cfg.eff_seeds()},
          {"strict", cfg.strict},
          {"jobs", cfg.jobs},
          {"grid", grid_to_json(cfg.grid)},
          {"pde",
           {{"c", cfg.coeffs.c},
            {"nu", cfg.coeffs.nu},
            {"k_r", cfg.coeffs.k_r},
            {"D", cfg.coeffs.D},
            {"sigma_a", cfg.coeffs.sigma_a},
            {"nu_sigma_f", cfg.coeffs.nu_sigma_f}}},
          {"samples", {{"n_train", cfg.eff_n_train()}, {"n_test", cfg.eff_n_test()}}},
          {"train",
           {{"epochs_block", cfg.eff_epochs(Stage::Block)},
            {"epochs_composition", cfg.eff_epochs(Stage::Composition)},
            {"batch_size", cfg.eff_batch()},
            {"lr", cfg.train.lr},
            {"weight_decay", cfg.train.weight_decay},
            {"eval_every", cfg.train.eval_every},
            {"plateau_factor", cfg.train.plateau_factor},
            {"plateau_patience", cfg.train.plateau_patience},
            {"milestones", cfg.train.milestones},
            {"cosine_floor", cfg.train.cosine_floor}}}};
}

/// Writes the fully resolved config, plus subcommand-specific arguments, into
/// the directory the subcommand produces outputs in.
void echo_config(const RunConfig& cfg, const fs::path& dir, const std::string& command,
                 json args) {
  fs::create_directories(dir);
  json j = {{"command", command}, {"args", std::move(args)},
            {"config", resolved_config_json(cfg)}};
  std::ofstream os(dir / (command + "_config.json"));
  os << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Paths and prerequisite hints
// ---------------------------------------------------------------------------

fs::path dataset_path(const RunConfig& cfg, const std::string& family,
                      const std::string& split) {
  return cfg.data_dir / (family + "_" + split + ".bin");
}

std::string elementary_family_for_op(OperatorTag t) {
  switch (t) {
    case OperatorTag::Convection: return "convection";
    case OperatorTag::Diffusion: return "diffusion";
    case OperatorTag::Reaction: return "reaction";
  }
  return "?";
}

fs::path block_path(const RunConfig& cfg, const std::string& op, std::uint64_t seed,
                    bool ablate = false) {
  return cfg.ckpt_dir /
         ("block_" + op + (ablate ? "_ablate" : "") + "_seed" + std::to_string(seed) +
          ".ckpt");
}
fs::path stage_path(const RunConfig& cfg, const std::string& kind,
                    const std::string& family, std::uint64_t seed) {
  return cfg.ckpt_dir / (kind + "_" + family + "_seed" + std::to_string(seed) + ".ckpt");
}
fs::path eval_path(const RunConfig& cfg, const std::string& family,
                   const std::string& method, std::uint64_t seed) {
  return cfg.report_dir /
         ("eval_" + family + "_" + method + "_seed" + std::to_string(seed) + ".json");
}

struct MissingArtifact : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A bad family name on the command line is user error, not a solver failure.
FamilyTag parse_family_arg(const std::string& s) {
  try {
    return parse_family(s);
  } catch (const SolverError& e) {
    throw CLI::ValidationError(e.what());
  }
}

void require_file(const fs::path& p, const std::string& produce_cmd) {
  if (!fs::exists(p))
    throw MissingArtifact("missing " + p.string() + "; produce it with: scno_cli " +
                          produce_cmd);
}

Dataset load_split(const RunConfig& cfg, const std::string& family,
                   const std::string& split, std::uint64_t data_seed) {
  fs::path p = dataset_path(cfg, family, split);
  require_file(p, "gen-data --family " + family + " --seed " + std::to_string(data_seed));
  return read_dataset(p);
}

// ---------------------------------------------------------------------------
// Process-level sweep parallelism: re-exec self with override flags appended.
// Options use take-last policy, so later flags win.
// ---------------------------------------------------------------------------

int run_children(const std::vector<std::vector<std::string>>& extra_args, int jobs) {
  if (jobs < 1) jobs = 1;
  int worst = 0;
  size_t next = 0;
  std::vector<pid_t> running;
  auto reap_one = [&]() {
    int status = 0;
    pid_t pid = wait(&status);
    for (size_t i = 0; i < running.size(); ++i)
      if (running[i] == pid) running.erase(running.begin() + i--);
    int code = WIFEXITED(status) ? WEXITSTATUS(status) : 2;
    worst = std::max(worst, code);
  };
  while (next < extra_args.size() || !running.empty()) {
    if (next < extra_args.size() && int(running.size()) < jobs) {
      std::vector<std::string> args = g_argv;
      // never recurse the sweep in the child
      args.push_back("--jobs");
      args.push_back("1");
      for (const auto& a : extra_args[next]) args.push_back(a);
      ++next;
      pid_t pid = fork();
      if (pid == 0) {
        std::vector<char*> cargs;
        for (auto& a : args) cargs.push_back(a.data());
        cargs.push_back(nullptr);
        execv("/proc/self/exe", cargs.data());
        _exit(127);
      }
      running.push_back(pid);
    } else {
      reap_one();
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Subcommand bodies
// ---------------------------------------------------------------------------

int cmd_gen_data(const RunConfig& cfg, const std::string& family_arg,
                 std::uint64_t seed) {
  std::vector<std::string> families;
  if (family_arg == "all") {
    for (const auto& [n, t] : family_names()) families.push_back(n);
  } else {
    parse_family_arg(family_arg);  // validates, throws with the full list
    families.push_back(family_arg);
  }
  if (families.size() > 1 && cfg.jobs > 1) {
    std::vector<std::vector<std::string>> sweep;
    for (const auto& f : families) sweep.push_back({"--family", f});
    return run_children(sweep, cfg.jobs);
  }
  for (const auto& f : families) {
    PdeFamily fam = cfg.coeffs;
    fam.tag = parse_family_arg(f);
    fs::create_directories(cfg.data_dir);
    std::fprintf(stderr, "gen-data: %s (%d train / %d test, seed %llu)\n", f.c_str(),
                 cfg.eff_n_train(), cfg.eff_n_test(),
                 (unsigned long long)seed);
    generate_dataset(fam, cfg.grid, cfg.eff_n_train(), cfg.eff_n_test(), seed,
                     dataset_path(cfg, f, "train"), dataset_path(cfg, f, "test"));
    echo_config(cfg, cfg.data_dir, "gen-data",
                {{"family", f}, {"seed", seed}});
  }
  return 0;
}

int cmd_train_block(const RunConfig& cfg, const std::string& op_arg, std::uint64_t seed,
                    std::uint64_t data_seed, bool ablate) {
  std::vector<std::string> ops;
  if (op_arg == "all") {
    ops = {"conv", "diff", "react"};
  } else {
    parse_op_tag(op_arg);
    ops.push_back(op_arg);
  }
  if (ops.size() > 1 && cfg.jobs > 1) {
    std::vector<std::vector<std::string>> sweep;
    for (const auto& o : ops) sweep.push_back({"--op", o});
    return run_children(sweep, cfg.jobs);
  }
  for (const auto& op : ops) {
    OperatorTag tag = parse_op_tag(op);
    std::string family = elementary_family_for_op(tag);
    Dataset train = load_split(cfg, family, "train", data_seed);
    Dataset test = load_split(cfg, family, "test", data_seed);
    TrainConfig tc = cfg.train_config(Stage::Block, seed);
    tc.verbose = true;
    std::fprintf(stderr, "train-block: %s (%d epochs, seed %llu%s)\n", op.c_str(),
                 tc.epochs, (unsigned long long)seed, ablate ? ", ablated" : "");
    BlockTrainResult res = train_block(tag, train, test, tc, ablate);
    fs::create_directories(cfg.ckpt_dir);
    fs::path out = block_path(cfg, op, seed, ablate);
    EvalResult ev = evaluate_block(*res.block, test);
    save_block(*res.block, out, "block",
               {{"seed", seed},
                {"family", family},
                {"test_rel_l2", ev.mean_rel_l2},
                {"digest", res.record.final_digest}});
    res.record.write_csv(out.string() + ".curve.csv");
    echo_config(cfg, cfg.ckpt_dir, "train-block",
                {{"op", op}, {"seed", seed}, {"ablate", ablate}});
    std::fprintf(stderr, "train-block: %s done, test rel-L2 %.4f -> %s\n", op.c_str(),
                 ev.mean_rel_l2, out.c_str());
  }
  return 0;
}

/// Loads the frozen library needed for `family`, with dependency hints.
BlockLibrary load_library(const RunConfig& cfg, FamilyTag family, std::uint64_t seed) {
  BlockLibrary lib;
  for (OperatorTag t : blocks_for_family(family)) {
    std::string op = op_tag_name(t);
    fs::path p = block_path(cfg, op, seed);
    require_file(p, "train-block --op " + op + " --seed " + std::to_string(seed));
    lib.add_block(t, load_block(p));
  }
  return lib;
}

int cmd_train_aggregator(const RunConfig& cfg, const std::string& pde,
                         std::uint64_t seed, std::uint64_t data_seed) {
  FamilyTag family = parse_family_arg(pde);
  if (blocks_for_family(family).size() < 2)
    throw CLI::ValidationError("train-aggregator: '" + pde +
                               "' is elementary; aggregation needs a coupled family");
  BlockLibrary lib = load_library(cfg, family, seed);
  Dataset train = load_split(cfg, pde, "train", data_seed);
  Dataset test = load_split(cfg, pde, "test", data_seed);
  TrainConfig tc = cfg.train_config(Stage::Composition, seed);
  tc.verbose = true;
  std::fprintf(stderr, "train-aggregator: %s (%d epochs, seed %llu)\n", pde.c_str(),
               tc.epochs, (unsigned long long)seed);
  AggregatorTrainResult res = train_aggregator(lib, family, train, test, tc);
  res.aggregator->freeze();
  fs::path out = stage_path(cfg, "agg", pde, seed);
  ScnoModel model(lib, blocks_for_family(family), res.aggregator);
  EvalResult ev = evaluate_scno(model, test);
  save_aggregator(*res.aggregator, out,
                  {{"seed", seed},
                   {"family", pde},
                   {"test_rel_l2", ev.mean_rel_l2},
                   {"gate", res.aggregator->gate_value()}});
  res.record.write_csv(out.string() + ".curve.csv");
  echo_config(cfg, cfg.ckpt_dir, "train-aggregator", {{"pde", pde}, {"seed", seed}});
  std::fprintf(stderr, "train-aggregator: %s done, test rel-L2 %.4f, gate %.3f\n",
               pde.c_str(), ev.mean_rel_l2, res.aggregator->gate_value());
  return 0;
}

int cmd_train_correction(const RunConfig& cfg, const std::string& pde,
                         std::uint64_t seed, std::uint64_t data_seed) {
  FamilyTag family = parse_family_arg(pde);
  BlockLibrary lib = load_library(cfg, family, seed);
  fs::path agg_p = stage_path(cfg, "agg", pde, seed);
  require_file(agg_p,
               "train-aggregator --pde " + pde + " --seed " + std::to_string(seed));
  auto agg = load_aggregator(agg_p);
  Dataset train = load_split(cfg, pde, "train", data_seed);
  Dataset test = load_split(cfg, pde, "test", data_seed);
  TrainConfig tc = cfg.train_config(Stage::Composition, seed);
  tc.verbose = true;
  std::fprintf(stderr, "train-correction: %s (%d epochs, seed %llu)\n", pde.c_str(),
               tc.epochs, (unsigned long long)seed);
  CorrectionTrainResult res = train_correction(lib, family, agg, train, test, tc);
  res.correction->freeze();
  fs::path out = stage_path(cfg, "corr", pde, seed);
  ScnoModel model(lib, blocks_for_family(family), agg, res.correction);
  EvalResult ev = evaluate_scno(model, test);
  save_correction(*res.correction, out,
                  {{"seed", seed},
                   {"family", pde},
                   {"test_rel_l2", ev.mean_rel_l2},
                   {"alpha", res.correction->alpha_value()}});
  res.record.write_csv(out.string() + ".curve.csv");
  echo_config(cfg, cfg.ckpt_dir, "train-correction", {{"pde", pde}, {"seed", seed}});
  std::fprintf(stderr, "train-correction: %s done, test rel-L2 %.4f, alpha %.3f\n",
               pde.c_str(), ev.mean_rel_l2, res.correction->alpha_value());
  return 0;
}

int cmd_train_baseline(const RunConfig& cfg, const std::string& kind,
                       const std::string& pde, std::uint64_t seed,
                       std::uint64_t data_seed) {
  if (kind != "mono" && kind != "ann")
    throw CLI::ValidationError("train-baseline: --kind must be 'mono' or 'ann'");
  parse_family_arg(pde);
  Dataset train = load_split(cfg, pde, "train", data_seed);
  Dataset test = load_split(cfg, pde, "test", data_seed);
  TrainConfig tc = cfg.train_config(Stage::Baseline, seed);
  tc.verbose = true;
  std::fprintf(stderr, "train-baseline: %s %s (%d epochs, seed %llu)\n", kind.c_str(),
               pde.c_str(), tc.epochs, (unsigned long long)seed);
  fs::create_directories(cfg.ckpt_dir);
  if (kind == "mono") {
    BlockTrainResult res = train_mono_baseline(train, test, tc);
    fs::path out = stage_path(cfg, "mono", pde, seed);
    EvalResult ev = evaluate_block(*res.block, test);
    save_block(*res.block, out, "mono_snn",
               {{"seed", seed}, {"family", pde}, {"test_rel_l2", ev.mean_rel_l2}});
    res.record.write_csv(out.string() + ".curve.csv");
    std::fprintf(stderr, "train-baseline: done, test rel-L2 %.4f\n", ev.mean_rel_l2);
  } else {
    AnnTrainResult res = train_ann_baseline(train, test, tc);
    fs::path out = stage_path(cfg, "ann", pde, seed);
    EvalResult ev = evaluate_ann(*res.model, test);
    save_ann(*res.model, out,
             {{"seed", seed}, {"family", pde}, {"test_rel_l2", ev.mean_rel_l2}});
    res.record.write_csv(out.string() + ".curve.csv");
    std::fprintf(stderr, "train-baseline: done, test rel-L2 %.4f\n", ev.mean_rel_l2);
  }
  echo_config(cfg, cfg.ckpt_dir, "train-baseline",
              {{"kind", kind}, {"pde", pde}, {"seed", seed}});
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& pde, const std::string& method,
             std::uint64_t seed, std::uint64_t data_seed) {
  FamilyTag family = parse_family_arg(pde);
  Dataset test = load_split(cfg, pde, "test", data_seed);
  EvalResult ev;
  std::int64_t trainable = 0;
  if (method == "scno" || method == "scno_corr") {
    BlockLibrary lib = load_library(cfg, family, seed);
    fs::path agg_p = stage_path(cfg, "agg", pde, seed);
    require_file(agg_p,
                 "train-aggregator --pde " + pde + " --seed " + std::to_string(seed));
    auto agg = load_aggregator(agg_p);
    std::shared_ptr<CorrectionNet> corr;
    if (method == "scno_corr") {
      fs::path corr_p = stage_path(cfg, "corr", pde, seed);
      require_file(corr_p,
                   "train-correction --pde " + pde + " --seed " + std::to_string(seed));
      corr = load_correction(corr_p);
      trainable = corr->params().total_count();
    } else {
      trainable = agg->params().total_count();
    }
    ScnoModel model(lib, blocks_for_family(family), agg, corr);
    ev = evaluate_scno(model, test);
  } else if (method == "mono_snn") {
    fs::path p = stage_path(cfg, "mono", pde, seed);
    require_file(p, "train-baseline --kind mono --pde " + pde + " --seed " +
                        std::to_string(seed));
    auto mono = load_block(p, "mono_snn");
    trainable = mono->params().total_count();
    ev = evaluate_block(*mono, test);
  } else if (method == "ann") {
    fs::path p = stage_path(cfg, "ann", pde, seed);
    require_file(p, "train-baseline --kind ann --pde " + pde + " --seed " +
                        std::to_string(seed));
    auto ann = load_ann(p);
    trainable = ann->params().total_count();
    ev = evaluate_ann(*ann, test);
  } else {
    throw CLI::ValidationError(
        "eval: unknown method '" + method +
        "' (valid: scno, scno_corr, mono_snn, ann)");
  }
  fs::create_directories(cfg.report_dir);
  json out = {{"family", pde},
              {"method", method},
              {"seed", seed},
              {"rel_l2_percent", 100.0 * ev.mean_rel_l2},
              {"spikes_per_inference", ev.spikes_per_inference()},
              {"energy_per_inference_j", ev.energy_per_inference()},
              {"trainable_params", trainable}};
  std::ofstream os(eval_path(cfg, pde, method, seed));
  os << out.dump(2) << "\n";
  echo_config(cfg, cfg.report_dir, "eval",
              {{"pde", pde}, {"method", method}, {"seed", seed}});
  std::printf("%s\n", out.dump().c_str());
  return 0;
}

int cmd_continual(const RunConfig& cfg, std::uint64_t seed, std::uint64_t data_seed) {
  // Phased library build: convection, then diffusion, then reaction.
  const std::vector<OperatorTag> phases = {OperatorTag::Convection, OperatorTag::Diffusion,
                                           OperatorTag::Reaction};
  std::vector<std::pair<OperatorTag, std::shared_ptr<SpikingDeepOnetBlock>>> phased;
  std::map<OperatorTag, Dataset> tests;
  for (OperatorTag t : phases) {
    std::string op = op_tag_name(t);
    fs::path p = block_path(cfg, op, seed);
    require_file(p, "train-block --op " + op + " --seed " + std::to_string(seed));
    phased.push_back({t, load_block(p)});
    tests.emplace(t, load_split(cfg, elementary_family_for_op(t), "test", data_seed));
  }
  ContinualReport report = continual_experiment(phased, tests);
  fs::create_directories(cfg.report_dir);
  std::ofstream os(cfg.report_dir / "continual.csv");
  os << "phase,block,rel_l2\n";
  for (const auto& r : report.rows) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", r.rel_l2);
    os << r.phase << "," << op_tag_name(r.tag) << "," << buf << "\n";
  }
  echo_config(cfg, cfg.report_dir, "continual", {{"seed", seed}});
  if (!report.zero_forgetting) {
    std::fprintf(stderr, "continual: FORGETTING DETECTED: %s\n",
                 report.violation.c_str());
    return 2;
  }
  std::printf("continual: zero forgetting confirmed over %zu evaluations\n",
              report.rows.size());
  return 0;
}

int cmd_isolation(const RunConfig& cfg, std::uint64_t seed, std::uint64_t data_seed,
                  bool negative_control) {
  // React-diff SCNO error before and after training a burgers aggregator on
  // the same frozen library.
  BlockLibrary lib;
  for (OperatorTag t : {OperatorTag::Convection, OperatorTag::Diffusion,
                        OperatorTag::Reaction}) {
    std::string op = op_tag_name(t);
    fs::path p = block_path(cfg, op, seed);
    require_file(p, "train-block --op " + op + " --seed " + std::to_string(seed));
    lib.add_block(t, load_block(p));
  }
  fs::path agg_p = stage_path(cfg, "agg", "react_diff", seed);
  require_file(agg_p,
               "train-aggregator --pde react_diff --seed " + std::to_string(seed));
  auto agg = load_aggregator(agg_p);
  Dataset rd_test = load_split(cfg, "react_diff", "test", data_seed);
  Dataset bu_train = load_split(cfg, "burgers", "train", data_seed);
  Dataset bu_test = load_split(cfg, "burgers", "test", data_seed);

  ScnoModel rd_model(lib, blocks_for_family(FamilyTag::ReactDiff), agg);
  double before = evaluate_scno(rd_model, rd_test).mean_rel_l2;

  if (negative_control) {
    // Deliberately share the react-diff aggregator instance and keep training
    // it on burgers data; its parameters (and the react-diff error) must move.
    std::vector<std::shared_ptr<SpikingDeepOnetBlock>> blocks = {
        lib.share(OperatorTag::Convection), lib.share(OperatorTag::Diffusion)};
    std::vector<MatF> outs = precompute_block_outputs(blocks, bu_train);
    for (auto* p : agg->params().params) {
      p->trainable = true;
      p->var.set_requires_grad(true);
    }
    AdamW<F> opt(agg->params().params, {});
    MatF u0 = dataset_matrix(bu_train.u0);
    MatF tgt = dataset_matrix(bu_train.uT);
    for (int it = 0; it < 10; ++it) {
      opt.zero_grad();
      std::vector<VarF> ov;
      for (auto& o : outs) ov.push_back(VarF::constant(o));
      VarF loss = mse(agg->forward(ov, VarF::constant(u0)), VarF::constant(tgt));
      backward(loss);
      opt.step(1e-3f);
    }
  } else {
    TrainConfig tc = cfg.train_config(Stage::Composition, seed);
    train_aggregator(lib, FamilyTag::Burgers, bu_train, bu_test, tc);
  }

  double after = evaluate_scno(rd_model, rd_test).mean_rel_l2;
  double delta = std::abs(after - before);
  fs::create_directories(cfg.report_dir);
  json out = {{"react_diff_error_before", before},
              {"react_diff_error_after", after},
              {"delta", delta},
              {"negative_control", negative_control}};
  std::ofstream os(cfg.report_dir / "isolation.json");
  os << out.dump(2) << "\n";
  echo_config(cfg, cfg.report_dir, "isolation",
              {{"seed", seed}, {"negative_control", negative_control}});
  std::printf("%s\n", out.dump().c_str());
  if (!negative_control && delta > 1e-3) {
    std::fprintf(stderr, "isolation: delta %.3e exceeds 1e-3\n", delta);
    return 2;
  }
  return 0;
}

int cmd_report_table2(const RunConfig& cfg) {
  Table2Report report;
  for (const auto& f : Table2Report::families()) {
    for (const auto& m : Table2Report::methods()) {
      for (std::uint64_t s : cfg.eff_seeds()) {
        fs::path p = eval_path(cfg, f, m, s);
        if (!fs::exists(p)) continue;
        std::ifstream is(p);
        json j = json::parse(is);
        report.results[f][m].values.push_back(j.at("rel_l2_percent").get<double>());
        report.trainable_params[m] = j.at("trainable_params").get<std::int64_t>();
      }
    }
  }
  fs::create_directories(cfg.report_dir);
  std::string csv = report.to_csv();
  std::ofstream os(cfg.report_dir / "table2.csv");
  os << csv;
  echo_config(cfg, cfg.report_dir, "report", {{"table2", true}});
  std::printf("%s", csv.c_str());
  if (cfg.strict && !report.complete()) {
    std::fprintf(stderr, "report: incomplete table in strict mode; run eval for the "
                         "MISSING cells first\n");
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 0; i < argc; ++i) g_argv.push_back(argv[i]);

  CLI::App app{"Compositional spiking neural operator pipeline"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::string config_file;
  app.add_option("--config", config_file, "JSON run configuration file")
      ->check(CLI::ExistingFile);

  // Global overrides, applied after the config file.
  auto* o_profile = app.add_option("--profile", cfg.profile, "desk | full");
  auto* o_data = app.add_option("--data-dir", cfg.data_dir);
  auto* o_ckpt = app.add_option("--ckpt-dir", cfg.ckpt_dir);
  auto* o_report = app.add_option("--report-dir", cfg.report_dir);
  auto* o_strict = app.add_flag("--strict", cfg.strict);
  auto* o_jobs = app.add_option("--jobs", cfg.jobs, "process-level sweep parallelism");
  auto* o_m = app.add_option("--m", cfg.grid.m, "grid points");
  auto* o_dt = app.add_option("--dt", cfg.grid.dt);
  auto* o_steps = app.add_option("--steps", cfg.grid.steps);
  auto* o_ntrain = app.add_option("--n-train", cfg.n_train);
  auto* o_ntest = app.add_option("--n-test", cfg.n_test);
  auto* o_epochs = app.add_option("--epochs", cfg.epochs);
  auto* o_batch = app.add_option("--batch-size", cfg.batch_size);
  auto* o_lr = app.add_option("--lr", cfg.train.lr);
  auto* o_seeds = app.add_option("--seeds", cfg.seeds, "seed sweep list");
  for (auto* o : {o_profile, o_data, o_ckpt, o_report, o_jobs, o_m, o_dt, o_steps,
                  o_ntrain, o_ntest, o_epochs, o_batch, o_lr})
    o->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  (void)o_strict;
  (void)o_seeds;

  std::string family = "all", op = "all", pde, method, kind;
  std::uint64_t seed_flag = 0, data_seed = 0;
  bool ablate = false, table2 = false, negative_control = false;
  bool seed_given = false;

  auto add_seed = [&](CLI::App* sub) {
    sub->add_option("--seed", seed_flag, "training seed")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)
        ->each([&](const std::string&) { seed_given = true; });
    sub->add_option("--data-seed", data_seed, "dataset generation seed")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate PDE datasets");
  gen->add_option("--family", family, "PDE family or 'all'")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  gen->add_option("--seed", seed_flag, "dataset seed")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  CLI::App* tb = app.add_subcommand("train-block", "train an elementary spiking block");
  tb->add_option("--op", op, "conv | diff | react | all")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  tb->add_flag("--ablate", ablate, "disable skip connections and freeze beta");
  add_seed(tb);

  CLI::App* ta = app.add_subcommand("train-aggregator", "train the gated aggregator");
  ta->add_option("--pde", pde, "coupled PDE family")->required();
  add_seed(ta);

  CLI::App* tc = app.add_subcommand("train-correction", "train the correction network");
  tc->add_option("--pde", pde, "coupled PDE family")->required();
  add_seed(tc);

  CLI::App* tl = app.add_subcommand("train-baseline", "train a baseline model");
  tl->add_option("--kind", kind, "mono | ann")->required();
  tl->add_option("--pde", pde, "PDE family")->required();
  add_seed(tl);

  CLI::App* ev = app.add_subcommand("eval", "evaluate a trained method");
  ev->add_option("--pde", pde, "PDE family")->required();
  ev->add_option("--method", method, "scno | scno_corr | mono_snn | ann")->required();
  add_seed(ev);

  CLI::App* co = app.add_subcommand("continual", "phased zero-forgetting experiment");
  add_seed(co);

  CLI::App* iso = app.add_subcommand("isolation", "aggregator isolation experiment");
  iso->add_flag("--negative-control", negative_control,
                "share the aggregator instance so the error must move");
  add_seed(iso);

  CLI::App* rep = app.add_subcommand("report", "assemble aggregate reports");
  rep->add_flag("--table2", table2, "coupled-PDE error table CSV");

  // Global flags may appear after the subcommand name.
  for (CLI::App* s : {gen, tb, ta, tc, tl, ev, co, iso, rep}) s->fallthrough();

  // Parse once so --config is known, then layer: defaults -> file -> flags.
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (!config_file.empty()) {
      // Layering: defaults, then config file, then explicit flags.
      RunConfig base;
      load_config_file(config_file, base);
      if (o_profile->count()) base.profile = cfg.profile;
      if (o_data->count()) base.data_dir = cfg.data_dir;
      if (o_ckpt->count()) base.ckpt_dir = cfg.ckpt_dir;
      if (o_report->count()) base.report_dir = cfg.report_dir;
      if (o_jobs->count()) base.jobs = cfg.jobs;
      if (o_m->count()) base.grid.m = cfg.grid.m;
      if (o_dt->count()) base.grid.dt = cfg.grid.dt;
      if (o_steps->count()) base.grid.steps = cfg.grid.steps;
      if (o_ntrain->count()) base.n_train = cfg.n_train;
      if (o_ntest->count()) base.n_test = cfg.n_test;
      if (o_epochs->count()) base.epochs = cfg.epochs;
      if (o_batch->count()) base.batch_size = cfg.batch_size;
      if (o_lr->count()) base.train.lr = cfg.train.lr;
      if (!cfg.seeds.empty()) base.seeds = cfg.seeds;
      base.strict = base.strict || cfg.strict;
      cfg = base;
    }
    cfg.validate_profile();
    std::uint64_t seed = seed_given ? seed_flag : cfg.eff_seeds().front();

    if (gen->parsed()) return cmd_gen_data(cfg, family, gen->count("--seed") ? seed_flag : data_seed);
    if (tb->parsed()) return cmd_train_block(cfg, op, seed, data_seed, ablate);
    if (ta->parsed()) return cmd_train_aggregator(cfg, pde, seed, data_seed);
    if (tc->parsed()) return cmd_train_correction(cfg, pde, seed, data_seed);
    if (tl->parsed()) return cmd_train_baseline(cfg, kind, pde, seed, data_seed);
    if (ev->parsed()) return cmd_eval(cfg, pde, method, seed, data_seed);
    if (co->parsed()) return cmd_continual(cfg, seed, data_seed);
    if (iso->parsed()) return cmd_isolation(cfg, seed, data_seed, negative_control);
    if (rep->parsed()) {
      if (!table2) throw CLI::ValidationError("report: pass --table2");
      return cmd_report_table2(cfg);
    }
    return 1;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 2;
  } catch (const SolverError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 2;
  } catch (const NonFiniteError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 2;
  } catch (const OptimError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
