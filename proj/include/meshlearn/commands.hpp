#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <json.hpp>
#include <ostream>
#include <thread>

#include "meshlearn/refcache.hpp"

/// Subcommands of the `meshlearn` tool as plain functions, so tests can
/// drive them without a process boundary. Errors are exceptions; the tool
/// maps them to exit codes with exit_code_for().
namespace meshlearn::cli {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kIo = 3, kConsistency = 4 };

/// Exit code for an exception escaping a command.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConsistencyError*>(&e)) return kConsistency;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e)) return kIo;
  if (dynamic_cast<const InvalidArgument*>(&e)) return kUsage;
  return kFailure;
}

inline double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

inline std::string format_ms(double ms) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", ms);
  return buf;
}

inline ProblemKind require_problem(const std::string& name) {
  if (!is_problem_name(name)) throw InvalidArgument("unknown problem '" + name + "'");
  return problem_preset(name).kind;
}

inline std::string env_file_name(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "env_%05zu.txt", k);
  return buf;
}

/// The environment a checkpoint can run on: same problem, same dimension.
inline void check_compatible(const Checkpoint& ck, const EnvironmentFile& f, const std::string& where) {
  if (!is_problem_name(f.problem)) throw IoError(where + ": unknown problem '" + f.problem + "' in environment file");
  if (f.env.mesh->dim() != ck.params.config.dim)
    throw ConsistencyError(where + ": environment is " + std::to_string(f.env.mesh->dim()) + "D, checkpoint expects " +
                           std::to_string(ck.params.config.dim) + "D");
  if (f.problem != ck.config.problem && problem_preset(f.problem).kind != ck.config.spec.kind)
    throw ConsistencyError(where + ": environment is for " + f.problem + ", checkpoint was trained on " + ck.config.problem);
}

// ---- gen-env -----------------------------------------------------------------

struct GenEnvOptions {
  std::string problem;
  std::uint64_t seed = 0;
  long count = 1;
  fs::path out;
  double dx = 0.05;
};

/// Environment k of a problem family: a sampled heat2d environment drawn
/// from env_seed(seed, k), or the fixed 1D initial condition.
inline EnvironmentFile make_environment(const std::string& problem, double dx, std::uint64_t seed, std::uint64_t k) {
  const ProblemKind kind = require_problem(problem);
  auto mesh = problem_mesh(kind, dx);
  if (kind == ProblemKind::Heat2D) {
    const std::uint64_t s = env_seed(seed, k);
    return {problem, s, sample_env(s, mesh)};
  }
  return {problem, std::nullopt, interval_problem_environment(kind, mesh)};
}

inline std::vector<fs::path> cmd_gen_env(const GenEnvOptions& o, std::ostream& log) {
  require_problem(o.problem);
  if (o.count < 0) throw InvalidArgument("--count must be non-negative");
  std::vector<fs::path> written;
  if (o.count == 0) return written;
  std::error_code ec;
  fs::create_directories(o.out, ec);
  if (!fs::is_directory(o.out)) throw IoError("cannot create directory " + o.out.string());
  for (long k = 0; k < o.count; ++k) {
    const fs::path p = o.out / env_file_name(static_cast<std::size_t>(k));
    write_environment(p, make_environment(o.problem, o.dx, o.seed, static_cast<std::uint64_t>(k)));
    written.push_back(p);
  }
  log << "wrote " << written.size() << " environment files to " << o.out.string() << "\n";
  return written;
}

// ---- train -------------------------------------------------------------------

struct TrainOptions {
  fs::path config;
  std::optional<fs::path> out_dir;  // overrides the config's out_dir
};

/// Held-out evaluation: surrogate rollouts against cached references.
struct EvalRecord {
  std::string env_id;
  double mse = 0;
  double rollout_ms = 0;
  double reference_ms = 0;
  bool reference_cached = false;
};

inline double mean_mse(const std::vector<EvalRecord>& rows) {
  double s = 0;
  for (const auto& r : rows) s += r.mse;
  return rows.empty() ? 0.0 : s / static_cast<double>(rows.size());
}

/// Rollout of `params` on `f` against its reference, timing both.
inline EvalRecord evaluate_one(const GNParams& params, const ProblemSpec& spec, const EnvironmentFile& f, int n_steps,
                               const ReferenceOptions& opt, const fs::path& cache_dir, std::string env_id) {
  EvalRecord r;
  r.env_id = std::move(env_id);
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<Field> sur = rollout(params, f.env, n_steps);
  r.rollout_ms = elapsed_ms(t0);
  const CachedReference ref = reference_for(spec, f, n_steps, opt, cache_dir);
  r.reference_ms = ref.solve_ms;
  r.reference_cached = ref.from_cache;
  r.mse = mse_vs_reference(sur, ref.coarse);
  return r;
}

struct TrainOutcome {
  fs::path out_dir;
  fs::path checkpoint;
  fs::path manifest;
  std::vector<double> losses;
  std::vector<EvalRecord> eval;
};

inline std::vector<EnvironmentFile> held_out_environments(const TrainerConfig& c) {
  std::vector<EnvironmentFile> out;
  const int n = c.fixed_initial_condition() ? std::min(c.eval_envs, 1) : c.eval_envs;
  for (int k = 0; k < n; ++k) out.push_back(make_environment(c.problem, c.dx, c.held_out_seed(), static_cast<std::uint64_t>(k)));
  return out;
}

inline TrainOutcome cmd_train(const TrainOptions& o, std::ostream& log) {
  TrainerConfig c = trainer_config_from(KeyValues::parse(read_file(o.config)));
  if (o.out_dir) c.out_dir = o.out_dir->string();
  TrainOutcome out;
  out.out_dir = c.out_dir;
  std::error_code ec;
  fs::create_directories(out.out_dir, ec);
  if (!fs::is_directory(out.out_dir)) throw IoError("cannot create directory " + out.out_dir.string());
  out.checkpoint = out.out_dir / "checkpoint.bin";

  TrainCallbacks cb;
  cb.on_epoch = [&](long epoch, double loss) {
    if (c.log_every > 0 && epoch % c.log_every == 0) log << "epoch " << epoch << " loss " << format_double(loss) << "\n";
  };
  cb.on_checkpoint = [&](long epoch, const GNParams& params) {
    char name[48];
    std::snprintf(name, sizeof name, "checkpoint_epoch_%08ld.bin", epoch);
    const fs::path p = epoch == c.epochs ? out.checkpoint : out.out_dir / name;
    write_checkpoint(p, {c, epoch, params});
  };
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult result = train(c, cb);
  const double train_ms = elapsed_ms(t0);
  out.losses = std::move(result.losses);
  write_file(out.out_dir / "loss.csv", format_loss_csv(out.losses));

  ReferenceOptions ropt;
  ropt.refine = c.eval_refine;
  const auto held_out = held_out_environments(c);
  for (std::size_t k = 0; k < held_out.size(); ++k) {
    const std::string id = "heldout_" + std::to_string(k);
    write_environment(out.out_dir / "heldout" / (id + ".txt"), held_out[k]);
    out.eval.push_back(evaluate_one(result.params, c.spec, held_out[k], c.n_timesteps, ropt, out.out_dir / "reference" / id, id));
  }

  nlohmann::ordered_json m;
  m["tool"] = "meshlearn";
  m["version"] = kToolVersion;
  nlohmann::ordered_json cfg;
  const KeyValues kv = to_key_values(c);
  for (const auto& [k, v] : kv.entries()) cfg[k] = v;
  m["config"] = cfg;
  m["seed"] = c.seed;
  m["checkpoint"] = out.checkpoint.string();
  m["loss_csv"] = (out.out_dir / "loss.csv").string();
  nlohmann::ordered_json metrics;
  metrics["epochs"] = c.epochs;
  metrics["final_loss"] = out.losses.empty() ? 0.0 : out.losses.back();
  const std::size_t tail = std::min<std::size_t>(out.losses.size(), 100);
  double tail_mean = 0;
  for (std::size_t i = out.losses.size() - tail; i < out.losses.size(); ++i) tail_mean += out.losses[i] / static_cast<double>(tail);
  metrics["mean_loss_last_100"] = tail_mean;
  metrics["train_ms"] = train_ms;
  if (!out.eval.empty()) {
    metrics["eval_envs"] = out.eval.size();
    metrics["eval_refine"] = c.eval_refine;
    metrics["mse"] = mean_mse(out.eval);
    double roll = 0, ref = 0;
    for (const auto& r : out.eval) roll += r.rollout_ms, ref += r.reference_ms;
    metrics["rollout_ms"] = roll / static_cast<double>(out.eval.size());
    metrics["reference_ms"] = ref / static_cast<double>(out.eval.size());
  }
  for (const auto& [k, v] : metrics.items())
    if (v.is_number_float() && !std::isfinite(v.get<double>())) throw TrainingDiverged("manifest metric " + k + " is not finite");
  m["metrics"] = metrics;
  out.manifest = out.out_dir / "manifest.json";
  write_file(out.manifest, m.dump(2) + "\n");
  log << "trained " << c.epochs << " epochs in " << format_ms(train_ms) << " ms, final loss " << format_double(metrics["final_loss"].get<double>());
  if (!out.eval.empty()) log << ", held-out mse " << format_double(mean_mse(out.eval));
  log << "\n";
  return out;
}

// ---- rollout -----------------------------------------------------------------

struct RolloutOptions {
  fs::path checkpoint;
  fs::path env;
  int steps = 100;
  fs::path out;
};

inline std::vector<Field> cmd_rollout(const RolloutOptions& o, std::ostream& log) {
  if (o.steps < 0) throw InvalidArgument("--steps must be non-negative");
  const Checkpoint ck = read_checkpoint(o.checkpoint);
  const EnvironmentFile f = read_environment(o.env);
  check_compatible(ck, f, o.env.string());
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<Field> steps = rollout(ck.params, f.env, o.steps);
  const double ms = elapsed_ms(t0);
  write_snapshots(o.out, steps);
  log << "rollout " << o.steps << " steps on " << f.env.node_count() << " nodes: " << format_ms(ms) << " ms\n";
  return steps;
}

// ---- eval --------------------------------------------------------------------

struct EvalOptions {
  fs::path checkpoint;
  std::string problem;
  fs::path envs;  // directory of environment files, or one file
  int refine = 10;
  int time_refine = 10;
  std::optional<int> steps;        // default: the checkpoint's n_timesteps
  fs::path out = "eval.csv";
  std::optional<fs::path> ref_dir;        // cache root, one subdirectory per environment
  std::optional<fs::path> surrogate_dir;  // precomputed surrogate snapshots per environment
  int jobs = 0;                           // 0: hardware concurrency
};

inline std::vector<fs::path> environment_files(const fs::path& p) {
  if (fs::is_regular_file(p)) return {p};
  if (!fs::is_directory(p)) throw IoError("no such environment file or directory: " + p.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(p))
    if (e.is_regular_file() && e.path().extension() == ".txt") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw IoError("no environment files in " + p.string());
  return out;
}

inline std::string format_eval_csv(const std::vector<EvalRecord>& rows) {
  std::string s = "env_id,mse\n";
  for (const auto& r : rows) s += r.env_id + "," + format_double(r.mse) + "\n";
  s += "ALL," + format_double(mean_mse(rows)) + "\n";
  return s;
}

inline std::vector<EvalRecord> cmd_eval(const EvalOptions& o, std::ostream& log) {
  const ProblemKind kind = require_problem(o.problem);
  if (o.refine < 1 || o.time_refine < 1) throw InvalidArgument("--refine and --time-refine must be at least 1");
  const Checkpoint ck = read_checkpoint(o.checkpoint);
  if (ck.config.spec.kind != kind)
    throw ConsistencyError(o.checkpoint.string() + " was trained on " + ck.config.problem + ", not " + o.problem);
  ProblemSpec spec = ck.config.spec;
  const int n_steps = o.steps.value_or(ck.config.n_timesteps);
  if (n_steps < 1) throw InvalidArgument("--steps must be positive");

  const auto files = environment_files(o.envs);
  std::vector<EnvironmentFile> envs;
  for (const auto& p : files) {
    envs.push_back(read_environment(p));
    check_compatible(ck, envs.back(), p.string());
  }
  ReferenceOptions ropt;
  ropt.refine = o.refine;
  ropt.time_refine = o.time_refine;

  std::vector<EvalRecord> rows(files.size());
  std::vector<std::exception_ptr> errors(files.size());
  auto work = [&](std::size_t i) {
    try {
      const std::string id = files[i].stem().string();
      const fs::path cache = o.ref_dir ? *o.ref_dir / id : fs::path{};
      if (!o.surrogate_dir) {
        rows[i] = evaluate_one(ck.params, spec, envs[i], n_steps, ropt, cache, id);
        return;
      }
      EvalRecord r;
      r.env_id = id;
      const std::vector<Field> sur = read_snapshots(*o.surrogate_dir / id);
      const CachedReference ref = reference_for(spec, envs[i], n_steps, ropt, cache);
      r.reference_ms = ref.solve_ms;
      r.reference_cached = ref.from_cache;
      if (sur.size() != ref.coarse.size())
        throw ConsistencyError(id + ": surrogate has " + std::to_string(sur.size()) + " snapshots, reference has " + std::to_string(ref.coarse.size()));
      for (const Field& u : sur)
        if (u.size() != envs[i].env.node_count()) throw ConsistencyError(id + ": surrogate snapshot node count differs from the environment");
      r.mse = mse_vs_reference(sur, ref.coarse);
      rows[i] = r;
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t jobs = std::min<std::size_t>(files.size(), o.jobs > 0 ? static_cast<std::size_t>(o.jobs) : hw);
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < jobs; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < files.size();) work(i);
    });
  for (std::size_t i; (i = next++) < files.size();) work(i);
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  write_file(o.out, format_eval_csv(rows));
  log << "env_id,surrogate_ms,reference_ms,reference_source\n";
  double roll = 0, ref = 0;
  for (const auto& r : rows) {
    log << r.env_id << "," << format_ms(r.rollout_ms) << "," << format_ms(r.reference_ms) << "," << (r.reference_cached ? "cache" : "solved") << "\n";
    roll += r.rollout_ms;
    ref += r.reference_ms;
  }
  const double n = static_cast<double>(rows.size());
  log << "mean," << format_ms(roll / n) << "," << format_ms(ref / n) << ",\n";
  log << "mse ALL " << format_double(mean_mse(rows)) << " over " << rows.size() << " environments -> " << o.out.string() << "\n";
  return rows;
}

// ---- export-plotdata ---------------------------------------------------------

struct ExportOptions {
  fs::path rollout_dir;
  fs::path ref_dir;
  fs::path env;  // supplies node positions
  fs::path out;
};

inline std::string format_plotdata(const Mesh& mesh, const std::vector<Field>& pred, const std::vector<Field>& ref) {
  std::string s = mesh.dim() == 1 ? "t,node,x,u_pred,u_ref,sq_err\n" : "t,node,x,y,u_pred,u_ref,sq_err\n";
  for (std::size_t t = 0; t < pred.size(); ++t)
    for (Index v = 0; v < mesh.vertex_count(); ++v) {
      const double d = pred[t][v] - ref[t][v];
      s += std::to_string(t) + "," + std::to_string(v);
      for (int c = 0; c < std::min(mesh.dim(), 2); ++c) s += "," + format_double(mesh.position(v)[static_cast<std::size_t>(c)]);
      s += "," + format_double(pred[t][v]) + "," + format_double(ref[t][v]) + "," + format_double(d * d) + "\n";
    }
  return s;
}

inline std::size_t cmd_export_plotdata(const ExportOptions& o, std::ostream& log) {
  const EnvironmentFile f = read_environment(o.env);
  const std::vector<Field> pred = read_snapshots(o.rollout_dir), ref = read_snapshots(o.ref_dir);
  if (pred.size() != ref.size())
    throw ConsistencyError("rollout has " + std::to_string(pred.size()) + " snapshots, reference has " + std::to_string(ref.size()));
  for (std::size_t t = 0; t < pred.size(); ++t)
    if (pred[t].size() != f.env.node_count() || ref[t].size() != f.env.node_count())
      throw ConsistencyError("snapshot " + std::to_string(t) + " does not have " + std::to_string(f.env.node_count()) + " values");
  write_file(o.out, format_plotdata(*f.env.mesh, pred, ref));
  const std::size_t rows = pred.size() * static_cast<std::size_t>(f.env.node_count());
  log << "wrote " << rows << " rows to " << o.out.string() << "\n";
  return rows;
}

}  // namespace meshlearn::cli
