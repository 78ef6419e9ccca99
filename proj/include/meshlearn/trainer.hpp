#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "meshlearn/adam.hpp"
#include "meshlearn/config.hpp"
#include "meshlearn/gnn.hpp"
#include "meshlearn/residuals.hpp"

namespace meshlearn {

struct TrainerConfig {
  std::string problem = "heat1d";
  ProblemSpec spec = problem_preset("heat1d");
  double dx = 0.05;
  int n_timesteps = 100;
  int n_envs = 0;  // 0: batch_size copies for fixed-IC problems, 500 for heat2d
  int batch_size = 0;  // 0: 1 for fixed-IC problems, 20 for heat2d
  long epochs = 1000;
  AdamOptions adam;
  // log-linear decay from adam.learning_rate at the first epoch to this at the last
  std::optional<double> learning_rate_final;
  std::uint64_t seed = 0;
  GNConfig network;
  long checkpoint_every = 0;  // 0: only the final checkpoint
  long log_every = 0;
  std::string out_dir = "run";
  // held-out evaluation written to the run manifest
  int eval_envs = 1;
  std::optional<std::uint64_t> eval_seed;  // unset: seed + 1
  int eval_refine = 10;

  std::uint64_t held_out_seed() const { return eval_seed.value_or(seed + 1); }

  bool fixed_initial_condition() const { return spec.kind != ProblemKind::Heat2D; }

  /// Fills the defaults that depend on the problem and checks ranges.
  void finalize() {
    spec.validate();
    network.dim = spec.dim();
    network.validate();
    if (batch_size == 0) batch_size = fixed_initial_condition() ? 1 : 20;
    if (n_envs == 0) n_envs = fixed_initial_condition() ? batch_size : 500;
    if (!(dx > 0)) throw InvalidArgument("dx must be positive");
    if (n_timesteps < 1) throw InvalidArgument("n_timesteps must be at least 1");
    if (batch_size < 1) throw InvalidArgument("batch_size must be positive");
    if (n_envs < batch_size) throw InvalidArgument("batch_size must not exceed n_envs");
    if (epochs < 0) throw InvalidArgument("epochs must be non-negative");
    if (checkpoint_every < 0 || log_every < 0) throw InvalidArgument("intervals must be non-negative");
    if (learning_rate_final && !(*learning_rate_final > 0)) throw InvalidArgument("learning_rate_final must be positive");
    if (eval_envs < 0) throw InvalidArgument("eval_envs must be non-negative");
    if (eval_refine < 1) throw InvalidArgument("eval_refine must be at least 1");
  }
};

inline constexpr const char* kTrainerKeys[] = {"problem",       "dx",         "dt",        "n_timesteps",      "n_envs",
                                               "batch_size",    "epochs",     "learning_rate", "seed",         "alpha",
                                               "beta",          "processor_rounds", "checkpoint_every", "out_dir", "latent",
                                               "mlp_layers",    "absolute_position", "coefficient", "log_every", "steady_state",
                                               "eval_envs",     "eval_seed",  "eval_refine", "learning_rate_final"};

inline TrainerConfig trainer_config_from(const KeyValues& kv) {
  for (const auto& [key, value] : kv.entries()) {
    bool known = false;
    for (const char* k : kTrainerKeys) known = known || key == k;
    if (!known) throw InvalidArgument("unknown config key '" + key + "'");
  }
  TrainerConfig c;
  c.problem = kv.get_string("problem", "heat1d");
  c.spec = problem_preset(c.problem);
  c.spec.dt = kv.get_double("dt", c.spec.dt);
  c.spec.coefficient = kv.get_double("coefficient", c.spec.coefficient);
  c.spec.weights.alpha = kv.get_double("alpha", c.spec.weights.alpha);
  c.spec.weights.beta = kv.get_double("beta", c.spec.weights.beta);
  c.spec.steady_state = kv.get_bool("steady_state", false);
  c.dx = kv.get_double("dx", c.dx);
  c.n_timesteps = static_cast<int>(kv.get_int("n_timesteps", c.n_timesteps));
  c.n_envs = static_cast<int>(kv.get_int("n_envs", c.n_envs));
  c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
  c.epochs = kv.get_int("epochs", c.epochs);
  c.adam.learning_rate = kv.get_double("learning_rate", c.adam.learning_rate);
  if (kv.has("learning_rate_final")) c.learning_rate_final = kv.get_double("learning_rate_final", 0);
  const long long seed = kv.get_int("seed", 0);
  if (seed < 0) throw InvalidArgument("seed must be non-negative");
  c.seed = static_cast<std::uint64_t>(seed);
  c.network.processor_rounds = static_cast<int>(kv.get_int("processor_rounds", c.network.processor_rounds));
  c.network.latent = static_cast<int>(kv.get_int("latent", c.network.latent));
  c.network.mlp_layers = static_cast<int>(kv.get_int("mlp_layers", c.network.mlp_layers));
  c.network.absolute_position = kv.get_bool("absolute_position", c.network.absolute_position);
  c.checkpoint_every = kv.get_int("checkpoint_every", 0);
  c.log_every = kv.get_int("log_every", 0);
  c.out_dir = kv.get_string("out_dir", c.out_dir);
  c.eval_envs = static_cast<int>(kv.get_int("eval_envs", c.eval_envs));
  if (kv.has("eval_seed")) {
    const long long es = kv.get_int("eval_seed", 0);
    if (es < 0) throw InvalidArgument("eval_seed must be non-negative");
    c.eval_seed = static_cast<std::uint64_t>(es);
  }
  c.eval_refine = static_cast<int>(kv.get_int("eval_refine", c.eval_refine));
  c.finalize();
  return c;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Round-trippable snapshot of a finalized config.
inline KeyValues to_key_values(const TrainerConfig& c) {
  KeyValues kv;
  kv.set("problem", c.problem);
  kv.set("dx", format_double(c.dx));
  kv.set("dt", format_double(c.spec.dt));
  kv.set("coefficient", format_double(c.spec.coefficient));
  kv.set("alpha", format_double(c.spec.weights.alpha));
  kv.set("beta", format_double(c.spec.weights.beta));
  kv.set("steady_state", c.spec.steady_state ? "true" : "false");
  kv.set("n_timesteps", std::to_string(c.n_timesteps));
  kv.set("n_envs", std::to_string(c.n_envs));
  kv.set("batch_size", std::to_string(c.batch_size));
  kv.set("epochs", std::to_string(c.epochs));
  kv.set("learning_rate", format_double(c.adam.learning_rate));
  if (c.learning_rate_final) kv.set("learning_rate_final", format_double(*c.learning_rate_final));
  kv.set("seed", std::to_string(c.seed));
  kv.set("processor_rounds", std::to_string(c.network.processor_rounds));
  kv.set("latent", std::to_string(c.network.latent));
  kv.set("mlp_layers", std::to_string(c.network.mlp_layers));
  kv.set("absolute_position", c.network.absolute_position ? "true" : "false");
  kv.set("checkpoint_every", std::to_string(c.checkpoint_every));
  kv.set("log_every", std::to_string(c.log_every));
  kv.set("out_dir", c.out_dir);
  kv.set("eval_envs", std::to_string(c.eval_envs));
  kv.set("eval_seed", std::to_string(c.held_out_seed()));
  kv.set("eval_refine", std::to_string(c.eval_refine));
  return kv;
}

/// Seed of environment k in a family rooted at `base`.
inline std::uint64_t env_seed(std::uint64_t base, std::uint64_t k) { return splitmix64(splitmix64(base) + k); }

/// Environments the trainer sees: copies of the fixed initial condition, or
/// randomized heat2d environments on one shared mesh.
inline std::vector<Environment> training_environments(const TrainerConfig& c) {
  auto mesh = problem_mesh(c.spec.kind, c.dx);
  std::vector<Environment> envs;
  envs.reserve(static_cast<std::size_t>(c.n_envs));
  if (c.fixed_initial_condition()) {
    const Environment env = interval_problem_environment(c.spec.kind, mesh);
    envs.assign(static_cast<std::size_t>(c.n_envs), env);
  } else {
    for (int k = 0; k < c.n_envs; ++k) envs.push_back(sample_env(env_seed(c.seed, static_cast<std::uint64_t>(k)), mesh));
  }
  return envs;
}

/// N_k x N_t grid of fields. Slot (k, t) holds the latest prediction for
/// environment k at step t; slots at t = 0 hold u0 and are read-only.
class ReplayDataset {
 public:
  ReplayDataset(std::vector<Environment> envs, int n_timesteps) : envs_(std::move(envs)), n_t_(n_timesteps) {
    if (envs_.empty()) throw InvalidArgument("replay dataset needs at least one environment");
    if (n_timesteps < 1) throw InvalidArgument("n_timesteps must be at least 1");
    slots_.reserve(envs_.size() * static_cast<std::size_t>(n_t_));
    for (const Environment& env : envs_)
      for (int t = 0; t < n_t_; ++t) slots_.push_back(env.u0);
    std::map<const Mesh*, std::shared_ptr<const GradientOperator>> ops;
    for (const Environment& env : envs_) {
      auto& op = ops[env.mesh.get()];
      if (!op) op = std::make_shared<const GradientOperator>(env.mesh);
      ops_.push_back(op);
    }
  }

  int env_count() const noexcept { return static_cast<int>(envs_.size()); }
  int timestep_count() const noexcept { return n_t_; }
  std::size_t slot_count() const noexcept { return slots_.size(); }
  const Environment& env(int k) const { return envs_.at(static_cast<std::size_t>(k)); }
  const GradientOperator& op(int k) const { return *ops_.at(static_cast<std::size_t>(k)); }

  const Field& at(int k, int t) const { return slots_.at(index(k, t)); }

  void write(int k, int t, Field u) {
    if (t == 0) throw InvalidArgument("slot t = 0 holds the initial condition and is read-only");
    Field& slot = slots_.at(index(k, t));
    if (u.size() != slot.size()) throw InvalidArgument("field length does not match the environment");
    slot = std::move(u);
  }

 private:
  std::size_t index(int k, int t) const {
    if (k < 0 || k >= env_count() || t < 0 || t >= n_t_)
      throw InvalidArgument("slot (" + std::to_string(k) + ", " + std::to_string(t) + ") out of range");
    return static_cast<std::size_t>(k) * static_cast<std::size_t>(n_t_) + static_cast<std::size_t>(t);
  }

  std::vector<Environment> envs_;
  int n_t_;
  std::vector<Field> slots_;
  std::vector<std::shared_ptr<const GradientOperator>> ops_;
};

struct EpochResult {
  double loss = 0;  // mean over the batch
  int t = 0;
  std::vector<int> batch;
};

/// Pointers to every parameter tensor, in visiting order.
inline std::vector<Matrix*> parameter_pointers(GNParams& params) {
  std::vector<Matrix*> out;
  params.for_each([&](const std::string&, Matrix& m) { out.push_back(&m); });
  return out;
}

/// One step of the replay loop: draw t and a batch, predict, accumulate the
/// physics loss, write predictions to t + 1, take one Adam step on the
/// batch-mean gradient. Predictions from step N_t - 1 have no slot and are
/// dropped.
inline EpochResult train_epoch(GNParams& params, Adam& adam, ReplayDataset& data, const TrainerConfig& config, Rng& rng) {
  EpochResult res;
  res.t = static_cast<int>(rng.below(static_cast<std::uint64_t>(data.timestep_count())));
  std::vector<int> pool(static_cast<std::size_t>(data.env_count()));
  for (int k = 0; k < data.env_count(); ++k) pool[static_cast<std::size_t>(k)] = k;
  for (int b = 0; b < config.batch_size; ++b) {
    const auto j = static_cast<std::size_t>(b) + static_cast<std::size_t>(rng.below(pool.size() - static_cast<std::size_t>(b)));
    std::swap(pool[static_cast<std::size_t>(b)], pool[j]);
    res.batch.push_back(pool[static_cast<std::size_t>(b)]);
  }

  std::vector<Matrix> grads;
  params.for_each([&](const std::string&, const Matrix& m) { grads.push_back(Matrix::Zero(m.rows(), m.cols())); });
  const double inv_b = 1.0 / static_cast<double>(config.batch_size);
  std::vector<Field> predictions;
  for (int k : res.batch) {
    const Environment& env = data.env(k);
    const Field& u_t = data.at(k, res.t);
    const GraphInput g = make_graph_input(env, u_t, params.config.absolute_position);
    ad::Tape tape;
    const auto bound = bind_params(tape, params, true);
    ad::Var u_next = ad::add(tape.constant(detail::as_column(u_t)), forward(params, bound, g));
    ad::Var l = loss(config.spec, env, data.op(k), u_t, u_next);
    const double lv = l.value()(0, 0);
    if (!std::isfinite(lv)) {
      const Field r = pde_residual(config.spec, data.op(k), u_t, Field(u_next.value().col(0)));
      Index worst = 0;
      double worst_abs = -1;
      for (Index i = 0; i < r.size(); ++i) {
        const double a = std::isfinite(r[i]) ? std::abs(r[i]) : INFINITY;
        if (a > worst_abs) worst_abs = a, worst = i;
      }
      throw TrainingDiverged("non-finite loss in environment " + std::to_string(k) + " at timestep " + std::to_string(res.t) +
                             "; max |residual| " + format_double(worst_abs) + " at node " + std::to_string(worst));
    }
    tape.backward(l);
    for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += inv_b * tape.grad(bound[i]);
    res.loss += inv_b * lv;
    predictions.push_back(u_next.value().col(0));
  }
  if (res.t + 1 < data.timestep_count())
    for (std::size_t b = 0; b < res.batch.size(); ++b) data.write(res.batch[b], res.t + 1, std::move(predictions[b]));
  adam.step(parameter_pointers(params), grads);
  return res;
}

struct TrainCallbacks {
  std::function<void(long epoch, double loss)> on_epoch;
  std::function<void(long epoch, const GNParams&)> on_checkpoint;
};

struct TrainResult {
  GNParams params;
  std::vector<double> losses;
};

/// Learning rate used for `epoch` (1-based).
inline double learning_rate_at(const TrainerConfig& c, long epoch) {
  const double lr0 = c.adam.learning_rate;
  if (!c.learning_rate_final || c.epochs <= 1) return lr0;
  const double f = static_cast<double>(epoch - 1) / static_cast<double>(c.epochs - 1);
  return lr0 * std::pow(*c.learning_rate_final / lr0, f);
}

/// Fresh run: init params from the seed, fill the dataset with u0, iterate.
inline TrainResult train(const TrainerConfig& config, const TrainCallbacks& cb = {}) {
  TrainerConfig c = config;
  c.finalize();
  TrainResult out{init_params(c.network, c.seed), {}};
  ReplayDataset data(training_environments(c), c.n_timesteps);
  Adam adam(c.adam);
  Rng rng(splitmix64(c.seed ^ 0x7261696eULL));
  out.losses.reserve(static_cast<std::size_t>(c.epochs));
  for (long epoch = 1; epoch <= c.epochs; ++epoch) {
    adam.set_learning_rate(learning_rate_at(c, epoch));
    const EpochResult r = train_epoch(out.params, adam, data, c, rng);
    out.losses.push_back(r.loss);
    if (cb.on_epoch) cb.on_epoch(epoch, r.loss);
    if (cb.on_checkpoint && c.checkpoint_every > 0 && epoch % c.checkpoint_every == 0 && epoch != c.epochs) cb.on_checkpoint(epoch, out.params);
  }
  if (cb.on_checkpoint) cb.on_checkpoint(c.epochs, out.params);
  return out;
}

/// [u0, u1, ..., u_n] by repeated network steps.
inline std::vector<Field> rollout(const GNParams& params, const Environment& env, int n_steps) {
  if (n_steps < 0) throw InvalidArgument("n_steps must be non-negative");
  std::vector<Field> out;
  out.reserve(static_cast<std::size_t>(n_steps) + 1);
  out.push_back(env.u0);
  Stepper step(params, env);
  for (int s = 0; s < n_steps; ++s) out.push_back(step(out.back()));
  return out;
}

}  // namespace meshlearn
