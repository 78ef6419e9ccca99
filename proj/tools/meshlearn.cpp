#include <CLI11.hpp>
#include <csignal>
#ifdef __GLIBC__
#include <malloc.h>
#endif
#include <iostream>

#include "meshlearn/commands.hpp"
#include "meshlearn/http_server.hpp"

using namespace meshlearn;
using namespace meshlearn::cli;

namespace {

httplib::Server* g_server = nullptr;

void stop_server(int) {
  if (g_server) g_server->stop();
}

struct ServeOptions {
  fs::path checkpoint;
  int port = 8080;
  std::string host = "127.0.0.1";
  double mesh_dx = 0.05;
  long ttl_seconds = 600;
};

int run_serve(const ServeOptions& o) {
  ServiceOptions so;
  so.mesh_dx = o.mesh_dx;
  so.ttl = std::chrono::seconds(o.ttl_seconds);
  InferenceService service(read_checkpoint(o.checkpoint), so);
  httplib::Server server;
  bind_routes(server, service);
  g_server = &server;
  std::signal(SIGINT, stop_server);
  std::signal(SIGTERM, stop_server);
  if (!server.bind_to_port(o.host, o.port)) throw IoError("cannot listen on " + o.host + ":" + std::to_string(o.port));
  std::cout << "serving " << o.checkpoint.string() << " on http://" << o.host << ":" << o.port << " (" << service.mesh()->vertex_count()
            << " nodes)" << std::endl;
  server.listen_after_bind();
  g_server = nullptr;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // keep large tape buffers on the heap instead of mmap/munmap per step
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Physics-constrained graph network PDE time stepping on meshes"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  GenEnvOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-env", "Write environment files for a problem");
  gen_cmd->add_option("--problem", gen.problem, "heat1d, heat1d_small_kappa, eikonal1d, burgers1d or heat2d")->required();
  gen_cmd->add_option("--seed", gen.seed, "Base seed");
  gen_cmd->add_option("--count", gen.count, "Number of environments");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--dx", gen.dx, "Mesh spacing");

  TrainOptions tr;
  std::string train_out;
  auto* train_cmd = app.add_subcommand("train", "Train a network from a config file");
  train_cmd->add_option("--config", tr.config, "Key = value config file")->required();
  train_cmd->add_option("--out-dir", train_out, "Override the config's out_dir");

  RolloutOptions ro;
  auto* roll_cmd = app.add_subcommand("rollout", "Roll a checkpoint forward on one environment");
  roll_cmd->add_option("--checkpoint", ro.checkpoint, "Trained checkpoint")->required();
  roll_cmd->add_option("--env", ro.env, "Environment file")->required();
  roll_cmd->add_option("--steps", ro.steps, "Steps to take (default: the checkpoint's)");
  roll_cmd->add_option("--out", ro.out, "Snapshot directory")->required();

  EvalOptions ev;
  int eval_steps = -1;
  std::string ref_dir, sur_dir;
  auto* eval_cmd = app.add_subcommand("eval", "Rollout MSE against the refined reference solver");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Trained checkpoint")->required();
  eval_cmd->add_option("--problem", ev.problem, "Problem the checkpoint was trained on")->required();
  eval_cmd->add_option("--envs", ev.envs, "Environment file or directory")->required();
  eval_cmd->add_option("--refine", ev.refine, "Reference refinement per dimension");
  eval_cmd->add_option("--time-refine", ev.time_refine, "Reference steps per surrogate step");
  eval_cmd->add_option("--steps", eval_steps, "Rollout length (default: the checkpoint's)");
  eval_cmd->add_option("--out", ev.out, "CSV output");
  eval_cmd->add_option("--ref-dir", ref_dir, "Reference cache root");
  eval_cmd->add_option("--surrogate-dir", sur_dir, "Use these snapshots instead of a network rollout");
  eval_cmd->add_option("--jobs", ev.jobs, "Parallel reference solves (0: all cores)");

  ExportOptions ex;
  auto* export_cmd = app.add_subcommand("export-plotdata", "Per-vertex squared error CSV");
  export_cmd->add_option("--rollout-dir", ex.rollout_dir, "Surrogate snapshots")->required();
  export_cmd->add_option("--ref-dir", ex.ref_dir, "Reference snapshots on the same mesh")->required();
  export_cmd->add_option("--env", ex.env, "Environment file with the node positions")->required();
  export_cmd->add_option("--out", ex.out, "CSV output")->required();

  ServeOptions so;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP inference endpoint for a Heat2D checkpoint");
  serve_cmd->add_option("--checkpoint", so.checkpoint, "Heat2D checkpoint")->required();
  serve_cmd->add_option("--port", so.port, "Listen port");
  serve_cmd->add_option("--host", so.host, "Listen address");
  serve_cmd->add_option("--mesh-dx", so.mesh_dx, "Session mesh spacing");
  serve_cmd->add_option("--ttl", so.ttl_seconds, "Idle session lifetime in seconds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen_cmd) cmd_gen_env(gen, std::cout);
    if (*train_cmd) {
      if (!train_out.empty()) tr.out_dir = train_out;
      cmd_train(tr, std::cout);
    }
    if (*roll_cmd) cmd_rollout(ro, std::cout);
    if (*eval_cmd) {
      if (eval_steps >= 0) ev.steps = eval_steps;
      if (!ref_dir.empty()) ev.ref_dir = ref_dir;
      if (!sur_dir.empty()) ev.surrogate_dir = sur_dir;
      cmd_eval(ev, std::cout);
    }
    if (*export_cmd) cmd_export_plotdata(ex, std::cout);
    if (*serve_cmd) return run_serve(so);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kOk;
}
