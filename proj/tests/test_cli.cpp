#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <sstream>

#include "meshlearn/commands.hpp"

using namespace meshlearn;
using namespace meshlearn::cli;

namespace {

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() / ("meshlearn_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

struct ToolRun {
  int code;
  std::string output;
};

ToolRun run_tool(const std::string& args) {
  const fs::path log = fs::temp_directory_path() / ("meshlearn_cli_out_" + std::to_string(::getpid()));
  const std::string cmd = std::string(MESHLEARN_TOOL) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  ToolRun r{WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(log)};
  fs::remove(log);
  return r;
}

// A short, cheap 1D training run; the checkpoint is what the other tests need.
fs::path train_tiny(const TempDir& dir, const std::string& problem = "heat1d") {
  write_file(dir / "cfg.txt", "problem = " + problem + "\nepochs = 20\nn_timesteps = 10\nseed = 3\neval_refine = 1\n");
  std::ostringstream log;
  return cmd_train({dir / "cfg.txt", dir.path() / "run"}, log).checkpoint;
}

std::size_t count_files(const fs::path& dir) {
  return static_cast<std::size_t>(std::distance(fs::directory_iterator(dir), fs::directory_iterator{}));
}

}  // namespace

TEST(Cli, ExitCodeMapping) {
  EXPECT_EQ(exit_code_for(InvalidArgument("x")), kUsage);
  EXPECT_EQ(exit_code_for(IoError("x")), kIo);
  EXPECT_EQ(exit_code_for(fs::filesystem_error("x", std::make_error_code(std::errc::no_such_file_or_directory))), kIo);
  EXPECT_EQ(exit_code_for(ConsistencyError("x")), kConsistency);
  EXPECT_EQ(exit_code_for(std::runtime_error("x")), kFailure);
}

TEST(Cli, GenEnvZeroCountWritesNothing) {
  TempDir dir;
  std::ostringstream log;
  EXPECT_TRUE(cmd_gen_env({"heat2d", 1, 0, dir / "none", 0.05}, log).empty());
  EXPECT_FALSE(fs::exists(dir / "none"));
  EXPECT_EQ(run_tool("gen-env --problem heat2d --count 0 --out " + (dir / "none").string()).code, 0);
  EXPECT_FALSE(fs::exists(dir / "none"));
}

TEST(Cli, GenEnvIsDeterministic) {
  TempDir dir;
  std::ostringstream log;
  const auto a = cmd_gen_env({"heat2d", 42, 3, dir / "a", 0.05}, log);
  const auto b = cmd_gen_env({"heat2d", 42, 3, dir / "b", 0.05}, log);
  const auto c = cmd_gen_env({"heat2d", 43, 3, dir / "c", 0.05}, log);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(read_file(a[k]), read_file(b[k]));
    EXPECT_NE(read_file(a[k]), read_file(c[k]));
    const EnvironmentFile f = read_environment(a[k]);
    EXPECT_EQ(f.problem, "heat2d");
    EXPECT_EQ(f.env.node_count(), 1681);
  }
  EXPECT_NE(read_file(a[0]), read_file(a[1]));
}

TEST(Cli, GenEnvFiveHundredHeat2dFiles) {
  TempDir dir;
  const ToolRun r = run_tool("gen-env --problem heat2d --seed 1 --count 500 --out " + (dir / "envs").string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(count_files(dir / "envs"), 500u);
  EXPECT_TRUE(fs::exists(dir / "envs" / "env_00499.txt"));
  EXPECT_NO_THROW(read_environment(dir / "envs" / "env_00499.txt"));
}

TEST(Cli, UsageErrors) {
  TempDir dir;
  EXPECT_EQ(run_tool("gen-env --problem wave --out " + dir.path().string()).code, kUsage);
  EXPECT_EQ(run_tool("gen-env --out " + dir.path().string()).code, kUsage);
  EXPECT_EQ(run_tool("bogus").code, kUsage);
  EXPECT_EQ(run_tool("").code, kUsage);
  EXPECT_EQ(run_tool("--help").code, 0);
  std::ostringstream log;
  EXPECT_THROW(cmd_gen_env({"wave", 0, 1, dir / "x", 0.05}, log), InvalidArgument);
}

TEST(Cli, TrainWritesOneManifestWithFiniteMetrics) {
  TempDir dir;
  write_file(dir / "cfg.txt", "problem = heat1d\nepochs = 30\nn_timesteps = 10\nseed = 3\neval_refine = 1\ncheckpoint_every = 10\n");
  const ToolRun r = run_tool("train --config " + (dir / "cfg.txt").string() + " --out-dir " + (dir / "run").string());
  ASSERT_EQ(r.code, 0) << r.output;
  std::size_t manifests = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir.path())) manifests += e.path().filename() == "manifest.json";
  EXPECT_EQ(manifests, 1u);
  const auto m = nlohmann::json::parse(read_file(dir / "run" / "manifest.json"));
  EXPECT_EQ(m["config"]["problem"], "heat1d");
  EXPECT_EQ(m["config"]["epochs"], "30");
  EXPECT_EQ(m["seed"], 3);
  for (const auto& [k, v] : m["metrics"].items())
    if (v.is_number()) {
      EXPECT_TRUE(std::isfinite(v.get<double>())) << k;
    }
  EXPECT_TRUE(m["metrics"].contains("mse"));
  EXPECT_TRUE(fs::exists(dir / "run" / "checkpoint.bin"));
  EXPECT_TRUE(fs::exists(dir / "run" / "checkpoint_epoch_00000010.bin"));
  EXPECT_TRUE(fs::exists(dir / "run" / "checkpoint_epoch_00000020.bin"));
  EXPECT_EQ(read_file(dir / "run" / "loss.csv").find("epoch,loss\n"), 0u);
  EXPECT_EQ(read_checkpoint(dir / "run" / "checkpoint.bin").epoch, 30);
}

TEST(Cli, TrainRejectsBadConfig) {
  TempDir dir;
  write_file(dir / "cfg.txt", "problem = heat1d\nepochz = 30\n");
  EXPECT_EQ(run_tool("train --config " + (dir / "cfg.txt").string()).code, kUsage);
  EXPECT_EQ(run_tool("train --config " + (dir / "missing.txt").string()).code, kIo);
}

TEST(Cli, RolloutWritesStepsPlusOneSnapshots) {
  TempDir dir;
  TrainerConfig c;
  c.problem = "heat2d";
  c.spec = problem_preset("heat2d");
  c.finalize();
  write_checkpoint(dir / "h2d.bin", {c, 0, init_params(c.network, 2)});
  std::ostringstream log;
  cmd_gen_env({"heat2d", 7, 1, dir / "envs", 0.05}, log);
  const ToolRun r = run_tool("rollout --checkpoint " + (dir / "h2d.bin").string() + " --env " + (dir / "envs" / "env_00000.txt").string() +
                         " --steps 100 --out " + (dir / "roll").string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("rollout 100 steps on 1681 nodes"), std::string::npos);
  EXPECT_EQ(count_files(dir / "roll"), 101u);
  const auto snaps = read_snapshots(dir / "roll");
  EXPECT_EQ(snaps.front(), read_environment(dir / "envs" / "env_00000.txt").env.u0);

  // a 1D environment on the 2D checkpoint
  cmd_gen_env({"heat1d", 0, 1, dir / "env1d", 0.05}, log);
  const ToolRun mismatch = run_tool("rollout --checkpoint " + (dir / "h2d.bin").string() + " --env " + (dir / "env1d" / "env_00000.txt").string() +
                                " --steps 3 --out " + (dir / "roll1d").string());
  EXPECT_EQ(mismatch.code, kConsistency) << mismatch.output;
}

TEST(Cli, UnreadableCheckpointIsAnIoErrorNamingThePath) {
  TempDir dir;
  std::ostringstream log;
  cmd_gen_env({"heat1d", 0, 1, dir / "envs", 0.05}, log);
  const std::string env = (dir / "envs" / "env_00000.txt").string();
  const ToolRun missing = run_tool("rollout --checkpoint " + (dir / "nope.bin").string() + " --env " + env + " --out " + (dir / "r").string());
  EXPECT_EQ(missing.code, kIo);
  EXPECT_NE(missing.output.find("nope.bin"), std::string::npos);

  const fs::path ck = train_tiny(dir);
  std::string bytes = read_file(ck);
  bytes[bytes.size() / 2] ^= 0x40;
  write_file(dir / "corrupt.bin", bytes);
  const ToolRun corrupt = run_tool("rollout --checkpoint " + (dir / "corrupt.bin").string() + " --env " + env + " --out " + (dir / "r").string());
  EXPECT_EQ(corrupt.code, kIo);
  EXPECT_NE(corrupt.output.find("corrupt.bin"), std::string::npos);
}

TEST(Cli, EvalAgainstItselfIsZero) {
  TempDir dir;
  const fs::path ck = train_tiny(dir);
  std::ostringstream log;
  cmd_gen_env({"heat1d", 0, 2, dir / "envs", 0.05}, log);
  EvalOptions o;
  o.checkpoint = ck;
  o.problem = "heat1d";
  o.envs = dir / "envs";
  o.refine = 2;
  o.time_refine = 2;
  o.out = dir / "eval.csv";
  o.ref_dir = dir / "refs";
  const auto first = cmd_eval(o, log);
  ASSERT_EQ(first.size(), 2u);
  EXPECT_FALSE(first[0].reference_cached);
  EXPECT_GT(first[0].mse, 0.0);
  const std::string csv = read_file(o.out);
  EXPECT_EQ(csv.find("env_id,mse\nenv_00000,"), 0u);
  EXPECT_NE(csv.find("\nALL,"), std::string::npos);

  // the cached reference snapshots as the surrogate
  o.surrogate_dir = dir / "refs";
  const auto self = cmd_eval(o, log);
  for (const auto& r : self) {
    EXPECT_TRUE(r.reference_cached);
    EXPECT_EQ(r.mse, 0.0);
  }
  EXPECT_NE(read_file(o.out).find("ALL,0\n"), std::string::npos);
}

TEST(Cli, EvalProblemMismatchIsAConsistencyError) {
  TempDir dir;
  const fs::path ck = train_tiny(dir);
  std::ostringstream log;
  cmd_gen_env({"heat1d", 0, 1, dir / "envs", 0.05}, log);
  const ToolRun r = run_tool("eval --checkpoint " + ck.string() + " --problem burgers1d --envs " + (dir / "envs").string() + " --out " +
                         (dir / "e.csv").string());
  EXPECT_EQ(r.code, kConsistency) << r.output;
  cmd_gen_env({"eikonal1d", 0, 1, dir / "eik", 0.05}, log);
  EvalOptions o;
  o.checkpoint = ck;
  o.problem = "heat1d";
  o.envs = dir / "eik";
  o.out = dir / "e.csv";
  EXPECT_THROW(cmd_eval(o, log), ConsistencyError);
}

TEST(Cli, ExportPlotdata) {
  TempDir dir;
  const fs::path ck = train_tiny(dir);
  std::ostringstream log;
  cmd_gen_env({"heat1d", 0, 1, dir / "envs", 0.05}, log);
  const fs::path env = dir / "envs" / "env_00000.txt";
  cmd_rollout({ck, env, 5, dir / "roll"}, log);
  const ToolRun r = run_tool("export-plotdata --rollout-dir " + (dir / "roll").string() + " --ref-dir " + (dir / "roll").string() + " --env " +
                         env.string() + " --out " + (dir / "plot.csv").string());
  ASSERT_EQ(r.code, 0) << r.output;
  std::istringstream csv(read_file(dir / "plot.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "t,node,x,u_pred,u_ref,sq_err");
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    ++rows;
    EXPECT_EQ(line.substr(line.rfind(',') + 1), "0");
  }
  EXPECT_EQ(rows, 6u * 41u);

  cmd_rollout({ck, env, 4, dir / "short"}, log);
  const ToolRun mismatch = run_tool("export-plotdata --rollout-dir " + (dir / "roll").string() + " --ref-dir " + (dir / "short").string() +
                                " --env " + env.string() + " --out " + (dir / "p2.csv").string());
  EXPECT_EQ(mismatch.code, kConsistency);
  const ToolRun missing = run_tool("export-plotdata --rollout-dir " + (dir / "absent").string() + " --ref-dir " + (dir / "short").string() +
                               " --env " + env.string() + " --out " + (dir / "p3.csv").string());
  EXPECT_EQ(missing.code, kIo);
}

TEST(Cli, ExportPlotdata2dHasBothCoordinates) {
  const auto mesh = std::make_shared<const Mesh>(build_regular_tri_2d({}, 0.5));
  std::vector<Field> a(2, Field::Constant(mesh->vertex_count(), 1.0)), b = a;
  b[1][0] = 3.0;
  const std::string s = format_plotdata(*mesh, a, b);
  EXPECT_EQ(s.substr(0, s.find('\n')), "t,node,x,y,u_pred,u_ref,sq_err");
  EXPECT_NE(s.find("\n1,0,-1,-1,1,3,4\n"), std::string::npos);
}
