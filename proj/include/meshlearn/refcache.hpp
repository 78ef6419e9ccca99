#pragma once

#include <chrono>
#include <json.hpp>

#include "meshlearn/io.hpp"
#include "meshlearn/refsolver.hpp"

namespace meshlearn {

/// Everything a cached reference trajectory depends on.
struct ReferenceKey {
  std::string problem;
  std::optional<std::uint64_t> seed;
  int refine = 10;
  int time_refine = 10;
  double dt = 0.01;
  int n_steps = 100;
  std::string laplacian;
  std::string env_hash;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["problem"] = problem;
    j["seed"] = seed ? nlohmann::ordered_json(*seed) : nlohmann::ordered_json(nullptr);
    j["refine"] = refine;
    j["time_refine"] = time_refine;
    j["dt"] = dt;
    j["n_steps"] = n_steps;
    j["laplacian"] = laplacian;
    j["env_hash"] = env_hash;
    return j;
  }
};

inline ReferenceKey reference_key(const ProblemSpec& spec, const EnvironmentFile& f, int n_steps, const ReferenceOptions& opt) {
  ReferenceKey k;
  k.problem = f.problem;
  k.seed = f.seed;
  k.refine = opt.refine;
  k.time_refine = opt.time_refine;
  k.dt = spec.dt;
  k.n_steps = n_steps;
  k.laplacian = detail::resolved_laplacian(spec.kind, opt) == ReferenceLaplacian::Stiffness ? "stiffness" : "composed";
  if (spec.kind == ProblemKind::Heat1D) k.laplacian += opt.heat1d_boundary == Heat1dBoundary::Dirichlet ? "+dirichlet" : "+free";
  k.env_hash = environment_hash(f);
  return k;
}

struct StoredReference {
  std::vector<Field> coarse;
  double solve_ms = 0;  // wall clock of the original solve
};

/// Coarse reference snapshots from `dir` if its manifest matches `key`.
inline std::optional<StoredReference> load_cached_reference(const fs::path& dir, const ReferenceKey& key) {
  const fs::path manifest = dir / "reference.json";
  if (!fs::exists(manifest)) return std::nullopt;
  nlohmann::ordered_json stored;
  try {
    stored = nlohmann::ordered_json::parse(read_file(manifest));
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
  if (!stored.is_object() || !stored.contains("key") || stored["key"] != key.to_json()) return std::nullopt;
  StoredReference out;
  out.coarse = read_snapshots(dir);
  if (static_cast<int>(out.coarse.size()) != key.n_steps + 1) return std::nullopt;
  if (stored.contains("solve_ms") && stored["solve_ms"].is_number()) out.solve_ms = stored["solve_ms"].get<double>();
  return out;
}

/// Snapshots first, manifest last: an interrupted write leaves no manifest
/// and is recomputed.
inline void store_reference(const fs::path& dir, const ReferenceKey& key, const StoredReference& ref) {
  std::error_code ec;
  fs::remove(dir / "reference.json", ec);
  write_snapshots(dir, ref.coarse);
  nlohmann::ordered_json j;
  j["key"] = key.to_json();
  j["solve_ms"] = ref.solve_ms;
  write_file(dir / "reference.json", j.dump(2) + "\n");
}

/// Cached reference solve. `cache_dir` empty disables the cache.
struct CachedReference {
  std::vector<Field> coarse;
  bool from_cache = false;
  double solve_ms = 0;  // recorded time when loaded from the cache
};

inline CachedReference reference_for(const ProblemSpec& spec, const EnvironmentFile& f, int n_steps, const ReferenceOptions& opt,
                                     const fs::path& cache_dir) {
  const ReferenceKey key = reference_key(spec, f, n_steps, opt);
  CachedReference out;
  if (!cache_dir.empty()) {
    if (auto hit = load_cached_reference(cache_dir, key)) {
      out.coarse = std::move(hit->coarse);
      out.solve_ms = hit->solve_ms;
      out.from_cache = true;
      return out;
    }
  }
  const auto t0 = std::chrono::steady_clock::now();
  out.coarse = solve_reference(spec, f.env, n_steps, opt).coarse;
  out.solve_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  if (!cache_dir.empty()) store_reference(cache_dir, key, {out.coarse, out.solve_ms});
  return out;
}

}  // namespace meshlearn
