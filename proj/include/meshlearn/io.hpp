#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "meshlearn/trainer.hpp"

namespace meshlearn {

namespace fs = std::filesystem;

// ---- plain files -----------------------------------------------------------

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path.string());
  return std::move(ss).str();
}

/// Writes through a sibling temporary and renames, so readers never see a
/// half-written file.
inline void write_file(const fs::path& path, std::string_view content) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write failed: " + path.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace detail {

/// Whitespace tokens of a text file with `#` comments removed, each with
/// its line number for error messages.
class TokenStream {
 public:
  TokenStream(std::string_view text, std::string source) : source_(std::move(source)) {
    std::size_t line = 0;
    while (!text.empty()) {
      const std::size_t nl = text.find('\n');
      std::string_view l = text.substr(0, nl);
      text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
      ++line;
      if (const auto h = l.find('#'); h != std::string_view::npos) l = l.substr(0, h);
      std::size_t i = 0;
      while (i < l.size()) {
        while (i < l.size() && std::isspace(static_cast<unsigned char>(l[i]))) ++i;
        std::size_t j = i;
        while (j < l.size() && !std::isspace(static_cast<unsigned char>(l[j]))) ++j;
        if (j > i) tokens_.push_back({std::string(l.substr(i, j - i)), line});
        i = j;
      }
    }
  }

  bool done() const { return pos_ >= tokens_.size(); }
  const std::string& peek() const {
    if (done()) fail("unexpected end of file");
    return tokens_[pos_].text;
  }
  std::string word() {
    const std::string& w = peek();
    ++pos_;
    return w;
  }
  template <class T>
  T number(const char* what) {
    const std::string w = word();
    T v{};
    const auto [p, ec] = std::from_chars(w.data(), w.data() + w.size(), v);
    if (ec != std::errc{} || p != w.data() + w.size()) fail(std::string("expected ") + what + ", got '" + w + "'", pos_ - 1);
    return v;
  }
  void expect(std::string_view keyword) {
    const std::string w = word();
    if (w != keyword) fail("expected '" + std::string(keyword) + "', got '" + w + "'", pos_ - 1);
  }
  [[noreturn]] void fail(const std::string& msg) const { fail(msg, pos_); }
  /// Error located at the token just consumed.
  [[noreturn]] void fail_previous(const std::string& msg) const { fail(msg, pos_ == 0 ? 0 : pos_ - 1); }
  [[noreturn]] void fail(const std::string& msg, std::size_t at) const {
    const std::size_t line = at < tokens_.size() ? tokens_[at].line : (tokens_.empty() ? 0 : tokens_.back().line);
    throw IoError(source_ + ":" + std::to_string(line) + ": " + msg);
  }

 private:
  struct Token {
    std::string text;
    std::size_t line;
  };
  std::string source_;
  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// ---- environments ------------------------------------------------------------

/// An environment as stored on disk: the problem it belongs to and, for
/// sampled ones, the seed it was drawn from.
struct EnvironmentFile {
  std::string problem;
  std::optional<std::uint64_t> seed;
  Environment env;
};

/// Text layout:
///   dim N_vertices N_elements
///   one vertex per line: coordinates then the integer node type tag
///   one element per line: vertex indices
///   problem <name>
///   seed <n>                       (optional)
///   u0, then one value per line
///   obstacles K, then `cx cy radius` per line
///   sources S, then `amplitude sharpness cx cy` per line
inline std::string format_environment(const EnvironmentFile& f) {
  const Environment& env = f.env;
  const Mesh& m = *env.mesh;
  std::string out = "# meshlearn environment\n";
  out += std::to_string(m.dim()) + " " + std::to_string(m.vertex_count()) + " " + std::to_string(m.element_count()) + "\n";
  for (Index v = 0; v < m.vertex_count(); ++v) {
    for (double c : m.position(v)) out += format_double(c) + " ";
    out += std::to_string(static_cast<int>(env.node_types[static_cast<std::size_t>(v)])) + "\n";
  }
  for (Index e = 0; e < m.element_count(); ++e) {
    const auto el = m.element(e);
    for (std::size_t k = 0; k < el.size(); ++k) out += (k ? " " : "") + std::to_string(el[k]);
    out += "\n";
  }
  out += "problem " + f.problem + "\n";
  if (f.seed) out += "seed " + std::to_string(*f.seed) + "\n";
  out += "u0\n";
  for (Index v = 0; v < env.u0.size(); ++v) out += format_double(env.u0[v]) + "\n";
  out += "obstacles " + std::to_string(env.spec.obstacles.size()) + "\n";
  for (const Obstacle& o : env.spec.obstacles)
    out += format_double(o.center[0]) + " " + format_double(o.center[1]) + " " + format_double(o.radius) + "\n";
  out += "sources " + std::to_string(env.spec.sources.size()) + "\n";
  for (const HeatSource& s : env.spec.sources)
    out += format_double(s.amplitude) + " " + format_double(s.sharpness) + " " + format_double(s.center[0]) + " " + format_double(s.center[1]) + "\n";
  return out;
}

inline EnvironmentFile parse_environment(std::string_view text, const std::string& source = "<environment>") {
  detail::TokenStream ts(text, source);
  const int dim = ts.number<int>("dimension");
  if (dim < 1 || dim > 3) ts.fail_previous("dimension must be 1, 2 or 3");
  const long long nv = ts.number<long long>("vertex count"), ne = ts.number<long long>("element count");
  if (nv < 1 || ne < 0) ts.fail_previous("bad vertex or element count");
  std::vector<double> coords;
  std::vector<NodeType> types;
  for (long long v = 0; v < nv; ++v) {
    for (int d = 0; d < dim; ++d) coords.push_back(ts.number<double>("coordinate"));
    const long tag = ts.number<long>("node type tag");
    if (tag < 0 || tag >= kNodeTypeCount) ts.fail_previous("node type tag out of range: " + std::to_string(tag));
    types.push_back(static_cast<NodeType>(tag));
  }
  std::vector<Index> elements;
  for (long long e = 0; e < ne * (dim + 1); ++e) elements.push_back(ts.number<Index>("vertex index"));

  EnvironmentFile f;
  try {
    f.env.mesh = std::make_shared<const Mesh>(dim, std::move(coords), std::move(elements));
  } catch (const std::exception& e) {
    throw IoError(source + ": invalid mesh: " + e.what());
  }
  f.env.node_types = std::move(types);
  ts.expect("problem");
  f.problem = ts.word();
  if (ts.peek() == "seed") {
    ts.word();
    f.seed = ts.number<std::uint64_t>("seed");
  }
  ts.expect("u0");
  f.env.u0.resize(static_cast<Index>(nv));
  for (Index v = 0; v < nv; ++v) f.env.u0[v] = ts.number<double>("u0 value");
  ts.expect("obstacles");
  const int n_obs = ts.number<int>("obstacle count");
  if (n_obs < 0) ts.fail_previous("negative obstacle count");
  for (int i = 0; i < n_obs; ++i) {
    Obstacle o;
    o.center[0] = ts.number<double>("obstacle x");
    o.center[1] = ts.number<double>("obstacle y");
    o.radius = ts.number<double>("obstacle radius");
    f.env.spec.obstacles.push_back(o);
  }
  ts.expect("sources");
  const int n_src = ts.number<int>("source count");
  if (n_src < 0) ts.fail_previous("negative source count");
  for (int i = 0; i < n_src; ++i) {
    HeatSource s;
    s.amplitude = ts.number<double>("source amplitude");
    s.sharpness = ts.number<double>("source sharpness");
    s.center[0] = ts.number<double>("source x");
    s.center[1] = ts.number<double>("source y");
    f.env.spec.sources.push_back(s);
  }
  if (!ts.done()) ts.fail("trailing content '" + ts.peek() + "'");
  return f;
}

inline void write_environment(const fs::path& path, const EnvironmentFile& f) { write_file(path, format_environment(f)); }
inline EnvironmentFile read_environment(const fs::path& path) { return parse_environment(read_file(path), path.string()); }

/// Content hash of an environment, independent of its file name.
inline std::string environment_hash(const EnvironmentFile& f) { return hex64(fnv1a64(format_environment(f))); }

// ---- fields ------------------------------------------------------------------

inline std::string format_field(const Field& u) {
  std::string out;
  out.reserve(static_cast<std::size_t>(u.size()) * 24);
  for (Index i = 0; i < u.size(); ++i) out += format_double(u[i]) + "\n";
  return out;
}

inline Field parse_field(std::string_view text, const std::string& source = "<field>") {
  detail::TokenStream ts(text, source);
  std::vector<double> values;
  while (!ts.done()) values.push_back(ts.number<double>("value"));
  return Eigen::Map<const Field>(values.data(), static_cast<Index>(values.size()));
}

inline void write_field(const fs::path& path, const Field& u) { write_file(path, format_field(u)); }
inline Field read_field(const fs::path& path) { return parse_field(read_file(path), path.string()); }

inline std::string snapshot_name(std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%05zu.txt", step);
  return buf;
}

/// One file per step, step_00000.txt upwards. Stale step files beyond the
/// new sequence are removed so the directory always holds one trajectory.
inline void write_snapshots(const fs::path& dir, const std::vector<Field>& steps) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
  for (std::size_t s = 0; s < steps.size(); ++s) write_field(dir / snapshot_name(s), steps[s]);
  for (std::size_t s = steps.size();; ++s) {
    const fs::path stale = dir / snapshot_name(s);
    if (!fs::exists(stale)) break;
    fs::remove(stale, ec);
  }
}

/// Reads step_00000.txt, step_00001.txt, ... until the first gap. Other
/// step files past a gap are an error.
inline std::vector<Field> read_snapshots(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::size_t found = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.starts_with("step_") && name.ends_with(".txt")) ++found;
  }
  std::vector<Field> out;
  while (fs::exists(dir / snapshot_name(out.size()))) out.push_back(read_field(dir / snapshot_name(out.size())));
  if (out.size() != found) throw IoError(dir.string() + ": snapshot numbering has a gap after step " + std::to_string(out.size()));
  if (out.empty()) throw IoError(dir.string() + ": no step_*.txt snapshots");
  return out;
}

// ---- checkpoints -------------------------------------------------------------

struct Checkpoint {
  TrainerConfig config;
  long epoch = 0;
  GNParams params;
};

inline constexpr char kCheckpointMagic[8] = {'M', 'L', 'G', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) { bytes_.append(static_cast<const char*>(p), n); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  ByteReader(std::string_view b, std::string source) : b_(b), source_(std::move(source)) {}
  std::string_view raw(std::size_t n) {
    if (n > b_.size() - pos_) fail("truncated");
    auto s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() {
    const auto s = raw(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[static_cast<std::size_t>(i)]);
    return v;
  }
  std::uint64_t u64() {
    const auto s = raw(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[static_cast<std::size_t>(i)]);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    return std::string(raw(n));
  }
  std::size_t pos() const { return pos_; }
  [[noreturn]] void fail(const std::string& msg) const { throw IoError(source_ + ": corrupt checkpoint: " + msg); }

 private:
  std::string_view b_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// magic, version, seed, epoch, problem, dx, dt, n_timesteps, the full
/// training config as key = value text, then named tensors (rank, shape,
/// little-endian doubles), then an FNV-1a checksum of everything before it.
inline std::string serialize_checkpoint(const Checkpoint& c) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u64(c.config.seed);
  w.u64(static_cast<std::uint64_t>(c.epoch));
  w.str(c.config.problem);
  w.f64(c.config.dx);
  w.f64(c.config.spec.dt);
  w.u32(static_cast<std::uint32_t>(c.config.n_timesteps));
  w.str(to_key_values(c.config).to_string());
  w.u32(static_cast<std::uint32_t>(c.params.tensor_count()));
  c.params.for_each([&](const std::string& name, const Matrix& m) {
    w.str(name);
    w.u32(2);
    w.u64(static_cast<std::uint64_t>(m.rows()));
    w.u64(static_cast<std::uint64_t>(m.cols()));
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) w.f64(m(i, j));
  });
  std::string out = w.bytes();
  detail::ByteWriter tail;
  tail.u64(fnv1a64(out));
  return out + tail.bytes();
}

inline Checkpoint deserialize_checkpoint(std::string_view bytes, const std::string& source = "<checkpoint>") {
  detail::ByteReader r(bytes, source);
  if (bytes.size() < sizeof kCheckpointMagic + 8) r.fail("file too short");
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) r.fail("bad magic, not a checkpoint file");
  {
    detail::ByteReader tail(bytes.substr(bytes.size() - 8), source);
    if (tail.u64() != fnv1a64(bytes.substr(0, bytes.size() - 8))) r.fail("checksum mismatch");
  }
  r.raw(sizeof kCheckpointMagic);
  if (const auto v = r.u32(); v != kCheckpointVersion) r.fail("unsupported version " + std::to_string(v));
  Checkpoint c;
  const std::uint64_t seed = r.u64();
  c.epoch = static_cast<long>(r.u64());
  const std::string problem = r.str();
  const double dx = r.f64(), dt = r.f64();
  const auto n_t = static_cast<int>(r.u32());
  try {
    c.config = trainer_config_from(KeyValues::parse(r.str()));
  } catch (const InvalidArgument& e) {
    r.fail(std::string("bad config block: ") + e.what());
  }
  if (c.config.seed != seed || c.config.problem != problem || c.config.dx != dx || c.config.spec.dt != dt || c.config.n_timesteps != n_t)
    r.fail("header disagrees with the config block");
  c.params = zero_params(c.config.network);
  const std::uint32_t n_tensors = r.u32();
  if (n_tensors != c.params.tensor_count())
    r.fail("expected " + std::to_string(c.params.tensor_count()) + " tensors, found " + std::to_string(n_tensors));
  c.params.for_each([&](const std::string& expected, Matrix& m) {
    const std::string name = r.str();
    if (name != expected) r.fail("expected tensor '" + expected + "', found '" + name + "'");
    if (r.u32() != 2) r.fail("tensor '" + name + "' is not rank 2");
    const auto rows = r.u64(), cols = r.u64();
    if (rows != static_cast<std::uint64_t>(m.rows()) || cols != static_cast<std::uint64_t>(m.cols()))
      r.fail("tensor '" + name + "' has shape " + std::to_string(rows) + "x" + std::to_string(cols) + ", expected " +
             std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) m(i, j) = r.f64();
  });
  if (r.pos() != bytes.size() - 8) r.fail("trailing bytes after the last tensor");
  return c;
}

inline void write_checkpoint(const fs::path& path, const Checkpoint& c) { write_file(path, serialize_checkpoint(c)); }
inline Checkpoint read_checkpoint(const fs::path& path) { return deserialize_checkpoint(read_file(path), path.string()); }

// ---- tables ------------------------------------------------------------------

inline std::string format_loss_csv(const std::vector<double>& losses) {
  std::string out = "epoch,loss\n";
  for (std::size_t e = 0; e < losses.size(); ++e) out += std::to_string(e + 1) + "," + format_double(losses[e]) + "\n";
  return out;
}

}  // namespace meshlearn
