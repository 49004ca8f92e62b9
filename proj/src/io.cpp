#include "unimatch/io.hpp"

#include "unimatch/config.hpp"
#include "unimatch/errors.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace unimatch::io {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'U', 'M', 'C', 'K', 'P', 'T', '\0', '\1'};

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  template <typename T>
  void pod(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out_ += s;
  }
  void matrix(const Eigen::MatrixXd& m) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
    pod<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
    out_.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
  }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Eigen::MatrixXd matrix() {
    const auto r = pod<std::uint32_t>();
    const auto c = pod<std::uint32_t>();
    const std::size_t n = static_cast<std::size_t>(r) * c;
    need(n * sizeof(double));
    Eigen::MatrixXd m(r, c);
    std::memcpy(m.data(), in_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return m;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > in_.size() - pos_) throw Error(ErrorKind::Integrity, "checkpoint payload is truncated");
  }

  const std::string& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const training::TrainState& state, const json& run_config) {
  if (!state.model) throw Error(ErrorKind::Usage, "checkpoint: state has no model");
  const network::Model& model = *state.model;

  json desc;
  desc["network"] = config::to_json(model.config());
  desc["categories"] = json::array();
  for (const auto& c : model.categories()) desc["categories"].push_back({{"name", c.name}, {"universe_size", c.universe_size}});

  Writer w;
  w.str(desc.dump());
  w.str(run_config.is_null() ? std::string("{}") : run_config.dump());
  w.pod<std::int64_t>(state.iteration);
  std::ostringstream rng;
  rng << state.rng;
  w.str(rng.str());
  w.pod<std::uint64_t>(state.order.size());
  for (int i : state.order) w.pod<std::int32_t>(i);
  w.pod<std::uint64_t>(state.cursor);

  w.pod<std::uint64_t>(model.params().size());
  std::size_t i = 0;
  for (const ad::Parameter& p : model.params()) {
    const training::MomentSlot& slot = state.moments.at(i++);
    w.str(p.name);
    w.matrix(p.value);
    w.matrix(slot.m);
    w.matrix(slot.v);
    w.pod<std::uint64_t>(slot.steps);
  }

  std::string payload = std::move(w.bytes());
  Writer file;
  file.bytes().append(kMagic, sizeof(kMagic));
  file.pod<std::uint32_t>(kCheckpointVersion);
  file.pod<std::uint64_t>(payload.size());
  file.bytes() += payload;
  file.pod<std::uint64_t>(fnv1a(payload));
  return std::move(file.bytes());
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  constexpr std::size_t header = sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (bytes.size() < header || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw Error(ErrorKind::Integrity, "not a checkpoint file");
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + sizeof(kMagic), sizeof(version));
  if (version != kCheckpointVersion)
    throw Error(ErrorKind::Version, "checkpoint format version " + std::to_string(version) +
                                        " cannot be read by this build (expects " +
                                        std::to_string(kCheckpointVersion) + "); re-export it with a matching build");
  std::uint64_t length;
  std::memcpy(&length, bytes.data() + sizeof(kMagic) + sizeof(version), sizeof(length));
  if (bytes.size() != header + length + sizeof(std::uint64_t))
    throw Error(ErrorKind::Integrity, "checkpoint length does not match its header (truncated or padded file)");
  const std::string payload = bytes.substr(header, length);
  std::uint64_t checksum;
  std::memcpy(&checksum, bytes.data() + header + length, sizeof(checksum));
  if (checksum != fnv1a(payload)) throw Error(ErrorKind::Integrity, "checkpoint checksum mismatch");

  Reader r(payload);
  Checkpoint out;
  try {
    const json desc = json::parse(r.str());
    out.run_config = json::parse(r.str());
    std::vector<network::CategoryInfo> cats;
    for (const json& c : desc.at("categories")) cats.push_back({c.at("name").get<std::string>(), c.at("universe_size").get<int>()});
    const network::NetworkConfig cfg = config::network_from_json(desc.at("network"));

    training::TrainState s = training::init_state(std::move(cats), cfg, 0);
    s.iteration = static_cast<int>(r.pod<std::int64_t>());
    std::istringstream rng(r.str());
    rng >> s.rng;
    if (!rng) throw Error(ErrorKind::Integrity, "checkpoint RNG state is malformed");
    s.order.resize(r.pod<std::uint64_t>());
    for (int& i : s.order) i = r.pod<std::int32_t>();
    s.cursor = r.pod<std::uint64_t>();

    const auto count = r.pod<std::uint64_t>();
    if (count != s.model->params().size())
      throw Error(ErrorKind::Integrity, "checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                                            std::to_string(s.model->params().size()));
    std::size_t i = 0;
    for (ad::Parameter& p : s.model->params()) {
      const std::string name = r.str();
      if (name != p.name) throw Error(ErrorKind::Integrity, "checkpoint tensor " + name + " where " + p.name + " expected");
      Eigen::MatrixXd value = r.matrix();
      training::MomentSlot slot;
      slot.m = r.matrix();
      slot.v = r.matrix();
      slot.steps = r.pod<std::uint64_t>();
      auto same = [&p](const Eigen::MatrixXd& m) { return m.rows() == p.value.rows() && m.cols() == p.value.cols(); };
      if (!same(value) || !same(slot.m) || !same(slot.v))
        throw Error(ErrorKind::Integrity, "checkpoint tensor " + name + " has the wrong shape");
      p.value = std::move(value);
      s.moments[i++] = std::move(slot);
    }
    if (!r.done()) throw Error(ErrorKind::Integrity, "trailing bytes in checkpoint payload");
    out.state = std::move(s);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Integrity, std::string("checkpoint metadata is malformed: ") + e.what());
  }
  return out;
}

void save_checkpoint(const training::TrainState& state, const std::string& path, const json& run_config) {
  const std::string bytes = serialize_checkpoint(state, run_config);
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write checkpoint " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::Io, "write failed for " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot move checkpoint into place: " + ec.message());
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open checkpoint " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_checkpoint(buf.str());
}

// ---------------------------------------------------------------------------

void write_ply(const Eigen::Matrix3Xd& points, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  out << "ply\nformat ascii 1.0\nelement vertex " << points.cols()
      << "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < points.cols(); ++i)
    out << points(0, i) << ' ' << points(1, i) << ' ' << points(2, i) << '\n';
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path);
}

Eigen::Matrix3Xd read_ply(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  std::string line;
  long count = -1;
  while (std::getline(in, line)) {
    if (line.rfind("element vertex ", 0) == 0) count = std::stol(line.substr(15));
    if (line == "end_header") break;
  }
  if (count < 0) throw Error(ErrorKind::Data, path + ": missing vertex count");
  Eigen::Matrix3Xd pts(3, count);
  for (long i = 0; i < count; ++i)
    if (!(in >> pts(0, i) >> pts(1, i) >> pts(2, i))) throw Error(ErrorKind::Data, path + ": too few vertex lines");
  return pts;
}

GeometryExport export_geometry(network::Model& model, training::Batch instances, const std::string& dir,
                               const training::ForwardOptions& opts) {
  GeometryExport out;
  fs::create_directories(fs::path(dir) / "deformed");
  json cats = json::array();
  for (std::size_t c = 0; c < model.categories().size(); ++c) {
    const auto& cat = model.categories()[c];
    const Eigen::Matrix3Xd u = model.universe(static_cast<int>(c)).value;
    const std::string file = (fs::path(dir) / ("universe_" + cat.name + ".ply")).string();
    write_ply(u, file);
    out.files.push_back(file);
    json insts = json::array();
    for (const training::PreparedInstance& inst : instances) {
      if (inst.category != static_cast<int>(c)) continue;
      const Eigen::Matrix3Xd deformed = training::deformed_points(model, inst, opts);
      const std::string f = (fs::path(dir) / "deformed" / (inst.id + ".ply")).string();
      write_ply(deformed, f);
      out.files.push_back(f);
      insts.push_back({{"id", inst.id}, {"file", f}, {"offset_norm", (deformed - u).norm()}});
    }
    cats.push_back({{"name", cat.name}, {"universe_size", cat.universe_size}, {"file", file}, {"instances", insts}});
  }
  out.summary = {{"categories", cats}};
  const std::string summary = (fs::path(dir) / "geometry_summary.json").string();
  std::ofstream s(summary);
  if (!s) throw Error(ErrorKind::Io, "cannot write " + summary);
  s << out.summary.dump(2) << '\n';
  out.files.push_back(summary);
  return out;
}

// ---------------------------------------------------------------------------

json matchings_to_json(const matching::MultiMatching& multi, int universe_size, bool include_pairwise) {
  json j;
  j["format"] = "unimatch-matchings";
  j["version"] = 1;
  j["universe_size"] = universe_size;
  j["instances"] = json::array();
  for (const auto& [id, x] : multi.instances) {
    if (x.universe_size() != universe_size)
      throw Error(ErrorKind::Data, "instance " + id + " uses a different universe size");
    j["instances"].push_back({{"id", id}, {"assignment", x.assignment()}});
  }
  if (include_pairwise) {
    j["pairwise"] = json::array();
    for (const auto& [key, m] : matching::compose_all(multi)) {
      json pairs = json::array();
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
          if (m(r, c) != 0) pairs.push_back({r, c});
      j["pairwise"].push_back({{"j", key.first}, {"k", key.second}, {"rows", m.rows()}, {"cols", m.cols()}, {"pairs", pairs}});
    }
  }
  return j;
}

MatchingFile matchings_from_json(const json& j) {
  MatchingFile f;
  try {
    if (j.at("format") != "unimatch-matchings" || j.at("version") != 1)
      throw Error(ErrorKind::Version, "unsupported matchings file");
    f.universe_size = j.at("universe_size").get<int>();
    for (const json& inst : j.at("instances"))
      f.multi.instances.emplace_back(inst.at("id").get<std::string>(),
                                     matching::PartialPermutation(inst.at("assignment").get<std::vector<int>>(), f.universe_size));
    if (j.contains("pairwise")) {
      matching::PairwiseSet set;
      for (const json& p : j.at("pairwise")) {
        matching::BinaryMatrix m = matching::BinaryMatrix::Zero(p.at("rows").get<int>(), p.at("cols").get<int>());
        for (const json& rc : p.at("pairs")) {
          const int r = rc.at(0).get<int>(), c = rc.at(1).get<int>();
          if (r < 0 || r >= m.rows() || c < 0 || c >= m.cols()) throw Error(ErrorKind::Data, "pairwise entry out of range");
          m(r, c) = 1;
        }
        set[{p.at("j").get<int>(), p.at("k").get<int>()}] = std::move(m);
      }
      f.pairwise = std::move(set);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Data, std::string("malformed matchings file: ") + e.what());
  }
  return f;
}

void export_matchings(const matching::MultiMatching& multi, int universe_size, const std::string& path,
                      bool include_pairwise) {
  const json j = matchings_to_json(multi, universe_size, include_pairwise);
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path);
  out << j.dump(1) << '\n';
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path);
}

MatchingFile load_matchings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Data, path + ": " + e.what());
  }
  return matchings_from_json(j);
}

}  // namespace unimatch::io
