#include "unimatch/dataset.hpp"

#include "unimatch/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace unimatch::data {

namespace {

constexpr const char* kMagic = "unimatch-dataset";
constexpr int kVersion = 1;

std::vector<std::string> tokenize(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

class LineError {
 public:
  LineError(std::string source, int line) : source_(std::move(source)), line_(line) {}

  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(ErrorKind::Data, source_ + ":" + std::to_string(line_) + ": " + msg);
  }

 private:
  std::string source_;
  int line_;
};

long parse_int(const std::string& tok, const LineError& where, const char* what) {
  try {
    std::size_t used = 0;
    const long v = std::stol(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    where.fail(std::string("expected integer ") + what + ", got '" + tok + "'");
  }
}

double parse_real(const std::string& tok, const LineError& where, const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    if (!std::isfinite(v)) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    where.fail(std::string("expected finite number ") + what + ", got '" + tok + "'");
  }
}

std::string format_real(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// Names end up in exported file names.
bool safe_name(const std::string& s) {
  return !s.empty() && s != "." && s != ".." && s.find_first_of("/\\") == std::string::npos;
}

// Checks one instance against the category table; `fail` reports the error.
template <typename Fail>
void check_instance(const DatasetManifest& m, const KeypointInstance& inst, Fail&& fail) {
  if (!safe_name(inst.id)) fail("instance id '" + inst.id + "' is not usable as a file name");
  int d = -1;
  for (const CategorySpec& c : m.categories)
    if (c.name == inst.category) d = c.universe_size;
  if (d < 0) fail("instance " + inst.id + " uses unknown category " + inst.category);
  if (!inst.keypoints.allFinite()) fail("instance " + inst.id + " has non-finite keypoints");
  if (!inst.labels) return;
  const std::vector<int>& labels = *inst.labels;
  if (static_cast<int>(labels.size()) != inst.size())
    fail("instance " + inst.id + " has " + std::to_string(inst.size()) + " keypoints but " +
         std::to_string(labels.size()) + " labels");
  std::set<int> seen;
  for (int l : labels) {
    if (l < 0 || l >= d)
      fail("instance " + inst.id + " has label " + std::to_string(l) + " outside [0, " + std::to_string(d) + ")");
    if (!seen.insert(l).second) fail("instance " + inst.id + " repeats universe label " + std::to_string(l));
  }
}

}  // namespace

const char* to_string(Split split) noexcept { return split == Split::Train ? "train" : "test"; }

int DatasetManifest::category_index(const std::string& name) const {
  for (std::size_t i = 0; i < categories.size(); ++i)
    if (categories[i].name == name) return static_cast<int>(i);
  throw Error(ErrorKind::Data, "unknown category " + name);
}

std::size_t DatasetManifest::count(Split split) const {
  return static_cast<std::size_t>(
      std::count_if(instances.begin(), instances.end(), [split](const KeypointInstance& i) { return i.split == split; }));
}

void DatasetManifest::validate() const {
  std::set<std::string> names;
  for (const CategorySpec& c : categories) {
    if (!safe_name(c.name)) throw Error(ErrorKind::Data, "category name '" + c.name + "' is not usable as a file name");
    if (c.universe_size < 1) throw Error(ErrorKind::Data, "category " + c.name + " has no universe points");
    if (!names.insert(c.name).second) throw Error(ErrorKind::Data, "category " + c.name + " listed twice");
  }
  std::set<std::string> ids;
  for (const KeypointInstance& inst : instances) {
    check_instance(*this, inst, [](const std::string& msg) { throw Error(ErrorKind::Data, msg); });
    if (!ids.insert(inst.id).second) throw Error(ErrorKind::Data, "instance id " + inst.id + " used twice");
  }
}

DatasetManifest parse_dataset(std::istream& in, const std::string& source) {
  DatasetManifest m;
  std::string line;
  int lineno = 0;
  bool header = false;

  KeypointInstance* current = nullptr;
  int remaining = 0;
  int instance_line = 0;
  bool labeled = false;
  std::set<std::string> ids;

  auto finish_instance = [&]() {
    if (current == nullptr) return;
    const LineError where(source, instance_line);
    check_instance(m, *current, [&where](const std::string& msg) { where.fail(msg); });
    current = nullptr;
  };

  while (std::getline(in, line)) {
    ++lineno;
    const LineError where(source, lineno);
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::vector<std::string> tok = tokenize(line);
    if (tok.empty()) continue;

    if (!header) {
      if (tok.size() != 2 || tok[0] != kMagic) where.fail(std::string("expected header '") + kMagic + " 1'");
      const long version = parse_int(tok[1], where, "version");
      if (version != kVersion) where.fail("unsupported dataset version " + tok[1]);
      header = true;
      continue;
    }

    if (remaining > 0) {
      if (tok.size() != 2 && tok.size() != 3) where.fail("expected 'x y [label]'");
      const int index = current->size() - remaining;
      const bool has_label = tok.size() == 3;
      if (index == 0) {
        labeled = has_label;
        if (labeled) current->labels.emplace();
      } else if (has_label != labeled) {
        where.fail("instance " + current->id + " mixes labeled and unlabeled keypoints");
      }
      current->keypoints(0, index) = parse_real(tok[0], where, "x");
      current->keypoints(1, index) = parse_real(tok[1], where, "y");
      if (labeled) current->labels->push_back(static_cast<int>(parse_int(tok[2], where, "label")));
      if (--remaining == 0) finish_instance();
      continue;
    }

    if (tok[0] == "category") {
      if (tok.size() != 3) where.fail("expected 'category <name> <d>'");
      if (!m.instances.empty()) where.fail("categories must precede instances");
      for (const CategorySpec& c : m.categories)
        if (c.name == tok[1]) where.fail("category " + tok[1] + " listed twice");
      if (!safe_name(tok[1])) where.fail("category name '" + tok[1] + "' is not usable as a file name");
      const long d = parse_int(tok[2], where, "universe size");
      if (d < 1) where.fail("category " + tok[1] + " needs a positive universe size");
      m.categories.push_back({tok[1], static_cast<int>(d)});
    } else if (tok[0] == "instance") {
      if (tok.size() != 5) where.fail("expected 'instance <id> <category> <train|test> <m>'");
      if (!ids.insert(tok[1]).second) where.fail("instance id " + tok[1] + " used twice");
      KeypointInstance inst;
      inst.id = tok[1];
      inst.category = tok[2];
      if (tok[3] == "train")
        inst.split = Split::Train;
      else if (tok[3] == "test")
        inst.split = Split::Test;
      else
        where.fail("split must be 'train' or 'test', got '" + tok[3] + "'");
      const long count = parse_int(tok[4], where, "keypoint count");
      if (count < 0) where.fail("negative keypoint count");
      bool known = false;
      for (const CategorySpec& c : m.categories) known = known || c.name == inst.category;
      if (!known) where.fail("instance " + inst.id + " uses unknown category " + inst.category);
      inst.keypoints.resize(2, count);
      m.instances.push_back(std::move(inst));
      current = &m.instances.back();
      instance_line = lineno;
      remaining = static_cast<int>(count);
      if (remaining == 0) finish_instance();
    } else {
      where.fail("unknown record '" + tok[0] + "'");
    }
  }
  if (!header) throw Error(ErrorKind::Data, source + ": empty dataset file");
  if (remaining > 0)
    throw Error(ErrorKind::Data, source + ":" + std::to_string(lineno) + ": instance " + current->id + " is missing " +
                                     std::to_string(remaining) + " keypoint lines");
  return m;
}

DatasetManifest load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open dataset " + path);
  return parse_dataset(in, path);
}

void write_dataset(const DatasetManifest& manifest, std::ostream& out) {
  manifest.validate();
  out << kMagic << ' ' << kVersion << '\n';
  for (const CategorySpec& c : manifest.categories) out << "category " << c.name << ' ' << c.universe_size << '\n';
  for (const KeypointInstance& inst : manifest.instances) {
    out << "instance " << inst.id << ' ' << inst.category << ' ' << to_string(inst.split) << ' ' << inst.size() << '\n';
    for (int i = 0; i < inst.size(); ++i) {
      out << format_real(inst.keypoints(0, i)) << ' ' << format_real(inst.keypoints(1, i));
      if (inst.labels) out << ' ' << (*inst.labels)[static_cast<std::size_t>(i)];
      out << '\n';
    }
  }
}

void save_dataset(const DatasetManifest& manifest, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write dataset " + path);
  write_dataset(manifest, out);
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path);
}

int SyntheticConfig::universe_size(int category) const {
  if (universe_sizes.size() == 1) return universe_sizes.front();
  return universe_sizes.at(static_cast<std::size_t>(category));
}

void SyntheticConfig::validate() const {
  if (categories < 1) throw Error(ErrorKind::Usage, "synthetic data needs at least one category");
  if (instances < 1) throw Error(ErrorKind::Usage, "synthetic data needs at least one instance per category");
  if (universe_sizes.size() != 1 && static_cast<int>(universe_sizes.size()) != categories)
    throw Error(ErrorKind::Usage, "give one universe size or one per category");
  if (!(occlusion >= 0.0 && occlusion < 1.0)) throw Error(ErrorKind::Usage, "occlusion probability must be in [0, 1)");
  if (!(test_fraction >= 0.0 && test_fraction <= 1.0)) throw Error(ErrorKind::Usage, "test fraction must be in [0, 1]");
  if (!(deformation >= 0.0) || !(noise >= 0.0)) throw Error(ErrorKind::Usage, "deformation and noise must be >= 0");
  for (int c = 0; c < categories; ++c) {
    const int d = universe_size(c);
    if (d < 4) throw Error(ErrorKind::Usage, "universe size must be at least 4");
    if (static_cast<double>(d) * (1.0 - occlusion) < 4.0)
      throw Error(ErrorKind::Usage, "expected visible keypoints d·(1 − occlusion) fall below 4");
  }
}

SyntheticDataset generate_synthetic(const SyntheticConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> half(-0.5, 0.5);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  SyntheticDataset out;
  const int n_test = static_cast<int>(std::lround(config.test_fraction * config.instances));
  const int n_train = config.instances - n_test;

  for (int c = 0; c < config.categories; ++c) {
    const int d = config.universe_size(c);
    const std::string name = "cat" + std::to_string(c);
    out.manifest.categories.push_back({name, d});

    Eigen::Matrix3Xd base(3, d);
    for (Eigen::Index i = 0; i < base.size(); ++i) base(i) = half(rng);
    out.truth.base_shapes.push_back(base);

    for (int n = 0; n < config.instances; ++n) {
      // Quadratic displacement: D_a(x) = amplitude · Σ q_a,bc x_b x_c.
      Eigen::Matrix<double, 3, 6> q;
      for (Eigen::Index i = 0; i < q.size(); ++i) q(i) = unit(rng);
      Eigen::Matrix3Xd shape = base;
      for (int k = 0; k < d; ++k) {
        const Eigen::Vector3d x = base.col(k);
        Eigen::Matrix<double, 6, 1> mono;
        mono << x.x() * x.x(), x.y() * x.y(), x.z() * x.z(), x.x() * x.y(), x.x() * x.z(), x.y() * x.z();
        shape.col(k) += config.deformation * (q * mono);
      }

      const geometry::Camera cam = geometry::sample_weak_perspective_camera(rng(), config.cameras);
      const geometry::ProjectedPoints proj =
          geometry::project({shape, c}, cam, geometry::ProjectionModel::WeakPerspective);

      std::vector<int> visible;
      do {
        visible.clear();
        for (int k = 0; k < d; ++k)
          if (coin(rng) >= config.occlusion) visible.push_back(k);
      } while (visible.size() < 4);
      std::shuffle(visible.begin(), visible.end(), rng);

      Eigen::Matrix2Xd pts(2, static_cast<Eigen::Index>(visible.size()));
      for (std::size_t i = 0; i < visible.size(); ++i) pts.col(static_cast<Eigen::Index>(i)) = proj.v.col(visible[i]);
      const double extent = geometry::normalize_keypoints({pts}).transform.scale;
      if (config.noise > 0.0)
        for (Eigen::Index i = 0; i < pts.size(); ++i) pts(i) += config.noise * extent * gauss(rng);

      KeypointInstance inst;
      std::ostringstream id;
      id << name << '-' << std::setw(4) << std::setfill('0') << n;
      inst.id = id.str();
      inst.category = name;
      inst.split = n < n_train ? Split::Train : Split::Test;
      inst.keypoints = pts;
      inst.labels = visible;
      out.manifest.instances.push_back(std::move(inst));
      out.truth.instance_shapes.push_back(shape);
      out.truth.cameras.push_back(cam);
    }
  }
  return out;
}

}  // namespace unimatch::data
