#include "wim/cv/control_vector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "wim/feat/classify.hpp"
#include "wim/model/probes.hpp"
#include "wim/num/pca.hpp"
#include "wim/num/random.hpp"

namespace wim::cv {

using num::Tensor;

FeaturePair FeaturePair::standard(feat::Feature f) {
  switch (f) {
    case feat::Feature::speed:
      return {f, static_cast<int>(feat::SpeedClass::high), static_cast<int>(feat::SpeedClass::low)};
    case feat::Feature::acceleration:
      return {f, static_cast<int>(feat::AccelerationClass::accelerating),
              static_cast<int>(feat::AccelerationClass::decelerating)};
    case feat::Feature::direction:
      return {f, static_cast<int>(feat::DirectionClass::right), static_cast<int>(feat::DirectionClass::left)};
    case feat::Feature::agent:
      return {f, static_cast<int>(scene::AgentKind::vehicle), static_cast<int>(scene::AgentKind::pedestrian)};
  }
  throw std::invalid_argument("unknown feature");
}

void FeaturePair::validate() const {
  (void)feat::class_name(feature, positive);
  (void)feat::class_name(feature, negative);
  if (positive == negative) throw std::invalid_argument("feature pair classes must differ");
}

std::string FeaturePair::name() const {
  return std::string(feat::to_string(feature)) + ":" + std::string(feat::class_name(feature, positive)) + "-" +
         std::string(feat::class_name(feature, negative));
}

model::SteeringDirective ControlVector::directive(double tau) const { return {module, v, tau}; }

double ControlVector::norm() const {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

ControlVector ControlVector::unit() const {
  const double n = norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw num::NumericError("control vector has no direction to normalize");
  ControlVector out = *this;
  for (double& x : out.v) x /= n;
  return out;
}

std::string ControlVector::to_json() const {
  nlohmann::ordered_json j;
  j["feature"] = std::string(feat::to_string(pair.feature));
  j["pos"] = std::string(feat::class_name(pair.feature, pair.positive));
  j["neg"] = std::string(feat::class_name(pair.feature, pair.negative));
  j["module"] = module;
  j["source"] = source;
  j["d"] = v.size();
  j["v"] = v;
  j["orientation"] = orientation;
  return j.dump(2) + "\n";
}

ControlVector ControlVector::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(std::string("control vector: malformed JSON: ") + e.what());
  }
  try {
    ControlVector cv;
    cv.pair.feature = feat::feature_from_string(j.at("feature").get<std::string>());
    cv.pair.positive = feat::class_id(cv.pair.feature, j.at("pos").get<std::string>());
    cv.pair.negative = feat::class_id(cv.pair.feature, j.at("neg").get<std::string>());
    cv.pair.validate();
    cv.module = j.at("module").get<std::size_t>();
    cv.source = j.at("source").get<std::string>();
    cv.orientation = j.value("orientation", "mean-diff");
    cv.v = j.at("v").get<std::vector<double>>();
    if (cv.v.size() != j.at("d").get<std::size_t>())
      throw std::runtime_error("control vector: d does not match the length of v");
    if (cv.module >= model::kModules) throw std::runtime_error("control vector: module out of range");
    return cv;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("control vector: ") + e.what());
  }
}

void ControlVector::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << to_json();
}

ControlVector ControlVector::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

namespace {

OpposingStates split(const Tensor& h, std::span<const feat::MotionLabels> labels, const FeaturePair& pair) {
  pair.validate();
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int id = feat::label_of(labels[i], pair.feature);
    if (id == pair.positive) pos.push_back(i);
    if (id == pair.negative) neg.push_back(i);
  }
  const auto name = [&](int id) { return std::string(feat::to_string(pair.feature)) + ":" +
                                         std::string(feat::class_name(pair.feature, id)); };
  if (pos.empty()) throw std::invalid_argument("no samples of class " + name(pair.positive));
  if (neg.empty()) throw std::invalid_argument("no samples of class " + name(pair.negative));
  auto take = [&](const std::vector<std::size_t>& idx) {
    Tensor out({idx.size(), h.cols()});
    for (std::size_t i = 0; i < idx.size(); ++i) std::copy_n(h.data() + idx[i] * h.cols(), h.cols(), out.data() + i * h.cols());
    return out;
  };
  return {take(pos), take(neg)};
}

std::vector<double> mean_difference(const OpposingStates& s) {
  std::vector<double> diff(s.positive.cols(), 0.0);
  for (std::size_t i = 0; i < s.positive.rows(); ++i)
    for (std::size_t j = 0; j < diff.size(); ++j) diff[j] += s.positive.at(i, j) / static_cast<double>(s.positive.rows());
  for (std::size_t i = 0; i < s.negative.rows(); ++i)
    for (std::size_t j = 0; j < diff.size(); ++j) diff[j] -= s.negative.at(i, j) / static_cast<double>(s.negative.rows());
  return diff;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void orient(std::vector<double>& v, std::span<const double> reference) {
  if (dot(v, reference) < 0.0)
    for (double& x : v) x = -x;
}

std::vector<double> first_component(const Tensor& diffs) {
  return num::pca_top_components(diffs, 1, num::Centering::none).components.at(0);
}

void check_states(const OpposingStates& s) {
  if (s.positive.rank() != 2 || s.negative.rank() != 2 || s.positive.cols() != s.negative.cols())
    throw num::ShapeError("opposing states must be matrices of equal width");
  if (s.positive.rows() < 2 || s.negative.rows() < 2)
    throw std::invalid_argument("control vector fitting needs at least 2 samples per class");
}

}  // namespace

OpposingStates collect_opposing(const model::MotionFormer& model, std::span<const scene::Scene> scenes,
                                const FeaturePair& pair, std::size_t module, unsigned threads) {
  const auto outs = model.forward_batch(scenes, {}, threads, true);
  std::vector<model::HiddenStateSet> hidden;
  std::vector<feat::MotionLabels> labels;
  hidden.reserve(outs.size());
  for (std::size_t i = 0; i < outs.size(); ++i) {
    hidden.push_back(outs[i].hidden);
    labels.push_back(scenes[i].labels ? *scenes[i].labels : feat::label_scene(scenes[i]));
  }
  return split(model::stack_hidden(hidden, module), labels, pair);
}

OpposingStates collect_opposing(const model::HiddenDump& dump, const FeaturePair& pair, std::size_t module) {
  return split(dump.rows(module), dump.labels, pair);
}

Tensor paired_differences(const Tensor& positive, const Tensor& negative, std::uint64_t seed) {
  if (positive.cols() != negative.cols()) throw num::ShapeError("paired rows must have equal width");
  num::Rng rng = num::make_rng(seed, 0x70616972ULL);
  const std::size_t n = std::min(positive.rows(), negative.rows()), d = positive.cols();
  auto pick = [&](std::size_t rows) {
    std::vector<std::size_t> idx(rows);
    std::iota(idx.begin(), idx.end(), 0);
    if (rows > n) {
      idx = num::permutation(rows, rng);
      idx.resize(n);
      std::sort(idx.begin(), idx.end());
    }
    return idx;
  };
  const auto p = pick(positive.rows());
  const auto q = pick(negative.rows());
  const auto order = num::permutation(n, rng);
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = positive.at(p[order[i]], j) - negative.at(q[order[i]], j);
  return out;
}

ControlVector fit_plain(const OpposingStates& states, const FeaturePair& pair, std::size_t module, std::uint64_t seed) {
  check_states(states);
  ControlVector cv;
  cv.pair = pair;
  cv.module = module;
  cv.v = first_component(paired_differences(states.positive, states.negative, seed));
  orient(cv.v, mean_difference(states));
  return cv;
}

ControlVector fit_codec(const sae::Codec& codec, const OpposingStates& states, const FeaturePair& pair,
                        std::size_t module, std::uint64_t seed, const std::string& source) {
  check_states(states);
  if (codec.input_dim() != states.positive.cols())
    throw num::ShapeError("codec expects d=" + std::to_string(codec.input_dim()) + ", states have d=" +
                          std::to_string(states.positive.cols()));
  const OpposingStates codes{codec.encode(states.positive), codec.encode(states.negative)};
  std::vector<double> intermediate = first_component(paired_differences(codes.positive, codes.negative, seed));
  orient(intermediate, mean_difference(codes));
  const Tensor decoded = codec.decode(Tensor({1, intermediate.size()}, intermediate));
  ControlVector cv;
  cv.pair = pair;
  cv.module = module;
  cv.source = source;
  cv.v.assign(decoded.values().begin(), decoded.values().end());
  if (dot(cv.v, cv.v) == 0.0) throw num::NumericError("decoded control vector is zero");
  orient(cv.v, mean_difference(states));
  return cv;
}

double angle_deg(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw num::ShapeError("angle between vectors of different dimensions");
  const double na = std::sqrt(dot(a, a)), nb = std::sqrt(dot(b, b));
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("angle with a zero vector is undefined");
  double diff = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double u = a[i] / na, w = b[i] / nb;
    diff += (u - w) * (u - w);
    sum += (u + w) * (u + w);
  }
  return 2.0 * std::atan2(std::sqrt(diff), std::sqrt(sum)) * 180.0 / std::numbers::pi;
}

num::CsvTable AngleTable::to_csv() const {
  std::vector<std::string> header{"vector"};
  header.insert(header.end(), names.begin(), names.end());
  num::CsvTable t(header);
  for (std::size_t i = 0; i < names.size(); ++i) {
    std::vector<std::string> row{names[i]};
    for (std::size_t j = 0; j < names.size(); ++j) row.push_back(num::format_number(at(i, j)));
    t.add(std::move(row));
  }
  return t;
}

AngleTable compare_matrix(std::span<const ControlVector> vectors) {
  if (vectors.size() < 2) throw std::invalid_argument("comparison needs at least 2 vectors");
  const std::size_t n = vectors.size();
  for (const ControlVector& v : vectors)
    if (v.dim() != vectors[0].dim()) throw num::ShapeError("control vectors have mixed dimensions");
  AngleTable t;
  t.degrees.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    t.names.push_back(vectors[i].pair.name() + "@" + vectors[i].source);
    for (std::size_t j = i + 1; j < n; ++j) t.degrees[i * n + j] = t.degrees[j * n + i] = angle_deg(vectors[i].v, vectors[j].v);
  }
  return t;
}

}  // namespace wim::cv
