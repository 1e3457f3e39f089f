#include "doctest.h"

#include <cmath>

#include "json.hpp"
#include "wim/cv/control_vector.hpp"
#include "wim/feat/classify.hpp"
#include "wim/model/hidden_dump.hpp"
#include "wim/num/random.hpp"
#include "wim/sae/sae.hpp"
#include "wim/scene/generator.hpp"

using namespace wim;
using cv::ControlVector;
using cv::FeaturePair;
using cv::OpposingStates;

namespace {

const FeaturePair kSpeed = FeaturePair::standard(feat::Feature::speed);

num::Tensor random_rows(std::size_t n, std::size_t d, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  num::Rng rng = num::make_rng(seed, 0);
  num::Tensor t({n, d});
  for (double& v : t.values()) v = num::uniform(rng, lo, hi);
  return t;
}

num::Tensor shifted(const num::Tensor& h, std::span<const double> u) {
  num::Tensor out = h;
  for (std::size_t i = 0; i < h.rows(); ++i)
    for (std::size_t j = 0; j < h.cols(); ++j) out.at(i, j) += u[j];
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<double> mean_difference(const OpposingStates& s) {
  std::vector<double> m(s.positive.cols(), 0.0);
  for (std::size_t i = 0; i < s.positive.rows(); ++i)
    for (std::size_t j = 0; j < m.size(); ++j) m[j] += s.positive.at(i, j) / static_cast<double>(s.positive.rows());
  for (std::size_t i = 0; i < s.negative.rows(); ++i)
    for (std::size_t j = 0; j < m.size(); ++j) m[j] -= s.negative.at(i, j) / static_cast<double>(s.negative.rows());
  return m;
}

sae::SaeModel identity_sae(std::size_t d) {
  sae::SaeConfig c;
  c.d = d;
  c.sparse_dim = d;
  sae::SaeModel m(c);
  m.encoder_weight().value = num::Tensor::identity(d);
  m.decoder_weight().value = num::Tensor::identity(d);
  m.encoder_bias().value = num::Tensor::filled({d}, 0.0);
  m.decoder_bias().value = num::Tensor::filled({d}, 0.0);
  return m;
}

model::HiddenDump dump_from(const num::Tensor& h, const std::vector<feat::MotionLabels>& labels) {
  model::HiddenDump dump;
  dump.modules = 3;
  dump.steps = 2;
  dump.d = h.cols();
  for (std::size_t i = 0; i < h.rows(); ++i)
    for (std::size_t m = 0; m < 3; ++m)
      for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t j = 0; j < h.cols(); ++j)
          dump.values.push_back(static_cast<float>(h.at(i, j) + 10.0 * static_cast<double>(m) + static_cast<double>(t)));
  dump.labels = labels;
  return dump;
}

}  // namespace

TEST_CASE("a constant offset between the sides gives its unit direction") {
  const num::Tensor neg = random_rows(40, 6, 1);
  const std::vector<double> u{0.5, -1.0, 0.0, 2.0, 0.25, -0.75};
  const ControlVector v = cv::fit_plain({shifted(neg, u), neg}, kSpeed, 2, 7);
  const double n = std::sqrt(dot(u, u));
  REQUIRE(v.dim() == 6);
  for (std::size_t j = 0; j < 6; ++j) CHECK(v.v[j] == doctest::Approx(u[j] / n).epsilon(1e-12));
  CHECK(v.norm() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("swapping the classes flips the vector") {
  const num::Tensor a = random_rows(50, 5, 2, 0.0, 2.0), b = random_rows(30, 5, 3);
  const ControlVector v = cv::fit_plain({a, b}, kSpeed, 2, 4);
  const ControlVector w = cv::fit_plain({b, a}, kSpeed, 2, 4);
  for (std::size_t j = 0; j < 5; ++j) CHECK(w.v[j] == doctest::Approx(-v.v[j]).epsilon(1e-9));
}

TEST_CASE("clusters separated along e3 give a vector along e3") {
  num::Rng rng = num::make_rng(5, 0);
  num::Tensor pos({200, 8}), neg({200, 8});
  for (double& x : pos.values()) x = num::normal(rng, 0.0, 0.3);
  for (double& x : neg.values()) x = num::normal(rng, 0.0, 0.3);
  for (std::size_t i = 0; i < 200; ++i) pos.at(i, 3) += 3.0;
  const ControlVector v = cv::fit_plain({pos, neg}, kSpeed, 2, 1);
  CHECK(v.v[3] > 0.99);
}

TEST_CASE("orientation follows the class-mean difference for every pairing seed") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const OpposingStates s{random_rows(25, 4, 100 + seed), random_rows(35, 4, 200 + seed, -0.5, 1.5)};
    const ControlVector v = cv::fit_plain(s, kSpeed, 2, seed);
    CHECK(dot(v.v, mean_difference(s)) >= 0.0);
  }
}

TEST_CASE("paired differences") {
  const num::Tensor pos = random_rows(12, 3, 6), neg = random_rows(12, 3, 7);
  const num::Tensor d = cv::paired_differences(pos, neg, 3);
  REQUIRE(d.rows() == 12);
  // Equal sides keep index correspondence; only the pair order is shuffled.
  std::vector<bool> seen(12, false);
  for (std::size_t r = 0; r < 12; ++r)
    for (std::size_t i = 0; i < 12; ++i)
      if (d.at(r, 0) == pos.at(i, 0) - neg.at(i, 0) && d.at(r, 1) == pos.at(i, 1) - neg.at(i, 1)) seen[i] = true;
  CHECK(std::count(seen.begin(), seen.end(), true) == 12);

  const num::Tensor small = random_rows(5, 3, 8);
  const num::Tensor e = cv::paired_differences(pos, small, 9);
  CHECK(e.rows() == 5);
  CHECK(e == cv::paired_differences(pos, small, 9));
  CHECK_FALSE(e == cv::paired_differences(pos, small, 10));
  CHECK_THROWS_AS(cv::paired_differences(pos, random_rows(5, 4, 1), 0), num::ShapeError);
}

TEST_CASE("degenerate and undersized inputs") {
  const num::Tensor same = num::Tensor::matrix(3, 2, {1, 1, 1, 1, 1, 1});
  CHECK_THROWS(cv::fit_plain({same, same}, kSpeed, 2, 0));
  CHECK_THROWS(cv::fit_plain({random_rows(1, 2, 1), random_rows(4, 2, 2)}, kSpeed, 2, 0));
}

TEST_CASE("an identity sae reduces to the plain fit") {
  const OpposingStates s{random_rows(30, 6, 11, 0.0, 2.0), random_rows(40, 6, 12, 0.0, 1.0)};
  const sae::SaeModel id = identity_sae(6);
  const ControlVector plain = cv::fit_plain(s, kSpeed, 2, 5);
  const ControlVector coded = cv::fit_codec(id, s, kSpeed, 2, 5, "sae:identity");
  for (std::size_t j = 0; j < 6; ++j) CHECK(coded.v[j] == doctest::Approx(plain.v[j]).epsilon(1e-9));
  CHECK(coded.source == "sae:identity");
}

TEST_CASE("the decoder bias shifts the vector exactly") {
  const OpposingStates s{random_rows(30, 4, 13, 1.0, 3.0), random_rows(30, 4, 14, 1.0, 2.0)};
  sae::SaeModel with_bias = identity_sae(4);
  const std::vector<double> b{0.1, -0.2, 0.05, 0.3};
  with_bias.decoder_bias().value = num::Tensor::vector(b);
  const ControlVector base = cv::fit_codec(identity_sae(4), s, kSpeed, 2, 2, "sae");
  const ControlVector moved = cv::fit_codec(with_bias, s, kSpeed, 2, 2, "sae");
  for (std::size_t j = 0; j < 4; ++j) CHECK(moved.v[j] == doctest::Approx(base.v[j] + b[j]).epsilon(1e-12));
  CHECK_THROWS_AS(cv::fit_codec(identity_sae(5), s, kSpeed, 2, 2, "sae"), num::ShapeError);
}

TEST_CASE("unit copies keep the direction") {
  ControlVector v;
  v.v = {3.0, 4.0};
  CHECK(v.norm() == 5.0);
  const ControlVector u = v.unit();
  CHECK(u.v[0] == doctest::Approx(0.6));
  CHECK(u.v[1] == doctest::Approx(0.8));
  CHECK(cv::angle_deg(u.v, v.v) == 0.0);
  v.v = {0.0, 0.0};
  CHECK_THROWS_AS(v.unit(), num::NumericError);
}

TEST_CASE("angles") {
  const std::vector<double> a{1.0, 2.0, -1.0}, b{-2.0, 1.0, 0.0}, zero{0.0, 0.0, 0.0};
  CHECK(cv::angle_deg(a, a) == 0.0);
  const std::vector<double> neg{-1.0, -2.0, 1.0};
  CHECK(cv::angle_deg(a, neg) == 180.0);
  CHECK(cv::angle_deg(a, b) == doctest::Approx(90.0).epsilon(1e-12));
  const std::vector<double> scaled{3.0, 6.0, -3.0};
  CHECK(cv::angle_deg(scaled, b) == doctest::Approx(cv::angle_deg(a, b)).epsilon(1e-12));
  CHECK(cv::angle_deg(std::vector<double>{1, 0}, std::vector<double>{1, 1}) == doctest::Approx(45.0));
  CHECK_THROWS(cv::angle_deg(a, zero));
  CHECK_THROWS_AS(cv::angle_deg(a, std::vector<double>{1.0}), num::ShapeError);
}

TEST_CASE("angle matrix") {
  ControlVector v;
  v.v = {0.3, -0.2, 0.9};
  const std::vector<ControlVector> twice{v, v};
  const auto zeros = cv::compare_matrix(twice);
  for (double x : zeros.degrees) CHECK(x == 0.0);

  std::vector<ControlVector> many;
  for (std::uint64_t s = 0; s < 4; ++s) {
    ControlVector c;
    c.pair = FeaturePair::standard(static_cast<feat::Feature>(s));
    const num::Tensor r = random_rows(1, 3, 50 + s);
    c.v.assign(r.values().begin(), r.values().end());
    many.push_back(c);
  }
  const auto t = cv::compare_matrix(many);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(t.at(i, i) == 0.0);
    for (std::size_t j = 0; j < 4; ++j) CHECK(t.at(i, j) == t.at(j, i));
  }
  CHECK(t.names[0] == "speed:high-low@plain");
  CHECK(t.to_csv().rows().size() == 4);
  CHECK_THROWS(cv::compare_matrix(std::span<const ControlVector>(many.data(), 1)));
  many[1].v.push_back(1.0);
  CHECK_THROWS(cv::compare_matrix(many));
}

TEST_CASE("standard pairs") {
  CHECK(FeaturePair::standard(feat::Feature::speed).name() == "speed:high-low");
  CHECK(FeaturePair::standard(feat::Feature::acceleration).name() == "acceleration:accelerating-decelerating");
  CHECK(FeaturePair::standard(feat::Feature::direction).name() == "direction:right-left");
  CHECK(FeaturePair::standard(feat::Feature::agent).name() == "agent:vehicle-pedestrian");
  FeaturePair bad{feat::Feature::speed, 1, 1};
  CHECK_THROWS(bad.validate());
  bad.positive = 4;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("control vector json round trip") {
  ControlVector v;
  v.pair = FeaturePair::standard(feat::Feature::direction);
  v.module = 1;
  v.source = "sae:fc-relu-128";
  v.v = {0.1, -0.25, 1.0 / 3.0};
  const std::string text = v.to_json();
  const ControlVector back = ControlVector::from_json(text);
  CHECK(back.pair == v.pair);
  CHECK(back.module == 1);
  CHECK(back.source == v.source);
  CHECK(back.orientation == "mean-diff");
  CHECK(back.v == v.v);
  const auto j = nlohmann::ordered_json::parse(text);
  std::vector<std::string> keys;
  for (const auto& [k, _] : j.items()) keys.push_back(k);
  CHECK(keys == std::vector<std::string>{"feature", "pos", "neg", "module", "source", "d", "v", "orientation"});
  CHECK(j["d"] == 3);
  CHECK_THROWS(ControlVector::from_json(R"({"feature":"speed"})"));
  auto bad = j;
  bad["d"] = 4;
  CHECK_THROWS(ControlVector::from_json(bad.dump()));
}

TEST_CASE("opposing states from a dump") {
  const num::Tensor h = random_rows(6, 3, 21);
  std::vector<feat::MotionLabels> labels(6);
  for (std::size_t i = 0; i < 6; ++i) labels[i].speed = i % 2 ? feat::SpeedClass::high : feat::SpeedClass::low;
  labels[4].speed = feat::SpeedClass::moderate;
  const model::HiddenDump dump = dump_from(h, labels);
  const OpposingStates s = cv::collect_opposing(dump, kSpeed, 2);
  REQUIRE(s.positive.rows() == 3);
  REQUIRE(s.negative.rows() == 2);
  // Module 2, last step: offset 20 + 1.
  CHECK(s.positive.at(0, 0) == doctest::Approx(h.at(1, 0) + 21.0).epsilon(1e-6));
  CHECK(s.negative.at(1, 2) == doctest::Approx(h.at(2, 2) + 21.0).epsilon(1e-6));
  for (auto& l : labels) l.speed = feat::SpeedClass::low;
  CHECK_THROWS_WITH(cv::collect_opposing(dump_from(h, labels), kSpeed, 2), doctest::Contains("high"));
  CHECK_THROWS(cv::collect_opposing(dump, kSpeed, 3));
}

TEST_CASE("plain vectors on a trained model are stable across pairing seeds") {
  model::ModelConfig mc;
  mc.d = 16;
  mc.heads = 2;
  mc.ffn = 32;
  mc.seed = 2;
  model::MotionFormer m(mc);
  auto scenes = scene::generate_dataset(1500, 8, {});
  feat::label_dataset(scenes);
  model::TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 64;
  tc.optimizer.learning_rate = 2e-3;
  model::train(m, scenes, tc);
  const OpposingStates s = cv::collect_opposing(m, scenes, kSpeed, 2);
  REQUIRE(s.positive.rows() >= 200);
  REQUIRE(s.negative.rows() >= 200);
  const ControlVector ref = cv::fit_plain(s, kSpeed, 2, 0);
  for (std::uint64_t seed = 1; seed < 10; ++seed) CHECK(cv::angle_deg(ref.v, cv::fit_plain(s, kSpeed, 2, seed).v) < 15.0);
  CHECK(dot(ref.v, mean_difference(s)) >= 0.0);
}
