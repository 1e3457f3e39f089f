// Command-line front end: every pipeline stage is a subcommand that reads and
// writes files and leaves a manifest beside its main output.

#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <memory>

#include "cli_support.hpp"
#include "wim/collapse/collapse.hpp"
#include "wim/cv/control_vector.hpp"
#include "wim/eval/eval.hpp"
#include "wim/feat/classify.hpp"
#include "wim/model/hidden_dump.hpp"
#include "wim/model/motionformer.hpp"
#include "wim/sae/sae.hpp"
#include "wim/scene/dataset_io.hpp"
#include "wim/scene/generator.hpp"

using namespace wim;
using namespace wim::cli;

namespace {

constexpr std::uint32_t kSaeMagic = 0x57494D53;      // "WIMS"
constexpr std::uint32_t kKoopmanMagic = 0x57494D4B;  // "WIMK"

const std::vector<std::string> kFeatures{"speed", "acceleration", "direction", "agent"};

std::vector<scene::Scene> load_scenes(const fs::path& path, Manifest& m) {
  m.input(require_input(path));
  return scene::read_dataset(path);
}

model::MotionFormer load_model(const fs::path& path, Manifest& m) {
  m.input(require_input(path));
  return model::MotionFormer::load(path);
}

model::HiddenDump load_dump(const fs::path& path, Manifest& m) {
  m.input(require_input(path));
  return model::HiddenDump::load(path);
}

cv::ControlVector load_vector(const fs::path& path, Manifest& m) {
  m.input(require_input(path));
  return cv::ControlVector::load(path);
}

std::unique_ptr<sae::Codec> load_codec(const fs::path& path, Manifest& m) {
  const std::uint32_t magic = file_magic(path);
  m.input(path);
  if (magic == kSaeMagic) return std::make_unique<sae::SaeModel>(sae::SaeModel::load(path));
  if (magic == kKoopmanMagic) return std::make_unique<sae::KoopmanModel>(sae::KoopmanModel::load(path));
  throw std::runtime_error("not an SAE or Koopman file: " + path.string());
}

std::vector<scene::Scene> shifted(const std::vector<scene::Scene>& scenes) {
  std::vector<scene::Scene> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) out.push_back(scene::apply_future_speed_shift(s));
  return out;
}

fs::path finish(Manifest& m, const fs::path& out) {
  m.output(out);
  return out;
}

// ---- subcommand options ----

struct GenOpts {
  std::size_t n = 1000;
  std::uint64_t seed = 0;
  bool shift = false;
  std::string out = "scenes.jsonl";
};

struct LabelOpts {
  std::string in, out = "labeled.jsonl", window = "past";
};

struct TrainOpts {
  std::string in, out = "model.wimm", trace, scaling = "fixed";
  std::uint64_t seed = 0;
  std::size_t epochs = 20, batch = 64, d = 64, heads = 4, ffn = 128, modes = 3;
  double lr = 2e-4, position_scale = 10.0;
};

struct ProbeOpts {
  std::string model, train, test, out = "collapse.csv", heatmap;
  std::size_t epochs = 30, batch = 256, module = 2;
  double lr = 5e-3;
  std::uint64_t seed = 0;
};

struct DumpOpts {
  std::string model, in, out = "hidden.wimh";
};

struct SaeOpts {
  std::string in, out = "sae.wims", trace, variant = "fc-relu";
  std::size_t module = 2, sparse_dim = 128, channels = 8, kernel = 32, patch = 32, expansion = 8;
  std::size_t epochs = 500, batch = 256;
  double lambda = 3e-4, lr = 1e-3, theta = 0.001;
  std::uint64_t seed = 0;
};

struct KoopmanOpts {
  std::string in, out = "koopman.wimk", optimizer = "adam";
  std::size_t module = 2, latent = 128, epochs = 200, batch = 64, warmup = 0;
  double consistency = 0.01, lr = 1e-3;
  bool global = false;
  std::uint64_t seed = 0;
};

struct FitOpts {
  std::string in, out = "cv.json", feature = "speed", codec;
  std::size_t module = 2;
  std::uint64_t seed = 0;
  bool unit = false;
};

struct CompareOpts {
  std::vector<std::string> vectors;
  std::string out = "angles.csv";
};

struct CalibrateOpts {
  std::string model, cv, in, out = "calibration.csv", svg;
  std::vector<double> grid = eval::default_tau_grid();
  double band = 50.0, min_speed = 0.1;
  bool unit = false;
};

struct LinearityOpts {
  std::vector<std::string> curves;
  std::string out = "linearity.csv", reference = "least-squares";
  double band = 50.0;
};

struct SteerOpts {
  std::string model, in, cv, out = "forecasts.jsonl";
  double tau = 0.0;
  int module = -1;
};

struct EvalOpts {
  std::string model, in, cv, out = "metrics.csv";
  std::vector<double> taus;
  double miss = 2.0;
};

struct ShiftOpts {
  std::string model, in, cv, calibration, out = "zero_shot.csv";
  std::vector<double> taus;
  double target = -50.0, over = 1.4, band = 50.0, miss = 2.0;
};

struct ExplainOpts {
  std::string in, codec, out = "explained_variance.csv";
  std::vector<std::string> features = kFeatures;
  std::size_t module = 2, k = 5;
  std::uint64_t seed = 0;
};

struct BenchOpts {
  std::string model, cv, in, out = "bench.json";
  std::size_t samples = 32, iterations = 100;
  double tau = 10.0;
};

struct DemoOpts {
  std::uint64_t seed = 1;
  std::string out = "demo";
  std::size_t train_scenes = 3000, test_scenes = 500, epochs = 8, sae_epochs = 60;
};

// ---- subcommand bodies ----

fs::path run_gen(const GenOpts& o, unsigned threads, Manifest& m) {
  m.seed(o.seed);
  auto scenes = scene::generate_dataset(o.n, o.seed, {}, threads);
  if (o.shift) scenes = shifted(scenes);
  const fs::path out = output_path(o.out);
  scene::write_dataset(scenes, out);
  return finish(m, out);
}

fs::path run_label(const LabelOpts& o, unsigned threads, Manifest& m) {
  auto scenes = load_scenes(o.in, m);
  feat::label_dataset(scenes, o.window == "full" ? feat::Window::full : feat::Window::past, {}, threads);
  const fs::path out = output_path(o.out);
  scene::write_dataset(scenes, out);
  const auto hist = feat::label_histogram([&] {
    std::vector<feat::MotionLabels> l;
    for (const auto& s : scenes) l.push_back(*s.labels);
    return l;
  }());
  num::CsvTable t({"feature", "class", "count"});
  for (std::size_t f = 0; f < 4; ++f)
    for (std::size_t c = 0; c < hist.counts[f].size(); ++c)
      t.add({kFeatures[f], std::string(feat::class_name(static_cast<feat::Feature>(f), static_cast<int>(c))),
             std::to_string(hist.counts[f][c])});
  const fs::path hpath = fs::path(out.string() + ".histogram.csv");
  t.save(hpath);
  m.output(hpath);
  return finish(m, out);
}

fs::path run_train(const TrainOpts& o, Manifest& m) {
  m.seed(o.seed);
  const auto scenes = load_scenes(o.in, m);
  if (scenes.empty()) throw std::invalid_argument("training set is empty");
  model::ModelConfig mc;
  mc.d = o.d;
  mc.heads = o.heads;
  mc.ffn = o.ffn;
  mc.modes = o.modes;
  mc.past_steps = scenes[0].past_steps();
  mc.future_steps = scenes[0].horizon();
  mc.dt = scenes[0].past.dt;
  mc.position_scale = o.position_scale;
  mc.output_scaling = model::output_scaling_from_string(o.scaling);
  mc.seed = o.seed;
  model::MotionFormer net(mc);
  model::TrainConfig tc;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch;
  tc.optimizer = num::OptimizerConfig::adamw(o.lr);
  tc.seed = o.seed;
  const model::TrainResult r = model::train(net, scenes, tc);
  if (r.diverged) std::fprintf(stderr, "warning: training diverged; the last finite parameters were kept\n");
  const fs::path out = output_path(o.out);
  net.save(out);
  if (!o.trace.empty()) {
    num::CsvTable t({"epoch", "loss", "displacement_m"});
    for (std::size_t e = 0; e < r.loss_trace.size(); ++e)
      t.add({std::to_string(e), num::format_number(r.loss_trace[e]),
             e == 0 || e > r.displacement_trace.size() ? "nan" : num::format_number(r.displacement_trace[e - 1])});
    const fs::path tp = output_path(o.trace);
    t.save(tp);
    m.output(tp);
  }
  return finish(m, out);
}

fs::path run_probe(const ProbeOpts& o, unsigned threads, Manifest& m) {
  m.seed(o.seed);
  const auto net = load_model(o.model, m);
  const auto train = load_scenes(o.train, m), test = load_scenes(o.test, m);
  const auto a = model::dump_hidden(net, train, threads), b = model::dump_hidden(net, test, threads);
  std::vector<num::Tensor> ha, hb;
  for (std::size_t k = 0; k < a.modules; ++k) {
    ha.push_back(a.rows(k));
    hb.push_back(b.rows(k));
  }
  model::ProbeConfig pc;
  pc.learning_rate = o.lr;
  pc.epochs = o.epochs;
  pc.batch_size = o.batch;
  pc.seed = o.seed;
  const auto report = collapse::collapse_report(ha, a.labels, hb, b.labels, pc);
  for (const auto& w : report.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  const fs::path out = output_path(o.out);
  report.to_csv().save(out);
  if (!o.heatmap.empty()) {
    const fs::path hp = output_path(o.heatmap);
    collapse::feature_spearman_heatmap(hb.at(o.module), b.labels).to_csv().save(hp);
    m.output(hp);
  }
  return finish(m, out);
}

fs::path run_dump(const DumpOpts& o, unsigned threads, Manifest& m) {
  const auto net = load_model(o.model, m);
  const auto scenes = load_scenes(o.in, m);
  const fs::path out = output_path(o.out);
  model::dump_hidden(net, scenes, threads).save(out);
  return finish(m, out);
}

fs::path run_sae(const SaeOpts& o, Manifest& m) {
  m.seed(o.seed);
  const auto dump = load_dump(o.in, m);
  sae::SaeConfig sc;
  sc.variant = sae::sae_variant_from_string(o.variant);
  sc.d = dump.d;
  sc.sparse_dim = o.sparse_dim;
  sc.theta = o.theta;
  sc.channels = o.channels;
  sc.kernel = o.kernel;
  sc.patch = o.patch;
  sc.mixer_expansion = o.expansion;
  sc.seed = o.seed;
  sae::SaeTrainConfig tc;
  tc.lambda = o.lambda;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch;
  tc.learning_rate = o.lr;
  tc.seed = o.seed;
  const auto r = sae::train_sae(sc, dump.rows(o.module), tc);
  if (r.diverged) std::fprintf(stderr, "warning: SAE training diverged; the best finite epoch was kept\n");
  const fs::path out = output_path(o.out);
  r.model.save(out);
  if (!o.trace.empty()) {
    num::CsvTable t({"epoch", "total", "l2", "l1"});
    for (std::size_t e = 0; e < r.trace.size(); ++e)
      t.add({std::to_string(e), num::format_number(r.trace[e].total), num::format_number(r.trace[e].l2),
             num::format_number(r.trace[e].l1)});
    const fs::path tp = output_path(o.trace);
    t.save(tp);
    m.output(tp);
  }
  return finish(m, out);
}

fs::path run_koopman(const KoopmanOpts& o, Manifest& m) {
  m.seed(o.seed);
  const auto dump = load_dump(o.in, m);
  sae::KoopmanConfig kc;
  kc.d = dump.d;
  kc.latent = o.latent;
  kc.consistency = o.consistency;
  kc.input_conditioned = !o.global;
  kc.seed = o.seed;
  sae::KoopmanTrainConfig tc;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch;
  tc.learning_rate = o.lr;
  tc.optimizer = o.optimizer == "sgd" ? num::OptimizerKind::sgd : num::OptimizerKind::adam;
  tc.operator_warmup = o.warmup;
  tc.seed = o.seed;
  const auto r = sae::train_koopman(kc, dump.sequences(o.module), dump.steps, tc);
  if (r.diverged) std::fprintf(stderr, "warning: Koopman training diverged\n");
  const fs::path out = output_path(o.out);
  r.model.save(out);
  return finish(m, out);
}

fs::path run_fit(const FitOpts& o, Manifest& m) {
  m.seed(o.seed);
  const auto dump = load_dump(o.in, m);
  const auto pair = cv::FeaturePair::standard(feat::feature_from_string(o.feature));
  const auto states = cv::collect_opposing(dump, pair, o.module);
  cv::ControlVector v;
  if (o.codec.empty()) {
    v = cv::fit_plain(states, pair, o.module, o.seed);
  } else {
    const auto codec = load_codec(o.codec, m);
    const std::string prefix = file_magic(o.codec) == kSaeMagic ? "sae:" : "koopman:";
    v = cv::fit_codec(*codec, states, pair, o.module, o.seed, prefix + codec->tag());
  }
  if (o.unit) v = v.unit();
  const fs::path out = output_path(o.out);
  v.save(out);
  return finish(m, out);
}

fs::path run_compare(const CompareOpts& o, Manifest& m) {
  std::vector<cv::ControlVector> vs;
  for (const auto& p : o.vectors) vs.push_back(load_vector(p, m));
  const fs::path out = output_path(o.out);
  cv::compare_matrix(vs).to_csv().save(out);
  return finish(m, out);
}

fs::path run_calibrate(const CalibrateOpts& o, unsigned threads, Manifest& m) {
  const auto net = load_model(o.model, m);
  auto v = load_vector(o.cv, m);
  if (o.unit) v = v.unit();
  const auto scenes = load_scenes(o.in, m);
  eval::CalibrationOptions opt;
  opt.band = o.band;
  opt.min_speed = o.min_speed;
  opt.threads = threads;
  const auto curve = eval::calibration_curve(net, v, scenes, o.grid, opt);
  if (curve.excluded_stationary + curve.excluded_slow > 0)
    std::fprintf(stderr, "excluded %zu stationary and %zu slow samples\n", curve.excluded_stationary,
                 curve.excluded_slow);
  const fs::path out = output_path(o.out);
  curve.to_csv().save(out);
  if (!o.svg.empty()) {
    const fs::path sp = output_path(o.svg);
    const std::vector<eval::CalibrationCurve> cs{curve};
    const std::vector<std::string> names{v.pair.name() + " " + v.source};
    write_text(sp, eval::calibration_svg(cs, names));
    m.output(sp);
  }
  return finish(m, out);
}

fs::path run_linearity(const LinearityOpts& o, Manifest& m) {
  const auto ref = o.reference == "identity" ? eval::ReferenceLine::identity : eval::ReferenceLine::least_squares;
  std::string text;
  for (std::size_t i = 0; i < o.curves.size(); ++i) {
    m.input(require_input(o.curves[i]));
    const auto r = eval::linearity(read_calibration(o.curves[i], o.band), ref);
    const std::string csv = r.to_csv(fs::path(o.curves[i]).stem().string()).str();
    text += i == 0 ? csv : csv.substr(csv.find('\n') + 1);
  }
  const fs::path out = output_path(o.out);
  write_text(out, text);
  return finish(m, out);
}

fs::path run_steer(const SteerOpts& o, unsigned threads, Manifest& m) {
  const auto net = load_model(o.model, m);
  const auto scenes = load_scenes(o.in, m);
  std::vector<model::SteeringDirective> dirs;
  if (!o.cv.empty()) {
    auto d = load_vector(o.cv, m).directive(o.tau);
    if (o.module >= 0) d.module = static_cast<std::size_t>(o.module);
    dirs.push_back(std::move(d));
  }
  const auto outs = net.forward_batch(scenes, dirs, threads, false);
  std::string text;
  for (std::size_t i = 0; i < outs.size(); ++i) {
    const auto& f = outs[i].forecast;
    Json j;
    j["id"] = scenes[i].id;
    j["top1"] = f.top1();
    j["confidences"] = f.confidences;
    Json modes = Json::array();
    for (std::size_t k = 0; k < f.modes; ++k)
      modes.push_back(std::vector<double>(f.positions.begin() + static_cast<long>(k * f.horizon * 2),
                                          f.positions.begin() + static_cast<long>((k + 1) * f.horizon * 2)));
    j["modes"] = modes;
    text += j.dump() + "\n";
  }
  const fs::path out = output_path(o.out);
  write_text(out, text);
  return finish(m, out);
}

fs::path write_table(const eval::ZeroShotTable& table, const std::string& path, Manifest& m) {
  const fs::path out = output_path(path);
  table.to_csv().save(out);
  return finish(m, out);
}

fs::path run_eval(const EvalOpts& o, unsigned threads, Manifest& m) {
  const auto net = load_model(o.model, m);
  const auto scenes = load_scenes(o.in, m);
  cv::ControlVector v;
  if (!o.cv.empty())
    v = load_vector(o.cv, m);
  else if (!o.taus.empty())
    throw std::invalid_argument("--tau needs --cv");
  else
    v.v.assign(net.config().d, 0.0);
  return write_table(eval::zero_shot_eval(net, scenes, v, o.taus, threads, o.miss), o.out, m);
}

fs::path run_shift(const ShiftOpts& o, unsigned threads, Manifest& m) {
  const auto net = load_model(o.model, m);
  const auto scenes = shifted(load_scenes(o.in, m));
  const auto v = load_vector(o.cv, m);
  std::vector<double> taus = o.taus;
  if (!o.calibration.empty()) {
    m.input(require_input(o.calibration));
    const double t = eval::tau_for_change(read_calibration(o.calibration, o.band), o.target);
    std::fprintf(stderr, "calibrated tau for %g%%: %.6g\n", o.target, t);
    taus.push_back(t);
    taus.push_back(o.over * t);
  }
  if (taus.empty()) throw std::invalid_argument("eval-shift needs --tau or --calibration");
  return write_table(eval::zero_shot_eval(net, scenes, v, taus, threads, o.miss), o.out, m);
}

fs::path run_explain(const ExplainOpts& o, Manifest& m) {
  m.seed(o.seed);
  const auto dump = load_dump(o.in, m);
  std::unique_ptr<sae::Codec> codec;
  if (!o.codec.empty()) codec = load_codec(o.codec, m);
  std::vector<eval::ExplainedVariance> rows;
  for (const auto& name : o.features) {
    const auto pair = cv::FeaturePair::standard(feat::feature_from_string(name));
    auto states = cv::collect_opposing(dump, pair, o.module);
    if (codec) states = {codec->encode(states.positive), codec->encode(states.negative)};
    const auto diffs = cv::paired_differences(states.positive, states.negative, o.seed);
    rows.push_back(eval::explained_variance(diffs, o.k, pair.name(), codec ? codec->tag() : "plain"));
  }
  const fs::path out = output_path(o.out);
  eval::explained_variance_csv(rows).save(out);
  return finish(m, out);
}

fs::path run_bench(const BenchOpts& o, Manifest& m) {
  const auto net = load_model(o.model, m);
  const auto v = load_vector(o.cv, m);
  auto scenes = load_scenes(o.in, m);
  if (scenes.size() > o.samples) scenes.resize(o.samples);
  const auto r = eval::steering_latency_bench(net, v, scenes, o.iterations, o.tau);
  Json j;
  j["samples"] = scenes.size();
  j["iterations"] = r.iterations;
  j["base_ms"] = r.base_ms;
  j["steered_ms"] = r.steered_ms;
  j["overhead_fraction"] = r.overhead_fraction;
  std::printf("base %.3f ms, steered %.3f ms, overhead %.2f%%\n", r.base_ms, r.steered_ms, 100.0 * r.overhead_fraction);
  const fs::path out = output_path(o.out);
  write_text(out, j.dump(2) + "\n");
  return finish(m, out);
}

fs::path run_demo(const DemoOpts& o, unsigned threads, Manifest& m) {
  m.seed(o.seed);
  const fs::path dir = output_path(o.out);
  fs::create_directories(dir);
  auto say = [](const char* what) { std::fprintf(stderr, "demo: %s\n", what); };

  say("generating scenes");
  auto train = scene::generate_dataset(o.train_scenes, o.seed, {}, threads);
  auto test = scene::generate_dataset(o.test_scenes, o.seed + 1000, {}, threads);
  feat::label_dataset(train, feat::Window::past, {}, threads);
  feat::label_dataset(test, feat::Window::past, {}, threads);
  scene::write_dataset(test, dir / "test.jsonl");

  say("training the model");
  model::ModelConfig mc;
  mc.seed = o.seed;
  model::MotionFormer net(mc);
  model::TrainConfig tc;
  tc.epochs = o.epochs;
  tc.optimizer = num::OptimizerConfig::adamw(1e-3);
  tc.seed = o.seed;
  model::train(net, train, tc);
  net.save(dir / "model.wimm");

  say("probing hidden states");
  const auto a = model::dump_hidden(net, train, threads), b = model::dump_hidden(net, test, threads);
  std::vector<num::Tensor> ha, hb;
  for (std::size_t k = 0; k < a.modules; ++k) {
    ha.push_back(a.rows(k));
    hb.push_back(b.rows(k));
  }
  collapse::collapse_report(ha, a.labels, hb, b.labels, {}).to_csv().save(dir / "collapse.csv");

  say("fitting control vectors");
  std::vector<cv::ControlVector> vectors;
  for (const auto& name : kFeatures) {
    const auto pair = cv::FeaturePair::standard(feat::feature_from_string(name));
    vectors.push_back(cv::fit_plain(cv::collect_opposing(a, pair, 2), pair, 2, o.seed));
    vectors.back().save(dir / ("cv_" + name + ".json"));
  }
  cv::compare_matrix(vectors).to_csv().save(dir / "angles.csv");

  say("training the SAE");
  sae::SaeConfig sc;
  sc.d = mc.d;
  sc.sparse_dim = 2 * mc.d;
  sc.seed = o.seed;
  sae::SaeTrainConfig st;
  st.epochs = o.sae_epochs;
  st.seed = o.seed;
  const auto sr = sae::train_sae(sc, a.rows(2), st);
  sr.model.save(dir / "sae.wims");
  const auto pair = cv::FeaturePair::standard(feat::Feature::speed);
  const auto sv = cv::fit_codec(sr.model, cv::collect_opposing(a, pair, 2), pair, 2, o.seed, "sae:" + sr.model.tag());
  sv.save(dir / "cv_speed_sae.json");

  say("calibrating");
  eval::CalibrationOptions opt;
  opt.threads = threads;
  const auto grid = eval::default_tau_grid();
  const auto plain_curve = eval::calibration_curve(net, vectors[0], test, grid, opt);
  const auto sae_curve = eval::calibration_curve(net, sv.unit(), test, grid, opt);
  plain_curve.to_csv().save(dir / "calibration_plain.csv");
  sae_curve.to_csv().save(dir / "calibration_sae.csv");
  const std::vector<eval::CalibrationCurve> curves{plain_curve, sae_curve};
  const std::vector<std::string> names{"plain", "sae (unit)"};
  write_text(dir / "calibration.svg", eval::calibration_svg(curves, names));
  std::string lin = eval::linearity(plain_curve).to_csv("plain").str();
  const std::string s = eval::linearity(sae_curve).to_csv("sae").str();
  lin += s.substr(s.find('\n') + 1);
  write_text(dir / "linearity.csv", lin);

  say("zero-shot evaluation");
  std::vector<double> taus;
  try {
    const double t = eval::tau_for_change(plain_curve, -50.0);
    taus = {t, 1.4 * t};
  } catch (const std::invalid_argument&) {
    taus = {-50.0};
  }
  eval::zero_shot_eval(net, shifted(test), vectors[0], taus, threads).to_csv().save(dir / "zero_shot.csv");

  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().filename() != "manifest.json") m.output(e.path());
  return dir;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Motion forecasting interpretability toolkit: probes, control vectors, steering."};
  app.set_version_flag("--version", kToolVersion);
  std::string replay;
  app.add_option("--replay", replay, "Re-run the command recorded in a manifest");
  app.require_subcommand(0, 1);

  unsigned threads = 1;
  std::map<std::string, std::function<fs::path(Manifest&)>> commands;
  auto sub = [&](const std::string& name, const std::string& help) {
    CLI::App* s = app.add_subcommand(name, help);
    s->add_option("--threads", threads, "Worker threads; results do not depend on it")
        ->capture_default_str()
        ->check(CLI::Range(1u, 256u));
    return s;
  };

  GenOpts gen;
  {
    auto* s = sub("gen", "Generate synthetic scenes");
    s->add_option("--n", gen.n, "Number of scenes")->capture_default_str();
    s->add_option("--seed", gen.seed)->capture_default_str();
    s->add_flag("--shift", gen.shift, "Apply the future speed shift");
    s->add_option("--out", gen.out)->capture_default_str();
    commands["gen"] = [&](Manifest& m) { return run_gen(gen, threads, m); };
  }
  LabelOpts label;
  {
    auto* s = sub("label", "Attach motion feature labels to a scene file");
    s->add_option("--in", label.in)->required();
    s->add_option("--out", label.out)->capture_default_str();
    s->add_option("--window", label.window)->check(CLI::IsMember({"past", "full"}))->capture_default_str();
    commands["label"] = [&](Manifest& m) { return run_label(label, threads, m); };
  }
  TrainOpts train;
  {
    auto* s = sub("train", "Train the motion transformer");
    s->add_option("--in", train.in, "Labeled scenes")->required();
    s->add_option("--out", train.out)->capture_default_str();
    s->add_option("--trace", train.trace, "Per-epoch loss CSV");
    s->add_option("--seed", train.seed)->capture_default_str();
    s->add_option("--epochs", train.epochs)->capture_default_str();
    s->add_option("--batch", train.batch)->capture_default_str();
    s->add_option("--lr", train.lr)->capture_default_str();
    s->add_option("--d", train.d)->capture_default_str();
    s->add_option("--heads", train.heads)->capture_default_str();
    s->add_option("--ffn", train.ffn)->capture_default_str();
    s->add_option("--modes", train.modes)->capture_default_str();
    s->add_option("--position-scale", train.position_scale)->capture_default_str();
    s->add_option("--output-scaling", train.scaling)->check(CLI::IsMember({"fixed", "past-speed"}))->capture_default_str();
    commands["train"] = [&](Manifest& m) { return run_train(train, m); };
  }
  ProbeOpts probe;
  {
    auto* s = sub("probe-report", "Linear probing accuracy, std-l2 norm and CDNV per module and feature");
    s->add_option("--model", probe.model)->required();
    s->add_option("--train", probe.train, "Scenes the probes are fitted on")->required();
    s->add_option("--test", probe.test, "Held-out scenes")->required();
    s->add_option("--out", probe.out)->capture_default_str();
    s->add_option("--heatmap", probe.heatmap, "Spearman heatmap of cluster means (CSV)");
    s->add_option("--module", probe.module, "Module for the heatmap")->check(CLI::Range(0, 2))->capture_default_str();
    s->add_option("--probe-epochs", probe.epochs)->capture_default_str();
    s->add_option("--probe-batch", probe.batch)->capture_default_str();
    s->add_option("--probe-lr", probe.lr)->capture_default_str();
    s->add_option("--seed", probe.seed)->capture_default_str();
    commands["probe-report"] = [&](Manifest& m) { return run_probe(probe, threads, m); };
  }
  DumpOpts dump;
  {
    auto* s = sub("dump-hidden", "Record hidden states of every module");
    s->add_option("--model", dump.model)->required();
    s->add_option("--in", dump.in)->required();
    s->add_option("--out", dump.out)->capture_default_str();
    commands["dump-hidden"] = [&](Manifest& m) { return run_dump(dump, threads, m); };
  }
  SaeOpts sae_o;
  {
    auto* s = sub("train-sae", "Train a sparse autoencoder on H(module, -1)");
    s->add_option("--in", sae_o.in, "Hidden-state dump")->required();
    s->add_option("--out", sae_o.out)->capture_default_str();
    s->add_option("--trace", sae_o.trace, "Per-epoch loss CSV");
    s->add_option("--module", sae_o.module)->check(CLI::Range(0, 2))->capture_default_str();
    s->add_option("--variant", sae_o.variant)
        ->check(CLI::IsMember({"fc-relu", "fc-jumprelu", "fc-tied", "conv", "conv-jumprelu", "mixer", "mixer-jumprelu"}))
        ->capture_default_str();
    s->add_option("--sparse-dim", sae_o.sparse_dim)->capture_default_str();
    s->add_option("--theta", sae_o.theta, "JumpReLU threshold")->capture_default_str();
    s->add_option("--channels", sae_o.channels)->capture_default_str();
    s->add_option("--kernel", sae_o.kernel)->capture_default_str();
    s->add_option("--patch", sae_o.patch)->capture_default_str();
    s->add_option("--expansion", sae_o.expansion)->capture_default_str();
    s->add_option("--lambda", sae_o.lambda)->capture_default_str();
    s->add_option("--epochs", sae_o.epochs)->capture_default_str();
    s->add_option("--batch", sae_o.batch)->capture_default_str();
    s->add_option("--lr", sae_o.lr)->capture_default_str();
    s->add_option("--seed", sae_o.seed)->capture_default_str();
    commands["train-sae"] = [&](Manifest& m) { return run_sae(sae_o, m); };
  }
  KoopmanOpts koop;
  {
    auto* s = sub("train-koopman", "Train a Koopman autoencoder on hidden-state sequences");
    s->add_option("--in", koop.in, "Hidden-state dump")->required();
    s->add_option("--out", koop.out)->capture_default_str();
    s->add_option("--module", koop.module)->check(CLI::Range(0, 2))->capture_default_str();
    s->add_option("--latent", koop.latent)->capture_default_str();
    s->add_option("--consistency", koop.consistency)->capture_default_str();
    s->add_flag("--global-operators", koop.global, "Learn one C and D instead of input-conditioned operators");
    s->add_option("--epochs", koop.epochs)->capture_default_str();
    s->add_option("--batch", koop.batch)->capture_default_str();
    s->add_option("--lr", koop.lr)->capture_default_str();
    s->add_option("--optimizer", koop.optimizer)->check(CLI::IsMember({"adam", "sgd"}))->capture_default_str();
    s->add_option("--operator-warmup", koop.warmup, "Epochs with frozen operators")->capture_default_str();
    s->add_option("--seed", koop.seed)->capture_default_str();
    commands["train-koopman"] = [&](Manifest& m) { return run_koopman(koop, m); };
  }
  FitOpts fit;
  {
    auto* s = sub("fit-cv", "Fit a control vector for an opposing feature pair");
    s->add_option("--in", fit.in, "Hidden-state dump")->required();
    s->add_option("--out", fit.out)->capture_default_str();
    s->add_option("--feature", fit.feature)->check(CLI::IsMember(kFeatures))->capture_default_str();
    s->add_option("--module", fit.module)->check(CLI::Range(0, 2))->capture_default_str();
    s->add_option("--codec", fit.codec, "SAE (.wims) or Koopman (.wimk) file");
    s->add_option("--seed", fit.seed)->capture_default_str();
    s->add_flag("--unit", fit.unit, "Store the vector with unit norm");
    commands["fit-cv"] = [&](Manifest& m) { return run_fit(fit, m); };
  }
  CompareOpts cmp;
  {
    auto* s = sub("compare-cv", "Pairwise angles between control vectors");
    s->add_option("vectors", cmp.vectors, "Control-vector JSON files")->required()->expected(2, 1 << 20);
    s->add_option("--out", cmp.out)->capture_default_str();
    commands["compare-cv"] = [&](Manifest& m) { return run_compare(cmp, m); };
  }
  CalibrateOpts cal;
  {
    auto* s = sub("calibrate", "Relative speed change of the top-1 forecast over a tau grid");
    s->add_option("--model", cal.model)->required();
    s->add_option("--cv", cal.cv)->required();
    s->add_option("--in", cal.in)->required();
    s->add_option("--out", cal.out)->capture_default_str();
    s->add_option("--svg", cal.svg, "Also draw the curve");
    s->add_option("--grid", cal.grid, "Comma-separated increasing tau values")->delimiter(',')->capture_default_str();
    s->add_option("--band", cal.band)->capture_default_str();
    s->add_option("--min-speed", cal.min_speed)->capture_default_str();
    s->add_flag("--unit", cal.unit, "Normalize the vector before steering");
    commands["calibrate"] = [&](Manifest& m) { return run_calibrate(cal, threads, m); };
  }
  LinearityOpts lin;
  {
    auto* s = sub("linearity", "Pearson, R^2 and straightness of calibration curves");
    s->add_option("curves", lin.curves, "Calibration CSV files")->required();
    s->add_option("--out", lin.out)->capture_default_str();
    s->add_option("--band", lin.band)->capture_default_str();
    s->add_option("--reference", lin.reference)->check(CLI::IsMember({"least-squares", "identity"}))->capture_default_str();
    commands["linearity"] = [&](Manifest& m) { return run_linearity(lin, m); };
  }
  SteerOpts steer;
  {
    auto* s = sub("steer", "Write forecasts, optionally steered by tau times a control vector");
    s->add_option("--model", steer.model)->required();
    s->add_option("--in", steer.in)->required();
    s->add_option("--cv", steer.cv);
    s->add_option("--tau", steer.tau)->capture_default_str();
    s->add_option("--module", steer.module, "Override the vector's module")->check(CLI::Range(0, 2));
    s->add_option("--out", steer.out)->capture_default_str();
    commands["steer"] = [&](Manifest& m) { return run_steer(steer, threads, m); };
  }
  EvalOpts ev;
  {
    auto* s = sub("eval", "minADE, minFDE, Brier variants and miss rate");
    s->add_option("--model", ev.model)->required();
    s->add_option("--in", ev.in)->required();
    s->add_option("--cv", ev.cv);
    s->add_option("--tau", ev.taus, "Steered rows (comma-separated)")->delimiter(',');
    s->add_option("--miss-threshold", ev.miss)->capture_default_str();
    s->add_option("--out", ev.out)->capture_default_str();
    commands["eval"] = [&](Manifest& m) { return run_eval(ev, threads, m); };
  }
  ShiftOpts sh;
  {
    auto* s = sub("eval-shift", "Zero-shot table on scenes with a halved future speed");
    s->add_option("--model", sh.model)->required();
    s->add_option("--in", sh.in, "Unshifted held-out scenes")->required();
    s->add_option("--cv", sh.cv)->required();
    s->add_option("--calibration", sh.calibration, "Calibration CSV used to pick tau for --target");
    s->add_option("--tau", sh.taus, "Extra steered rows (comma-separated)")->delimiter(',');
    s->add_option("--target", sh.target, "Target relative speed change (%)")->capture_default_str();
    s->add_option("--over", sh.over, "Factor for the over-corrected row")->capture_default_str();
    s->add_option("--band", sh.band)->capture_default_str();
    s->add_option("--miss-threshold", sh.miss)->capture_default_str();
    s->add_option("--out", sh.out)->capture_default_str();
    commands["eval-shift"] = [&](Manifest& m) { return run_shift(sh, threads, m); };
  }
  ExplainOpts ex;
  {
    auto* s = sub("explained-var", "PCA explained-variance ratios of paired differences");
    s->add_option("--in", ex.in, "Hidden-state dump")->required();
    s->add_option("--codec", ex.codec, "Measure in the code space of this SAE or Koopman file");
    s->add_option("--feature", ex.features)->delimiter(',')->check(CLI::IsMember(kFeatures));
    s->add_option("--module", ex.module)->check(CLI::Range(0, 2))->capture_default_str();
    s->add_option("--k", ex.k, "Components")->capture_default_str();
    s->add_option("--seed", ex.seed)->capture_default_str();
    s->add_option("--out", ex.out)->capture_default_str();
    commands["explained-var"] = [&](Manifest& m) { return run_explain(ex, m); };
  }
  BenchOpts bench;
  {
    auto* s = sub("bench", "Steering latency overhead");
    s->add_option("--model", bench.model)->required();
    s->add_option("--cv", bench.cv)->required();
    s->add_option("--in", bench.in)->required();
    s->add_option("--samples", bench.samples)->capture_default_str();
    s->add_option("--iterations", bench.iterations)->capture_default_str();
    s->add_option("--tau", bench.tau)->capture_default_str();
    s->add_option("--out", bench.out)->capture_default_str();
    commands["bench"] = [&](Manifest& m) { return run_bench(bench, m); };
  }
  DemoOpts demo;
  {
    auto* s = sub("demo", "Run the whole pipeline at small scale");
    s->add_option("--seed", demo.seed)->capture_default_str();
    s->add_option("--out", demo.out, "Output directory")->capture_default_str();
    s->add_option("--train-scenes", demo.train_scenes)->capture_default_str();
    s->add_option("--test-scenes", demo.test_scenes)->capture_default_str();
    s->add_option("--epochs", demo.epochs)->capture_default_str();
    s->add_option("--sae-epochs", demo.sae_epochs)->capture_default_str();
    commands["demo"] = [&](Manifest& m) { return run_demo(demo, threads, m); };
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: %s\n\n", e.what());
    const auto parsed = app.get_subcommands();
    std::cerr << (parsed.empty() ? app.help() : parsed.front()->help());
    return 2;
  }

  if (!replay.empty()) {
    if (!app.get_subcommands().empty()) {
      std::fprintf(stderr, "error: --replay takes no subcommand\n");
      return 2;
    }
    const Json j = Json::parse(read_text(replay));
    fs::current_path(j.at("working_directory").get<std::string>());
    return run(j.at("argv").get<std::vector<std::string>>());
  }
  if (app.get_subcommands().empty()) {
    std::cerr << app.help();
    return 2;
  }

  CLI::App* chosen = app.get_subcommands().front();
  Manifest manifest(chosen->get_name(), args);
  manifest.snapshot(*chosen);
  const fs::path out = commands.at(chosen->get_name())(manifest);
  manifest.write(manifest_path(out));
  return 0;
}

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  std::string subcommand = args.empty() ? "" : args.front();
  try {
    return run(args);
  } catch (const MissingInput& e) {
    Json j;
    j["error"] = "missing-input";
    j["message"] = e.what();
    std::cerr << j.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    Json j;
    j["error"] = "failed";
    j["subcommand"] = subcommand;
    j["message"] = e.what();
    std::cerr << j.dump() << "\n";
    return 1;
  }
}
