#include "wim/model/hidden_dump.hpp"

#include <stdexcept>
#include <string>

#include "wim/feat/classify.hpp"
#include "wim/num/binary_io.hpp"

namespace wim::model {

using num::Tensor;

Tensor HiddenDump::rows(std::size_t module, long step) const {
  const long s = step < 0 ? static_cast<long>(steps) + step : step;
  if (module >= modules || s < 0 || s >= static_cast<long>(steps))
    throw std::out_of_range("dump index (" + std::to_string(module) + ", " + std::to_string(step) + ") out of range");
  const std::size_t n = samples();
  Tensor out({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const float* src = values.data() + ((i * modules + module) * steps + static_cast<std::size_t>(s)) * d;
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = src[j];
  }
  return out;
}

Tensor HiddenDump::sequences(std::size_t module) const {
  if (module >= modules) throw std::out_of_range("dump module " + std::to_string(module) + " out of range");
  const std::size_t n = samples();
  Tensor out({n * steps, d});
  for (std::size_t i = 0; i < n; ++i) {
    const float* src = values.data() + (i * modules + module) * steps * d;
    for (std::size_t k = 0; k < steps * d; ++k) out[i * steps * d + k] = src[k];
  }
  return out;
}

HiddenDump HiddenDump::subset(std::span<const std::size_t> keep) const {
  HiddenDump out{modules, steps, d, {}, {}};
  const std::size_t stride = modules * steps * d;
  out.values.reserve(keep.size() * stride);
  for (std::size_t i : keep) {
    if (i >= samples()) throw std::out_of_range("dump sample " + std::to_string(i) + " out of range");
    out.values.insert(out.values.end(), values.begin() + static_cast<long>(i * stride),
                      values.begin() + static_cast<long>((i + 1) * stride));
    out.labels.push_back(labels[i]);
  }
  return out;
}

std::vector<std::uint8_t> HiddenDump::serialize() const {
  if (values.size() != samples() * modules * steps * d) throw std::logic_error("hidden dump size mismatch");
  num::BinaryWriter w;
  w.magic("WIMH");
  w.u32(kHiddenDumpVersion);
  w.u32(static_cast<std::uint32_t>(samples()));
  w.u32(static_cast<std::uint32_t>(modules));
  w.u32(static_cast<std::uint32_t>(steps));
  w.u32(static_cast<std::uint32_t>(d));
  for (float v : values) w.f32(v);
  for (const feat::MotionLabels& l : labels) {
    w.u8(static_cast<std::uint8_t>(l.speed));
    w.u8(static_cast<std::uint8_t>(l.acceleration));
    w.u8(static_cast<std::uint8_t>(l.direction));
    w.u8(static_cast<std::uint8_t>(l.agent));
  }
  return w.bytes();
}

HiddenDump HiddenDump::deserialize(std::span<const std::uint8_t> bytes) {
  num::BinaryReader r({bytes.begin(), bytes.end()});
  r.expect_magic("WIMH");
  const std::uint32_t version = r.u32();
  if (version != kHiddenDumpVersion) throw num::FormatError("unsupported WIMH version " + std::to_string(version));
  HiddenDump dump;
  const std::size_t n = r.u32();
  dump.modules = r.u32();
  dump.steps = r.u32();
  dump.d = r.u32();
  const std::size_t count = n * dump.modules * dump.steps * dump.d;
  if (count * 4 + n * 4 > bytes.size()) throw num::FormatError("WIMH header declares more data than the file holds");
  dump.values.resize(count);
  for (float& v : dump.values) v = r.f32();
  dump.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t at = r.offset();
    std::uint8_t ids[4];
    for (std::uint8_t& id : ids) id = r.u8();
    for (std::size_t f = 0; f < feat::kFeatures.size(); ++f)
      if (ids[f] >= feat::class_count(feat::kFeatures[f]))
        throw num::FormatError("WIMH label out of range at byte offset " + std::to_string(at + f));
    dump.labels[i] = {static_cast<feat::SpeedClass>(ids[0]), static_cast<feat::AccelerationClass>(ids[1]),
                      static_cast<feat::DirectionClass>(ids[2]), static_cast<scene::AgentKind>(ids[3])};
  }
  r.expect_end();
  return dump;
}

void HiddenDump::save(const std::filesystem::path& path) const { num::write_file_bytes(path, serialize()); }

HiddenDump HiddenDump::load(const std::filesystem::path& path) { return deserialize(num::read_file_bytes(path)); }

HiddenDump dump_hidden(const MotionFormer& model, std::span<const scene::Scene> scenes, unsigned threads) {
  const ModelConfig& c = model.config();
  HiddenDump dump{kModules, c.past_steps, c.d, {}, {}};
  const auto outs = model.forward_batch(scenes, {}, threads, true);
  dump.values.reserve(scenes.size() * kModules * c.past_steps * c.d);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    for (double v : outs[i].hidden.values) dump.values.push_back(static_cast<float>(v));
    dump.labels.push_back(scenes[i].labels ? *scenes[i].labels : feat::label_scene(scenes[i]));
  }
  return dump;
}

}  // namespace wim::model
