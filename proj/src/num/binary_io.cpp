#include "wim/num/binary_io.hpp"

#include <fstream>
#include <iterator>

namespace wim::num {

void BinaryWriter::save(const std::filesystem::path& path) const { write_file_bytes(path, bytes_); }

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

BinaryReader BinaryReader::load(const std::filesystem::path& path) { return BinaryReader(read_file_bytes(path)); }

void BinaryReader::need(std::size_t n) const {
  if (pos_ + n > bytes_.size()) {
    throw FormatError("truncated input at byte offset " + std::to_string(pos_) + ": need " + std::to_string(n) +
                      " more bytes, have " + std::to_string(bytes_.size() - pos_));
  }
}

void BinaryReader::expect_magic(std::string_view tag) {
  need(tag.size());
  if (std::string_view(reinterpret_cast<const char*>(bytes_.data()) + pos_, tag.size()) != tag) {
    throw FormatError("bad magic: expected '" + std::string(tag) + "'");
  }
  pos_ += tag.size();
}

std::string BinaryReader::str() {
  const std::uint32_t n = u32();
  need(n);
  std::string s(reinterpret_cast<const char*>(bytes_.data()) + pos_, n);
  pos_ += n;
  return s;
}

std::vector<double> BinaryReader::f64s(std::size_t n) {
  need(n * 8);
  std::vector<double> out(n);
  for (auto& v : out) v = f64();
  return out;
}

void BinaryReader::expect_end() const {
  if (!at_end()) {
    throw FormatError("trailing bytes after offset " + std::to_string(pos_) + " (" +
                      std::to_string(bytes_.size() - pos_) + " extra)");
  }
}

}  // namespace wim::num
