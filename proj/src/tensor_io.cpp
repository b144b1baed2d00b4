#include "csfnet/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace csfnet {
namespace binio {

namespace {

template <typename T>
void write_le(std::ostream& out, T v) {
  std::array<char, sizeof(T)> bytes;
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <typename T>
T read_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes;
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw FormatError(FormatError::Kind::kTruncated, "unexpected end of file");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

void write_u8(std::ostream& out, std::uint8_t v) { out.put(static_cast<char>(v)); }
void write_u16(std::ostream& out, std::uint16_t v) { write_le(out, v); }
void write_u32(std::ostream& out, std::uint32_t v) { write_le(out, v); }

void write_f32s(std::ostream& out, std::span<const float> values) {
  for (float f : values) write_le(out, std::bit_cast<std::uint32_t>(f));
}

std::uint8_t read_u8(std::istream& in) { return read_le<std::uint8_t>(in); }
std::uint16_t read_u16(std::istream& in) { return read_le<std::uint16_t>(in); }
std::uint32_t read_u32(std::istream& in) { return read_le<std::uint32_t>(in); }

void read_f32s(std::istream& in, std::span<float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    const auto bytes = static_cast<std::streamsize>(values.size_bytes());
    in.read(reinterpret_cast<char*>(values.data()), bytes);
    if (in.gcount() != bytes) throw FormatError(FormatError::Kind::kTruncated, "tensor payload truncated");
  } else {
    for (float& f : values) f = std::bit_cast<float>(read_le<std::uint32_t>(in));
  }
}

}  // namespace binio

namespace {
constexpr char kTensorMagic[4] = {'C', 'S', 'F', 'T'};
constexpr std::uint32_t kTensorVersion = 1;
}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kTensorMagic, 4);
  binio::write_u32(out, kTensorVersion);
  binio::write_u8(out, static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.shape()) binio::write_u32(out, static_cast<std::uint32_t>(d));
  binio::write_f32s(out, t.data());
}

Tensor read_tensor(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4) throw FormatError(FormatError::Kind::kTruncated, "tensor header truncated");
  if (std::memcmp(magic, kTensorMagic, 4) != 0)
    throw FormatError(FormatError::Kind::kBadMagic, "not a CSFT tensor file (bad magic)");
  const auto version = binio::read_u32(in);
  if (version != kTensorVersion)
    throw FormatError(FormatError::Kind::kBadVersion,
                      "unsupported CSFT version " + std::to_string(version));
  const auto rank = binio::read_u8(in);
  if (rank < 1 || rank > 4)
    throw FormatError(FormatError::Kind::kTruncated, "invalid tensor rank " + std::to_string(rank));
  Shape shape;
  for (int i = 0; i < rank; ++i) shape.push_back(binio::read_u32(in));
  Tensor t = Tensor::zeros(shape);
  binio::read_f32s(in, t.data());
  return t;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(FormatError::Kind::kIo, "cannot open " + path.string() + " for writing");
  write_tensor(out, t);
  if (!out) throw FormatError(FormatError::Kind::kIo, "write failed: " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::kIo, "cannot open " + path.string());
  try {
    return read_tensor(in);
  } catch (const FormatError& e) {
    throw FormatError(e.kind(), path.string() + ": " + e.what());
  }
}

}  // namespace csfnet
