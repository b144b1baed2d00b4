#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "csfnet/tensor.hpp"

namespace csfnet {

/// Malformed or unreadable binary file (tensor fixture or checkpoint).
class FormatError : public std::runtime_error {
 public:
  enum class Kind { kIo, kBadMagic, kBadVersion, kTruncated, kUnknownTensor, kShapeMismatch, kMissingTensor };
  FormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Raw tensor fixture: "CSFT", u32 version = 1, u8 rank, rank x u32 dims,
// then little-endian f32 values in row-major order.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

namespace binio {

void write_u8(std::ostream& out, std::uint8_t v);
void write_u16(std::ostream& out, std::uint16_t v);
void write_u32(std::ostream& out, std::uint32_t v);
void write_f32s(std::ostream& out, std::span<const float> values);
std::uint8_t read_u8(std::istream& in);
std::uint16_t read_u16(std::istream& in);
std::uint32_t read_u32(std::istream& in);
void read_f32s(std::istream& in, std::span<float> values);

}  // namespace binio
}  // namespace csfnet
