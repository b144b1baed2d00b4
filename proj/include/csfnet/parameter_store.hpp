#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "csfnet/tensor.hpp"

namespace csfnet {

/// Named tensors of a model, kept sorted by name (the serialization order).
///
/// Trainable parameters carry requires_grad; buffers (batch-norm running
/// statistics) are stored alongside so checkpoints restore a model exactly.
class ParameterStore {
 public:
  enum class Kind { kParameter, kBuffer };
  struct Entry {
    Tensor value;
    Kind kind = Kind::kParameter;
  };

  Tensor& add_parameter(const std::string& name, Tensor value);
  Tensor& add_buffer(const std::string& name, Tensor value);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::vector<std::string> parameter_names() const;
  /// Element count over trainable parameters (buffers excluded).
  std::int64_t parameter_count() const;
  void zero_grad();

  /// Copies values from `other`, which must hold exactly the same names and
  /// shapes. Throws FormatError naming the first offending tensor.
  void assign_from(const ParameterStore& other);

 private:
  Tensor& add(const std::string& name, Tensor value, Kind kind);
  std::map<std::string, Entry> entries_;
};

// Checkpoint: "CSFC", u32 version = 1, u32 tensor count, then per tensor:
// u16 name length, UTF-8 name, u8 rank, rank x u32 dims, little-endian f32
// payload. Tensors are written in name order.
void save_checkpoint(const ParameterStore& store, const std::filesystem::path& path);
ParameterStore load_checkpoint(const std::filesystem::path& path);

}  // namespace csfnet
