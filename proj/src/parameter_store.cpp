#include "csfnet/parameter_store.hpp"

#include <cstring>
#include <fstream>

#include "csfnet/tensor_io.hpp"

namespace csfnet {

Tensor& ParameterStore::add(const std::string& name, Tensor value, Kind kind) {
  if (name.empty()) throw std::invalid_argument("parameter name must not be empty");
  if (name.size() > 0xFFFF) throw std::invalid_argument("parameter name too long: " + name);
  auto [it, inserted] = entries_.emplace(name, Entry{std::move(value), kind});
  if (!inserted) throw std::invalid_argument("duplicate parameter name: " + name);
  return it->second.value;
}

Tensor& ParameterStore::add_parameter(const std::string& name, Tensor value) {
  value.set_requires_grad(true);
  return add(name, std::move(value), Kind::kParameter);
}

Tensor& ParameterStore::add_buffer(const std::string& name, Tensor value) {
  return add(name, std::move(value), Kind::kBuffer);
}

Tensor& ParameterStore::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("no parameter named " + name);
  return it->second.value;
}

const Tensor& ParameterStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("no parameter named " + name);
  return it->second.value;
}

std::vector<std::string> ParameterStore::parameter_names() const {
  std::vector<std::string> names;
  for (const auto& [name, e] : entries_)
    if (e.kind == Kind::kParameter) names.push_back(name);
  return names;
}

std::int64_t ParameterStore::parameter_count() const {
  std::int64_t total = 0;
  for (const auto& [name, e] : entries_)
    if (e.kind == Kind::kParameter) total += e.value.numel();
  return total;
}

void ParameterStore::zero_grad() {
  for (auto& [name, e] : entries_) e.value.zero_grad();
}

void ParameterStore::assign_from(const ParameterStore& other) {
  // Validate everything before touching any value.
  for (const auto& [name, e] : other.entries_) {
    auto it = entries_.find(name);
    if (it == entries_.end())
      throw FormatError(FormatError::Kind::kUnknownTensor, "unknown tensor in checkpoint: " + name);
    if (it->second.value.shape() != e.value.shape())
      throw FormatError(FormatError::Kind::kShapeMismatch,
                        "shape mismatch for tensor " + name + ": checkpoint " +
                            shape_str(e.value.shape()) + " vs model " +
                            shape_str(it->second.value.shape()));
  }
  for (const auto& [name, e] : entries_)
    if (!other.contains(name))
      throw FormatError(FormatError::Kind::kMissingTensor, "tensor missing from checkpoint: " + name);
  for (auto& [name, e] : entries_) {
    auto src = other.at(name).data();
    auto dst = e.value.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

namespace {
constexpr char kCheckpointMagic[4] = {'C', 'S', 'F', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace

void save_checkpoint(const ParameterStore& store, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(FormatError::Kind::kIo, "cannot open " + path.string() + " for writing");
  out.write(kCheckpointMagic, 4);
  binio::write_u32(out, kCheckpointVersion);
  binio::write_u32(out, static_cast<std::uint32_t>(store.size()));
  for (const auto& [name, e] : store.entries()) {
    binio::write_u16(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    binio::write_u8(out, static_cast<std::uint8_t>(e.value.rank()));
    for (auto d : e.value.shape()) binio::write_u32(out, static_cast<std::uint32_t>(d));
    binio::write_f32s(out, e.value.data());
  }
  if (!out) throw FormatError(FormatError::Kind::kIo, "write failed: " + path.string());
}

ParameterStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::kIo, "cannot open " + path.string());
  const std::string where = path.string() + ": ";
  try {
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4) throw FormatError(FormatError::Kind::kTruncated, "header truncated");
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
      throw FormatError(FormatError::Kind::kBadMagic, "not a CSFC checkpoint (bad magic)");
    const auto version = binio::read_u32(in);
    if (version != kCheckpointVersion)
      throw FormatError(FormatError::Kind::kBadVersion,
                        "unsupported checkpoint version " + std::to_string(version));
    const auto count = binio::read_u32(in);
    ParameterStore store;
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto len = binio::read_u16(in);
      std::string name(len, '\0');
      in.read(name.data(), len);
      if (in.gcount() != len) throw FormatError(FormatError::Kind::kTruncated, "tensor name truncated");
      const auto rank = binio::read_u8(in);
      if (rank < 1 || rank > 4)
        throw FormatError(FormatError::Kind::kTruncated, "invalid rank for tensor " + name);
      Shape shape;
      for (int d = 0; d < rank; ++d) shape.push_back(binio::read_u32(in));
      Tensor t = Tensor::zeros(shape);
      binio::read_f32s(in, t.data());
      // Kind is not serialized; every loaded tensor is treated as plain data.
      store.add_buffer(name, std::move(t));
    }
    return store;
  } catch (const FormatError& e) {
    throw FormatError(e.kind(), where + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(FormatError::Kind::kTruncated, where + e.what());
  }
}

}  // namespace csfnet
