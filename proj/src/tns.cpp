#include "sitsfuse/tns.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "sitsfuse/error.hpp"

namespace sitsfuse::tns {
namespace {

constexpr char kMagic[8] = {'T', 'N', 'S', 'R', '0', '0', '0', '1'};
static_assert(std::endian::native == std::endian::little,
              "tns I/O assumes a little-endian host");

template <typename T>
void write_impl(const std::filesystem::path& path, const Shape& shape, std::span<const T> values,
                DType dtype) {
  if (numel(shape) != values.size())
    throw std::invalid_argument("tns::write: shape " + shape_str(shape) + " holds " +
                                std::to_string(numel(shape)) + " values, got " +
                                std::to_string(values.size()));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(kMagic, sizeof kMagic);
  const auto rank = static_cast<std::uint32_t>(shape.size());
  out.write(reinterpret_cast<const char*>(&rank), sizeof rank);
  for (std::size_t d : shape) {
    const auto dim = static_cast<std::uint32_t>(d);
    out.write(reinterpret_cast<const char*>(&dim), sizeof dim);
  }
  const auto code = static_cast<std::uint8_t>(dtype);
  out.write(reinterpret_cast<const char*>(&code), 1);
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size_bytes()));
  if (!out) throw IoError("write failed: " + path.string());
}

std::size_t element_size(DType d) {
  switch (d) {
    case DType::float32: return 4;
    case DType::int32: return 4;
    case DType::float64: return 8;
  }
  return 0;
}

}  // namespace

void write(const std::filesystem::path& path, const Shape& shape, std::span<const float> values) {
  write_impl(path, shape, values, DType::float32);
}
void write(const std::filesystem::path& path, const Shape& shape,
           std::span<const std::int32_t> values) {
  write_impl(path, shape, values, DType::int32);
}
void write(const std::filesystem::path& path, const Shape& shape, std::span<const double> values) {
  write_impl(path, shape, values, DType::float64);
}

Array read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = path.string();
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw FormatError(where + ": bad magic (expected TNSR0001)");
  std::size_t pos = sizeof kMagic;
  auto take = [&](void* dst, std::size_t n) {
    if (pos + n > bytes.size()) throw FormatError(where + ": truncated header");
    std::memcpy(dst, bytes.data() + pos, n);
    pos += n;
  };
  std::uint32_t rank = 0;
  take(&rank, 4);
  if (rank > 16) throw FormatError(where + ": implausible rank " + std::to_string(rank));
  Array a;
  for (std::uint32_t i = 0; i < rank; ++i) {
    std::uint32_t d = 0;
    take(&d, 4);
    a.shape.push_back(d);
  }
  std::uint8_t code = 0;
  take(&code, 1);
  if (code > 2) throw FormatError(where + ": unknown dtype code " + std::to_string(code));
  a.dtype = static_cast<DType>(code);
  const std::size_t count = numel(a.shape);
  const std::size_t payload = bytes.size() - pos;
  if (payload != count * element_size(a.dtype))
    throw FormatError(where + ": header declares " + shape_str(a.shape) + " (" +
                      std::to_string(count * element_size(a.dtype)) + " bytes) but payload has " +
                      std::to_string(payload) + " bytes");
  const char* src = bytes.data() + pos;
  switch (a.dtype) {
    case DType::float32:
      a.f32.resize(count);
      std::memcpy(a.f32.data(), src, payload);
      break;
    case DType::int32:
      a.i32.resize(count);
      std::memcpy(a.i32.data(), src, payload);
      break;
    case DType::float64:
      a.f64.resize(count);
      std::memcpy(a.f64.data(), src, payload);
      break;
  }
  return a;
}

std::vector<float> read_f32(const std::filesystem::path& path, Shape& shape) {
  Array a = read(path);
  if (a.dtype != DType::float32) throw FormatError(path.string() + ": expected float32 payload");
  shape = a.shape;
  return std::move(a.f32);
}

std::vector<std::int32_t> read_i32(const std::filesystem::path& path, Shape& shape) {
  Array a = read(path);
  if (a.dtype != DType::int32) throw FormatError(path.string() + ": expected int32 payload");
  shape = a.shape;
  return std::move(a.i32);
}

Tensor read_f64(const std::filesystem::path& path) {
  Array a = read(path);
  if (a.dtype != DType::float64) throw FormatError(path.string() + ": expected float64 payload");
  return Tensor(a.shape, std::move(a.f64));
}

}  // namespace sitsfuse::tns
