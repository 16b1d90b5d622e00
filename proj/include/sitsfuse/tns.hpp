#pragma once

// `.tns` tensor files: 8-byte magic "TNSR0001", uint32 rank, rank × uint32
// dims, uint8 dtype code, then the row-major payload. All integers and
// payload values are little-endian.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "sitsfuse/tensor.hpp"

namespace sitsfuse::tns {

enum class DType : std::uint8_t {
  float32 = 0,
  int32 = 1,
  float64 = 2,  // checkpoints only; datasets use codes 0 and 1
};

struct Array {
  Shape shape;
  DType dtype = DType::float32;
  std::vector<float> f32;
  std::vector<std::int32_t> i32;
  std::vector<double> f64;
};

void write(const std::filesystem::path& path, const Shape& shape, std::span<const float> values);
void write(const std::filesystem::path& path, const Shape& shape,
           std::span<const std::int32_t> values);
void write(const std::filesystem::path& path, const Shape& shape, std::span<const double> values);

Array read(const std::filesystem::path& path);

std::vector<float> read_f32(const std::filesystem::path& path, Shape& shape);
std::vector<std::int32_t> read_i32(const std::filesystem::path& path, Shape& shape);
Tensor read_f64(const std::filesystem::path& path);

}  // namespace sitsfuse::tns
