#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace repronlp {

enum class DType : std::uint8_t { f32 = 1, i64 = 2 };

std::string_view dtype_name(DType d);
DType parse_dtype(std::string_view name);

/// Dense row-major tensor. Exactly one of the two storage vectors is used,
/// selected by dtype.
class Tensor {
 public:
  Tensor() : Tensor(DType::f32, {}) {}
  Tensor(DType dtype, std::vector<std::size_t> shape);

  static Tensor f32(std::vector<std::size_t> shape, std::vector<float> data);
  static Tensor i64(std::vector<std::size_t> shape, std::vector<std::int64_t> data);
  /// Rank-1 tensors shaped by their data length.
  static Tensor f32(std::vector<float> data);
  static Tensor i64(std::vector<std::int64_t> data);

  DType dtype() const { return dtype_; }
  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const;

  std::span<float> f32_data();
  std::span<const float> f32_data() const;
  std::span<std::int64_t> i64_data();
  std::span<const std::int64_t> i64_data() const;

  std::string shape_string() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  DType dtype_;
  std::vector<std::size_t> shape_;
  std::vector<float> f32_;
  std::vector<std::int64_t> i64_;
};

std::size_t shape_numel(std::span<const std::size_t> shape);

// .tns: "ZTNS", u32 LE version, u8 dtype, u8 rank, rank x u64 LE extents,
// little-endian row-major payload.
inline constexpr std::uint32_t kTnsVersion = 1;
inline constexpr std::size_t kTnsFixedHeader = 10;

std::string encode_tns(const Tensor& t);
/// Decodes one tensor starting at `offset`, advancing it past the tensor.
Tensor decode_tns(std::string_view bytes, std::size_t& offset, std::string_view origin = "tensor");
Tensor decode_tns(std::string_view bytes, std::string_view origin = "tensor");

void write_tns(const std::filesystem::path& path, const Tensor& t);
Tensor read_tns(const std::filesystem::path& path);

}  // namespace repronlp
