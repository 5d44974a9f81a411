#include "repronlp/tensor.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "repronlp/digest.hpp"
#include "repronlp/error.hpp"

namespace repronlp {

static_assert(std::endian::native == std::endian::little,
              ".tns payload is written with native byte order; big-endian hosts need swapping");

std::string_view dtype_name(DType d) { return d == DType::f32 ? "f32" : "i64"; }

DType parse_dtype(std::string_view name) {
  if (name == "f32") return DType::f32;
  if (name == "i64") return DType::i64;
  throw DataError("unknown dtype '" + std::string(name) + "'");
}

std::size_t shape_numel(std::span<const std::size_t> shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

Tensor::Tensor(DType dtype, std::vector<std::size_t> shape) : dtype_(dtype), shape_(std::move(shape)) {
  if (dtype_ == DType::f32) f32_.assign(numel(), 0.0f);
  else i64_.assign(numel(), 0);
}

Tensor Tensor::f32(std::vector<std::size_t> shape, std::vector<float> data) {
  if (data.size() != shape_numel(shape)) throw std::invalid_argument("tensor: data length does not match shape");
  Tensor t(DType::f32, {0});
  t.shape_ = std::move(shape);
  t.f32_ = std::move(data);
  return t;
}

Tensor Tensor::i64(std::vector<std::size_t> shape, std::vector<std::int64_t> data) {
  if (data.size() != shape_numel(shape)) throw std::invalid_argument("tensor: data length does not match shape");
  Tensor t(DType::i64, {0});
  t.shape_ = std::move(shape);
  t.i64_ = std::move(data);
  return t;
}

Tensor Tensor::f32(std::vector<float> data) {
  const std::size_t n = data.size();
  return f32({n}, std::move(data));
}

Tensor Tensor::i64(std::vector<std::int64_t> data) {
  const std::size_t n = data.size();
  return i64({n}, std::move(data));
}

std::size_t Tensor::numel() const { return shape_numel(shape_); }

std::span<float> Tensor::f32_data() {
  if (dtype_ != DType::f32) throw std::logic_error("tensor is not f32");
  return f32_;
}
std::span<const float> Tensor::f32_data() const {
  if (dtype_ != DType::f32) throw std::logic_error("tensor is not f32");
  return f32_;
}
std::span<std::int64_t> Tensor::i64_data() {
  if (dtype_ != DType::i64) throw std::logic_error("tensor is not i64");
  return i64_;
}
std::span<const std::int64_t> Tensor::i64_data() const {
  if (dtype_ != DType::i64) throw std::logic_error("tensor is not i64");
  return i64_;
}

std::string Tensor::shape_string() const {
  std::string s = "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape_[i]);
  }
  return s + "]";
}

namespace {

template <class T>
void put_le(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T get_le(std::string_view bytes, std::size_t& offset, std::string_view origin) {
  if (offset + sizeof(T) > bytes.size()) throw StoreError(std::string(origin) + ": truncated tensor");
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  offset += sizeof(T);
  return v;
}

}  // namespace

std::string encode_tns(const Tensor& t) {
  std::string out;
  const std::size_t elem = t.dtype() == DType::f32 ? 4 : 8;
  out.reserve(kTnsFixedHeader + 8 * t.rank() + elem * t.numel());
  out.append("ZTNS", 4);
  put_le<std::uint32_t>(out, kTnsVersion);
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype()));
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
  for (auto e : t.shape()) put_le<std::uint64_t>(out, e);
  if (t.dtype() == DType::f32) {
    auto d = t.f32_data();
    out.append(reinterpret_cast<const char*>(d.data()), d.size_bytes());
  } else {
    auto d = t.i64_data();
    out.append(reinterpret_cast<const char*>(d.data()), d.size_bytes());
  }
  return out;
}

Tensor decode_tns(std::string_view bytes, std::size_t& offset, std::string_view origin) {
  const std::string o(origin);
  if (offset + 4 > bytes.size() || bytes.substr(offset, 4) != "ZTNS") throw StoreError(o + ": bad magic");
  offset += 4;
  if (get_le<std::uint32_t>(bytes, offset, origin) != kTnsVersion) throw StoreError(o + ": unsupported version");
  const auto dtype_byte = get_le<std::uint8_t>(bytes, offset, origin);
  if (dtype_byte != 1 && dtype_byte != 2) throw StoreError(o + ": bad dtype byte");
  const auto dtype = static_cast<DType>(dtype_byte);
  const auto rank = get_le<std::uint8_t>(bytes, offset, origin);
  std::vector<std::size_t> shape(rank);
  for (auto& e : shape) e = get_le<std::uint64_t>(bytes, offset, origin);
  const std::size_t n = shape_numel(shape);
  const std::size_t elem = dtype == DType::f32 ? 4 : 8;
  if (offset + n * elem > bytes.size()) throw StoreError(o + ": payload shorter than shape");
  Tensor t(dtype, std::move(shape));
  if (dtype == DType::f32) std::memcpy(t.f32_data().data(), bytes.data() + offset, n * elem);
  else std::memcpy(t.i64_data().data(), bytes.data() + offset, n * elem);
  offset += n * elem;
  return t;
}

Tensor decode_tns(std::string_view bytes, std::string_view origin) {
  std::size_t offset = 0;
  Tensor t = decode_tns(bytes, offset, origin);
  if (offset != bytes.size()) throw StoreError(std::string(origin) + ": trailing bytes after tensor");
  return t;
}

void write_tns(const std::filesystem::path& path, const Tensor& t) {
  const auto bytes = encode_tns(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StoreError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw StoreError("short write to " + path.string());
}

Tensor read_tns(const std::filesystem::path& path) {
  std::string bytes;
  try {
    bytes = read_file_bytes(path);
  } catch (const DataError&) {
    throw StoreError("cannot open " + path.string());
  }
  return decode_tns(bytes, path.string());
}

}  // namespace repronlp
