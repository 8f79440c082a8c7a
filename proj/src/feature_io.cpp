#include "jepkd/feature_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace jepkd {

namespace {

constexpr char kMagic[4] = {'J', 'P', 'K', 'D'};

static_assert(std::endian::native == std::endian::little, "payload encoding assumes a little-endian host");

[[noreturn]] void truncated(const char* what) {
  throw FeatureFileError(FeatureIoErrc::truncated, std::string("truncated tensor record: ") + what);
}

}  // namespace

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

std::uint32_t get_u32(std::span<const char> bytes, std::size_t& offset) {
  if (offset + 4 > bytes.size()) truncated("u32 field");
  std::uint32_t v;
  std::memcpy(&v, bytes.data() + offset, 4);
  offset += 4;
  return v;
}

std::size_t encoded_size(const Tensor& t, TensorEncoding enc) {
  const std::size_t width = enc == TensorEncoding::f32 ? 4 : 8;
  return 12 + 4 * t.rank() + width * t.numel();
}

void append_tensor(std::string& out, const Tensor& t, TensorEncoding enc) {
  out.append(kMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(enc));
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) put_u32(out, static_cast<std::uint32_t>(e));
  if (enc == TensorEncoding::f32) {
    for (double v : t.values()) {
      const float f = static_cast<float>(v);
      char b[4];
      std::memcpy(b, &f, 4);
      out.append(b, 4);
    }
  } else {
    const auto vals = t.values();
    out.append(reinterpret_cast<const char*>(vals.data()), vals.size() * sizeof(double));
  }
}

Tensor parse_tensor(std::span<const char> bytes, std::size_t& offset) {
  if (offset + 4 > bytes.size()) truncated("magic");
  if (std::memcmp(bytes.data() + offset, kMagic, 4) != 0) {
    throw FeatureFileError(FeatureIoErrc::bad_magic, "bad magic: not a JPKD tensor record");
  }
  offset += 4;
  const std::uint32_t version = get_u32(bytes, offset);
  if (version != static_cast<std::uint32_t>(TensorEncoding::f32) &&
      version != static_cast<std::uint32_t>(TensorEncoding::f64)) {
    throw FeatureFileError(FeatureIoErrc::bad_version, "unsupported tensor version " + std::to_string(version));
  }
  const std::uint32_t ndim = get_u32(bytes, offset);
  Shape shape;
  for (std::uint32_t i = 0; i < ndim; ++i) shape.push_back(get_u32(bytes, offset));
  const std::size_t n = shape_numel(shape);
  const std::size_t width = version == 1 ? 4 : 8;
  if (offset + n * width > bytes.size()) truncated("payload");
  std::vector<double> values(n);
  if (version == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, bytes.data() + offset + 4 * i, 4);
      values[i] = f;
    }
  } else {
    std::memcpy(values.data(), bytes.data() + offset, n * 8);
  }
  offset += n * width;
  try {
    return Tensor(std::move(shape), std::move(values));
  } catch (const ShapeError& e) {
    throw FeatureFileError(FeatureIoErrc::truncated, std::string("malformed tensor shape: ") + e.what());
  }
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FeatureFileError(FeatureIoErrc::io_error, "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FeatureFileError(FeatureIoErrc::io_error, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FeatureFileError(FeatureIoErrc::io_error, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw FeatureFileError(FeatureIoErrc::io_error, "cannot rename onto " + path.string() + ": " + ec.message());
}

void write_features(const std::filesystem::path& path, const Tensor& t) {
  std::string bytes;
  bytes.reserve(encoded_size(t, TensorEncoding::f32));
  append_tensor(bytes, t, TensorEncoding::f32);
  write_file_atomic(path, bytes);
}

Tensor read_features(const std::filesystem::path& path) {
  const std::string bytes = read_file_bytes(path);
  std::size_t offset = 0;
  Tensor t = parse_tensor(bytes, offset);
  if (offset != bytes.size()) {
    throw FeatureFileError(FeatureIoErrc::truncated, "trailing bytes after tensor in " + path.string());
  }
  return t;
}

}  // namespace jepkd
