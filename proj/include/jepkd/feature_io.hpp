// Binary tensor files.
//
//   "JPKD" | version u32 LE | ndim u32 LE | ndim x extent u32 LE | payload
//
// Version 1 payloads are row-major 32-bit floats (narrowed on write, widened on
// read); version 2 payloads are 64-bit floats and are used inside checkpoints.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>

#include "jepkd/tensor.hpp"

namespace jepkd {

enum class FeatureIoErrc { bad_magic = 1, bad_version = 2, truncated = 3, io_error = 4 };

class FeatureFileError : public std::runtime_error {
 public:
  FeatureFileError(FeatureIoErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  FeatureIoErrc code() const { return code_; }

 private:
  FeatureIoErrc code_;
};

enum class TensorEncoding : std::uint32_t { f32 = 1, f64 = 2 };

std::size_t encoded_size(const Tensor& t, TensorEncoding enc);
void append_tensor(std::string& out, const Tensor& t, TensorEncoding enc);
// Parses one tensor starting at `offset`, advancing it past the record.
Tensor parse_tensor(std::span<const char> bytes, std::size_t& offset);

void write_features(const std::filesystem::path& path, const Tensor& t);
Tensor read_features(const std::filesystem::path& path);

// Whole-file helpers shared by the checkpoint and manifest writers.
std::string read_file_bytes(const std::filesystem::path& path);
// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

void put_u32(std::string& out, std::uint32_t v);
std::uint32_t get_u32(std::span<const char> bytes, std::size_t& offset);

}  // namespace jepkd
