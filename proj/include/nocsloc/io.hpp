// Copyright Contributors to the nocsloc Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nocsloc/grid.hpp"

namespace nocsloc {

// Minimal lossless n-d array container ("NLT"): little-endian binary
// with a magic, dtype tag, dims, then raw data. Used for every numeric
// artifact the CLI writes so round-trips are bit-exact.
struct Tensor {
  enum class Dtype : uint8_t { f64 = 0, u8 = 1, i64 = 2 };

  Dtype dtype = Dtype::f64;
  std::vector<uint64_t> dims;
  std::vector<double> f64;
  std::vector<uint8_t> u8;
  std::vector<int64_t> i64;

  uint64_t element_count() const;
  static Tensor from_f64(std::vector<uint64_t> dims, std::vector<double> data);
  static Tensor from_u8(std::vector<uint64_t> dims, std::vector<uint8_t> data);
};

void write_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_tensor(const std::filesystem::path& path);

// Binary P6/P5 image previews.
void write_ppm(const std::filesystem::path& path, int width, int height,
               const std::vector<std::array<uint8_t, 3>>& rgb);
void write_pgm(const std::filesystem::path& path, int width, int height,
               const std::vector<uint8_t>& gray);

// Fitted models plus per-object coefficients; bit-exact round-trip.
struct Checkpoint {
  DeformableShapeModel shape_model;
  DeformableShapeModel color_model;
  std::vector<DeformationCoefficients> shape_coeffs;
  std::vector<DeformationCoefficients> color_coeffs;
  uint64_t seed = 0;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& content);

}  // namespace nocsloc
