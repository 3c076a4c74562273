// Copyright Contributors to the nocsloc Project
// SPDX-License-Identifier: Apache-2.0

#include "nocsloc/io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace nocsloc {

namespace {

constexpr char kTensorMagic[8] = {'N', 'L', 'T', 'E', 'N', 'S', '0', '1'};
constexpr char kCheckpointMagic[8] = {'N', 'L', 'C', 'K', 'P', 'T', '0', '1'};

// This container is defined little-endian; the build targets x86-64.
void write_raw(std::ostream& os, const void* data, size_t bytes) {
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
}

void read_raw(std::istream& is, void* data, size_t bytes) {
  is.read(static_cast<char*>(data), static_cast<std::streamsize>(bytes));
  if (!is) throw std::runtime_error("read_raw: truncated file");
}

void write_u32(std::ostream& os, uint32_t v) { write_raw(os, &v, 4); }
void write_u64(std::ostream& os, uint64_t v) { write_raw(os, &v, 8); }

uint32_t read_u32(std::istream& is) {
  uint32_t v;
  read_raw(is, &v, 4);
  return v;
}

uint64_t read_u64(std::istream& is) {
  uint64_t v;
  read_raw(is, &v, 8);
  return v;
}

void write_f64_array(std::ostream& os, const double* data, size_t count) {
  write_raw(os, data, count * sizeof(double));
}

void read_f64_array(std::istream& is, double* data, size_t count) {
  read_raw(is, data, count * sizeof(double));
}

void write_vecx(std::ostream& os, const VecX& v) {
  write_u64(os, static_cast<uint64_t>(v.size()));
  write_f64_array(os, v.data(), static_cast<size_t>(v.size()));
}

VecX read_vecx(std::istream& is) {
  const uint64_t n = read_u64(is);
  VecX v(static_cast<Eigen::Index>(n));
  read_f64_array(is, v.data(), n);
  return v;
}

void write_grid(std::ostream& os, const LatentGrid& grid) {
  const GridShape& shape = grid.shape();
  write_u32(os, static_cast<uint32_t>(shape.resolutions.size()));
  for (int r : shape.resolutions) write_u32(os, static_cast<uint32_t>(r));
  write_u32(os, static_cast<uint32_t>(shape.feature_dim));
  for (int i = 0; i < grid.num_levels(); ++i)
    write_f64_array(os, grid.level(i).data(), static_cast<size_t>(grid.level(i).size()));
}

LatentGrid read_grid(std::istream& is) {
  GridShape shape;
  shape.resolutions.resize(read_u32(is));
  for (auto& r : shape.resolutions) r = static_cast<int>(read_u32(is));
  shape.feature_dim = static_cast<int>(read_u32(is));
  LatentGrid grid(shape);
  for (int i = 0; i < grid.num_levels(); ++i)
    read_f64_array(is, grid.level(i).data(), static_cast<size_t>(grid.level(i).size()));
  return grid;
}

void write_decoder(std::ostream& os, const MlpDecoder& decoder) {
  write_u32(os, static_cast<uint32_t>(decoder.input_dim()));
  write_u32(os, static_cast<uint32_t>(decoder.hidden_dim()));
  for (int i = 0; i < decoder.num_layers(); ++i) {
    const MatX& W = decoder.weight(i);
    write_f64_array(os, W.data(), static_cast<size_t>(W.size()));
    write_f64_array(os, decoder.bias(i).data(), static_cast<size_t>(decoder.bias(i).size()));
  }
}

MlpDecoder read_decoder(std::istream& is) {
  const int input_dim = static_cast<int>(read_u32(is));
  const int hidden_dim = static_cast<int>(read_u32(is));
  MlpDecoder decoder(input_dim, hidden_dim);
  for (int i = 0; i < decoder.num_layers(); ++i) {
    read_f64_array(is, decoder.weight(i).data(), static_cast<size_t>(decoder.weight(i).size()));
    read_f64_array(is, decoder.bias(i).data(), static_cast<size_t>(decoder.bias(i).size()));
  }
  return decoder;
}

void write_model(std::ostream& os, const DeformableShapeModel& model) {
  write_grid(os, model.canonical);
  write_u32(os, static_cast<uint32_t>(model.num_bases()));
  for (const auto& basis : model.bases) write_grid(os, basis);
  write_decoder(os, model.decoder);
}

DeformableShapeModel read_model(std::istream& is) {
  DeformableShapeModel model;
  model.canonical = read_grid(is);
  const uint32_t num_bases = read_u32(is);
  model.bases.reserve(num_bases);
  for (uint32_t i = 0; i < num_bases; ++i) model.bases.push_back(read_grid(is));
  model.decoder = read_decoder(is);
  return model;
}

void write_coeffs(std::ostream& os, const DeformationCoefficients& c) {
  write_vecx(os, c.mean);
  write_vecx(os, c.log_variance);
  write_vecx(os, c.epsilon);
}

DeformationCoefficients read_coeffs(std::istream& is) {
  DeformationCoefficients c;
  c.mean = read_vecx(is);
  c.log_variance = read_vecx(is);
  c.epsilon = read_vecx(is);
  return c;
}

}  // namespace

uint64_t Tensor::element_count() const {
  uint64_t n = 1;
  for (uint64_t d : dims) n *= d;
  return n;
}

Tensor Tensor::from_f64(std::vector<uint64_t> dims, std::vector<double> data) {
  Tensor t;
  t.dtype = Dtype::f64;
  t.dims = std::move(dims);
  t.f64 = std::move(data);
  if (t.element_count() != t.f64.size()) throw std::invalid_argument("Tensor: dims/data mismatch");
  return t;
}

Tensor Tensor::from_u8(std::vector<uint64_t> dims, std::vector<uint8_t> data) {
  Tensor t;
  t.dtype = Dtype::u8;
  t.dims = std::move(dims);
  t.u8 = std::move(data);
  if (t.element_count() != t.u8.size()) throw std::invalid_argument("Tensor: dims/data mismatch");
  return t;
}

void write_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_tensor: cannot open " + path.string());
  write_raw(os, kTensorMagic, 8);
  const uint8_t dtype = static_cast<uint8_t>(tensor.dtype);
  write_raw(os, &dtype, 1);
  const uint8_t ndim = static_cast<uint8_t>(tensor.dims.size());
  write_raw(os, &ndim, 1);
  for (uint64_t d : tensor.dims) write_u64(os, d);
  switch (tensor.dtype) {
    case Tensor::Dtype::f64:
      write_raw(os, tensor.f64.data(), tensor.f64.size() * sizeof(double));
      break;
    case Tensor::Dtype::u8:
      write_raw(os, tensor.u8.data(), tensor.u8.size());
      break;
    case Tensor::Dtype::i64:
      write_raw(os, tensor.i64.data(), tensor.i64.size() * sizeof(int64_t));
      break;
  }
  if (!os) throw std::runtime_error("write_tensor: write failed for " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_tensor: cannot open " + path.string());
  char magic[8];
  read_raw(is, magic, 8);
  if (std::memcmp(magic, kTensorMagic, 8) != 0)
    throw std::runtime_error("read_tensor: bad magic in " + path.string());
  Tensor t;
  uint8_t dtype, ndim;
  read_raw(is, &dtype, 1);
  read_raw(is, &ndim, 1);
  if (dtype > 2) throw std::runtime_error("read_tensor: unknown dtype");
  t.dtype = static_cast<Tensor::Dtype>(dtype);
  t.dims.resize(ndim);
  for (auto& d : t.dims) d = read_u64(is);
  const uint64_t n = t.element_count();
  switch (t.dtype) {
    case Tensor::Dtype::f64:
      t.f64.resize(n);
      read_raw(is, t.f64.data(), n * sizeof(double));
      break;
    case Tensor::Dtype::u8:
      t.u8.resize(n);
      read_raw(is, t.u8.data(), n);
      break;
    case Tensor::Dtype::i64:
      t.i64.resize(n);
      read_raw(is, t.i64.data(), n * sizeof(int64_t));
      break;
  }
  return t;
}

void write_ppm(const std::filesystem::path& path, int width, int height,
               const std::vector<std::array<uint8_t, 3>>& rgb) {
  if (rgb.size() != static_cast<size_t>(width) * height)
    throw std::invalid_argument("write_ppm: pixel count mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_ppm: cannot open " + path.string());
  os << "P6\n" << width << " " << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size() * 3));
}

void write_pgm(const std::filesystem::path& path, int width, int height,
               const std::vector<uint8_t>& gray) {
  if (gray.size() != static_cast<size_t>(width) * height)
    throw std::invalid_argument("write_pgm: pixel count mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_pgm: cannot open " + path.string());
  os << "P5\n" << width << " " << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
  write_raw(os, kCheckpointMagic, 8);
  write_u64(os, ckpt.seed);
  write_model(os, ckpt.shape_model);
  write_model(os, ckpt.color_model);
  write_u32(os, static_cast<uint32_t>(ckpt.shape_coeffs.size()));
  for (const auto& c : ckpt.shape_coeffs) write_coeffs(os, c);
  write_u32(os, static_cast<uint32_t>(ckpt.color_coeffs.size()));
  for (const auto& c : ckpt.color_coeffs) write_coeffs(os, c);
  if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
  char magic[8];
  read_raw(is, magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path.string());
  Checkpoint ckpt;
  ckpt.seed = read_u64(is);
  ckpt.shape_model = read_model(is);
  ckpt.color_model = read_model(is);
  ckpt.shape_coeffs.resize(read_u32(is));
  for (auto& c : ckpt.shape_coeffs) c = read_coeffs(is);
  ckpt.color_coeffs.resize(read_u32(is));
  for (auto& c : ckpt.color_coeffs) c = read_coeffs(is);
  return ckpt;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_text_file: cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_text_file: cannot open " + path.string());
  os << content;
}

}  // namespace nocsloc
