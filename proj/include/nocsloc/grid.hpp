// Copyright Contributors to the nocsloc Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "nocsloc/geometry.hpp"
#include "nocsloc/rng.hpp"

namespace nocsloc {

// Multi-resolution cubic lattice layout. Vertices sit at cell corners
// including both boundaries: resolution R means R vertices per axis and
// R-1 cells. The default configuration queries to a 5*4 = 20 dim vector.
struct GridShape {
  std::vector<int> resolutions{2, 4, 8, 16, 32};
  int feature_dim = 4;

  int query_dim() const { return static_cast<int>(resolutions.size()) * feature_dim; }
  int level_vertex_count(int level) const;
  void validate() const;
  bool operator==(const GridShape& other) const = default;
};

// Trilinear footprint of one query point: per level, the 8 vertex flat
// offsets (already scaled by feature_dim) and interpolation weights.
// Kept so gradients can be scattered back to the touched vertices.
struct QueryFootprint {
  struct Level {
    int base[8];
    double w[8];
  };
  std::vector<Level> levels;
};

class LatentGrid {
 public:
  LatentGrid() = default;
  explicit LatentGrid(const GridShape& shape);
  static LatentGrid random(const GridShape& shape, uint64_t seed, double amplitude = 1e-2);

  const GridShape& shape() const { return shape_; }
  int num_levels() const { return static_cast<int>(levels_.size()); }
  VecX& level(int i) { return levels_[i]; }
  const VecX& level(int i) const { return levels_[i]; }

  // Per-level trilinear interpolation at u in [0,1]^3, concatenated
  // coarse to fine. Points within 1e-9 outside the cube are clamped;
  // anything further out throws.
  void query(const Vec3& u, VecX& out, QueryFootprint* footprint = nullptr) const;
  VecX query(const Vec3& u) const;

  void set_zero();
  void add_scaled(const LatentGrid& other, double scale);
  double squared_norm() const;

 private:
  GridShape shape_;
  std::vector<VecX> levels_;  // each of size R^3 * feature_dim
};

// Fully connected decoder: input -> hidden x3 (ReLU) -> 4 outputs that
// split into raw density and raw color. Density uses softplus, color
// sigmoid, so sigma >= 0 and color lands in [0,1]^3.
class MlpDecoder {
 public:
  static constexpr int kOutputDim = 4;

  MlpDecoder() = default;
  MlpDecoder(int input_dim, int hidden_dim);  // zero-initialized
  static MlpDecoder kaiming(int input_dim, uint64_t seed, int hidden_dim = 64);

  int input_dim() const { return input_dim_; }
  int hidden_dim() const { return hidden_dim_; }
  int num_layers() const { return static_cast<int>(weights_.size()); }
  MatX& weight(int i) { return weights_[i]; }
  const MatX& weight(int i) const { return weights_[i]; }
  VecX& bias(int i) { return biases_[i]; }
  const VecX& bias(int i) const { return biases_[i]; }

  // Batched forward over columns of X (input_dim x N).
  struct ForwardTape {
    MatX x;       // input_dim x N
    MatX h1, h2, h3;  // post-ReLU activations
    MatX y;       // raw 4 x N output
  };
  void forward(const MatX& X, VecX& sigma, MatX& color, ForwardTape* tape = nullptr) const;
  void decode(const VecX& features, double& sigma, Vec3& color) const;

  // Accumulates parameter gradients into `grad` (same-shaped decoder)
  // and optionally returns input gradients. d_sigma/d_color are the
  // adjoints of the activated outputs.
  void backward(const ForwardTape& tape, const VecX& d_sigma, const MatX& d_color,
                MlpDecoder& grad, MatX* d_input) const;

  void set_zero();
  void add_scaled(const MlpDecoder& other, double scale);

 private:
  int input_dim_ = 0;
  int hidden_dim_ = 0;
  std::vector<MatX> weights_;
  std::vector<VecX> biases_;
};

// Canonical latent grid plus B low-rank deformation bases and the
// decoder shared by every instance of the model.
struct DeformableShapeModel {
  LatentGrid canonical;
  std::vector<LatentGrid> bases;
  MlpDecoder decoder;

  int num_bases() const { return static_cast<int>(bases.size()); }
  const GridShape& grid_shape() const { return canonical.shape(); }

  // Random initialization: grid features ~ U(-amplitude, amplitude),
  // decoder Kaiming with the density output bias pulled down so a fresh
  // model renders nearly empty space.
  static DeformableShapeModel init(const GridShape& shape, int num_bases, uint64_t seed,
                                   int hidden_dim = 64, double grid_amplitude = 1e-2);
};

// Instance latent grid: canonical + (sum_i z_i * basis_i) / B.
// B = 0 returns the canonical grid unchanged.
LatentGrid compose_instance(const DeformableShapeModel& model, const VecX& z);

// Variational per-instance coefficients; sample = mean + exp(lv/2) * eps
// with the draw recorded in epsilon (zero at inference).
struct DeformationCoefficients {
  VecX mean;
  VecX log_variance;
  VecX epsilon;

  static DeformationCoefficients zeros(int num_bases);
  VecX sample() const;
  void resample(Rng& rng);
  void set_inference() { epsilon.setZero(); }
  int size() const { return static_cast<int>(mean.size()); }
};

// Gradient accumulator mirroring a model's parameters.
struct ModelGrad {
  LatentGrid canonical;
  std::vector<LatentGrid> bases;
  MlpDecoder decoder;

  ModelGrad() = default;
  explicit ModelGrad(const DeformableShapeModel& model);
  void set_zero();
  void add(const ModelGrad& other, double scale = 1.0);
};

// A model bound to one instance's coefficients, with the composed grid
// materialized for fast queries.
struct ShapeInstance {
  const DeformableShapeModel* model = nullptr;
  VecX z;
  LatentGrid composed;
};

ShapeInstance make_instance(const DeformableShapeModel& model, const VecX& z);

// sigma/color of the instance field at grid coordinate u in [0,1]^3.
void query_decode(const ShapeInstance& inst, const Vec3& u, double& sigma, Vec3& color);

// Chain-rule pullback of (d_sigma, d_color) at one point onto the grid
// features (canonical and bases via the linear composition), decoder
// weights, and coefficients. d_z may be null when B = 0 or z gradients
// are not wanted.
void query_decode_grad(const ShapeInstance& inst, const Vec3& u, double d_sigma,
                       const Vec3& d_color, ModelGrad& grad, VecX* d_z);

// Distributes a composed-grid feature adjoint at one footprint onto
// canonical/bases/z. Shared by the point-wise pullback above and the
// renderer backward pass.
void scatter_instance_grad(const ShapeInstance& inst, const QueryFootprint& footprint,
                           const VecX& d_features, ModelGrad& grad, VecX* d_z);

}  // namespace nocsloc
