// Copyright Contributors to the nocsloc Project
// SPDX-License-Identifier: Apache-2.0

#include "nocsloc/grid.hpp"

#include <cmath>
#include <stdexcept>

namespace nocsloc {

namespace {

constexpr double kClampTolerance = 1e-9;

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

int GridShape::level_vertex_count(int level) const {
  const int r = resolutions[level];
  return r * r * r;
}

void GridShape::validate() const {
  if (resolutions.empty()) throw std::invalid_argument("GridShape: no levels");
  if (feature_dim <= 0) throw std::invalid_argument("GridShape: feature_dim must be positive");
  for (int r : resolutions)
    if (r < 2) throw std::invalid_argument("GridShape: level resolution must be >= 2");
}

LatentGrid::LatentGrid(const GridShape& shape) : shape_(shape) {
  shape.validate();
  levels_.reserve(shape.resolutions.size());
  for (size_t i = 0; i < shape.resolutions.size(); ++i)
    levels_.push_back(VecX::Zero(shape.level_vertex_count(static_cast<int>(i)) * shape.feature_dim));
}

LatentGrid LatentGrid::random(const GridShape& shape, uint64_t seed, double amplitude) {
  LatentGrid grid(shape);
  Rng rng(seed);
  for (auto& level : grid.levels_)
    for (int i = 0; i < level.size(); ++i) level[i] = rng.uniform(-amplitude, amplitude);
  return grid;
}

void LatentGrid::query(const Vec3& u, VecX& out, QueryFootprint* footprint) const {
  Vec3 q = u;
  for (int i = 0; i < 3; ++i) {
    if (q[i] < -kClampTolerance || q[i] > 1.0 + kClampTolerance)
      throw std::out_of_range("LatentGrid::query: point outside the unit cube");
    q[i] = std::min(1.0, std::max(0.0, q[i]));
  }

  const int fdim = shape_.feature_dim;
  out.resize(shape_.query_dim());
  if (footprint) footprint->levels.resize(levels_.size());

  for (size_t li = 0; li < levels_.size(); ++li) {
    const int r = shape_.resolutions[li];
    const int cells = r - 1;
    int idx[3];
    double frac[3];
    for (int a = 0; a < 3; ++a) {
      const double c = q[a] * cells;
      int i0 = static_cast<int>(std::floor(c));
      if (i0 > cells - 1) i0 = cells - 1;
      idx[a] = i0;
      frac[a] = c - i0;
    }
    const VecX& data = levels_[li];
    QueryFootprint::Level* fp = footprint ? &footprint->levels[li] : nullptr;
    double* dst = out.data() + li * fdim;
    for (int k = 0; k < fdim; ++k) dst[k] = 0.0;
    int corner = 0;
    for (int dx = 0; dx <= 1; ++dx) {
      const double wx = dx ? frac[0] : 1.0 - frac[0];
      for (int dy = 0; dy <= 1; ++dy) {
        const double wy = dy ? frac[1] : 1.0 - frac[1];
        for (int dz = 0; dz <= 1; ++dz) {
          const double wz = dz ? frac[2] : 1.0 - frac[2];
          const double w = wx * wy * wz;
          const int vert = ((idx[0] + dx) * r + (idx[1] + dy)) * r + (idx[2] + dz);
          const int base = vert * fdim;
          for (int k = 0; k < fdim; ++k) dst[k] += w * data[base + k];
          if (fp) {
            fp->base[corner] = base;
            fp->w[corner] = w;
          }
          ++corner;
        }
      }
    }
  }
}

VecX LatentGrid::query(const Vec3& u) const {
  VecX out;
  query(u, out);
  return out;
}

void LatentGrid::set_zero() {
  for (auto& level : levels_) level.setZero();
}

void LatentGrid::add_scaled(const LatentGrid& other, double scale) {
  if (!(shape_ == other.shape_)) throw std::invalid_argument("LatentGrid: shape mismatch");
  for (size_t i = 0; i < levels_.size(); ++i) levels_[i] += scale * other.levels_[i];
}

double LatentGrid::squared_norm() const {
  double s = 0.0;
  for (const auto& level : levels_) s += level.squaredNorm();
  return s;
}

MlpDecoder::MlpDecoder(int input_dim, int hidden_dim)
    : input_dim_(input_dim), hidden_dim_(hidden_dim) {
  if (input_dim <= 0 || hidden_dim <= 0)
    throw std::invalid_argument("MlpDecoder: dimensions must be positive");
  const int dims[5] = {input_dim, hidden_dim, hidden_dim, hidden_dim, kOutputDim};
  for (int i = 0; i < 4; ++i) {
    weights_.push_back(MatX::Zero(dims[i + 1], dims[i]));
    biases_.push_back(VecX::Zero(dims[i + 1]));
  }
}

MlpDecoder MlpDecoder::kaiming(int input_dim, uint64_t seed, int hidden_dim) {
  MlpDecoder mlp(input_dim, hidden_dim);
  Rng rng(seed);
  for (auto& W : mlp.weights_) {
    const double scale = std::sqrt(2.0 / static_cast<double>(W.cols()));
    for (int c = 0; c < W.cols(); ++c)
      for (int r = 0; r < W.rows(); ++r) W(r, c) = scale * rng.normal();
  }
  return mlp;
}

void MlpDecoder::forward(const MatX& X, VecX& sigma, MatX& color, ForwardTape* tape) const {
  if (X.rows() != input_dim_) throw std::invalid_argument("MlpDecoder::forward: feature dim mismatch");
  const auto n = X.cols();
  MatX h1 = ((weights_[0] * X).colwise() + biases_[0]).cwiseMax(0.0);
  MatX h2 = ((weights_[1] * h1).colwise() + biases_[1]).cwiseMax(0.0);
  MatX h3 = ((weights_[2] * h2).colwise() + biases_[2]).cwiseMax(0.0);
  MatX y = (weights_[3] * h3).colwise() + biases_[3];

  sigma.resize(n);
  color.resize(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    sigma[i] = softplus(y(0, i));
    for (int k = 0; k < 3; ++k) color(k, i) = sigmoid(y(1 + k, i));
  }
  if (tape) {
    tape->x = X;
    tape->h1 = std::move(h1);
    tape->h2 = std::move(h2);
    tape->h3 = std::move(h3);
    tape->y = std::move(y);
  }
}

void MlpDecoder::decode(const VecX& features, double& sigma, Vec3& color) const {
  VecX s;
  MatX c;
  forward(features, s, c);
  sigma = s[0];
  color = c.col(0);
}

void MlpDecoder::backward(const ForwardTape& tape, const VecX& d_sigma, const MatX& d_color,
                          MlpDecoder& grad, MatX* d_input) const {
  const auto n = tape.x.cols();
  MatX dy(kOutputDim, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    dy(0, i) = d_sigma[i] * sigmoid(tape.y(0, i));  // d softplus = sigmoid
    for (int k = 0; k < 3; ++k) {
      const double s = sigmoid(tape.y(1 + k, i));
      dy(1 + k, i) = d_color(k, i) * s * (1.0 - s);
    }
  }

  grad.weights_[3].noalias() += dy * tape.h3.transpose();
  grad.biases_[3] += dy.rowwise().sum();
  MatX dh3 = (weights_[3].transpose() * dy).cwiseProduct((tape.h3.array() > 0.0).cast<double>().matrix());

  grad.weights_[2].noalias() += dh3 * tape.h2.transpose();
  grad.biases_[2] += dh3.rowwise().sum();
  MatX dh2 = (weights_[2].transpose() * dh3).cwiseProduct((tape.h2.array() > 0.0).cast<double>().matrix());

  grad.weights_[1].noalias() += dh2 * tape.h1.transpose();
  grad.biases_[1] += dh2.rowwise().sum();
  MatX dh1 = (weights_[1].transpose() * dh2).cwiseProduct((tape.h1.array() > 0.0).cast<double>().matrix());

  grad.weights_[0].noalias() += dh1 * tape.x.transpose();
  grad.biases_[0] += dh1.rowwise().sum();
  if (d_input) d_input->noalias() = weights_[0].transpose() * dh1;
}

void MlpDecoder::set_zero() {
  for (auto& W : weights_) W.setZero();
  for (auto& b : biases_) b.setZero();
}

void MlpDecoder::add_scaled(const MlpDecoder& other, double scale) {
  for (size_t i = 0; i < weights_.size(); ++i) {
    weights_[i] += scale * other.weights_[i];
    biases_[i] += scale * other.biases_[i];
  }
}

DeformableShapeModel DeformableShapeModel::init(const GridShape& shape, int num_bases,
                                                uint64_t seed, int hidden_dim,
                                                double grid_amplitude) {
  if (num_bases < 0) throw std::invalid_argument("DeformableShapeModel: num_bases must be >= 0");
  DeformableShapeModel model;
  Rng rng(seed);
  model.canonical = LatentGrid::random(shape, rng.fork(0).seed(), grid_amplitude);
  for (int i = 0; i < num_bases; ++i)
    model.bases.push_back(LatentGrid::random(shape, rng.fork(1 + i).seed(), grid_amplitude));
  model.decoder = MlpDecoder::kaiming(shape.query_dim(), rng.fork(1000).seed(), hidden_dim);
  // Start the field close to empty; softplus(-4) ~ 0.018.
  model.decoder.bias(3)[0] = -4.0;
  return model;
}

LatentGrid compose_instance(const DeformableShapeModel& model, const VecX& z) {
  const int B = model.num_bases();
  if (z.size() != B)
    throw std::invalid_argument("compose_instance: coefficient length does not match basis count");
  LatentGrid composed = model.canonical;
  for (int i = 0; i < B; ++i) composed.add_scaled(model.bases[i], z[i] / B);
  return composed;
}

DeformationCoefficients DeformationCoefficients::zeros(int num_bases) {
  DeformationCoefficients c;
  c.mean = VecX::Zero(num_bases);
  c.log_variance = VecX::Zero(num_bases);
  c.epsilon = VecX::Zero(num_bases);
  return c;
}

VecX DeformationCoefficients::sample() const {
  return mean + (log_variance.array() / 2.0).exp().matrix().cwiseProduct(epsilon);
}

void DeformationCoefficients::resample(Rng& rng) {
  for (int i = 0; i < epsilon.size(); ++i) epsilon[i] = rng.normal();
}

ModelGrad::ModelGrad(const DeformableShapeModel& model)
    : canonical(model.grid_shape()),
      decoder(model.decoder.input_dim(), model.decoder.hidden_dim()) {
  bases.reserve(model.bases.size());
  for (int i = 0; i < model.num_bases(); ++i) bases.emplace_back(model.grid_shape());
}

void ModelGrad::set_zero() {
  canonical.set_zero();
  for (auto& b : bases) b.set_zero();
  decoder.set_zero();
}

void ModelGrad::add(const ModelGrad& other, double scale) {
  canonical.add_scaled(other.canonical, scale);
  for (size_t i = 0; i < bases.size(); ++i) bases[i].add_scaled(other.bases[i], scale);
  decoder.add_scaled(other.decoder, scale);
}

ShapeInstance make_instance(const DeformableShapeModel& model, const VecX& z) {
  ShapeInstance inst;
  inst.model = &model;
  inst.z = z;
  inst.composed = compose_instance(model, z);
  return inst;
}

void query_decode(const ShapeInstance& inst, const Vec3& u, double& sigma, Vec3& color) {
  VecX features;
  inst.composed.query(u, features);
  inst.model->decoder.decode(features, sigma, color);
}

void scatter_instance_grad(const ShapeInstance& inst, const QueryFootprint& footprint,
                           const VecX& d_features, ModelGrad& grad, VecX* d_z) {
  const DeformableShapeModel& model = *inst.model;
  const int fdim = model.grid_shape().feature_dim;
  const int B = model.num_bases();
  for (size_t li = 0; li < footprint.levels.size(); ++li) {
    const auto& fp = footprint.levels[li];
    const double* df = d_features.data() + li * fdim;
    VecX& canon = grad.canonical.level(static_cast<int>(li));
    for (int c = 0; c < 8; ++c) {
      const int base = fp.base[c];
      const double w = fp.w[c];
      for (int k = 0; k < fdim; ++k) {
        const double g = w * df[k];
        canon[base + k] += g;
        for (int i = 0; i < B; ++i) {
          grad.bases[i].level(static_cast<int>(li))[base + k] += g * inst.z[i] / B;
          if (d_z)
            (*d_z)[i] += g * model.bases[i].level(static_cast<int>(li))[base + k] / B;
        }
      }
    }
  }
}

void query_decode_grad(const ShapeInstance& inst, const Vec3& u, double d_sigma,
                       const Vec3& d_color, ModelGrad& grad, VecX* d_z) {
  VecX features;
  QueryFootprint footprint;
  inst.composed.query(u, features, &footprint);

  MlpDecoder::ForwardTape tape;
  VecX sigma;
  MatX color;
  inst.model->decoder.forward(features, sigma, color, &tape);

  VecX ds(1);
  ds[0] = d_sigma;
  MatX dc(3, 1);
  dc.col(0) = d_color;
  MatX d_input;
  inst.model->decoder.backward(tape, ds, dc, grad.decoder, &d_input);

  scatter_instance_grad(inst, footprint, d_input.col(0), grad, d_z);
}

}  // namespace nocsloc
