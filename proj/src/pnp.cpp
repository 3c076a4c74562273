// Copyright Contributors to the nocsloc Project
// SPDX-License-Identifier: Apache-2.0

#include "nocsloc/pnp.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace nocsloc {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

// Stand-in residual magnitude for points that project behind the
// camera while scoring a hypothesis.
constexpr double kNegativeDepthResidual = 1e3;

struct Filtered {
  std::vector<const Correspondence*> corr;  // positive-weight subset
};

Filtered filter_problem(const PnPProblem& problem) {
  Filtered f;
  f.corr.reserve(problem.correspondences.size());
  for (const auto& c : problem.correspondences) {
    if (!(c.weight.x() >= 0.0) || !(c.weight.y() >= 0.0) || !c.weight.allFinite())
      throw std::invalid_argument("PnP: correspondence weights must be finite and >= 0");
    if (c.weight.x() > 0.0 || c.weight.y() > 0.0) f.corr.push_back(&c);
  }
  return f;
}

double cost_of(const Pose4Dof& pose, const Filtered& f, const ObjectSize& size, double delta) {
  double cost = 0.0;
  for (const Correspondence* c : f.corr) {
    bool ok = true;
    const Vec2 r = residual(pose, *c, size, &ok);
    cost += huber(ok ? r.norm() : kNegativeDepthResidual, delta);
  }
  return cost;
}

// Weighted linear least squares for t at fixed yaw: each correspondence
// contributes t_x - u t_z = u a_z - a_x and t_y - v t_z = v a_z - a_y
// with a = R x.
bool solve_translation(double yaw, const Filtered& f, const ObjectSize& size, Vec3* t_out) {
  const Mat3 R = yaw_rotation(yaw);
  Mat3 AtA = Mat3::Zero();
  Vec3 Atb = Vec3::Zero();
  for (const Correspondence* c : f.corr) {
    const Vec3 a = R * nocs_to_object(c->nocs, size);
    const double u = c->p.x(), v = c->p.y();
    const Vec3 row_x(1.0, 0.0, -u);
    const Vec3 row_y(0.0, 1.0, -v);
    const double bx = u * a.z() - a.x();
    const double by = v * a.z() - a.y();
    const double wx = c->weight.x() * c->weight.x();
    const double wy = c->weight.y() * c->weight.y();
    AtA += wx * row_x * row_x.transpose() + wy * row_y * row_y.transpose();
    Atb += wx * bx * row_x + wy * by * row_y;
  }
  Eigen::LDLT<Mat3> ldlt(AtA);
  if (ldlt.info() != Eigen::Success) return false;
  const Vec3 t = ldlt.solve(Atb);
  if (!t.allFinite()) return false;
  *t_out = t;
  return true;
}

// Residual and its Jacobian w.r.t. (yaw, t) for one correspondence.
bool residual_jacobian(const Pose4Dof& pose, const Correspondence& c, const ObjectSize& size,
                       Vec2* r_out, Eigen::Matrix<double, 2, 4>* J_out) {
  const Vec3 x = nocs_to_object(c.nocs, size);
  const Mat3 R = yaw_rotation(pose.yaw);
  const Vec3 y = R * x + pose.t;
  if (!(y.z() > 0.0)) return false;
  const double inv_z = 1.0 / y.z();
  const double u = y.x() * inv_z;
  const double v = y.y() * inv_z;
  (*r_out) << c.weight.x() * (u - c.p.x()), c.weight.y() * (v - c.p.y());

  // dR/dyaw * x
  const double cs = std::cos(pose.yaw), sn = std::sin(pose.yaw);
  const Vec3 dy_dyaw(-sn * x.x() + cs * x.z(), 0.0, -cs * x.x() - sn * x.z());

  // du/dy = [1/z, 0, -x/z^2], dv/dy = [0, 1/z, -y/z^2]
  const Vec3 du_dy(inv_z, 0.0, -y.x() * inv_z * inv_z);
  const Vec3 dv_dy(0.0, inv_z, -y.y() * inv_z * inv_z);

  Eigen::Matrix<double, 2, 4>& J = *J_out;
  J(0, 0) = c.weight.x() * du_dy.dot(dy_dyaw);
  J(1, 0) = c.weight.y() * dv_dy.dot(dy_dyaw);
  for (int k = 0; k < 3; ++k) {
    J(0, 1 + k) = c.weight.x() * du_dy[k];
    J(1, 1 + k) = c.weight.y() * dv_dy[k];
  }
  return true;
}

}  // namespace

void PnPSettings::validate() const {
  if (!(huber_delta > 0.0)) throw std::invalid_argument("PnPSettings: huber_delta must be > 0");
  if (max_iterations < 0) throw std::invalid_argument("PnPSettings: max_iterations must be >= 0");
  if (yaw_hypotheses < 1) throw std::invalid_argument("PnPSettings: need at least one hypothesis");
}

double huber(double x, double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("huber: delta must be > 0");
  const double a = std::abs(x);
  return a <= delta ? 0.5 * x * x : delta * (a - 0.5 * delta);
}

Vec2 residual(const Pose4Dof& pose, const Correspondence& corr, const ObjectSize& size,
              bool* depth_ok) {
  const Vec3 x = nocs_to_object(corr.nocs, size);
  const Vec3 y = pose.rotation() * x + pose.t;
  if (depth_ok) *depth_ok = y.z() > 0.0;
  else if (!(y.z() > 0.0))
    throw std::domain_error("residual: nonpositive projected depth");
  if (!(y.z() > 0.0)) return Vec2::Zero();
  return Vec2(corr.weight.x() * (y.x() / y.z() - corr.p.x()),
              corr.weight.y() * (y.y() / y.z() - corr.p.y()));
}

double robust_cost(const Pose4Dof& pose, const PnPProblem& problem) {
  const Filtered f = filter_problem(problem);
  return cost_of(pose, f, problem.size, problem.settings.huber_delta);
}

PnPSolution solve(const PnPProblem& problem) {
  problem.settings.validate();
  const Filtered f = filter_problem(problem);
  if (f.corr.size() < 4)
    throw std::invalid_argument("PnP: fewer than 4 positively weighted correspondences");
  const double delta = problem.settings.huber_delta;

  // Evenly spaced yaw hypotheses; lowest robust cost (ties to the
  // lowest index) seeds the refinement.
  PnPSolution solution;
  const int K = problem.settings.yaw_hypotheses;
  solution.hypothesis_costs.assign(K, std::numeric_limits<double>::infinity());
  int best = -1;
  Pose4Dof best_pose;
  for (int k = 0; k < K; ++k) {
    const double yaw = wrap_angle(-kPi + (2.0 * kPi * k) / K);
    Vec3 t;
    if (!solve_translation(yaw, f, problem.size, &t)) continue;
    if (!(t.z() > 0.0)) continue;
    const Pose4Dof pose(yaw, t);
    const double cost = cost_of(pose, f, problem.size, delta);
    solution.hypothesis_costs[k] = cost;
    // Strict comparison: ties keep the earlier hypothesis.
    if (best < 0 || cost < solution.hypothesis_costs[best]) {
      best = k;
      best_pose = pose;
    }
  }
  if (best < 0)
    throw std::runtime_error("PnP: unsolvable, every hypothesis gave nonpositive depth");

  // Levenberg-Marquardt over (yaw, t) with IRLS Huber weights; a step
  // is accepted only when the true robust cost decreases.
  Pose4Dof pose = best_pose;
  double cost = solution.hypothesis_costs[best];
  solution.cost_trace.push_back(cost);
  double lambda = 1e-3;
  int iterations = 0;
  bool converged = false;

  using Mat4 = Eigen::Matrix4d;
  using Vec4 = Eigen::Vector4d;
  for (int iter = 0; iter < problem.settings.max_iterations; ++iter) {
    ++iterations;
    Mat4 JtJ = Mat4::Zero();
    Vec4 Jtr = Vec4::Zero();
    for (const Correspondence* c : f.corr) {
      Vec2 r;
      Eigen::Matrix<double, 2, 4> J;
      if (!residual_jacobian(pose, *c, problem.size, &r, &J)) continue;
      const double e = r.norm();
      const double w = e <= delta ? 1.0 : delta / e;  // rho'(e)/e
      JtJ.noalias() += w * J.transpose() * J;
      Jtr.noalias() += w * J.transpose() * r;
    }

    bool stepped = false;
    double step_norm = 0.0;
    for (int attempt = 0; attempt < 12; ++attempt) {
      Mat4 damped = JtJ;
      for (int d = 0; d < 4; ++d) damped(d, d) += lambda * std::max(JtJ(d, d), 1e-12);
      const Vec4 step = damped.ldlt().solve(-Jtr);
      if (!step.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      const Pose4Dof candidate(pose.yaw + step[0], pose.t + step.tail<3>());
      if (!(candidate.t.z() > 0.0)) {
        lambda *= 10.0;
        continue;
      }
      const double candidate_cost = cost_of(candidate, f, problem.size, delta);
      if (candidate_cost < cost) {
        pose = candidate;
        cost = candidate_cost;
        lambda = std::max(lambda * 0.1, 1e-12);
        step_norm = step.norm();
        stepped = true;
        break;
      }
      lambda *= 10.0;
    }
    if (!stepped) {
      converged = true;  // no admissible descent direction left
      break;
    }
    solution.cost_trace.push_back(cost);
    const double prev = solution.cost_trace[solution.cost_trace.size() - 2];
    if (prev - cost < problem.settings.cost_tolerance * std::max(prev, 1e-300) ||
        step_norm < problem.settings.step_tolerance) {
      converged = true;
      break;
    }
  }
  if (problem.settings.max_iterations == 0) converged = true;

  solution.pose = pose;
  solution.final_cost = cost;
  solution.iterations = iterations;
  solution.converged = converged;
  return solution;
}

JacobianMap jacobian_map(const PnPSolution& solution, const PnPProblem& problem) {
  if (!solution.converged)
    throw std::logic_error("jacobian_map: solution has not converged");
  JacobianMap map;
  map.reserve(problem.correspondences.size());
  const Mat3 R = solution.pose.rotation();
  for (const auto& c : problem.correspondences) {
    const Vec3 y = R * nocs_to_object(c.nocs, problem.size) + solution.pose.t;
    const double inv_z = 1.0 / y.z();
    JacobianEntry e;
    e.drx_dtx = inv_z;
    e.drx_dtz = -y.x() * inv_z * inv_z;
    e.dry_dty = inv_z;
    e.dry_dtz = -y.y() * inv_z * inv_z;
    map.push_back(e);
  }
  return map;
}

}  // namespace nocsloc
