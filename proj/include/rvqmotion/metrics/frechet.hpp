// Copyright 2026 The rvqmotion Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//       http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Dense>
#include <span>
#include <stdexcept>
#include <string>

#include "rvqmotion/core/tensor.hpp"

namespace rvqmotion {

struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
};

/// Mean and unbiased covariance of N row embeddings of width E.
inline GaussianStats gaussian_stats(std::span<const double> rows, std::size_t width) {
  if (width == 0 || rows.size() % width != 0) throw ShapeError("embedding set is not a whole number of rows");
  const std::size_t n = rows.size() / width;
  if (n < 2) throw std::invalid_argument("Frechet distance needs at least 2 embeddings per set");
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(
      rows.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(width));
  GaussianStats s;
  s.mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - s.mean.transpose();
  s.covariance = centered.transpose() * centered / static_cast<double>(n - 1);
  return s;
}

/// PSD square root of the symmetric part of `m`, negative eigenvalues clamped to 0.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  const Eigen::VectorXd roots = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

/// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2)). The cross term is
/// evaluated as tr((S_a^(1/2) S_b S_a^(1/2))^(1/2)), which has the same
/// eigenvalues as (S_a S_b)^(1/2) but is symmetric.
inline double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  if (a.mean.size() != b.mean.size()) {
    throw ShapeError("Frechet distance: embedding widths differ (" + std::to_string(a.mean.size()) + " vs " +
                     std::to_string(b.mean.size()) + ")");
  }
  const Eigen::MatrixXd ra = psd_sqrt(a.covariance);
  const double cross = psd_sqrt(ra * b.covariance * ra).trace();
  return (a.mean - b.mean).squaredNorm() + a.covariance.trace() + b.covariance.trace() - 2.0 * cross;
}

inline double frechet_distance(std::span<const double> a, std::span<const double> b, std::size_t width) {
  return frechet_distance(gaussian_stats(a, width), gaussian_stats(b, width));
}

}  // namespace rvqmotion
