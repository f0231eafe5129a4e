/*
 * Copyright (C) 2026 hivoc contributors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#ifndef HIVOC_SPECTRAL_HPP
#define HIVOC_SPECTRAL_HPP

#include <Eigen/Core>

#include <span>
#include <stdexcept>
#include <vector>

namespace hivoc {

/// Thrown when Legendre root finding or a construction self-check fails.
class SpectralError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct LegendreValue {
    double value = 0.0;
    double derivative = 0.0;
};

/// Legendre polynomial P_k (normalized so P_k(1) = 1) and its derivative,
/// by the three-term recurrence.
LegendreValue legendre_eval(int degree, double theta);

/// The n_cp+1 Legendre-Gauss-Radau abscissae on [-1,1): the real roots of
/// P_{n_cp+1} + P_{n_cp}, ascending, with the first snapped to exactly -1.
/// Throws SpectralError if any root fails to converge to |residual| < 1e-13.
std::vector<double> lgr_points(int n_cp);

/// Quadrature weights for the given LGR points, exact through degree 2*n_cp.
std::vector<double> lgr_weights(const std::vector<double>& points);

/// Derivative matrix of the Lagrange basis on `points`, evaluated at the
/// collocation points (all points except the first): n_cp rows by
/// n_cp+1 columns. The left endpoint row is intentionally absent; that
/// point carries the continuity condition instead.
Eigen::MatrixXd differentiation_matrix(const std::vector<double>& points);

/// Weights of the second (true) barycentric interpolation formula.
std::vector<double> barycentric_weights(std::span<const double> points);

/// Barycentric evaluation at t of the interpolant through (points, values).
double interpolate(std::span<const double> points, std::span<const double> values, double t);

/// As above with precomputed barycentric weights.
double interpolate(std::span<const double> points, std::span<const double> values,
                   std::span<const double> bary, double t);

/// Immutable bundle of one interval's collocation data: LGR points,
/// quadrature weights, differentiation matrix and barycentric weights.
/// Construction runs the mutual self-checks (moment system vs closed-form
/// weights, explicit Lagrange-derivative formulas vs barycentric
/// differentiation) and throws SpectralError on disagreement.
class LgrScheme {
public:
    explicit LgrScheme(int n_cp);

    int n_cp() const { return n_cp_; }
    /// n_cp+1 abscissae, points()[0] == -1.
    const std::vector<double>& points() const { return points_; }
    const std::vector<double>& weights() const { return weights_; }
    const std::vector<double>& barycentric() const { return bary_; }
    /// n_cp x (n_cp+1).
    const Eigen::MatrixXd& diff_matrix() const { return diff_; }

private:
    int n_cp_;
    std::vector<double> points_;
    std::vector<double> weights_;
    std::vector<double> bary_;
    Eigen::MatrixXd diff_;
};

} // namespace hivoc

#endif
