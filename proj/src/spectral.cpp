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
#include "hivoc/spectral.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace hivoc {

namespace {

constexpr double kRootResidualTol = 1e-13;

// P_{n+1}(theta) + P_n(theta) and its derivative; the generating
// polynomial of the LGR points.
LegendreValue radau_poly(int n_cp, double theta)
{
    const LegendreValue a = legendre_eval(n_cp + 1, theta);
    const LegendreValue b = legendre_eval(n_cp, theta);
    return {a.value + b.value, a.derivative + b.derivative};
}

// Bracketed Newton iteration with bisection fallback, followed by two
// unguarded Newton steps once inside the quadratic basin.
double polish_root(int n_cp, double lo, double hi)
{
    double flo = radau_poly(n_cp, lo).value;
    double t = 0.5 * (lo + hi);
    for (int it = 0; it < 300; ++it) {
        const LegendreValue f = radau_poly(n_cp, t);
        if ((f.value > 0.0) == (flo > 0.0)) {
            lo = t;
            flo = f.value;
        } else {
            hi = t;
        }
        double next = 0.5 * (lo + hi);
        if (f.derivative != 0.0) {
            const double newton = t - f.value / f.derivative;
            if (newton > lo && newton < hi) {
                next = newton;
            }
        }
        const bool tiny_step = std::abs(next - t) < 1e-15 * std::max(1.0, std::abs(t));
        const bool tiny_bracket = (hi - lo) < 1e-15 * std::max(1.0, std::abs(t));
        t = next;
        if (tiny_step || tiny_bracket) {
            break;
        }
    }
    for (int i = 0; i < 2; ++i) {
        const LegendreValue f = radau_poly(n_cp, t);
        if (f.derivative != 0.0) {
            t -= f.value / f.derivative;
        }
    }
    return t;
}

} // namespace

LegendreValue legendre_eval(int degree, double theta)
{
    if (degree < 0) {
        throw SpectralError("legendre_eval: negative degree");
    }
    // Joint recurrences: (k+1) P_{k+1} = (2k+1) theta P_k - k P_{k-1},
    // P'_{k+1} = (2k+1) P_k + P'_{k-1}; both valid on all of [-1,1].
    double pm1 = 1.0, dm1 = 0.0; // P_0, P_0'
    if (degree == 0) {
        return {pm1, dm1};
    }
    double pk = theta, dk = 1.0; // P_1, P_1'
    for (int k = 1; k < degree; ++k) {
        const double pk1 = ((2.0 * k + 1.0) * theta * pk - k * pm1) / (k + 1.0);
        const double dk1 = (2.0 * k + 1.0) * pk + dm1;
        pm1 = pk;
        dm1 = dk;
        pk = pk1;
        dk = dk1;
    }
    return {pk, dk};
}

std::vector<double> lgr_points(int n_cp)
{
    if (n_cp < 1) {
        throw SpectralError("lgr_points: n_cp must be >= 1");
    }

    // Bracket the n_cp interior roots by a sign scan of the generating
    // polynomial, then polish each bracket. The factor (1+theta) is
    // positive on the open interval, so sign changes locate exactly the
    // interior roots.
    const int samples = 40 * (n_cp + 1);
    std::vector<double> roots;
    roots.reserve(static_cast<std::size_t>(n_cp) + 1);
    roots.push_back(-1.0);

    double prev_t = -1.0 + 1e-12;
    double prev_f = radau_poly(n_cp, prev_t).value;
    for (int s = 1; s <= samples; ++s) {
        // Chebyshev-distributed scan points cluster near the endpoints
        // where the roots do.
        const double t = -std::cos(M_PI * static_cast<double>(s) / samples);
        const double f = radau_poly(n_cp, t).value;
        if ((f > 0.0) != (prev_f > 0.0) || f == 0.0) {
            roots.push_back(polish_root(n_cp, prev_t, t));
        }
        prev_t = t;
        prev_f = f;
    }

    if (static_cast<int>(roots.size()) != n_cp + 1) {
        throw SpectralError("lgr_points: sign scan found " +
                            std::to_string(roots.size() - 1) + " interior roots, expected " +
                            std::to_string(n_cp));
    }
    std::sort(roots.begin(), roots.end());
    for (std::size_t k = 1; k < roots.size(); ++k) {
        const double res = radau_poly(n_cp, roots[k]).value;
        if (std::abs(res) >= kRootResidualTol) {
            throw SpectralError("lgr_points: root residual " + std::to_string(res) +
                                " above tolerance");
        }
    }
    return roots;
}

std::vector<double> lgr_weights(const std::vector<double>& points)
{
    const int m = static_cast<int>(points.size());
    if (m < 2) {
        throw SpectralError("lgr_weights: need at least two points");
    }
    std::vector<double> w(points.size());
    // Closed-form Radau weights: 2/m^2 at the included endpoint,
    // (1-theta)/(m^2 P_{m-1}(theta)^2) inside.
    w[0] = 2.0 / (static_cast<double>(m) * m);
    for (int k = 1; k < m; ++k) {
        const double pk = legendre_eval(m - 1, points[k]).value;
        w[k] = (1.0 - points[k]) / (static_cast<double>(m) * m * pk * pk);
    }

    // Mutual check against the moment system V^T w = integrals of theta^j.
    // The Vandermonde solve is only trustworthy for small m.
    if (m <= 13) {
        Eigen::MatrixXd V(m, m);
        Eigen::VectorXd rhs(m);
        for (int j = 0; j < m; ++j) {
            for (int k = 0; k < m; ++k) {
                V(j, k) = std::pow(points[k], j);
            }
            rhs[j] = (j % 2 == 0) ? 2.0 / (j + 1.0) : 0.0;
        }
        const Eigen::VectorXd wm = V.fullPivLu().solve(rhs);
        for (int k = 0; k < m; ++k) {
            if (std::abs(wm[k] - w[k]) > 1e-11) {
                throw SpectralError("lgr_weights: moment system disagrees with closed form");
            }
        }
    }

    // Exactness self-check through degree 2*(m-1).
    const int n_cp = m - 1;
    const double tol = n_cp <= 10 ? 1e-12 : 1e-10;
    for (int j = 0; j <= 2 * n_cp; ++j) {
        double q = 0.0;
        for (int k = 0; k < m; ++k) {
            q += w[k] * std::pow(points[k], j);
        }
        const double exact = (j % 2 == 0) ? 2.0 / (j + 1.0) : 0.0;
        if (std::abs(q - exact) > tol) {
            throw SpectralError("lgr_weights: exactness check failed at degree " +
                                std::to_string(j));
        }
    }
    return w;
}

std::vector<double> barycentric_weights(std::span<const double> points)
{
    const std::size_t m = points.size();
    std::vector<double> v(m, 1.0);
    for (std::size_t l = 0; l < m; ++l) {
        for (std::size_t j = 0; j < m; ++j) {
            if (j != l) {
                v[l] *= points[l] - points[j];
            }
        }
        v[l] = 1.0 / v[l];
    }
    // Normalize; only ratios of the weights matter.
    double vmax = 0.0;
    for (double x : v) {
        vmax = std::max(vmax, std::abs(x));
    }
    for (double& x : v) {
        x /= vmax;
    }
    return v;
}

Eigen::MatrixXd differentiation_matrix(const std::vector<double>& points)
{
    const int m = static_cast<int>(points.size());
    const std::vector<double> v = barycentric_weights(points);

    // Full square matrix first; off-diagonals from the barycentric ratio
    // formula, diagonals from the zero-row-sum identity.
    Eigen::MatrixXd full(m, m);
    for (int k = 0; k < m; ++k) {
        double diag = 0.0;
        for (int l = 0; l < m; ++l) {
            if (l == k) {
                continue;
            }
            const double d = (v[l] / v[k]) / (points[k] - points[l]);
            full(k, l) = d;
            diag -= d;
        }
        full(k, k) = diag;
    }
    // Collocation happens at every point except the first; that row is
    // dropped, which also removes the square matrix's rank deficiency.
    return full.bottomRows(m - 1);
}

double interpolate(std::span<const double> points, std::span<const double> values,
                   std::span<const double> bary, double t)
{
    const std::size_t m = points.size();
    double num = 0.0;
    double den = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
        const double dt = t - points[k];
        if (std::abs(dt) < 8.0 * std::numeric_limits<double>::epsilon()) {
            return values[k];
        }
        const double c = bary[k] / dt;
        num += c * values[k];
        den += c;
    }
    return num / den;
}

double interpolate(std::span<const double> points, std::span<const double> values, double t)
{
    const std::vector<double> bary = barycentric_weights(points);
    return interpolate(points, values, bary, t);
}

LgrScheme::LgrScheme(int n_cp)
    : n_cp_(n_cp),
      points_(lgr_points(n_cp)),
      weights_(lgr_weights(points_)),
      bary_(barycentric_weights(points_)),
      diff_(differentiation_matrix(points_))
{
    const int m = n_cp_ + 1;

    double wsum = 0.0;
    for (double w : weights_) {
        if (!(w > 0.0)) {
            throw SpectralError("LgrScheme: nonpositive quadrature weight");
        }
        wsum += w;
    }
    if (std::abs(wsum - 2.0) > 1e-12) {
        throw SpectralError("LgrScheme: weights do not sum to 2");
    }

    // Rows of D annihilate constants and differentiate the identity exactly.
    for (int k = 0; k < n_cp_; ++k) {
        double rowsum = 0.0;
        double dident = 0.0;
        for (int l = 0; l < m; ++l) {
            rowsum += diff_(k, l);
            dident += diff_(k, l) * points_[static_cast<std::size_t>(l)];
        }
        if (std::abs(rowsum) > 1e-9 || std::abs(dident - 1.0) > 1e-9) {
            throw SpectralError("LgrScheme: differentiation matrix sanity check failed");
        }
    }

    // Cross-check the barycentric derivatives against the explicit
    // Lagrange-derivative formulas written in terms of the generating
    // polynomial R = P_{n_cp+1} + P_{n_cp}: for l != k,
    //   Ldot_l(theta_k) = Rdot(theta_k) / ((theta_k - theta_l) Rdot(theta_l)),
    // and at the left endpoint Ldot_0(theta_0) = -n_cp (n_cp + 2) / 4.
    // (The matching explicit diagonal expression is degenerate at the LGR
    // points themselves, so the interior diagonal is defined by the
    // row-sum identity above.)
    std::vector<double> rdot(static_cast<std::size_t>(m));
    for (int l = 0; l < m; ++l) {
        rdot[static_cast<std::size_t>(l)] = radau_poly(n_cp_, points_[static_cast<std::size_t>(l)]).derivative;
    }
    for (int k = 1; k < m; ++k) {
        for (int l = 0; l < m; ++l) {
            if (l == k) {
                continue;
            }
            const double explicit_val =
                rdot[static_cast<std::size_t>(k)] /
                ((points_[static_cast<std::size_t>(k)] - points_[static_cast<std::size_t>(l)]) *
                 rdot[static_cast<std::size_t>(l)]);
            const double bary_val = diff_(k - 1, l);
            if (std::abs(explicit_val - bary_val) >
                1e-9 * std::max(1.0, std::abs(bary_val))) {
                throw SpectralError("LgrScheme: explicit and barycentric derivatives disagree");
            }
        }
    }
    {
        // Corner entry of the full (square) matrix, checked the same way.
        const Eigen::MatrixXd fullD = [&] {
            Eigen::MatrixXd f(m, m);
            const std::vector<double>& v = bary_;
            for (int k = 0; k < m; ++k) {
                double diag = 0.0;
                for (int l = 0; l < m; ++l) {
                    if (l == k) {
                        continue;
                    }
                    const double d = (v[static_cast<std::size_t>(l)] / v[static_cast<std::size_t>(k)]) /
                                     (points_[static_cast<std::size_t>(k)] - points_[static_cast<std::size_t>(l)]);
                    f(k, l) = d;
                    diag -= d;
                }
                f(k, k) = diag;
            }
            return f;
        }();
        const double corner = -0.25 * n_cp_ * (n_cp_ + 2.0);
        if (std::abs(fullD(0, 0) - corner) > 1e-9 * std::max(1.0, std::abs(corner))) {
            throw SpectralError("LgrScheme: left-endpoint derivative disagrees with closed form");
        }
    }
}

} // namespace hivoc
