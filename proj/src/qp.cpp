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
#include "hivoc/qp.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <vector>

namespace hivoc {

// Dual formulation: with B = L L' and W = L^{-1} M', the dual of
//   min 0.5 p'Bp + g'p  s.t.  Mp <= d
// is
//   min_{lambda >= 0} 0.5 |W lambda + v|^2 + d'lambda,   v = L^{-1} g,
// whose gradient component i equals d_i - m_i' p(lambda), i.e. the slack
// of row i at the primal point p(lambda) = -B^{-1}(g + M'lambda).
// A Lawson-Hanson style active set on the sign constraints solves it.
QpResult solve_convex_qp(const Eigen::MatrixXd& B, const Eigen::VectorXd& g,
                         const Eigen::MatrixXd& M, const Eigen::VectorXd& d, double tol)
{
    const Eigen::Index n = B.rows();
    const Eigen::Index q = M.rows();

    QpResult res;
    res.multipliers = Eigen::VectorXd::Zero(q);

    Eigen::LLT<Eigen::MatrixXd> llt(B);
    Eigen::MatrixXd Breg = B;
    double ridge = 1e-12 * (1.0 + B.diagonal().cwiseAbs().maxCoeff());
    while (llt.info() != Eigen::Success) {
        Breg.diagonal().array() += ridge;
        ridge *= 10.0;
        llt.compute(Breg);
        if (ridge > 1e6) {
            return res; // not positive definite in any usable sense
        }
    }

    const auto primal = [&](const Eigen::VectorXd& lambda) -> Eigen::VectorXd {
        if (q == 0) {
            return llt.solve(-g);
        }
        return llt.solve(-(g + M.transpose() * lambda));
    };

    if (q == 0) {
        res.p = primal(Eigen::VectorXd());
        res.solved = true;
        return res;
    }

    const double scale = 1.0 + d.cwiseAbs().maxCoeff() + g.cwiseAbs().maxCoeff();
    const double feas_tol = tol * scale;

    Eigen::VectorXd lambda = Eigen::VectorXd::Zero(q);
    std::vector<bool> active(static_cast<std::size_t>(q), false);

    const int max_outer = 10 * static_cast<int>(q) + 50;
    for (int outer = 0; outer < max_outer; ++outer) {
        res.iterations = outer;
        const Eigen::VectorXd p = primal(lambda);
        const Eigen::VectorXd slack = d - M * p; // dual gradient

        // most violated row, and the most violated inactive row
        int worst = -1;
        double worst_val = -feas_tol;
        double worst_anywhere = 0.0;
        for (Eigen::Index i = 0; i < q; ++i) {
            worst_anywhere = std::min(worst_anywhere, slack[i]);
            if (!active[static_cast<std::size_t>(i)] && slack[i] < worst_val) {
                worst_val = slack[i];
                worst = static_cast<int>(i);
            }
        }
        if (worst_anywhere >= -feas_tol) {
            res.p = p;
            res.multipliers = lambda;
            res.solved = true;
            return res;
        }
        if (worst < 0) {
            // Every violated row is already active. A tiny residual is
            // least-squares roundoff on a degenerate active set; a large
            // one means the rows are genuinely inconsistent.
            if (worst_anywhere >= -1e-6 * scale) {
                res.p = p;
                res.multipliers = lambda;
                res.solved = true;
            } else {
                res.infeasible = true;
            }
            return res;
        }
        active[static_cast<std::size_t>(worst)] = true;

        // inner loop: equality solve on the active set, stepping back when
        // multipliers leave the nonnegative orthant
        for (int inner = 0; inner < max_outer; ++inner) {
            std::vector<int> idx;
            for (Eigen::Index i = 0; i < q; ++i) {
                if (active[static_cast<std::size_t>(i)]) {
                    idx.push_back(static_cast<int>(i));
                }
            }
            const Eigen::Index na = static_cast<Eigen::Index>(idx.size());
            Eigen::MatrixXd Ma(na, n);
            Eigen::VectorXd da(na);
            for (Eigen::Index r = 0; r < na; ++r) {
                Ma.row(r) = M.row(idx[static_cast<std::size_t>(r)]);
                da[r] = d[idx[static_cast<std::size_t>(r)]];
            }
            // normal equations of the dual restricted to the active set,
            // mildly regularized so degenerate sets stay well-posed
            const Eigen::MatrixXd Wa = llt.matrixL().solve(Ma.transpose());
            const Eigen::VectorXd v = llt.matrixL().solve(g);
            Eigen::MatrixXd H = Wa.transpose() * Wa;
            H.diagonal().array() += 1e-12 * (1.0 + H.trace());
            const Eigen::VectorXd rhs = -(Wa.transpose() * v + da);
            Eigen::VectorXd la = H.ldlt().solve(rhs);

            if (!la.allFinite() || la.lpNorm<Eigen::Infinity>() > 1e14 * scale) {
                res.infeasible = true;
                return res;
            }

            const double sign_tol =
                tol + 1e-10 * (1.0 + la.cwiseAbs().maxCoeff());
            if ((la.array() >= -sign_tol).all()) {
                lambda.setZero();
                for (Eigen::Index r = 0; r < na; ++r) {
                    lambda[idx[static_cast<std::size_t>(r)]] = std::max(0.0, la[r]);
                }
                break;
            }

            // Lawson-Hanson step toward the subproblem solution
            double alpha = 1.0;
            int drop = -1;
            for (Eigen::Index r = 0; r < na; ++r) {
                if (la[r] < 0.0) {
                    const double lo = lambda[idx[static_cast<std::size_t>(r)]];
                    const double a = lo / (lo - la[r]);
                    if (a < alpha) {
                        alpha = a;
                        drop = idx[static_cast<std::size_t>(r)];
                    }
                }
            }
            for (Eigen::Index r = 0; r < na; ++r) {
                const int i = idx[static_cast<std::size_t>(r)];
                lambda[i] = lambda[i] + alpha * (la[r] - lambda[i]);
            }
            if (drop >= 0) {
                lambda[drop] = 0.0;
                active[static_cast<std::size_t>(drop)] = false;
            }
        }
    }
    // iteration cap: accept a near-feasible point, otherwise report unsolved
    res.p = primal(lambda);
    res.multipliers = lambda;
    const Eigen::VectorXd slack = d - M * res.p;
    if (slack.minCoeff() >= -1e-6 * scale) {
        res.solved = true;
    }
    return res;
}

} // namespace hivoc
