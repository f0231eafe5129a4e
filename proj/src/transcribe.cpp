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
#include "hivoc/transcribe.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace hivoc {

namespace {

constexpr int kN = StateVector::kDim;

template <typename F>
void for_each_interval(bool parallel, int n, F&& f)
{
#ifdef _OPENMP
    if (parallel) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < n; ++i) {
            f(i);
        }
        return;
    }
#else
    (void)parallel;
#endif
    for (int i = 0; i < n; ++i) {
        f(i);
    }
}

Eigen::Matrix<double, kN, 1> rhs_at(const Eigen::Ref<const Eigen::VectorXd>& x,
                                    const ControlVector& u, const ModelParams& p)
{
    return rhs(0.0, StateVector::from_vector(x), u, p).to_vector();
}

// rhs at every grid point of an interval; rows follow the grid points.
Eigen::MatrixXd rhs_matrix(const StateMatrix& Xi, const ControlVector& u, const ModelParams& p)
{
    Eigen::MatrixXd F(Xi.rows(), kN);
    for (Eigen::Index r = 0; r < Xi.rows(); ++r) {
        F.row(r) = rhs_at(Xi.row(r).transpose(), u, p).transpose();
    }
    return F;
}

// Centered-difference Jacobian of the rhs in the states.
Eigen::Matrix<double, kN, kN> fd_rhs_jacobian(const Eigen::Ref<const Eigen::VectorXd>& x,
                                              const ControlVector& u, const ModelParams& p,
                                              double step)
{
    Eigen::Matrix<double, kN, kN> J;
    Eigen::VectorXd xp = x, xm = x;
    for (int j = 0; j < kN; ++j) {
        const double h = step * std::max(1.0, std::abs(x[j]));
        xp[j] = x[j] + h;
        xm[j] = x[j] - h;
        J.col(j) = (rhs_at(xp, u, p) - rhs_at(xm, u, p)) / (2.0 * h);
        xp[j] = x[j];
        xm[j] = x[j];
    }
    return J;
}

// The rhs is linear in the controls; these columns are exact.
Eigen::Matrix<double, kN, 2> control_jacobian(const Eigen::Ref<const Eigen::VectorXd>& x,
                                              const ModelParams& p)
{
    const StateVector X = StateVector::from_vector(x);
    const EnrollmentFractions z = enrollment_fractions(X, p);
    const double N = X.total();
    Eigen::Matrix<double, kN, 2> G = Eigen::Matrix<double, kN, 2>::Zero();
    G(0, 0) = -z.zeta_P * N;
    G(8, 0) = z.zeta_P * N;
    G(4, 1) = -z.zeta_TH * N;
    G(5, 1) = -z.zeta_TL * N;
    G(6, 1) = z.zeta_TH * N;
    G(7, 1) = z.zeta_TL * N;
    return G;
}

double discount_factor(const CostParams& costs, double t)
{
    return costs.discount_rate > 0.0 ? std::exp(-costs.discount_rate * t) : 1.0;
}

// Newton solve of one interval's square block: the start row pinned to
// `start` plus the collocation rows.
StateMatrix newton_interval(const CollocationGrid& grid, const ModelParams& p,
                            const StateVector::Vec9& start, const ControlVector& u, double tol,
                            int max_iterations, int& iterations, bool& converged)
{
    const int rows = grid.points_per_interval();
    const int dim = rows * kN;
    const Eigen::MatrixXd& D = grid.scheme->diff_matrix();
    const double half_dt = 0.5 * grid.dt;

    StateMatrix X(rows, kN);
    for (int k = 0; k < rows; ++k) {
        X.row(k) = start.transpose();
    }

    const auto residual = [&](const StateMatrix& W) {
        Eigen::VectorXd r(dim);
        r.head(kN) = W.row(0).transpose() - start;
        const Eigen::MatrixXd F = rhs_matrix(W, u, p);
        const Eigen::MatrixXd C = D * W - half_dt * F.bottomRows(rows - 1);
        for (int k = 0; k < rows - 1; ++k) {
            r.segment(kN + k * kN, kN) = C.row(k).transpose();
        }
        return r;
    };

    const double scale = std::max(1.0, start.cwiseAbs().maxCoeff());
    Eigen::VectorXd r = residual(X);
    converged = false;
    for (int it = 0; it < max_iterations; ++it) {
        if (r.cwiseAbs().maxCoeff() <= tol * scale) {
            converged = true;
            break;
        }
        ++iterations;

        Eigen::MatrixXd J = Eigen::MatrixXd::Zero(dim, dim);
        J.block(0, 0, kN, kN).setIdentity();
        for (int k = 1; k < rows; ++k) {
            const int rr = kN + (k - 1) * kN;
            for (int l = 0; l < rows; ++l) {
                const double dkl = D(k - 1, l);
                for (int j = 0; j < kN; ++j) {
                    J(rr + j, l * kN + j) += dkl;
                }
            }
            const auto A = fd_rhs_jacobian(X.row(k).transpose(), u, p, 1e-6);
            J.block(rr, k * kN, kN, kN) -= half_dt * A;
        }

        const Eigen::VectorXd d = J.partialPivLu().solve(-r);
        double alpha = 1.0;
        const double r0 = r.norm();
        for (int back = 0; back < 12; ++back) {
            StateMatrix Xtrial = X;
            for (int k = 0; k < rows; ++k) {
                Xtrial.row(k) += alpha * d.segment(k * kN, kN).transpose();
            }
            const Eigen::VectorXd rt = residual(Xtrial);
            if (rt.norm() < r0 || back == 11) {
                X = Xtrial;
                r = rt;
                break;
            }
            alpha *= 0.5;
        }
    }
    if (r.cwiseAbs().maxCoeff() <= tol * scale) {
        converged = true;
    }
    return X;
}

} // namespace

CollocationGrid build_grid(int n_int, double dt, int n_cp)
{
    if (n_int < 1 || !(dt > 0.0) || n_cp < 2) {
        throw std::invalid_argument("build_grid: need n_int >= 1, dt > 0, n_cp >= 2");
    }
    CollocationGrid g;
    g.n_int = n_int;
    g.n_cp = n_cp;
    g.dt = dt;
    g.t_f = n_int * dt;
    g.knots.resize(static_cast<std::size_t>(n_int) + 1);
    for (int i = 0; i <= n_int; ++i) {
        g.knots[static_cast<std::size_t>(i)] = i * dt;
    }
    g.scheme = std::make_shared<LgrScheme>(n_cp);
    return g;
}

Eigen::MatrixXd collocation_residuals(const StateMatrix& Xi, const ControlVector& Ui,
                                      const CollocationGrid& grid, const ModelParams& p)
{
    const Eigen::MatrixXd F = rhs_matrix(Xi, Ui, p);
    return grid.scheme->diff_matrix() * Xi - 0.5 * grid.dt * F.bottomRows(grid.n_cp);
}

Eigen::VectorXd continuity_defect(const StateMatrix& Xi, const ControlVector& Ui,
                                  const StateVector::Vec9& next_start,
                                  const CollocationGrid& grid, const ModelParams& p)
{
    const Eigen::MatrixXd F = rhs_matrix(Xi, Ui, p);
    Eigen::VectorXd end = Xi.row(0).transpose();
    const auto& w = grid.scheme->weights();
    for (int k = 0; k <= grid.n_cp; ++k) {
        end += 0.5 * grid.dt * w[static_cast<std::size_t>(k)] * F.row(k).transpose();
    }
    return end - next_start;
}

double budget_inequality(const StateMatrix& Xi, const StateMatrix& X0i, const ControlVector& Ui,
                         const CollocationGrid& grid, const CostParams& costs,
                         double budget_limit)
{
    const auto& w = grid.scheme->weights();
    double excess = 0.0;
    const ControlVector none{};
    for (int k = 0; k <= grid.n_cp; ++k) {
        const StateVector X = StateVector::from_vector(Xi.row(k).transpose());
        const StateVector X0 = StateVector::from_vector(X0i.row(k).transpose());
        excess += w[static_cast<std::size_t>(k)] *
                  (budget_rate(X, Ui, costs) - budget_rate(X0, none, costs));
    }
    return 0.5 * grid.dt * excess - budget_limit;
}

BaselineResiduals baseline_residuals(const StateMatrix& X0i,
                                     const StateVector::Vec9& controlled_start,
                                     const CollocationGrid& grid, const ModelParams& p)
{
    BaselineResiduals r;
    r.collocation = collocation_residuals(X0i, ControlVector{}, grid, p);
    r.anchor = X0i.row(0).transpose() - controlled_start;
    return r;
}

double quadrature_objective(const CollocationGrid& grid, const ModelParams& p,
                            const CostParams& costs, const std::vector<StateMatrix>& states)
{
    const auto& w = grid.scheme->weights();
    double total = 0.0;
    for (int i = 0; i < grid.n_int; ++i) {
        const StateMatrix& Xi = states[static_cast<std::size_t>(i)];
        double part = 0.0;
        for (int k = 0; k <= grid.n_cp; ++k) {
            const StateVector X = StateVector::from_vector(Xi.row(k).transpose());
            part += w[static_cast<std::size_t>(k)] * discount_factor(costs, grid.tau(i, k)) *
                    incidence_cost(X, p);
        }
        total += 0.5 * grid.dt * part;
    }
    return total;
}

std::vector<StateMatrix> quadrature_objective_gradient(const CollocationGrid& grid,
                                                       const ModelParams& p,
                                                       const CostParams& costs,
                                                       const std::vector<StateMatrix>& states)
{
    const auto& w = grid.scheme->weights();
    std::vector<StateMatrix> grad(states.size());
    for (int i = 0; i < grid.n_int; ++i) {
        const StateMatrix& Xi = states[static_cast<std::size_t>(i)];
        StateMatrix G(Xi.rows(), kN);
        for (int k = 0; k <= grid.n_cp; ++k) {
            const StateVector X = StateVector::from_vector(Xi.row(k).transpose());
            const double c = 0.5 * grid.dt * w[static_cast<std::size_t>(k)] *
                             discount_factor(costs, grid.tau(i, k));
            G.row(k) = c * incidence_cost_gradient(X, p).transpose();
        }
        grad[static_cast<std::size_t>(i)] = std::move(G);
    }
    return grad;
}

PiecewiseTrajectory::PiecewiseTrajectory(CollocationGrid grid, std::vector<StateMatrix> states)
    : grid_(std::move(grid)), states_(std::move(states))
{
}

StateVector PiecewiseTrajectory::eval(double t) const
{
    int i = static_cast<int>(std::floor(t / grid_.dt));
    i = std::max(0, std::min(i, grid_.n_int - 1));
    double theta = 2.0 * (t - grid_.knots[static_cast<std::size_t>(i)]) / grid_.dt - 1.0;
    theta = std::max(-1.0, std::min(1.0, theta));

    const auto& pts = grid_.scheme->points();
    const auto& bary = grid_.scheme->barycentric();
    const StateMatrix& Xi = states_[static_cast<std::size_t>(i)];
    Eigen::Matrix<double, kN, 1> v;
    for (int j = 0; j < kN; ++j) {
        std::vector<double> col(pts.size());
        for (std::size_t k = 0; k < pts.size(); ++k) {
            col[k] = Xi(static_cast<Eigen::Index>(k), j);
        }
        v[j] = interpolate(pts, col, bary, theta);
    }
    return StateVector::from_vector(v);
}

struct TranscribedNlp::IntervalEval {
    Eigen::MatrixXd F;  // controlled rhs at grid points
    Eigen::MatrixXd Fb; // baseline rhs at grid points
};

TranscribedNlp::TranscribedNlp(CollocationGrid grid, ModelParams params, CostParams costs,
                               StateVector X0, double budget_limit, TranscriptionOptions options)
    : grid_(std::move(grid)),
      params_(params),
      costs_(costs),
      x0_(X0),
      budget_limit_(budget_limit),
      options_(options),
      layout_{grid_.n_int, grid_.n_cp}
{
    if (!params_.valid() || !costs_.valid()) {
        throw std::invalid_argument("TranscribedNlp: invalid parameters");
    }
    if (X0.min_component() < 0.0 || !(X0.total() > 0.0)) {
        throw std::invalid_argument("TranscribedNlp: initial state must be nonnegative and nonempty");
    }
    if (budget_limit < 0.0) {
        throw std::invalid_argument("TranscribedNlp: negative budget limit");
    }
    state_scale_ = X0.total();
    budget_scale_ = std::max(budget_limit_, 1.0);

    // Structural sparsity, rows grouped exactly as the evaluators fill them.
    const int n_cp = grid_.n_cp;
    for (int j = 0; j < kN; ++j) {
        eq_pattern_.emplace_back(layout_.row_initial() + j, layout_.state_index(0, 0, j, false));
    }
    for (int i = 0; i < grid_.n_int; ++i) {
        for (int k = 1; k <= n_cp; ++k) {
            for (int jr = 0; jr < kN; ++jr) {
                const int rc = layout_.row_collocation(i) + (k - 1) * kN + jr;
                const int rb = layout_.row_baseline_collocation(i) + (k - 1) * kN + jr;
                for (int l = 0; l <= n_cp; ++l) {
                    eq_pattern_.emplace_back(rc, layout_.state_index(i, l, jr, false));
                    eq_pattern_.emplace_back(rb, layout_.state_index(i, l, jr, true));
                }
                for (int j = 0; j < kN; ++j) {
                    eq_pattern_.emplace_back(rc, layout_.state_index(i, k, j, false));
                    eq_pattern_.emplace_back(rb, layout_.state_index(i, k, j, true));
                }
                eq_pattern_.emplace_back(rc, layout_.control_index(i, 0));
                eq_pattern_.emplace_back(rc, layout_.control_index(i, 1));
            }
        }
        for (int j = 0; j < kN; ++j) {
            eq_pattern_.emplace_back(layout_.row_anchor(i) + j, layout_.state_index(i, 0, j, true));
            eq_pattern_.emplace_back(layout_.row_anchor(i) + j, layout_.state_index(i, 0, j, false));
        }
        if (i < grid_.n_int - 1) {
            for (int jr = 0; jr < kN; ++jr) {
                const int rr = layout_.row_defect(i) + jr;
                for (int k = 0; k <= n_cp; ++k) {
                    for (int j = 0; j < kN; ++j) {
                        eq_pattern_.emplace_back(rr, layout_.state_index(i, k, j, false));
                    }
                }
                eq_pattern_.emplace_back(rr, layout_.control_index(i, 0));
                eq_pattern_.emplace_back(rr, layout_.control_index(i, 1));
                eq_pattern_.emplace_back(rr, layout_.state_index(i + 1, 0, jr, false));
            }
        }
        for (int k = 0; k <= n_cp; ++k) {
            for (int j = 0; j < kN; ++j) {
                ineq_pattern_.emplace_back(i, layout_.state_index(i, k, j, false));
                ineq_pattern_.emplace_back(i, layout_.state_index(i, k, j, true));
            }
        }
        ineq_pattern_.emplace_back(i, layout_.control_index(i, 0));
        ineq_pattern_.emplace_back(i, layout_.control_index(i, 1));
    }
}

Eigen::VectorXd TranscribedNlp::pack(const DecisionPoint& point) const
{
    Eigen::VectorXd z(layout_.num_vars());
    for (int i = 0; i < grid_.n_int; ++i) {
        const StateMatrix& X = point.states[static_cast<std::size_t>(i)];
        const StateMatrix& Xb = point.baselines[static_cast<std::size_t>(i)];
        for (int k = 0; k <= grid_.n_cp; ++k) {
            for (int j = 0; j < kN; ++j) {
                z[layout_.state_index(i, k, j, false)] = X(k, j) / state_scale_;
                z[layout_.state_index(i, k, j, true)] = Xb(k, j) / state_scale_;
            }
        }
        z[layout_.control_index(i, 0)] = point.schedule.values[static_cast<std::size_t>(i)].u_P;
        z[layout_.control_index(i, 1)] = point.schedule.values[static_cast<std::size_t>(i)].u_T;
    }
    return z;
}

DecisionPoint TranscribedNlp::unpack(const Eigen::VectorXd& z) const
{
    DecisionPoint pt;
    pt.states.resize(static_cast<std::size_t>(grid_.n_int));
    pt.baselines.resize(static_cast<std::size_t>(grid_.n_int));
    pt.schedule = ControlSchedule::zero(grid_.n_int, grid_.dt);
    for (int i = 0; i < grid_.n_int; ++i) {
        StateMatrix X(grid_.points_per_interval(), kN);
        StateMatrix Xb(grid_.points_per_interval(), kN);
        for (int k = 0; k <= grid_.n_cp; ++k) {
            for (int j = 0; j < kN; ++j) {
                X(k, j) = z[layout_.state_index(i, k, j, false)] * state_scale_;
                Xb(k, j) = z[layout_.state_index(i, k, j, true)] * state_scale_;
            }
        }
        pt.states[static_cast<std::size_t>(i)] = std::move(X);
        pt.baselines[static_cast<std::size_t>(i)] = std::move(Xb);
        pt.schedule.values[static_cast<std::size_t>(i)] =
            ControlVector{z[layout_.control_index(i, 0)], z[layout_.control_index(i, 1)]};
    }
    return pt;
}

double TranscribedNlp::objective(const Eigen::VectorXd& z) const
{
    return objective_unscaled(z) / state_scale_;
}

double TranscribedNlp::objective_unscaled(const Eigen::VectorXd& z) const
{
    const DecisionPoint pt = unpack(z);
    const auto& w = grid_.scheme->weights();
    std::vector<double> partial(static_cast<std::size_t>(grid_.n_int), 0.0);
    for_each_interval(options_.parallel, grid_.n_int, [&](int i) {
        const StateMatrix& Xi = pt.states[static_cast<std::size_t>(i)];
        double acc = 0.0;
        for (int k = 0; k <= grid_.n_cp; ++k) {
            const StateVector X = StateVector::from_vector(Xi.row(k).transpose());
            acc += w[static_cast<std::size_t>(k)] * discount_factor(costs_, grid_.tau(i, k)) *
                   incidence_cost(X, params_);
        }
        partial[static_cast<std::size_t>(i)] = 0.5 * grid_.dt * acc;
    });
    double total = 0.0;
    for (double v : partial) {
        total += v;
    }
    return total;
}

Eigen::VectorXd TranscribedNlp::objective_gradient(const Eigen::VectorXd& z) const
{
    const DecisionPoint pt = unpack(z);
    const auto& w = grid_.scheme->weights();
    Eigen::VectorXd g = Eigen::VectorXd::Zero(layout_.num_vars());
    // d(J/N0)/d(X/N0) = dJ/dX: the state and objective scalings cancel.
    for_each_interval(options_.parallel, grid_.n_int, [&](int i) {
        const StateMatrix& Xi = pt.states[static_cast<std::size_t>(i)];
        for (int k = 0; k <= grid_.n_cp; ++k) {
            const StateVector X = StateVector::from_vector(Xi.row(k).transpose());
            const double c = 0.5 * grid_.dt * w[static_cast<std::size_t>(k)] *
                             discount_factor(costs_, grid_.tau(i, k));
            const auto gX = incidence_cost_gradient(X, params_);
            for (int j = 0; j < kN; ++j) {
                g[layout_.state_index(i, k, j, false)] = c * gX[j];
            }
        }
    });
    return g;
}

void TranscribedNlp::eval_interval(const DecisionPoint& pt, int i, IntervalEval& out,
                                   bool /*with_budget*/) const
{
    out.F = rhs_matrix(pt.states[static_cast<std::size_t>(i)],
                       pt.schedule.values[static_cast<std::size_t>(i)], params_);
    out.Fb = rhs_matrix(pt.baselines[static_cast<std::size_t>(i)], ControlVector{}, params_);
}

void TranscribedNlp::equalities_into(const DecisionPoint& pt, Eigen::VectorXd& out) const
{
    const Eigen::MatrixXd& D = grid_.scheme->diff_matrix();
    const auto& w = grid_.scheme->weights();
    const double half_dt = 0.5 * grid_.dt;
    const double inv_scale = 1.0 / state_scale_;

    out.segment(layout_.row_initial(), kN) =
        inv_scale *
        (pt.states.front().row(0).transpose() - x0_.to_vector());

    for_each_interval(options_.parallel, grid_.n_int, [&](int i) {
        const StateMatrix& X = pt.states[static_cast<std::size_t>(i)];
        const StateMatrix& Xb = pt.baselines[static_cast<std::size_t>(i)];
        IntervalEval ev;
        eval_interval(pt, i, ev, false);

        const Eigen::MatrixXd C = D * X - half_dt * ev.F.bottomRows(grid_.n_cp);
        const Eigen::MatrixXd Cb = D * Xb - half_dt * ev.Fb.bottomRows(grid_.n_cp);
        for (int k = 0; k < grid_.n_cp; ++k) {
            out.segment(layout_.row_collocation(i) + k * kN, kN) =
                inv_scale * C.row(k).transpose();
            out.segment(layout_.row_baseline_collocation(i) + k * kN, kN) =
                inv_scale * Cb.row(k).transpose();
        }
        out.segment(layout_.row_anchor(i), kN) =
            inv_scale * (Xb.row(0) - X.row(0)).transpose();

        if (i < grid_.n_int - 1) {
            Eigen::Matrix<double, kN, 1> end = X.row(0).transpose();
            for (int k = 0; k <= grid_.n_cp; ++k) {
                end += half_dt * w[static_cast<std::size_t>(k)] * ev.F.row(k).transpose();
            }
            const StateMatrix& Xnext = pt.states[static_cast<std::size_t>(i) + 1];
            out.segment(layout_.row_defect(i), kN) =
                inv_scale * (end - Xnext.row(0).transpose());
        }
    });
}

Eigen::VectorXd TranscribedNlp::eval_equalities(const Eigen::VectorXd& z) const
{
    const DecisionPoint pt = unpack(z);
    Eigen::VectorXd out(layout_.num_eq());
    equalities_into(pt, out);
    return out;
}

Eigen::VectorXd TranscribedNlp::eval_inequalities(const Eigen::VectorXd& z) const
{
    const DecisionPoint pt = unpack(z);
    Eigen::VectorXd out(layout_.num_ineq());
    for_each_interval(options_.parallel, grid_.n_int, [&](int i) {
        out[i] = budget_inequality(pt.states[static_cast<std::size_t>(i)],
                                   pt.baselines[static_cast<std::size_t>(i)],
                                   pt.schedule.values[static_cast<std::size_t>(i)], grid_, costs_,
                                   budget_limit_) /
                 budget_scale_;
    });
    return out;
}

Eigen::SparseMatrix<double> TranscribedNlp::equality_jacobian(const Eigen::VectorXd& z) const
{
    const DecisionPoint pt = unpack(z);
    const Eigen::MatrixXd& D = grid_.scheme->diff_matrix();
    const auto& w = grid_.scheme->weights();
    const double half_dt = 0.5 * grid_.dt;
    const int n_cp = grid_.n_cp;

    // Fixed triplet budget per interval keeps the parallel fill slices
    // disjoint and the assembly order deterministic.
    const int cnt_colloc = n_cp * kN * (n_cp + 1) + n_cp * kN * kN + n_cp * kN * 2;
    const int cnt_colloc_b = n_cp * kN * (n_cp + 1) + n_cp * kN * kN;
    const int cnt_anchor = 2 * kN;
    const int cnt_defect = kN + (n_cp + 1) * kN * kN + 2 * kN + kN;
    const int per_interval = cnt_colloc + cnt_colloc_b + cnt_anchor;

    const std::size_t total =
        static_cast<std::size_t>(kN) +
        static_cast<std::size_t>(grid_.n_int) * static_cast<std::size_t>(per_interval) +
        static_cast<std::size_t>(grid_.n_int - 1) * static_cast<std::size_t>(cnt_defect);
    std::vector<Eigen::Triplet<double>> trip(total);

    for (int j = 0; j < kN; ++j) {
        trip[static_cast<std::size_t>(j)] =
            Eigen::Triplet<double>(layout_.row_initial() + j, layout_.state_index(0, 0, j, false), 1.0);
    }

    for_each_interval(options_.parallel, grid_.n_int, [&](int i) {
        // Every interval before this one consumed per_interval triplets
        // plus, except for the last, a defect block; the last interval is
        // never "before" another, so the uniform stride is exact.
        std::size_t pos = static_cast<std::size_t>(kN) +
                          static_cast<std::size_t>(i) *
                              (static_cast<std::size_t>(per_interval) +
                               static_cast<std::size_t>(cnt_defect));

        const StateMatrix& X = pt.states[static_cast<std::size_t>(i)];
        const StateMatrix& Xb = pt.baselines[static_cast<std::size_t>(i)];
        const ControlVector u = pt.schedule.values[static_cast<std::size_t>(i)];

        std::vector<Eigen::Matrix<double, kN, kN>> A(static_cast<std::size_t>(n_cp) + 1);
        std::vector<Eigen::Matrix<double, kN, kN>> Ab(static_cast<std::size_t>(n_cp) + 1);
        std::vector<Eigen::Matrix<double, kN, 2>> G(static_cast<std::size_t>(n_cp) + 1);
        for (int k = 0; k <= n_cp; ++k) {
            A[static_cast<std::size_t>(k)] =
                fd_rhs_jacobian(X.row(k).transpose(), u, params_, options_.fd_step);
            Ab[static_cast<std::size_t>(k)] =
                fd_rhs_jacobian(Xb.row(k).transpose(), ControlVector{}, params_, options_.fd_step);
            G[static_cast<std::size_t>(k)] = control_jacobian(X.row(k).transpose(), params_);
        }

        // controlled and baseline collocation blocks
        for (int k = 1; k <= n_cp; ++k) {
            for (int jr = 0; jr < kN; ++jr) {
                const int rc = layout_.row_collocation(i) + (k - 1) * kN + jr;
                const int rb = layout_.row_baseline_collocation(i) + (k - 1) * kN + jr;
                for (int l = 0; l <= n_cp; ++l) {
                    trip[pos++] = {rc, layout_.state_index(i, l, jr, false), D(k - 1, l)};
                }
                for (int j = 0; j < kN; ++j) {
                    trip[pos++] = {rc, layout_.state_index(i, k, j, false),
                                   -half_dt * A[static_cast<std::size_t>(k)](jr, j)};
                }
                trip[pos++] = {rc, layout_.control_index(i, 0),
                               -half_dt * G[static_cast<std::size_t>(k)](jr, 0) / state_scale_};
                trip[pos++] = {rc, layout_.control_index(i, 1),
                               -half_dt * G[static_cast<std::size_t>(k)](jr, 1) / state_scale_};

                for (int l = 0; l <= n_cp; ++l) {
                    trip[pos++] = {rb, layout_.state_index(i, l, jr, true), D(k - 1, l)};
                }
                for (int j = 0; j < kN; ++j) {
                    trip[pos++] = {rb, layout_.state_index(i, k, j, true),
                                   -half_dt * Ab[static_cast<std::size_t>(k)](jr, j)};
                }
            }
        }
        // anchor rows
        for (int j = 0; j < kN; ++j) {
            trip[pos++] = {layout_.row_anchor(i) + j, layout_.state_index(i, 0, j, true), 1.0};
            trip[pos++] = {layout_.row_anchor(i) + j, layout_.state_index(i, 0, j, false), -1.0};
        }
        // defect rows
        if (i < grid_.n_int - 1) {
            for (int jr = 0; jr < kN; ++jr) {
                const int rr = layout_.row_defect(i) + jr;
                trip[pos++] = {rr, layout_.state_index(i, 0, jr, false), 1.0};
                for (int k = 0; k <= n_cp; ++k) {
                    const double c = half_dt * w[static_cast<std::size_t>(k)];
                    for (int j = 0; j < kN; ++j) {
                        trip[pos++] = {rr, layout_.state_index(i, k, j, false),
                                       c * A[static_cast<std::size_t>(k)](jr, j)};
                    }
                }
                double gp = 0.0, gt = 0.0;
                for (int k = 0; k <= n_cp; ++k) {
                    gp += w[static_cast<std::size_t>(k)] * G[static_cast<std::size_t>(k)](jr, 0);
                    gt += w[static_cast<std::size_t>(k)] * G[static_cast<std::size_t>(k)](jr, 1);
                }
                trip[pos++] = {rr, layout_.control_index(i, 0), half_dt * gp / state_scale_};
                trip[pos++] = {rr, layout_.control_index(i, 1), half_dt * gt / state_scale_};
                trip[pos++] = {rr, layout_.state_index(i + 1, 0, jr, false), -1.0};
            }
        }
    });

    Eigen::SparseMatrix<double> J(layout_.num_eq(), layout_.num_vars());
    J.setFromTriplets(trip.begin(), trip.end());
    return J;
}

Eigen::SparseMatrix<double> TranscribedNlp::inequality_jacobian(const Eigen::VectorXd& z) const
{
    const DecisionPoint pt = unpack(z);
    const auto& w = grid_.scheme->weights();
    const double half_dt = 0.5 * grid_.dt;
    const int n_cp = grid_.n_cp;

    const int per_interval = 2 * (n_cp + 1) * kN + 2;
    std::vector<Eigen::Triplet<double>> trip(
        static_cast<std::size_t>(grid_.n_int) * static_cast<std::size_t>(per_interval));

    for_each_interval(options_.parallel, grid_.n_int, [&](int i) {
        std::size_t pos = static_cast<std::size_t>(i) * static_cast<std::size_t>(per_interval);
        const StateMatrix& X = pt.states[static_cast<std::size_t>(i)];
        const ControlVector u = pt.schedule.values[static_cast<std::size_t>(i)];

        // budget_rate is linear in the states with control-dependent slope
        const auto gX = budget_rate_state_gradient(u, costs_);
        const auto gX0 = budget_rate_state_gradient(ControlVector{}, costs_);
        const double cs = state_scale_ / budget_scale_;
        for (int k = 0; k <= n_cp; ++k) {
            const double c = half_dt * w[static_cast<std::size_t>(k)];
            for (int j = 0; j < kN; ++j) {
                trip[pos++] = {i, layout_.state_index(i, k, j, false), c * gX[j] * cs};
                trip[pos++] = {i, layout_.state_index(i, k, j, true), -c * gX0[j] * cs};
            }
        }
        double gp = 0.0, gt = 0.0;
        for (int k = 0; k <= n_cp; ++k) {
            const StateVector Xk = StateVector::from_vector(X.row(k).transpose());
            const auto gU = budget_rate_control_gradient(Xk, costs_);
            gp += w[static_cast<std::size_t>(k)] * gU[0];
            gt += w[static_cast<std::size_t>(k)] * gU[1];
        }
        trip[pos++] = {i, layout_.control_index(i, 0), half_dt * gp / budget_scale_};
        trip[pos++] = {i, layout_.control_index(i, 1), half_dt * gt / budget_scale_};
    });

    Eigen::SparseMatrix<double> J(layout_.num_ineq(), layout_.num_vars());
    J.setFromTriplets(trip.begin(), trip.end());
    return J;
}

Eigen::VectorXd TranscribedNlp::lower_bounds() const
{
    Eigen::VectorXd lb =
        Eigen::VectorXd::Constant(layout_.num_vars(), -std::numeric_limits<double>::infinity());
    for (int i = 0; i < grid_.n_int; ++i) {
        lb[layout_.control_index(i, 0)] = 0.0;
        lb[layout_.control_index(i, 1)] = 0.0;
    }
    return lb;
}

std::vector<int> TranscribedNlp::dependent_hint() const
{
    std::vector<int> hint;
    hint.reserve(static_cast<std::size_t>(grid_.n_int) *
                 static_cast<std::size_t>(layout_.vars_per_interval()));
    for (int idx = 0; idx < grid_.n_int * layout_.vars_per_interval(); ++idx) {
        hint.push_back(idx);
    }
    return hint;
}

Eigen::VectorXd TranscribedNlp::initial_guess_replicate() const
{
    DecisionPoint pt;
    StateMatrix rep(grid_.points_per_interval(), kN);
    for (int k = 0; k <= grid_.n_cp; ++k) {
        rep.row(k) = x0_.to_vector().transpose();
    }
    pt.states.assign(static_cast<std::size_t>(grid_.n_int), rep);
    pt.baselines.assign(static_cast<std::size_t>(grid_.n_int), rep);
    pt.schedule = ControlSchedule::zero(grid_.n_int, grid_.dt);
    return pack(pt);
}

Eigen::VectorXd TranscribedNlp::initial_guess_aggressive(double u0) const
{
    Eigen::VectorXd z = initial_guess_replicate();
    for (int i = 0; i < grid_.n_int; ++i) {
        z[layout_.control_index(i, 0)] = u0;
        z[layout_.control_index(i, 1)] = u0;
    }
    return z;
}

Eigen::VectorXd TranscribedNlp::initial_guess_simulated() const
{
    const ControlSchedule none = ControlSchedule::zero(grid_.n_int, grid_.dt);
    const FixedScheduleSolution sim = solve_fixed_schedule(grid_, params_, x0_, none);
    DecisionPoint pt;
    pt.states = sim.states;
    pt.baselines = sim.states; // zero-control baselines of a zero-control run
    pt.schedule = none;
    return pack(pt);
}

TranscriptionSolution TranscribedNlp::extract_solution(const Eigen::VectorXd& z) const
{
    DecisionPoint pt = unpack(z);
    TranscriptionSolution sol;
    sol.schedule = std::move(pt.schedule);
    sol.states = std::move(pt.states);
    sol.baselines = std::move(pt.baselines);
    return sol;
}

PiecewiseTrajectory TranscribedNlp::solution_trajectory(const Eigen::VectorXd& z) const
{
    DecisionPoint pt = unpack(z);
    return PiecewiseTrajectory(grid_, std::move(pt.states));
}

NlpProblem TranscribedNlp::as_nlp_problem() const
{
    NlpProblem prob;
    prob.num_vars = num_vars();
    prob.num_eq = num_eq();
    prob.num_ineq = num_ineq();
    prob.objective = [this](const Eigen::VectorXd& z) { return objective(z); };
    prob.gradient = [this](const Eigen::VectorXd& z) { return objective_gradient(z); };
    prob.equalities = [this](const Eigen::VectorXd& z) { return eval_equalities(z); };
    prob.inequalities = [this](const Eigen::VectorXd& z) { return eval_inequalities(z); };
    prob.equality_jacobian = [this](const Eigen::VectorXd& z) { return equality_jacobian(z); };
    prob.inequality_jacobian = [this](const Eigen::VectorXd& z) { return inequality_jacobian(z); };
    prob.lower_bounds = lower_bounds();
    prob.eq_sparsity = eq_pattern_;
    prob.ineq_sparsity = ineq_pattern_;
    prob.dependent_hint = dependent_hint();
    return prob;
}

FixedScheduleSolution solve_fixed_schedule(const CollocationGrid& grid, const ModelParams& p,
                                           const StateVector& X0, const ControlSchedule& schedule,
                                           double tol, int max_iterations)
{
    FixedScheduleSolution sol;
    sol.converged = true;
    const auto& w = grid.scheme->weights();

    StateVector::Vec9 start = X0.to_vector();
    for (int i = 0; i < grid.n_int; ++i) {
        bool ok = false;
        const ControlVector u = schedule.values.empty()
                                    ? ControlVector{}
                                    : schedule.values[static_cast<std::size_t>(
                                          std::min<int>(i, schedule.n_int - 1))];
        const StateMatrix Xi = newton_interval(grid, p, start, u, tol, max_iterations,
                                               sol.newton_iterations, ok);
        sol.converged = sol.converged && ok;
        sol.states.push_back(Xi);

        const Eigen::MatrixXd F = rhs_matrix(Xi, u, p);
        StateVector::Vec9 end = Xi.row(0).transpose();
        for (int k = 0; k <= grid.n_cp; ++k) {
            end += 0.5 * grid.dt * w[static_cast<std::size_t>(k)] * F.row(k).transpose();
        }
        start = end;
    }
    return sol;
}

std::vector<StateMatrix> solve_baseline_blocks(const CollocationGrid& grid, const ModelParams& p,
                                               const std::vector<StateMatrix>& states, double tol,
                                               int max_iterations)
{
    std::vector<StateMatrix> out(states.size());
    for (std::size_t i = 0; i < states.size(); ++i) {
        int iters = 0;
        bool ok = false;
        out[i] = newton_interval(grid, p, states[i].row(0).transpose(), ControlVector{}, tol,
                                 max_iterations, iters, ok);
    }
    return out;
}

} // namespace hivoc
