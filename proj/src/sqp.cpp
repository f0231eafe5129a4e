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
#include "hivoc/sqp.hpp"

#include "hivoc/qp.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>

namespace hivoc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                            const Eigen::VectorXd& x, double step)
{
    Eigen::VectorXd g(x.size());
    Eigen::VectorXd xp = x, xm = x;
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        const double h = step * std::max(1.0, std::abs(x[j]));
        xp[j] = x[j] + h;
        xm[j] = x[j] - h;
        g[j] = (f(xp) - f(xm)) / (2.0 * h);
        xp[j] = x[j];
        xm[j] = x[j];
    }
    return g;
}

struct Evaluators {
    const NlpProblem& prob;
    double fd_step;

    double f(const Eigen::VectorXd& x) const { return prob.objective(x); }
    Eigen::VectorXd grad(const Eigen::VectorXd& x) const
    {
        if (prob.gradient) {
            return prob.gradient(x);
        }
        return fd_gradient(prob.objective, x, fd_step);
    }
    Eigen::VectorXd ceq(const Eigen::VectorXd& x) const
    {
        if (prob.num_eq == 0 || !prob.equalities) {
            return Eigen::VectorXd::Zero(0);
        }
        return prob.equalities(x);
    }
    Eigen::VectorXd cineq(const Eigen::VectorXd& x) const
    {
        if (prob.num_ineq == 0 || !prob.inequalities) {
            return Eigen::VectorXd::Zero(0);
        }
        return prob.inequalities(x);
    }
    Eigen::SparseMatrix<double> Jeq(const Eigen::VectorXd& x) const
    {
        if (prob.num_eq == 0) {
            return Eigen::SparseMatrix<double>(0, prob.num_vars);
        }
        if (prob.equality_jacobian) {
            return prob.equality_jacobian(x);
        }
        const Eigen::MatrixXd J = fd_jacobian(prob.equalities, x, fd_step,
                                              prob.eq_sparsity.empty() ? nullptr : &prob.eq_sparsity);
        return J.sparseView();
    }
    Eigen::SparseMatrix<double> Jineq(const Eigen::VectorXd& x) const
    {
        if (prob.num_ineq == 0) {
            return Eigen::SparseMatrix<double>(0, prob.num_vars);
        }
        if (prob.inequality_jacobian) {
            return prob.inequality_jacobian(x);
        }
        const Eigen::MatrixXd J =
            fd_jacobian(prob.inequalities, x, fd_step,
                        prob.ineq_sparsity.empty() ? nullptr : &prob.ineq_sparsity);
        return J.sparseView();
    }
};

double constraint_violation(const Eigen::VectorXd& ce, const Eigen::VectorXd& ci,
                            const Eigen::VectorXd& x, const Eigen::VectorXd& lb)
{
    double v = 0.0;
    for (Eigen::Index i = 0; i < ce.size(); ++i) {
        v = std::max(v, std::abs(ce[i]));
    }
    for (Eigen::Index i = 0; i < ci.size(); ++i) {
        v = std::max(v, ci[i]);
    }
    if (lb.size() == x.size()) {
        for (Eigen::Index j = 0; j < x.size(); ++j) {
            if (lb[j] > -kInf) {
                v = std::max(v, lb[j] - x[j]);
            }
        }
    }
    return std::max(v, 0.0);
}

double l1_violation(const Eigen::VectorXd& ce, const Eigen::VectorXd& ci)
{
    double v = 0.0;
    for (Eigen::Index i = 0; i < ce.size(); ++i) {
        v += std::abs(ce[i]);
    }
    for (Eigen::Index i = 0; i < ci.size(); ++i) {
        v += std::max(0.0, ci[i]);
    }
    return v;
}

// Stationarity, complementarity and dual feasibility in the max norm,
// divided by (1 + multiplier magnitude).
double scaled_kkt_residual(const Evaluators& ev, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& lb, const Multipliers& mult)
{
    const Eigen::VectorXd g = ev.grad(x);
    const Eigen::VectorXd ci = ev.cineq(x);
    Eigen::VectorXd stat = g;
    if (mult.eq.size() > 0) {
        stat += ev.Jeq(x).transpose() * mult.eq;
    }
    if (ci.size() > 0 && mult.ineq.size() == ci.size()) {
        stat += ev.Jineq(x).transpose() * mult.ineq;
    }
    if (mult.bounds.size() == x.size()) {
        stat -= mult.bounds;
    }
    double r = stat.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < ci.size() && mult.ineq.size() == ci.size(); ++i) {
        r = std::max(r, std::abs(mult.ineq[i] * ci[i]));
        r = std::max(r, -mult.ineq[i]);
    }
    if (mult.bounds.size() == x.size() && lb.size() == x.size()) {
        for (Eigen::Index j = 0; j < x.size(); ++j) {
            if (lb[j] > -kInf) {
                r = std::max(r, std::abs(mult.bounds[j] * (x[j] - lb[j])));
                r = std::max(r, -mult.bounds[j]);
            }
        }
    }
    const double lam_scale =
        1.0 + std::max({mult.eq.size() > 0 ? mult.eq.cwiseAbs().maxCoeff() : 0.0,
                        mult.ineq.size() > 0 ? mult.ineq.cwiseAbs().maxCoeff() : 0.0,
                        mult.bounds.size() > 0 ? mult.bounds.cwiseAbs().maxCoeff() : 0.0});
    return r / lam_scale;
}

// Variable partition for the equality elimination: dependents (basic)
// solve the linearized equalities, independents (superbasic) remain the
// optimization's degrees of freedom.
struct Partition {
    std::vector<int> dep;
    std::vector<int> indep;
    Eigen::VectorXi of_var; // -(k+1) for dep slot k, +(k+1) for indep slot k
};

Partition make_partition(int n, const std::vector<int>& dep)
{
    Partition part;
    part.dep = dep;
    part.of_var = Eigen::VectorXi::Zero(n);
    for (std::size_t k = 0; k < dep.size(); ++k) {
        part.of_var[dep[k]] = -static_cast<int>(k) - 1;
    }
    for (int j = 0; j < n; ++j) {
        if (part.of_var[j] == 0) {
            part.of_var[j] = static_cast<int>(part.indep.size()) + 1;
            part.indep.push_back(j);
        }
    }
    return part;
}

// Columns of A restricted to an index set, kept sparse.
Eigen::SparseMatrix<double> select_columns(const Eigen::SparseMatrix<double>& A,
                                           const std::vector<int>& cols)
{
    Eigen::SparseMatrix<double> out(A.rows(), static_cast<Eigen::Index>(cols.size()));
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(A.nonZeros()));
    std::vector<int> slot(static_cast<std::size_t>(A.cols()), -1);
    for (std::size_t k = 0; k < cols.size(); ++k) {
        slot[static_cast<std::size_t>(cols[k])] = static_cast<int>(k);
    }
    for (int c = 0; c < A.outerSize(); ++c) {
        const int s = slot[static_cast<std::size_t>(c)];
        if (s < 0) {
            continue;
        }
        for (Eigen::SparseMatrix<double>::InnerIterator it(A, c); it; ++it) {
            trip.emplace_back(it.row(), s, it.value());
        }
    }
    out.setFromTriplets(trip.begin(), trip.end());
    return out;
}

} // namespace

const char* to_string(SolveStatus s)
{
    switch (s) {
    case SolveStatus::converged:
        return "converged";
    case SolveStatus::max_iterations:
        return "max-iterations";
    case SolveStatus::line_search_failure:
        return "line-search-failure";
    case SolveStatus::infeasible:
        return "infeasible";
    }
    return "unknown";
}

Eigen::MatrixXd fd_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                            const Eigen::VectorXd& x, double step,
                            const std::vector<std::pair<int, int>>* sparsity)
{
    const Eigen::VectorXd f0 = f(x);
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(f0.size(), x.size());

    std::vector<bool> touched(static_cast<std::size_t>(x.size()), sparsity == nullptr);
    if (sparsity != nullptr) {
        for (const auto& [r, c] : *sparsity) {
            touched[static_cast<std::size_t>(c)] = true;
        }
    }

    Eigen::VectorXd xp = x, xm = x;
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        if (!touched[static_cast<std::size_t>(j)]) {
            continue;
        }
        const double h = step * std::max(1.0, std::abs(x[j]));
        xp[j] = x[j] + h;
        xm[j] = x[j] - h;
        const Eigen::VectorXd col = (f(xp) - f(xm)) / (2.0 * h);
        xp[j] = x[j];
        xm[j] = x[j];
        J.col(j) = col;
    }

    if (sparsity != nullptr) {
        // keep only the declared entries
        Eigen::MatrixXd masked = Eigen::MatrixXd::Zero(J.rows(), J.cols());
        for (const auto& [r, c] : *sparsity) {
            masked(r, c) = J(r, c);
        }
        J.swap(masked);
    }
    return J;
}

double kkt_residual(const NlpProblem& problem, const Eigen::VectorXd& x, const Multipliers& mult)
{
    const Evaluators ev{problem, 1e-6};
    const Eigen::VectorXd g = ev.grad(x);
    const Eigen::VectorXd ce = ev.ceq(x);
    const Eigen::VectorXd ci = ev.cineq(x);

    Eigen::VectorXd stat = g;
    if (ce.size() > 0 && mult.eq.size() == ce.size()) {
        stat += ev.Jeq(x).transpose() * mult.eq;
    }
    if (ci.size() > 0 && mult.ineq.size() == ci.size()) {
        stat += ev.Jineq(x).transpose() * mult.ineq;
    }
    if (mult.bounds.size() == x.size()) {
        stat -= mult.bounds;
    }

    double r = stat.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < ci.size(); ++i) {
        if (mult.ineq.size() == ci.size()) {
            r = std::max(r, std::abs(mult.ineq[i] * ci[i]));
            r = std::max(r, -mult.ineq[i]);
        }
    }
    if (mult.bounds.size() == x.size() && problem.lower_bounds.size() == x.size()) {
        for (Eigen::Index j = 0; j < x.size(); ++j) {
            if (problem.lower_bounds[j] > -kInf) {
                r = std::max(r, std::abs(mult.bounds[j] * (x[j] - problem.lower_bounds[j])));
                r = std::max(r, -mult.bounds[j]);
            }
        }
    }
    r = std::max(r, constraint_violation(ce, ci, x, problem.lower_bounds));
    return r;
}

SolverResult solve(const NlpProblem& problem, const Eigen::VectorXd& x0,
                   const SolverOptions& options)
{
    const int n = problem.num_vars;
    const int me = problem.num_eq;
    const int mi = problem.num_ineq;

    SolverResult res;
    if (x0.size() != n || me > n) {
        res.message = "inconsistent problem dimensions";
        res.status = SolveStatus::infeasible;
        return res;
    }

    const Evaluators ev{problem, options.fd_step};
    Eigen::VectorXd lb = problem.lower_bounds;
    if (lb.size() != n) {
        lb = Eigen::VectorXd::Constant(n, -kInf);
    }

    Eigen::VectorXd x = x0;
    for (int j = 0; j < n; ++j) {
        x[j] = std::max(x[j], lb[j]); // project into the bounds
    }

    // ----- variable partition -----
    Partition part;
    if (me > 0) {
        std::vector<int> dep;
        if (static_cast<int>(problem.dependent_hint.size()) == me) {
            dep = problem.dependent_hint;
        } else {
            if (n > 2000) {
                res.message = "no dependent-variable hint and problem too large for "
                              "automatic basis selection";
                res.status = SolveStatus::infeasible;
                return res;
            }
            const Eigen::MatrixXd Ad = Eigen::MatrixXd(ev.Jeq(x));
            Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Ad);
            if (qr.rank() < me) {
                res.message = "rank-deficient equality Jacobian at the initial point";
                res.status = SolveStatus::infeasible;
                return res;
            }
            const Eigen::VectorXi perm = qr.colsPermutation().indices();
            dep.assign(perm.data(), perm.data() + me);
            std::sort(dep.begin(), dep.end());
        }
        part = make_partition(n, dep);
    } else {
        part = make_partition(n, {});
    }
    const int nu = static_cast<int>(part.indep.size());

    // bound rows (independent coordinates get unit rows, dependent ones
    // couple through the elimination)
    std::vector<int> bounded;
    for (int j = 0; j < n; ++j) {
        if (lb[j] > -kInf) {
            bounded.push_back(j);
        }
    }

    Eigen::MatrixXd Br = Eigen::MatrixXd::Identity(nu, nu);
    double nu_pen = options.merit_penalty_init;
    Multipliers mult;
    mult.eq = Eigen::VectorXd::Zero(me);
    mult.ineq = Eigen::VectorXd::Zero(mi);
    mult.bounds = Eigen::VectorXd::Zero(n);

    bool bfgs_was_reset = false;
    bool first_update = true;
    bool have_pair = false;
    Eigen::VectorXd pair_s, pair_gr;

    double f = ev.f(x);
    Eigen::VectorXd ce = ev.ceq(x);
    Eigen::VectorXd ci = ev.cineq(x);

    for (int iter = 0; iter < options.max_iterations; ++iter) {
        res.iterations = iter + 1;

        const Eigen::VectorXd g = ev.grad(x);
        const Eigen::SparseMatrix<double> Ae = ev.Jeq(x);
        const Eigen::SparseMatrix<double> Ai = ev.Jineq(x);

        // ----- elimination of the linearized equalities -----
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
        Eigen::MatrixXd W;          // A_d^{-1} A_u
        Eigen::VectorXd pYd;        // range-space step on the dependents
        Eigen::VectorXd g_d(me), g_u(nu);
        if (me > 0) {
            Eigen::SparseMatrix<double> Ad = select_columns(Ae, part.dep);
            Ad.makeCompressed();
            lu.compute(Ad);
            if (lu.info() != Eigen::Success) {
                res.message = "singular dependent block of the equality Jacobian";
                res.status = SolveStatus::line_search_failure;
                break;
            }
            const Eigen::SparseMatrix<double> Au = select_columns(Ae, part.indep);
            W = lu.solve(Eigen::MatrixXd(Au));
            pYd = lu.solve(Eigen::VectorXd(-ce));
            for (int k = 0; k < me; ++k) {
                g_d[k] = g[part.dep[static_cast<std::size_t>(k)]];
            }
        }
        for (int k = 0; k < nu; ++k) {
            g_u[k] = g[part.indep[static_cast<std::size_t>(k)]];
        }
        const Eigen::VectorXd g_r = me > 0 ? (g_u - W.transpose() * g_d).eval() : g_u;

        // ----- deferred damped BFGS update -----
        // The pair is formed from reduced gradients that each use their own
        // elimination basis; pairs from vanishing steps are skipped.
        if (options.hessian == SolverOptions::Hessian::damped_bfgs && have_pair) {
            const Eigen::VectorXd& s = pair_s;
            const Eigen::VectorXd ydiff = g_r - pair_gr;
            const double snorm = s.norm();
            double u_scale = 0.0;
            for (int k = 0; k < nu; ++k) {
                u_scale = std::max(u_scale, std::abs(x[part.indep[static_cast<std::size_t>(k)]]));
            }
            if (snorm > 1e-9 * (1.0 + u_scale)) {
                const double sy = s.dot(ydiff);
                if (first_update && sy > 0.0) {
                    // size the initial matrix to the observed curvature
                    Br *= sy / s.squaredNorm();
                    first_update = false;
                }
                const double sBs = s.dot(Br * s);
                Eigen::VectorXd yhat = ydiff;
                if (sy < 0.2 * sBs) {
                    const double theta = sBs - sy > 0 ? 0.8 * sBs / (sBs - sy) : 0.0;
                    yhat = theta * ydiff + (1.0 - theta) * (Br * s);
                }
                const double syh = s.dot(yhat);
                if (syh > 1e-8 * snorm * yhat.norm() && syh > 0.0) {
                    const Eigen::VectorXd Bs = Br * s;
                    Br += (yhat * yhat.transpose()) / syh - (Bs * Bs.transpose()) / sBs;
                    Br = 0.5 * (Br + Br.transpose()).eval();
                }
            }
        }
        have_pair = false;

        // ----- reduced inequality rows: general constraints then bounds -----
        const int qrows = mi + static_cast<int>(bounded.size());
        Eigen::MatrixXd R(qrows, nu);
        Eigen::VectorXd rhs(qrows);
        Eigen::MatrixXd Ai_dense;
        if (mi > 0) {
            Ai_dense = Eigen::MatrixXd(Ai);
            for (int i = 0; i < mi; ++i) {
                Eigen::VectorXd a_u(nu);
                for (int k = 0; k < nu; ++k) {
                    a_u[k] = Ai_dense(i, part.indep[static_cast<std::size_t>(k)]);
                }
                double shift = 0.0;
                if (me > 0) {
                    Eigen::VectorXd a_d(me);
                    for (int k = 0; k < me; ++k) {
                        a_d[k] = Ai_dense(i, part.dep[static_cast<std::size_t>(k)]);
                    }
                    a_u -= W.transpose() * a_d;
                    shift = a_d.dot(pYd);
                }
                R.row(i) = a_u.transpose();
                rhs[i] = -ci[i] - shift;
            }
        }
        for (std::size_t b = 0; b < bounded.size(); ++b) {
            const int j = bounded[b];
            const int row = mi + static_cast<int>(b);
            R.row(row).setZero();
            double shift = 0.0;
            if (part.of_var[j] > 0) {
                R(row, part.of_var[j] - 1) = -1.0;
            } else {
                const int k = -part.of_var[j] - 1;
                R.row(row) = W.row(k);
                shift = -pYd[k];
            }
            rhs[row] = x[j] - lb[j] - shift;
        }

        // ----- reduced QP -----
        // keep the BFGS matrix decently conditioned before handing it over
        if (nu > 0) {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Br);
            Eigen::VectorXd lam = es.eigenvalues();
            const double lmax = std::max(lam.cwiseAbs().maxCoeff(), 1e-12);
            const double lmin = 1e-8 * lmax;
            bool clamped = false;
            for (Eigen::Index k = 0; k < lam.size(); ++k) {
                if (lam[k] < lmin) {
                    lam[k] = lmin;
                    clamped = true;
                }
            }
            if (clamped) {
                Br = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
            }
        }

        QpResult qp = solve_convex_qp(Br, g_r, R, rhs, 1e-12);
        if (!qp.solved && std::getenv("HIVOC_QP_DUMP") != nullptr) {
            FILE* fp = std::fopen("/tmp/qpdump.txt", "w");
            if (fp) {
                std::fprintf(fp, "%d %d\n", static_cast<int>(Br.rows()),
                             static_cast<int>(R.rows()));
                for (int a = 0; a < Br.rows(); ++a) {
                    for (int b = 0; b < Br.cols(); ++b) {
                        std::fprintf(fp, "%.17g ", Br(a, b));
                    }
                    std::fprintf(fp, "\n");
                }
                for (int a = 0; a < g_r.size(); ++a) {
                    std::fprintf(fp, "%.17g ", g_r[a]);
                }
                std::fprintf(fp, "\n");
                for (int a = 0; a < R.rows(); ++a) {
                    for (int b = 0; b < R.cols(); ++b) {
                        std::fprintf(fp, "%.17g ", R(a, b));
                    }
                    std::fprintf(fp, "\n");
                }
                for (int a = 0; a < rhs.size(); ++a) {
                    std::fprintf(fp, "%.17g ", rhs[a]);
                }
                std::fprintf(fp, "\n");
                std::fclose(fp);
            }
        }
        bool relaxed = false;
        if (!qp.solved) {
            // relax the general rows only; the bound rows always admit p = 0
            relaxed = true;
            Eigen::VectorXd rhs_rel = rhs;
            for (int i = 0; i < mi; ++i) {
                rhs_rel[i] = std::max(rhs[i], 0.0);
            }
            qp = solve_convex_qp(Br, g_r, R, rhs_rel, 1e-12);
        }
        Eigen::VectorXd pu;
        if (qp.solved) {
            pu = qp.p;
        } else {
            // last resort: pure range-space step, controls frozen
            pu = Eigen::VectorXd::Zero(nu);
            qp.multipliers = Eigen::VectorXd::Zero(qrows);
        }

        // assemble the full-space step
        Eigen::VectorXd p = Eigen::VectorXd::Zero(n);
        for (int k = 0; k < nu; ++k) {
            p[part.indep[static_cast<std::size_t>(k)]] = pu[k];
        }
        if (me > 0) {
            const Eigen::VectorXd pd = pYd - W * pu;
            for (int k = 0; k < me; ++k) {
                p[part.dep[static_cast<std::size_t>(k)]] = pd[k];
            }
        }

        // ----- multipliers -----
        mult.ineq = qp.multipliers.head(mi);
        mult.bounds.setZero();
        for (std::size_t b = 0; b < bounded.size(); ++b) {
            mult.bounds[bounded[b]] = qp.multipliers[mi + static_cast<Eigen::Index>(b)];
        }
        if (me > 0) {
            Eigen::VectorXd w_d = g_d;
            if (mi > 0) {
                for (int k = 0; k < me; ++k) {
                    double acc = 0.0;
                    for (int i = 0; i < mi; ++i) {
                        acc += Ai_dense(i, part.dep[static_cast<std::size_t>(k)]) * mult.ineq[i];
                    }
                    w_d[k] += acc;
                }
            }
            for (int k = 0; k < me; ++k) {
                w_d[k] -= mult.bounds[part.dep[static_cast<std::size_t>(k)]];
            }
            mult.eq = -lu.transpose().solve(w_d);
        }

        // ----- convergence test -----
        // stationarity and complementarity, scaled by the multiplier
        // magnitude so badly scaled duals do not make the test unreachable
        const auto scaled_kkt = [&]() {
            Eigen::VectorXd stat = g;
            if (me > 0) {
                stat += Ae.transpose() * mult.eq;
            }
            if (mi > 0) {
                stat += Ai.transpose() * mult.ineq;
            }
            stat -= mult.bounds;
            double r = stat.cwiseAbs().maxCoeff();
            for (int i = 0; i < mi; ++i) {
                r = std::max(r, std::abs(mult.ineq[i] * ci[i]));
                r = std::max(r, -mult.ineq[i]);
            }
            for (int j = 0; j < n; ++j) {
                if (lb[j] > -kInf) {
                    r = std::max(r, std::abs(mult.bounds[j] * (x[j] - lb[j])));
                    r = std::max(r, -mult.bounds[j]);
                }
            }
            const double lam_scale =
                1.0 + std::max({me > 0 ? mult.eq.cwiseAbs().maxCoeff() : 0.0,
                                mi > 0 ? mult.ineq.cwiseAbs().maxCoeff() : 0.0,
                                mult.bounds.cwiseAbs().maxCoeff()});
            return r / lam_scale;
        };
        const double viol = constraint_violation(ce, ci, x, lb);
        const double kkt = scaled_kkt();
        res.kkt_residual = kkt;
        res.max_violation = viol;
        if (viol <= options.tol_constraint && kkt <= options.tol_kkt) {
            res.status = SolveStatus::converged;
            break;
        }

        // ----- l1 merit line search -----
        const double lam_inf = std::max({mult.eq.size() > 0 ? mult.eq.cwiseAbs().maxCoeff() : 0.0,
                                         mult.ineq.size() > 0 ? mult.ineq.cwiseAbs().maxCoeff() : 0.0,
                                         mult.bounds.cwiseAbs().maxCoeff()});
        nu_pen = std::max(nu_pen, lam_inf + options.merit_penalty_margin);

        const double viol_l1 = l1_violation(ce, ci);
        const double gp = g.dot(p);
        double dir = gp - nu_pen * viol_l1;
        if (dir >= 0.0 && viol_l1 > options.tol_constraint * 1e-3) {
            nu_pen = std::max(nu_pen * 10.0, (gp / viol_l1) + options.merit_penalty_margin);
            dir = gp - nu_pen * viol_l1;
        }

        const double phi0 = f + nu_pen * viol_l1;
        double alpha = 1.0;
        bool accepted = false;
        double f_new = f;
        Eigen::VectorXd x_new, ce_new, ci_new;

        const auto clip_bounds = [&](Eigen::VectorXd& y) {
            for (int j = 0; j < n; ++j) {
                if (lb[j] > -kInf) {
                    y[j] = std::max(y[j], lb[j]);
                }
            }
        };
        const auto merit_of = [&](const Eigen::VectorXd& y, double& fy, Eigen::VectorXd& cey,
                                  Eigen::VectorXd& ciy) {
            fy = ev.f(y);
            cey = ev.ceq(y);
            ciy = ev.cineq(y);
            return fy + nu_pen * l1_violation(cey, ciy);
        };

        for (int back = 0; back < 40 && !accepted; ++back) {
            x_new = x + alpha * p;
            clip_bounds(x_new);
            const double phi = merit_of(x_new, f_new, ce_new, ci_new);
            if (phi <= phi0 + 1e-4 * alpha * dir || (dir >= 0.0 && phi < phi0)) {
                res.merit_history.emplace_back(phi0, phi);
                accepted = true;
                break;
            }
            if (back == 0 && me > 0) {
                // second-order correction, iterated: chord-Newton steps on
                // the dependents remove the constraint bulge of the full
                // step, so the merit does not cut off the unit step near
                // the constraint manifold
                Eigen::VectorXd x_soc = x_new;
                Eigen::VectorXd ce_soc = ce_new;
                double best = ce_soc.cwiseAbs().maxCoeff();
                bool contracted = false;
                for (int pass = 0; pass < 5 && best > 1e-12; ++pass) {
                    Eigen::VectorXd x_try = x_soc;
                    const Eigen::VectorXd corr = lu.solve(ce_soc);
                    for (int k = 0; k < me; ++k) {
                        x_try[part.dep[static_cast<std::size_t>(k)]] -= corr[k];
                    }
                    clip_bounds(x_try);
                    const Eigen::VectorXd ce_try = ev.ceq(x_try);
                    const double nrm = ce_try.cwiseAbs().maxCoeff();
                    if (nrm >= 0.9 * best) {
                        break; // outside the contraction basin
                    }
                    x_soc = x_try;
                    ce_soc = ce_try;
                    best = nrm;
                    contracted = true;
                }
                if (contracted) {
                    const double f_soc = ev.f(x_soc);
                    const Eigen::VectorXd ci_soc = ev.cineq(x_soc);
                    const double phi_soc = f_soc + nu_pen * l1_violation(ce_soc, ci_soc);
                    if (phi_soc <= phi0 + 1e-4 * alpha * dir || (dir >= 0.0 && phi_soc < phi0)) {
                        res.merit_history.emplace_back(phi0, phi_soc);
                        x_new = x_soc;
                        f_new = f_soc;
                        ce_new = ce_soc;
                        ci_new = ci_soc;
                        accepted = true;
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }

        bool restoration = false;
        if (!accepted && me > 0 && viol_l1 > options.tol_constraint) {
            // fall back to a pure feasibility step: the damped Newton
            // direction on the equalities with the controls frozen
            restoration = true;
            Eigen::VectorXd p_rest = Eigen::VectorXd::Zero(n);
            for (int k = 0; k < me; ++k) {
                p_rest[part.dep[static_cast<std::size_t>(k)]] = pYd[k];
            }
            // judged on violation decrease plus the merit, with the
            // penalty raised enough to make the direction a descent one
            double dir_rest = g.dot(p_rest) - nu_pen * viol_l1;
            if (dir_rest >= 0.0) {
                nu_pen = std::max(nu_pen * 10.0,
                                  g.dot(p_rest) / viol_l1 + options.merit_penalty_margin);
                dir_rest = g.dot(p_rest) - nu_pen * viol_l1;
            }
            const double phi0r = f + nu_pen * viol_l1;
            alpha = 1.0;
            for (int back = 0; back < 40; ++back) {
                x_new = x + alpha * p_rest;
                clip_bounds(x_new);
                const double phi = merit_of(x_new, f_new, ce_new, ci_new);
                const double viol_new = l1_violation(ce_new, ci_new);
                if (std::isfinite(phi) && viol_new <= (1.0 - 1e-4 * alpha) * viol_l1 &&
                    phi <= phi0r + 1e-4 * alpha * dir_rest) {
                    res.merit_history.emplace_back(phi0r, phi);
                    accepted = true;
                    p = p_rest;
                    pu.setZero(); // independents did not move
                    break;
                }
                alpha *= 0.5;
            }
        }

        if (options.verbose) {
            std::fprintf(stderr,
                         "sqp %4d: f=%.8e viol=%.2e kkt=%.2e qp[it=%d rel=%d ok=%d] "
                         "|pu|=%.2e alpha=%.2e nu=%.1e%s\n",
                         iter, f, viol_l1, kkt, qp.iterations, int(relaxed), int(qp.solved),
                         pu.size() ? pu.cwiseAbs().maxCoeff() : 0.0, accepted ? alpha : 0.0,
                         nu_pen, restoration ? " rest" : "");
        }

        if (!accepted) {
            if (!bfgs_was_reset && options.hessian == SolverOptions::Hessian::damped_bfgs) {
                Br.setIdentity();
                first_update = true;
                have_pair = false;
                bfgs_was_reset = true;
                continue;
            }
            res.message = "line search failed to make progress";
            res.status = SolveStatus::line_search_failure;
            break;
        }
        bfgs_was_reset = false;

        const double step_size = (alpha * p).cwiseAbs().maxCoeff();

        // ----- Hessian update -----
        if (options.hessian == SolverOptions::Hessian::finite_difference) {
            if (n <= 300) {
                // full-space Lagrangian Hessian by differencing its gradient
                const auto lag_grad = [&](const Eigen::VectorXd& y) {
                    Eigen::VectorXd lg = ev.grad(y);
                    if (me > 0) {
                        lg += ev.Jeq(y).transpose() * mult.eq;
                    }
                    if (mi > 0) {
                        lg += ev.Jineq(y).transpose() * mult.ineq;
                    }
                    return lg;
                };
                Eigen::MatrixXd H(n, n);
                Eigen::VectorXd yp = x_new, ym = x_new;
                for (int j = 0; j < n; ++j) {
                    const double h = options.fd_step * std::max(1.0, std::abs(x_new[j]));
                    yp[j] += h;
                    ym[j] -= h;
                    H.col(j) = (lag_grad(yp) - lag_grad(ym)) / (2.0 * h);
                    yp[j] = x_new[j];
                    ym[j] = x_new[j];
                }
                H = 0.5 * (H + H.transpose()).eval();
                Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(n, nu);
                for (int k = 0; k < nu; ++k) {
                    Z(part.indep[static_cast<std::size_t>(k)], k) = 1.0;
                }
                if (me > 0) {
                    for (int k = 0; k < me; ++k) {
                        Z.row(part.dep[static_cast<std::size_t>(k)]) = -W.row(k);
                    }
                }
                Br = Z.transpose() * H * Z;
                Br = 0.5 * (Br + Br.transpose()).eval();
                // convexify: flip negative curvature, floor tiny eigenvalues
                Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Br);
                Eigen::VectorXd lam = es.eigenvalues();
                const double floor = 1e-8 * std::max(1.0, lam.cwiseAbs().maxCoeff());
                for (Eigen::Index k = 0; k < lam.size(); ++k) {
                    lam[k] = std::max(std::abs(lam[k]), floor);
                }
                Br = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
            }
        } else if (nu > 0 && alpha >= 1e-4) {
            // record the pair; the update happens next iteration once the
            // reduced gradient with the fresh basis is available
            pair_s = alpha * pu;
            pair_gr = g_r;
            have_pair = true;
        }

        x = x_new;
        f = f_new;
        ce = ce_new;
        ci = ci_new;

        if (step_size < options.tol_step * (1.0 + x.cwiseAbs().maxCoeff())) {
            // stalled: give a fresh Hessian one chance, then classify
            if (!bfgs_was_reset && options.hessian == SolverOptions::Hessian::damped_bfgs) {
                Br.setIdentity();
                first_update = true;
                have_pair = false;
                bfgs_was_reset = true;
                continue;
            }
            const double v = constraint_violation(ce, ci, x, lb);
            const double k2 = scaled_kkt_residual(ev, x, lb, mult);
            res.max_violation = v;
            res.kkt_residual = k2;
            if (v <= options.tol_constraint && k2 <= options.tol_kkt) {
                res.status = SolveStatus::converged;
            } else {
                res.message = "step size collapsed before reaching the tolerances";
                res.status = SolveStatus::line_search_failure;
            }
            break;
        }
    }

    res.x = x;
    res.objective = ev.f(x);
    {
        const Eigen::VectorXd ce_f = ev.ceq(x);
        const Eigen::VectorXd ci_f = ev.cineq(x);
        res.max_violation = constraint_violation(ce_f, ci_f, x, lb);
        res.kkt_residual = scaled_kkt_residual(ev, x, lb, mult);
        if (res.status != SolveStatus::converged && res.status != SolveStatus::infeasible &&
            res.status != SolveStatus::line_search_failure) {
            res.status = (res.max_violation <= options.tol_constraint &&
                          res.kkt_residual <= options.tol_kkt)
                             ? SolveStatus::converged
                             : SolveStatus::max_iterations;
        }
    }
    res.multipliers = mult;
    return res;
}

} // namespace hivoc
