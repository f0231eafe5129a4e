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
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "hivoc/model.hpp"
#include "hivoc/qp.hpp"
#include "hivoc/sqp.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>

using namespace hivoc;

namespace {

SolverOptions tight_options()
{
    SolverOptions o;
    o.tol_constraint = 1e-9;
    o.tol_kkt = 1e-9;
    o.max_iterations = 20;
    return o;
}

// min x^2 s.t. x >= 1
NlpProblem bound_quadratic()
{
    NlpProblem p;
    p.num_vars = 1;
    p.objective = [](const Eigen::VectorXd& x) { return x[0] * x[0]; };
    p.gradient = [](const Eigen::VectorXd& x) {
        return Eigen::VectorXd::Constant(1, 2.0 * x[0]);
    };
    p.lower_bounds = Eigen::VectorXd::Constant(1, 1.0);
    return p;
}

// min (x-2)^2 + (y-1)^2 s.t. x + y = 2
NlpProblem equality_quadratic()
{
    NlpProblem p;
    p.num_vars = 2;
    p.num_eq = 1;
    p.objective = [](const Eigen::VectorXd& x) {
        return (x[0] - 2) * (x[0] - 2) + (x[1] - 1) * (x[1] - 1);
    };
    p.gradient = [](const Eigen::VectorXd& x) {
        Eigen::VectorXd g(2);
        g << 2 * (x[0] - 2), 2 * (x[1] - 1);
        return g;
    };
    p.equalities = [](const Eigen::VectorXd& x) {
        return Eigen::VectorXd::Constant(1, x[0] + x[1] - 2.0);
    };
    return p;
}

// min -x y s.t. x^2 + y^2 <= 2, x >= 0, y >= 0
NlpProblem product_on_disc()
{
    NlpProblem p;
    p.num_vars = 2;
    p.num_ineq = 1;
    p.objective = [](const Eigen::VectorXd& x) { return -x[0] * x[1]; };
    p.gradient = [](const Eigen::VectorXd& x) {
        Eigen::VectorXd g(2);
        g << -x[1], -x[0];
        return g;
    };
    p.inequalities = [](const Eigen::VectorXd& x) {
        return Eigen::VectorXd::Constant(1, x[0] * x[0] + x[1] * x[1] - 2.0);
    };
    p.lower_bounds = Eigen::VectorXd::Zero(2);
    return p;
}

} // namespace

TEST_CASE("convex qp: active bound and multiplier")
{
    Eigen::MatrixXd B = Eigen::MatrixXd::Identity(2, 2);
    Eigen::VectorXd g(2);
    g << -1.0, 0.0;
    Eigen::MatrixXd M(1, 2);
    M << 1.0, 0.0;
    Eigen::VectorXd d(1);
    d << 0.3;
    const QpResult r = solve_convex_qp(B, g, M, d);
    REQUIRE(r.solved);
    CHECK(r.p[0] == doctest::Approx(0.3).epsilon(1e-10));
    CHECK(r.p[1] == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(r.multipliers[0] == doctest::Approx(0.7).epsilon(1e-9));
}

TEST_CASE("convex qp: inconsistent rows are flagged infeasible")
{
    Eigen::MatrixXd B = Eigen::MatrixXd::Identity(1, 1);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(1);
    Eigen::MatrixXd M(2, 1);
    M << 1.0, -1.0;
    Eigen::VectorXd d(2);
    d << -1.0, -1.0; // x <= -1 and x >= 1
    const QpResult r = solve_convex_qp(B, g, M, d);
    CHECK_FALSE(r.solved);
    CHECK(r.infeasible);
}

TEST_CASE("convex qp: random inequality problems against a constructed optimum")
{
    // Build problems whose optimum is known by construction: pick x*,
    // an active set with positive multipliers, and back out g.
    std::mt19937 rng(99);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 4;
        Eigen::MatrixXd A = Eigen::MatrixXd::NullaryExpr(n, n, [&]() { return unif(rng); });
        Eigen::MatrixXd B = A.transpose() * A + Eigen::MatrixXd::Identity(n, n);
        Eigen::VectorXd xstar = Eigen::VectorXd::NullaryExpr(n, [&]() { return unif(rng); });
        Eigen::MatrixXd M(2, n);
        M.row(0) = Eigen::VectorXd::NullaryExpr(n, [&]() { return unif(rng); }).transpose();
        M.row(1) = Eigen::VectorXd::NullaryExpr(n, [&]() { return unif(rng); }).transpose();
        Eigen::VectorXd d(2);
        d[0] = M.row(0).dot(xstar);      // active
        d[1] = M.row(1).dot(xstar) + 1.0; // inactive
        const double lam0 = 0.5;
        const Eigen::VectorXd g = -(B * xstar) - lam0 * M.row(0).transpose();
        const QpResult r = solve_convex_qp(B, g, M, d);
        REQUIRE(r.solved);
        CHECK((r.p - xstar).lpNorm<Eigen::Infinity>() < 1e-8);
        CHECK(r.multipliers[0] == doctest::Approx(lam0).epsilon(1e-6));
        CHECK(r.multipliers[1] == doctest::Approx(0.0).epsilon(1e-9));
    }
}

TEST_CASE("sqp: bound-active quadratic")
{
    const NlpProblem p = bound_quadratic();
    const auto r = solve(p, Eigen::VectorXd::Constant(1, 5.0), tight_options());
    REQUIRE(r.converged());
    CHECK(r.iterations <= 20);
    CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(r.objective == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("sqp: equality-constrained quadratic")
{
    const NlpProblem p = equality_quadratic();
    Eigen::VectorXd x0(2);
    x0 << 4.0, -3.0;
    const auto r = solve(p, x0, tight_options());
    REQUIRE(r.converged());
    CHECK(r.iterations <= 20);
    CHECK(r.x[0] == doctest::Approx(1.5).epsilon(1e-8));
    CHECK(r.x[1] == doctest::Approx(0.5).epsilon(1e-8));
}

TEST_CASE("sqp: product objective on the disc")
{
    const NlpProblem p = product_on_disc();
    Eigen::VectorXd x0(2);
    x0 << 0.5, 1.0;
    const auto r = solve(p, x0, tight_options());
    REQUIRE(r.converged());
    CHECK(r.iterations <= 20);
    CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(r.x[1] == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(r.objective == doctest::Approx(-1.0).epsilon(1e-7));
}

TEST_CASE("sqp: merit value never increases over accepted steps")
{
    for (const NlpProblem& p : {equality_quadratic(), product_on_disc()}) {
        Eigen::VectorXd x0(2);
        x0 << 3.0, -2.0;
        const auto r = solve(p, x0, tight_options());
        for (const auto& [before, after] : r.merit_history) {
            CHECK(after <= before + 1e-12 * std::max(1.0, std::abs(before)));
        }
    }
}

TEST_CASE("sqp: random convex equality programs reach the analytic optimum")
{
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
        const int n = 5, me = 2;
        Eigen::MatrixXd A = Eigen::MatrixXd::NullaryExpr(n, n, [&]() { return unif(rng); });
        Eigen::MatrixXd Q = A.transpose() * A + Eigen::MatrixXd::Identity(n, n);
        Eigen::VectorXd b = Eigen::VectorXd::NullaryExpr(n, [&]() { return unif(rng); });
        Eigen::MatrixXd C = Eigen::MatrixXd::NullaryExpr(me, n, [&]() { return unif(rng); });
        Eigen::VectorXd dvec = Eigen::VectorXd::NullaryExpr(me, [&]() { return unif(rng); });

        // analytic optimum through the KKT system
        Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + me, n + me);
        K.topLeftCorner(n, n) = Q;
        K.topRightCorner(n, me) = C.transpose();
        K.bottomLeftCorner(me, n) = C;
        Eigen::VectorXd rhs(n + me);
        rhs << -b, dvec;
        const Eigen::VectorXd sol = K.fullPivLu().solve(rhs);
        const Eigen::VectorXd xstar = sol.head(n);

        NlpProblem p;
        p.num_vars = n;
        p.num_eq = me;
        p.objective = [Q, b](const Eigen::VectorXd& x) {
            return 0.5 * x.dot(Q * x) + b.dot(x);
        };
        p.gradient = [Q, b](const Eigen::VectorXd& x) -> Eigen::VectorXd { return Q * x + b; };
        p.equalities = [C, dvec](const Eigen::VectorXd& x) -> Eigen::VectorXd {
            return C * x - dvec;
        };

        const auto r = solve(p, Eigen::VectorXd::Zero(n), tight_options());
        REQUIRE(r.converged());
        CHECK(r.iterations <= 20);
        CHECK((r.x - xstar).lpNorm<Eigen::Infinity>() < 1e-8);
    }
}

TEST_CASE("sqp: finite-difference Hessian option agrees on small problems")
{
    // differenced Hessians carry O(fd_step) noise, so the demands here
    // are looser than for the quasi-Newton path
    SolverOptions o;
    o.tol_constraint = 1e-7;
    o.tol_kkt = 1e-7;
    o.hessian = SolverOptions::Hessian::finite_difference;
    o.max_iterations = 30;

    Eigen::VectorXd x0(2);
    x0 << 4.0, -3.0;
    const auto r1 = solve(equality_quadratic(), x0, o);
    REQUIRE(r1.converged());
    CHECK(r1.x[0] == doctest::Approx(1.5).epsilon(1e-6));

    x0 << 0.5, 1.0;
    const auto r2 = solve(product_on_disc(), x0, o);
    REQUIRE(r2.converged());
    CHECK(r2.x[0] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("kkt residual: hand multipliers at the three solutions")
{
    {
        const NlpProblem p = bound_quadratic();
        Multipliers m;
        m.bounds = Eigen::VectorXd::Constant(1, 2.0);
        CHECK(kkt_residual(p, Eigen::VectorXd::Constant(1, 1.0), m) < 1e-8);
        // far from the optimum the residual is large
        CHECK(kkt_residual(p, Eigen::VectorXd::Constant(1, 5.0), m) > 1e-2);
    }
    {
        const NlpProblem p = equality_quadratic();
        Eigen::VectorXd x(2);
        x << 1.5, 0.5;
        Multipliers m;
        m.eq = Eigen::VectorXd::Constant(1, 1.0);
        CHECK(kkt_residual(p, x, m) < 1e-8);
    }
    {
        const NlpProblem p = product_on_disc();
        Eigen::VectorXd x(2);
        x << 1.0, 1.0;
        Multipliers m;
        m.ineq = Eigen::VectorXd::Constant(1, 0.5);
        m.bounds = Eigen::VectorXd::Zero(2);
        CHECK(kkt_residual(p, x, m) < 1e-8);
        // an inactive constraint with zero multiplier adds nothing
        Eigen::VectorXd inside(2);
        inside << 0.1, 0.1;
        Multipliers m0;
        m0.ineq = Eigen::VectorXd::Zero(1);
        const double r = kkt_residual(p, inside, m0);
        CHECK(r == doctest::Approx(0.1).epsilon(1e-9)); // pure gradient norm
    }
}

TEST_CASE("fd jacobian: exact on linear maps, zero rows for quadratics at origin")
{
    Eigen::MatrixXd A(3, 2);
    A << 1, 2, -0.5, 3, 0, -2;
    const auto lin = [A](const Eigen::VectorXd& x) -> Eigen::VectorXd { return A * x; };
    Eigen::VectorXd x(2);
    x << 0.3, -0.7;
    CHECK((fd_jacobian(lin, x, 1e-6) - A).cwiseAbs().maxCoeff() < 1e-9);

    const auto quad = [](const Eigen::VectorXd& y) -> Eigen::VectorXd {
        Eigen::VectorXd out(2);
        out << y[0] * y[0], y[1] * y[1] + y[0] * y[1];
        return out;
    };
    const Eigen::MatrixXd J0 = fd_jacobian(quad, Eigen::VectorXd::Zero(2), 1e-6);
    CHECK(J0.cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("fd jacobian: sparsity restriction only fills declared entries")
{
    Eigen::MatrixXd A(2, 3);
    A << 1, 2, 3, 4, 5, 6;
    const auto lin = [A](const Eigen::VectorXd& x) -> Eigen::VectorXd { return A * x; };
    std::vector<std::pair<int, int>> pattern = {{0, 0}, {1, 2}};
    const Eigen::MatrixXd J = fd_jacobian(lin, Eigen::VectorXd::Zero(3), 1e-6, &pattern);
    CHECK(J(0, 0) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(J(1, 2) == doctest::Approx(6.0).epsilon(1e-10));
    CHECK(J(0, 1) == 0.0);
    CHECK(J(1, 0) == 0.0);
}

TEST_CASE("fd jacobian of the transmission rhs matches a hand derivative")
{
    ModelParams prm; // pi = 0 defaults
    const ControlVector u{0.003, 0.002};
    Eigen::VectorXd x(9);
    x << 9000, 81000, 40, 300, 200, 1500, 120, 700, 250;

    const auto f = [&](const Eigen::VectorXd& y) -> Eigen::VectorXd {
        return rhs(0.0, StateVector::from_vector(y), u, prm).to_vector();
    };
    const Eigen::MatrixXd J = fd_jacobian(f, x, 1e-6);

    // dS_H/dP at pi = 0:
    //   x_fail - S_H d(phi_H)/dP - u_P d(zeta_P N)/dP with
    //   phi_H = lambda_H a / theta, d theta/dP = lambda_H, da/dP = 0,
    //   zeta_P N = r_b S_H N / (r_b N_H + N_L).
    const StateVector X = StateVector::from_vector(x);
    const double NH = X.high_risk_total(), NL = X.low_risk_total(), N = X.total();
    const double theta = prm.lambda_H * NH + prm.lambda_L * NL;
    const double a = prm.beta_A * (prm.lambda_H * X.I_AH + prm.lambda_L * X.I_AL) +
                     prm.beta_C * (prm.lambda_H * X.I_CH + prm.lambda_L * X.I_CL);
    const double den = prm.r_b * NH + NL;
    const double hand = prm.x + X.S_H * prm.lambda_H * prm.lambda_H * a / (theta * theta) -
                        u.u_P * prm.r_b * X.S_H * (den - N * prm.r_b) / (den * den);
    CHECK(J(0, 8) == doctest::Approx(hand).epsilon(1e-6));
}
