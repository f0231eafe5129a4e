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

#include "hivoc/integrate.hpp"
#include "hivoc/transcribe.hpp"

#include <Eigen/SparseLU>

#include <cmath>
#include <random>

using namespace hivoc;

namespace {

StateVector outbreak_start()
{
    StateVector X;
    X.S_H = 9900.0;
    X.S_L = 89100.0;
    X.I_AH = 10.0;
    X.I_AL = 90.0;
    X.I_CH = 90.0;
    X.I_CL = 810.0;
    return X;
}

ModelParams frozen_params()
{
    ModelParams p;
    p.alpha_H = 0.0;
    p.alpha_L = 0.0;
    p.mu = 0.0;
    p.delta_A = 0.0;
    p.delta_C = 0.0;
    p.baseline_tap = 0.0;
    p.lambda_H = 0.0;
    p.lambda_L = 0.0;
    p.beta_A = 0.0;
    p.beta_C = 0.0;
    return p;
}

// sample the oracle trajectory at the grid points of interval i
StateMatrix sample_interval(const Trajectory& traj, const CollocationGrid& grid, int i)
{
    StateMatrix X(grid.points_per_interval(), StateVector::kDim);
    for (int k = 0; k <= grid.n_cp; ++k) {
        X.row(k) = traj.eval(grid.tau(i, k)).to_vector().transpose();
    }
    return X;
}

IntegrationOptions tight_integration()
{
    IntegrationOptions o;
    o.rel_tol = 1e-11;
    o.abs_tol = 1e-9;
    return o;
}

} // namespace

TEST_CASE("grid construction")
{
    const CollocationGrid g = build_grid(50, 12.0, 5);
    CHECK(g.t_f == doctest::Approx(600.0));
    CHECK(g.knots.size() == 51);
    CHECK(g.tau(0, 0) == doctest::Approx(0.0));
    CHECK(g.tau(7, 0) == doctest::Approx(g.knots[7]));

    const CollocationGrid g1 = build_grid(1, 12.0, 3);
    const DecisionLayout l1{g1.n_int, g1.n_cp};
    CHECK(l1.num_eq() == 9 + 1 * (2 * 3 * 9 + 9)); // no defect rows

    CHECK_THROWS_AS(build_grid(0, 12.0, 5), std::invalid_argument);
    CHECK_THROWS_AS(build_grid(5, -1.0, 5), std::invalid_argument);
    CHECK_THROWS_AS(build_grid(5, 12.0, 1), std::invalid_argument);
}

TEST_CASE("decision layout: counting and round trip")
{
    const DecisionLayout l{2, 3};
    CHECK(l.num_eq() == 144);
    CHECK(l.num_ineq() == 2);
    CHECK(l.num_vars() == 148);

    // offsets are a bijection
    std::vector<bool> seen(static_cast<std::size_t>(l.num_vars()), false);
    for (int i = 0; i < 2; ++i) {
        for (int k = 0; k <= 3; ++k) {
            for (int j = 0; j < 9; ++j) {
                for (bool b : {false, true}) {
                    const int idx = l.state_index(i, k, j, b);
                    REQUIRE(idx >= 0);
                    REQUIRE(idx < l.num_vars());
                    CHECK_FALSE(seen[static_cast<std::size_t>(idx)]);
                    seen[static_cast<std::size_t>(idx)] = true;
                }
            }
        }
        for (int c = 0; c < 2; ++c) {
            const int idx = l.control_index(i, c);
            CHECK_FALSE(seen[static_cast<std::size_t>(idx)]);
            seen[static_cast<std::size_t>(idx)] = true;
        }
    }
    for (bool b : seen) {
        CHECK(b);
    }

    const CollocationGrid g = build_grid(2, 12.0, 3);
    const TranscribedNlp nlp(g, ModelParams{}, CostParams{}, outbreak_start(), 1e6);
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Eigen::VectorXd z = Eigen::VectorXd::NullaryExpr(nlp.num_vars(), [&]() { return unif(rng); });
    const Eigen::VectorXd z2 = nlp.pack(nlp.unpack(z));
    CHECK((z - z2).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("collocation residuals: constants under frozen dynamics, lines under unit inflow")
{
    const CollocationGrid g = build_grid(1, 2.0, 4);

    StateMatrix constant(g.points_per_interval(), 9);
    for (int k = 0; k < g.points_per_interval(); ++k) {
        constant.row(k) = outbreak_start().to_vector().transpose();
    }
    const Eigen::MatrixXd r0 =
        collocation_residuals(constant, ControlVector{}, g, frozen_params());
    CHECK(r0.cwiseAbs().maxCoeff() < 1e-9);

    // S_H(t) = t solves dS_H/dt = 1 when only alpha_H = 1 is active
    ModelParams unit = frozen_params();
    unit.alpha_H = 1.0;
    StateMatrix line = StateMatrix::Zero(g.points_per_interval(), 9);
    for (int k = 0; k < g.points_per_interval(); ++k) {
        line(k, 0) = g.tau(0, k);
    }
    const Eigen::MatrixXd r1 = collocation_residuals(line, ControlVector{}, g, unit);
    CHECK(r1.cwiseAbs().maxCoeff() < 1e-11);
}

TEST_CASE("collocation residuals: oracle-sampled trajectory nearly collocates")
{
    const ModelParams p;
    const CollocationGrid g = build_grid(1, 12.0, 5);
    const ControlSchedule sched = ControlSchedule::constant(1, 12.0, ControlVector{0.002, 0.001});
    const Trajectory traj = integrate(p, outbreak_start(), sched, 12.0, tight_integration());
    const StateMatrix X = sample_interval(traj, g, 0);
    const Eigen::MatrixXd r = collocation_residuals(X, sched.values[0], g, p);
    CHECK(r.cwiseAbs().maxCoeff() < 1e-5 * outbreak_start().total());
}

TEST_CASE("continuity defect: zero rhs, constant rhs, oracle consistency")
{
    const CollocationGrid g = build_grid(1, 2.0, 4);

    StateMatrix constant(g.points_per_interval(), 9);
    for (int k = 0; k < g.points_per_interval(); ++k) {
        constant.row(k) = outbreak_start().to_vector().transpose();
    }
    const Eigen::VectorXd d0 = continuity_defect(constant, ControlVector{},
                                                 outbreak_start().to_vector(), g, frozen_params());
    CHECK(d0.cwiseAbs().maxCoeff() < 1e-9);

    // unit inflow over dt = 2 advances S_H by exactly 2
    ModelParams unit = frozen_params();
    unit.alpha_H = 1.0;
    const Eigen::VectorXd d1 = continuity_defect(constant, ControlVector{},
                                                 outbreak_start().to_vector(), g, unit);
    CHECK(d1[0] == doctest::Approx(2.0).epsilon(1e-12));

    const ModelParams p;
    const CollocationGrid g12 = build_grid(2, 12.0, 5);
    const ControlSchedule sched = ControlSchedule::constant(2, 12.0, ControlVector{0.002, 0.001});
    const Trajectory traj = integrate(p, outbreak_start(), sched, 24.0, tight_integration());
    const StateMatrix X0 = sample_interval(traj, g12, 0);
    const Eigen::VectorXd d2 = continuity_defect(X0, sched.values[0],
                                                 traj.eval(12.0).to_vector(), g12, p);
    CHECK(d2.cwiseAbs().maxCoeff() < 1e-5 * outbreak_start().total());
}

TEST_CASE("budget inequality: zero-control and constant-state identities")
{
    const CollocationGrid g = build_grid(1, 12.0, 4);
    const CostParams c;

    StateMatrix X(g.points_per_interval(), 9);
    for (int k = 0; k < g.points_per_interval(); ++k) {
        X.row(k) = outbreak_start().to_vector().transpose();
    }

    CHECK(budget_inequality(X, X, ControlVector{}, g, c, 5e5) == doctest::Approx(-5e5));
    CHECK(budget_inequality(X, X, ControlVector{}, g, c, 0.0) == doctest::Approx(0.0));

    const ControlVector u{0.004, 0.001};
    const StateVector Xs = outbreak_start();
    const double expect =
        12.0 * (budget_rate(Xs, u, c) - budget_rate(Xs, ControlVector{}, c)) - 5e5;
    CHECK(budget_inequality(X, X, u, g, c, 5e5) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("baseline residuals mirror the collocation operator at zero control")
{
    const ModelParams p;
    const CollocationGrid g = build_grid(1, 12.0, 5);
    const Trajectory traj =
        integrate(p, outbreak_start(), ControlSchedule::zero(1, 12.0), 12.0, tight_integration());
    const StateMatrix X = sample_interval(traj, g, 0);
    const BaselineResiduals r = baseline_residuals(X, outbreak_start().to_vector(), g, p);
    CHECK(r.collocation.cwiseAbs().maxCoeff() < 1e-5 * outbreak_start().total());
    CHECK(r.anchor.cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("objective quadrature: trivial values and oracle comparison")
{
    const ModelParams p;
    const CostParams c;
    const CollocationGrid g1 = build_grid(1, 12.0, 4);

    StateMatrix clean = StateMatrix::Zero(g1.points_per_interval(), 9);
    clean.col(0).setConstant(1e4);
    clean.col(1).setConstant(9e4);
    CHECK(quadrature_objective(g1, p, c, {clean}) == doctest::Approx(0.0));

    StateMatrix hot(g1.points_per_interval(), 9);
    for (int k = 0; k < g1.points_per_interval(); ++k) {
        hot.row(k) = outbreak_start().to_vector().transpose();
    }
    CHECK(quadrature_objective(g1, p, c, {hot}) ==
          doctest::Approx(12.0 * incidence_cost(outbreak_start(), p)).epsilon(1e-12));

    // against the adaptive-quadrature integral along the oracle trajectory
    const CollocationGrid g = build_grid(5, 12.0, 5);
    const ControlSchedule sched = ControlSchedule::constant(5, 12.0, ControlVector{0.002, 0.001});
    const Trajectory traj = integrate(p, outbreak_start(), sched, 60.0, tight_integration());
    std::vector<StateMatrix> samples;
    for (int i = 0; i < 5; ++i) {
        samples.push_back(sample_interval(traj, g, i));
    }
    const double quad = quadrature_objective(g, p, c, samples);
    const auto ev = evaluate_policy(p, c, outbreak_start(), sched, 1e18, tight_integration());
    CHECK(quad == doctest::Approx(ev.total_cost).epsilon(1e-4));
}

TEST_CASE("transcribed nlp: counting, bounds and scaling conventions")
{
    const CollocationGrid g = build_grid(2, 12.0, 3);
    const TranscribedNlp nlp(g, ModelParams{}, CostParams{}, outbreak_start(), 1e6);
    CHECK(nlp.num_eq() == 144);
    CHECK(nlp.num_ineq() == 2);
    CHECK(nlp.num_vars() == 148);

    const Eigen::VectorXd lb = nlp.lower_bounds();
    int bounded = 0;
    for (int j = 0; j < lb.size(); ++j) {
        if (lb[j] > -1e300) {
            ++bounded;
            CHECK(lb[j] == 0.0);
        }
    }
    CHECK(bounded == 4);

    // at the replicate guess with zero controls every budget row sits at
    // exactly -B_lim (scaled to -1)
    const Eigen::VectorXd z = nlp.initial_guess_replicate();
    const Eigen::VectorXd ci = nlp.eval_inequalities(z);
    for (int i = 0; i < ci.size(); ++i) {
        CHECK(ci[i] == doctest::Approx(-1.0).epsilon(1e-12));
    }
}

TEST_CASE("transcribed nlp: an oracle-simulated tuple is near-feasible")
{
    const ModelParams p;
    const CostParams c;
    const CollocationGrid g = build_grid(4, 12.0, 5);
    const ControlSchedule sched = ControlSchedule::constant(4, 12.0, ControlVector{0.002, 0.001});

    const Trajectory traj = integrate(p, outbreak_start(), sched, 48.0, tight_integration());
    DecisionPoint pt;
    pt.schedule = sched;
    for (int i = 0; i < 4; ++i) {
        pt.states.push_back(sample_interval(traj, g, i));
    }
    const auto baselines = baseline_trajectories(p, traj, 4, 12.0, tight_integration());
    for (int i = 0; i < 4; ++i) {
        StateMatrix Xb(g.points_per_interval(), 9);
        for (int k = 0; k <= g.n_cp; ++k) {
            Xb.row(k) =
                baselines[static_cast<std::size_t>(i)].eval(g.tau(i, k)).to_vector().transpose();
        }
        pt.baselines.push_back(Xb);
    }

    // generous budget so the inequalities have headroom
    const TranscribedNlp nlp(g, p, c, outbreak_start(), 1e9);
    const Eigen::VectorXd z = nlp.pack(pt);
    CHECK(nlp.eval_equalities(z).cwiseAbs().maxCoeff() < 1e-4);
    CHECK(nlp.eval_inequalities(z).maxCoeff() < 1e-6);

    // the scaled objective is the unscaled one over the initial population
    CHECK(nlp.objective(z) * outbreak_start().total() ==
          doctest::Approx(nlp.objective_unscaled(z)).epsilon(1e-12));
}

TEST_CASE("transcribed nlp: analytic gradient against finite differences")
{
    const ModelParams p;
    CostParams c;
    const CollocationGrid g = build_grid(2, 12.0, 4);
    const TranscribedNlp nlp(g, p, c, outbreak_start(), 1e7);

    std::mt19937 rng(11);
    std::uniform_real_distribution<double> unif(0.3, 1.2);
    std::uniform_real_distribution<double> cu(0.0, 0.005);
    for (int trial = 0; trial < 3; ++trial) {
        Eigen::VectorXd z = nlp.initial_guess_replicate();
        for (int i = 0; i < z.size() - 4; ++i) {
            z[i] *= unif(rng);
        }
        for (int i = static_cast<int>(z.size()) - 4; i < z.size(); ++i) {
            z[i] = cu(rng);
        }
        const Eigen::VectorXd ga = nlp.objective_gradient(z);
        // centered differences with a relative step
        Eigen::VectorXd gf(z.size());
        Eigen::VectorXd zp = z, zm = z;
        for (int j = 0; j < z.size(); ++j) {
            const double h = 1e-6 * std::max(1.0, std::abs(z[j]));
            zp[j] += h;
            zm[j] -= h;
            gf[j] = (nlp.objective(zp) - nlp.objective(zm)) / (2 * h);
            zp[j] = z[j];
            zm[j] = z[j];
        }
        const double scale = std::max(1.0, ga.cwiseAbs().maxCoeff());
        CHECK((ga - gf).cwiseAbs().maxCoeff() / scale < 1e-6);
        // control entries carry no cost
        for (int i = 0; i < 2; ++i) {
            CHECK(ga[nlp.layout().control_index(i, 0)] == 0.0);
            CHECK(ga[nlp.layout().control_index(i, 1)] == 0.0);
        }
    }
}

TEST_CASE("objective gradient scales linearly with the interval length")
{
    const ModelParams p;
    const CostParams c;
    const CollocationGrid g1 = build_grid(1, 6.0, 4);
    const CollocationGrid g2 = build_grid(1, 12.0, 4);
    StateMatrix X(g1.points_per_interval(), 9);
    for (int k = 0; k < g1.points_per_interval(); ++k) {
        X.row(k) = outbreak_start().to_vector().transpose();
    }
    const auto ga = quadrature_objective_gradient(g1, p, c, {X});
    const auto gb = quadrature_objective_gradient(g2, p, c, {X});
    CHECK((2.0 * ga[0] - gb[0]).cwiseAbs().maxCoeff() < 1e-12 * gb[0].cwiseAbs().maxCoeff());
}

TEST_CASE("structured jacobians agree with direct finite differences")
{
    const ModelParams p;
    const CostParams c;
    const CollocationGrid g = build_grid(2, 12.0, 3);
    const TranscribedNlp nlp(g, p, c, outbreak_start(), 1e7);

    Eigen::VectorXd z = nlp.initial_guess_aggressive(0.002);
    // roughen the point so no structure is accidental
    std::mt19937 rng(17);
    std::uniform_real_distribution<double> unif(0.85, 1.15);
    for (int i = 0; i < z.size() - 4; ++i) {
        z[i] *= unif(rng);
    }

    const Eigen::MatrixXd Je(nlp.equality_jacobian(z));
    const auto eq = [&](const Eigen::VectorXd& y) { return nlp.eval_equalities(y); };
    const Eigen::MatrixXd Jfd = fd_jacobian(eq, z, 1e-7);
    CHECK((Je - Jfd).cwiseAbs().maxCoeff() < 2e-5);

    const Eigen::MatrixXd Ji(nlp.inequality_jacobian(z));
    const auto ineq = [&](const Eigen::VectorXd& y) { return nlp.eval_inequalities(y); };
    const Eigen::MatrixXd Jifd = fd_jacobian(ineq, z, 1e-7);
    CHECK((Ji - Jifd).cwiseAbs().maxCoeff() < 2e-5);
}

TEST_CASE("dependent columns form a nonsingular square basis")
{
    const CollocationGrid g = build_grid(3, 12.0, 4);
    const TranscribedNlp nlp(g, ModelParams{}, CostParams{}, outbreak_start(), 1e7);
    const auto hint = nlp.dependent_hint();
    CHECK(static_cast<int>(hint.size()) == nlp.num_eq());

    const Eigen::SparseMatrix<double> Ae = nlp.equality_jacobian(nlp.initial_guess_replicate());
    Eigen::SparseMatrix<double> Ad(nlp.num_eq(), nlp.num_eq());
    std::vector<Eigen::Triplet<double>> trip;
    for (int c = 0; c < static_cast<int>(hint.size()); ++c) {
        for (Eigen::SparseMatrix<double>::InnerIterator it(Ae, hint[static_cast<std::size_t>(c)]);
             it; ++it) {
            trip.emplace_back(it.row(), c, it.value());
        }
    }
    Ad.setFromTriplets(trip.begin(), trip.end());
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(Ad);
    CHECK(lu.info() == Eigen::Success);
}

TEST_CASE("fixed-schedule collocation solve matches the oracle and converges in order")
{
    const ModelParams p;
    const ControlSchedule sched = ControlSchedule::constant(5, 12.0, ControlVector{0.002, 0.001});
    const Trajectory traj = integrate(p, outbreak_start(), sched, 60.0, tight_integration());

    double prev_err = 1e99;
    for (int n_cp : {3, 5, 7}) {
        const CollocationGrid g = build_grid(5, 12.0, n_cp);
        const FixedScheduleSolution sol = solve_fixed_schedule(g, p, outbreak_start(), sched);
        REQUIRE(sol.converged);
        double err = 0.0;
        for (int i = 0; i < 5; ++i) {
            const StateMatrix ref = sample_interval(traj, g, i);
            const auto diff =
                (sol.states[static_cast<std::size_t>(i)] - ref).cwiseAbs().maxCoeff();
            err = std::max(err, diff);
        }
        err /= outbreak_start().total();
        if (n_cp == 5) {
            CHECK(err < 1e-4);
        }
        CHECK(err < prev_err);
        prev_err = err;
    }
}

TEST_CASE("solution extraction: knots, interpolation and right continuity")
{
    const ModelParams p;
    const CollocationGrid g = build_grid(3, 12.0, 5);
    ControlSchedule sched = ControlSchedule::zero(3, 12.0);
    sched.values[0] = {0.001, 0.0005};
    sched.values[1] = {0.003, 0.0};
    sched.values[2] = {0.0, 0.002};

    const FixedScheduleSolution sol = solve_fixed_schedule(g, p, outbreak_start(), sched);
    REQUIRE(sol.converged);
    const auto baselines = solve_baseline_blocks(g, p, sol.states);

    const TranscribedNlp nlp(g, p, CostParams{}, outbreak_start(), 1e7);
    DecisionPoint pt{sol.states, baselines, sched};
    const Eigen::VectorXd z = nlp.pack(pt);

    const TranscriptionSolution ext = nlp.extract_solution(z);
    CHECK(ext.schedule.values[1].u_P == doctest::Approx(0.003));
    // right continuity at the knots
    CHECK(ext.schedule.at(12.0).u_P == doctest::Approx(0.003));
    CHECK(ext.schedule.at(24.0).u_T == doctest::Approx(0.002));

    const PiecewiseTrajectory pw = nlp.solution_trajectory(z);
    // knot evaluation returns the stored knot states
    const auto d0 = (pw.eval(0.0).to_vector() - sol.states[0].row(0).transpose()).cwiseAbs();
    CHECK(d0.maxCoeff() < 1e-9);
    const auto d1 = (pw.eval(12.0).to_vector() - sol.states[1].row(0).transpose()).cwiseAbs();
    CHECK(d1.maxCoeff() < 1e-9);

    // mid-interval values track an oracle re-simulation
    const Trajectory traj = integrate(p, outbreak_start(), sched, 36.0, tight_integration());
    for (double t : {3.7, 17.2, 29.9}) {
        const auto diff = (pw.eval(t).to_vector() - traj.eval(t).to_vector()).cwiseAbs().maxCoeff();
        CHECK(diff < 1e-3 * outbreak_start().total());
    }
}
