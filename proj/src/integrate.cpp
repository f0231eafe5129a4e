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
#include "hivoc/integrate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hivoc {

namespace {

// Dormand-Prince 5(4) tableau. The last stage is the first of the next
// step (FSAL).
constexpr double kC[7] = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
constexpr double kA[7][6] = {
    {},
    {1.0 / 5},
    {3.0 / 40, 9.0 / 40},
    {44.0 / 45, -56.0 / 15, 32.0 / 9},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
    {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
};
// Difference between the 5th- and 4th-order solutions.
constexpr double kE[7] = {71.0 / 57600,      0.0,        -71.0 / 16695, 71.0 / 1920,
                          -17253.0 / 339200, 22.0 / 525, -1.0 / 40};

} // namespace

Eigen::VectorXd DenseOdeSolution::eval(double t) const
{
    const double lo = times_.front();
    const double hi = times_.back();
    if (t <= lo) {
        return states_.front();
    }
    if (t >= hi) {
        return states_.back();
    }
    const auto it = std::upper_bound(times_.begin(), times_.end(), t);
    const std::size_t k = static_cast<std::size_t>(it - times_.begin()) - 1;
    const double h = times_[k + 1] - times_[k];
    const double s = (t - times_[k]) / h;
    const double s2 = s * s;
    const double s3 = s2 * s;
    const double h00 = 2 * s3 - 3 * s2 + 1;
    const double h10 = s3 - 2 * s2 + s;
    const double h01 = -2 * s3 + 3 * s2;
    const double h11 = s3 - s2;
    return h00 * states_[k] + (h10 * h) * derivs_[k] + h01 * states_[k + 1] +
           (h11 * h) * derivs_[k + 1];
}

DenseOdeSolution rk45_integrate(const OdeRhs& f, double t0, double t1,
                                const Eigen::VectorXd& y0, const IntegrationOptions& opts)
{
    const Eigen::Index dim = y0.size();
    DenseOdeSolution sol;
    sol.times_.push_back(t0);
    sol.states_.push_back(y0);

    Eigen::VectorXd k[7];
    for (auto& ki : k) {
        ki.resize(dim);
    }
    Eigen::VectorXd y = y0;
    Eigen::VectorXd ytmp(dim), ynew(dim), yerr(dim);

    f(t0, y, k[0]);
    sol.derivs_.push_back(k[0]);

    if (t1 <= t0) {
        return sol;
    }

    double t = t0;
    const double span = t1 - t0;
    double h = std::min({opts.max_step, span, std::max(1e-6, 0.01 * span)});
    long steps = 0;

    while (t < t1) {
        if (++steps > opts.max_steps) {
            throw StepSizeUnderflow(t, "rk45: step budget exhausted");
        }
        h = std::min(h, t1 - t);
        if (!(h > std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(t)) * 4)) {
            throw StepSizeUnderflow(t, "rk45: step size underflow at t=" + std::to_string(t));
        }

        for (int s = 1; s < 7; ++s) {
            ytmp = y;
            for (int j = 0; j < s; ++j) {
                if (kA[s][j] != 0.0) {
                    ytmp += (h * kA[s][j]) * k[j];
                }
            }
            f(t + kC[s] * h, ytmp, k[s]);
        }
        // Stage 7 was evaluated at y + h*sum(a7j k_j), which is the
        // 5th-order solution itself.
        ynew = y;
        for (int j = 0; j < 6; ++j) {
            if (kA[6][j] != 0.0) {
                ynew += (h * kA[6][j]) * k[j];
            }
        }
        yerr.setZero();
        for (int j = 0; j < 7; ++j) {
            if (kE[j] != 0.0) {
                yerr += (h * kE[j]) * k[j];
            }
        }

        double err = 0.0;
        for (Eigen::Index i = 0; i < dim; ++i) {
            const double sc =
                opts.abs_tol + opts.rel_tol * std::max(std::abs(y[i]), std::abs(ynew[i]));
            const double q = yerr[i] / sc;
            err += q * q;
        }
        err = std::sqrt(err / static_cast<double>(dim));

        if (err <= 1.0) {
            t += h;
            y.swap(ynew);
            sol.times_.push_back(t);
            sol.states_.push_back(y);
            sol.derivs_.push_back(k[6]); // FSAL: derivative at accepted point
            k[0].swap(k[6]);
        }
        const double factor =
            err > 0.0 ? std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0) : 5.0;
        h = std::min(h * factor, opts.max_step);
    }
    return sol;
}

StateVector Trajectory::eval(double t) const
{
    if (segments_.empty()) {
        return {};
    }
    for (const DenseOdeSolution& seg : segments_) {
        if (t <= seg.t_end()) {
            return StateVector::from_vector(seg.eval(t));
        }
    }
    return StateVector::from_vector(segments_.back().eval(t));
}

long Trajectory::accepted_steps() const
{
    long n = 0;
    for (const DenseOdeSolution& seg : segments_) {
        n += seg.accepted_steps();
    }
    return n;
}

double Trajectory::min_stored_component() const
{
    double m = std::numeric_limits<double>::infinity();
    for (const DenseOdeSolution& seg : segments_) {
        for (const Eigen::VectorXd& s : seg.states()) {
            m = std::min(m, s.head(StateVector::kDim).minCoeff());
        }
    }
    return m;
}

namespace {

OdeRhs model_rhs(const ModelParams& p, const ControlVector& u)
{
    return [&p, u](double t, const Eigen::VectorXd& y, Eigen::VectorXd& dy) {
        const StateVector X = StateVector::from_vector(y);
        dy = rhs(t, X, u, p).to_vector();
    };
}

// States augmented with running integrals of the discounted cost, the raw
// incidence, the budget rate and the AIDS death rate.
OdeRhs augmented_rhs(const ModelParams& p, const CostParams& c, const ControlVector& u)
{
    return [&p, &c, u](double t, const Eigen::VectorXd& y, Eigen::VectorXd& dy) {
        dy.resize(13);
        const StateVector X = StateVector::from_vector(y.head(9));
        dy.head(9) = rhs(t, X, u, p).to_vector();
        const double cost = incidence_cost(X, p);
        dy[9] = c.discount_rate > 0.0 ? std::exp(-c.discount_rate * t) * cost : cost;
        dy[10] = cost;
        dy[11] = budget_rate(X, u, c);
        dy[12] = p.delta_C * (X.I_CH + X.I_CL);
    };
}

} // namespace

Trajectory integrate(const ModelParams& p, const StateVector& X0, const ControlSchedule& schedule,
                     double t_end, const IntegrationOptions& opts)
{
    Trajectory traj;
    traj.t_begin_ = 0.0;
    traj.t_end_ = t_end;

    Eigen::VectorXd y = X0.to_vector();
    double t = 0.0;
    int interval = 0;
    while (t < t_end || traj.segments_.empty()) {
        double t_next = t_end;
        if (interval < schedule.n_int) {
            t_next = std::min(t_end, (interval + 1) * schedule.dt);
        }
        const ControlVector u = schedule.at(t);
        traj.segments_.push_back(rk45_integrate(model_rhs(p, u), t, t_next, y, opts));
        y = traj.segments_.back().states().back();
        t = t_next;
        ++interval;
        if (t >= t_end) {
            break;
        }
    }
    return traj;
}

std::vector<Trajectory> baseline_trajectories(const ModelParams& p, const Trajectory& controlled,
                                              int n_int, double dt,
                                              const IntegrationOptions& opts)
{
    std::vector<Trajectory> out;
    out.reserve(static_cast<std::size_t>(n_int));
    const ControlSchedule none = ControlSchedule::zero(1, dt);
    for (int i = 0; i < n_int; ++i) {
        const double t0 = i * dt;
        const StateVector start = controlled.eval(t0);
        Trajectory traj;
        traj.t_begin_ = t0;
        traj.t_end_ = t0 + dt;
        traj.segments_.push_back(
            rk45_integrate(model_rhs(p, none.at(0.0)), t0, t0 + dt, start.to_vector(), opts));
        out.push_back(std::move(traj));
    }
    return out;
}

PolicyEvaluation evaluate_policy(const ModelParams& p, const CostParams& c, const StateVector& X0,
                                 const ControlSchedule& schedule, double budget_limit,
                                 const IntegrationOptions& opts)
{
    PolicyEvaluation ev;
    const int n_int = schedule.n_int;
    ev.interval_spend.resize(static_cast<std::size_t>(n_int));
    ev.baseline_spend.resize(static_cast<std::size_t>(n_int));
    ev.excess_spend.resize(static_cast<std::size_t>(n_int));
    ev.within_budget.resize(static_cast<std::size_t>(n_int));

    Eigen::VectorXd y(13);
    y.head(9) = X0.to_vector();
    y.tail(4).setZero();

    const ControlVector no_control{};
    for (int i = 0; i < n_int; ++i) {
        const double t0 = i * schedule.dt;
        const double t1 = t0 + schedule.dt;
        const ControlVector u = schedule.values[static_cast<std::size_t>(i)];

        const double spend_before = y[11];
        const DenseOdeSolution seg =
            rk45_integrate(augmented_rhs(p, c, u), t0, t1, y, opts);
        y = seg.states().back();
        const double spend = y[11] - spend_before;

        Eigen::VectorXd yb(13);
        yb.head(9) = seg.states().front().head(9);
        yb.tail(4).setZero();
        const DenseOdeSolution base =
            rk45_integrate(augmented_rhs(p, c, no_control), t0, t1, yb, opts);
        const double base_spend = base.states().back()[11];

        ev.interval_spend[static_cast<std::size_t>(i)] = spend;
        ev.baseline_spend[static_cast<std::size_t>(i)] = base_spend;
        const double excess = spend - base_spend;
        ev.excess_spend[static_cast<std::size_t>(i)] = excess;
        const bool ok = excess <= budget_limit;
        ev.within_budget[static_cast<std::size_t>(i)] = ok;
        ev.feasible = ev.feasible && ok;
    }

    ev.total_cost = y[9];
    ev.cumulative_incidence = y[10];
    ev.cumulative_deaths = y[12];
    ev.final_state = StateVector::from_vector(y.head(9));
    ev.terminal_incidence_rate = incidence_cost(ev.final_state, p);
    return ev;
}

std::pair<StateVector, bool> equilibrium_state(const ModelParams& p, const StateVector& seed,
                                               const CalibrationOptions& opts,
                                               double resid_tol_per_capita)
{
    StateVector X = seed;
    const ControlSchedule none = ControlSchedule::zero(1, opts.equilibration_months);
    for (int round = 0; round <= opts.max_extensions; ++round) {
        const Trajectory traj =
            integrate(p, X, none, opts.equilibration_months, opts.integration);
        X = traj.eval(opts.equilibration_months);
        const double resid = rhs(0.0, X, ControlVector{}, p).to_vector().cwiseAbs().maxCoeff();
        if (resid <= resid_tol_per_capita * std::max(X.total(), 1.0)) {
            return {X, true};
        }
    }
    return {X, false};
}

namespace {

StateVector calibration_seed(const CalibrationOptions& opts)
{
    const double n = opts.population_scale;
    const double inf = opts.seed_infected_fraction;
    StateVector X;
    X.S_H = 0.10 * n * (1.0 - inf);
    X.S_L = 0.90 * n * (1.0 - inf);
    X.I_AH = 0.10 * n * inf * 0.1;
    X.I_AL = 0.90 * n * inf * 0.1;
    X.I_CH = 0.10 * n * inf * 0.9;
    X.I_CL = 0.90 * n * inf * 0.9;
    return X;
}

struct EquilibriumMetrics {
    double prevalence = 0.0;
    double treated_fraction = 0.0;
    StateVector state;
    bool settled = false;
};

EquilibriumMetrics equilibrium_metrics(const ModelParams& p, const CalibrationOptions& opts)
{
    EquilibriumMetrics m;
    auto [X, settled] = equilibrium_state(p, calibration_seed(opts), opts);
    m.state = X;
    m.settled = settled;
    const double N = X.total();
    const double infected = X.infected_total();
    if (N > 0.0) {
        m.prevalence = infected / N;
    }
    if (infected > 1e-9 * std::max(N, 1.0)) {
        m.treated_fraction = (X.T_H + X.T_L) / infected;
    }
    return m;
}

} // namespace

CalibrationResult calibrate(const ModelParams& base, const CalibrationTargets& targets,
                            const CalibrationOptions& opts)
{
    CalibrationResult res;
    ModelParams p = base;

    const auto with_lambda = [&](double lambda_L) {
        p.lambda_L = lambda_L;
        p.lambda_H = targets.contact_ratio * lambda_L;
    };

    // Inner search: treated fraction is monotone increasing in the
    // baseline TaP rate.
    const auto fit_tap = [&](double lambda_L) -> EquilibriumMetrics {
        with_lambda(lambda_L);
        double lo = opts.tap_lo, hi = opts.tap_hi;
        p.baseline_tap = hi;
        EquilibriumMetrics at_hi = equilibrium_metrics(p, opts);
        if (at_hi.treated_fraction < targets.treated_fraction) {
            return at_hi; // unreachable in the box; report the boundary
        }
        EquilibriumMetrics m = at_hi;
        for (int it = 0; it < 60; ++it) {
            const double mid = 0.5 * (lo + hi);
            p.baseline_tap = mid;
            m = equilibrium_metrics(p, opts);
            if (std::abs(m.treated_fraction - targets.treated_fraction) <
                0.5 * targets.tolerance) {
                return m;
            }
            if (m.treated_fraction > targets.treated_fraction) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        return m;
    };

    // Outer search: prevalence is monotone increasing in the contact rates.
    double lo = opts.lambda_L_lo, hi = opts.lambda_L_hi;
    EquilibriumMetrics m_hi = fit_tap(hi);
    if (m_hi.prevalence < targets.prevalence) {
        res.message = "prevalence target unreachable: no endemic equilibrium with "
                      "prevalence >= target inside the search box";
        res.params = p;
        return res;
    }

    EquilibriumMetrics m;
    double lambda_L = hi;
    for (int it = 0; it < 60; ++it) {
        lambda_L = 0.5 * (lo + hi);
        m = fit_tap(lambda_L);
        if (std::abs(m.prevalence - targets.prevalence) < 0.5 * targets.tolerance &&
            std::abs(m.treated_fraction - targets.treated_fraction) < targets.tolerance) {
            break;
        }
        if (m.prevalence > targets.prevalence) {
            hi = lambda_L;
        } else {
            lo = lambda_L;
        }
    }

    res.lambda_L = lambda_L;
    res.lambda_H = targets.contact_ratio * lambda_L;
    res.baseline_tap = p.baseline_tap;
    res.prevalence = m.prevalence;
    res.treated_fraction = m.treated_fraction;
    res.equilibrium = m.state;
    res.params = p;
    res.converged = m.settled &&
                    std::abs(m.prevalence - targets.prevalence) < targets.tolerance &&
                    std::abs(m.treated_fraction - targets.treated_fraction) < targets.tolerance;
    if (!res.converged && res.message.empty()) {
        res.message = "calibration did not reach both targets within tolerance";
    }
    return res;
}

} // namespace hivoc
