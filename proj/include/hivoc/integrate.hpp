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
#ifndef HIVOC_INTEGRATE_HPP
#define HIVOC_INTEGRATE_HPP

#include "hivoc/model.hpp"
#include "hivoc/schedule.hpp"

#include <Eigen/Core>

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace hivoc {

struct IntegrationOptions {
    double rel_tol = 1e-8;
    double abs_tol = 1e-6;
    double max_step = 60.0;   ///< months; also bounds dense-output interpolation error
    long max_steps = 20'000'000;
};

class StepSizeUnderflow : public std::runtime_error {
public:
    StepSizeUnderflow(double t, const std::string& what) : std::runtime_error(what), time(t) {}
    double time;
};

using OdeRhs = std::function<void(double, const Eigen::VectorXd&, Eigen::VectorXd&)>;

/// Dense solution of one ODE integration: accepted steps plus cubic
/// Hermite interpolation between them.
class DenseOdeSolution {
public:
    double t_begin() const { return times_.front(); }
    double t_end() const { return times_.back(); }
    long accepted_steps() const { return static_cast<long>(times_.size()) - 1; }

    Eigen::VectorXd eval(double t) const;

    const std::vector<double>& times() const { return times_; }
    const std::vector<Eigen::VectorXd>& states() const { return states_; }

private:
    friend DenseOdeSolution rk45_integrate(const OdeRhs&, double, double,
                                           const Eigen::VectorXd&, const IntegrationOptions&);
    std::vector<double> times_;
    std::vector<Eigen::VectorXd> states_;
    std::vector<Eigen::VectorXd> derivs_;
};

/// Adaptive Dormand-Prince 5(4) integration over [t0, t1].
/// Throws StepSizeUnderflow when error control forces the step below
/// representable resolution.
DenseOdeSolution rk45_integrate(const OdeRhs& f, double t0, double t1,
                                const Eigen::VectorXd& y0, const IntegrationOptions& opts);

/// Transmission-model trajectory over consecutive control intervals.
/// The integration restarts at every control knot, so the control
/// discontinuities are never stepped over.
class Trajectory {
public:
    double t_begin() const { return t_begin_; }
    double t_end() const { return t_end_; }

    StateVector eval(double t) const;

    long accepted_steps() const;
    /// Smallest component over all accepted states (nonnegativity probe).
    double min_stored_component() const;

    const std::vector<DenseOdeSolution>& segments() const { return segments_; }

private:
    friend Trajectory integrate(const ModelParams&, const StateVector&, const ControlSchedule&,
                                double, const IntegrationOptions&);
    friend std::vector<Trajectory> baseline_trajectories(const ModelParams&, const Trajectory&,
                                                         int, double, const IntegrationOptions&);
    double t_begin_ = 0.0;
    double t_end_ = 0.0;
    std::vector<DenseOdeSolution> segments_;
};

/// Integrate the model from X0 under the given schedule on [0, t_end].
Trajectory integrate(const ModelParams& p, const StateVector& X0, const ControlSchedule& schedule,
                     double t_end, const IntegrationOptions& opts = {});

/// Per-interval zero-control counterfactuals: interval i is integrated
/// with u = 0 from the controlled trajectory's state at the interval start.
std::vector<Trajectory> baseline_trajectories(const ModelParams& p, const Trajectory& controlled,
                                              int n_int, double dt,
                                              const IntegrationOptions& opts = {});

struct PolicyEvaluation {
    double total_cost = 0.0;           ///< integral of the (optionally discounted) incidence cost
    double cumulative_incidence = 0.0; ///< undiscounted new infections over the horizon
    double cumulative_deaths = 0.0;
    double terminal_incidence_rate = 0.0;
    std::vector<double> interval_spend;
    std::vector<double> baseline_spend;
    std::vector<double> excess_spend;
    std::vector<bool> within_budget;
    bool feasible = true;
    StateVector final_state;
};

/// Simulate a schedule and account its cost and per-interval excess
/// spend against the zero-control baselines.
PolicyEvaluation evaluate_policy(const ModelParams& p, const CostParams& c, const StateVector& X0,
                                 const ControlSchedule& schedule, double budget_limit,
                                 const IntegrationOptions& opts = {});

struct CalibrationTargets {
    double prevalence = 0.20;        ///< (all infected incl. treated) / N at equilibrium
    double treated_fraction = 0.25;  ///< treated / all infected at equilibrium
    double contact_ratio = 10.0;     ///< lambda_H / lambda_L, held fixed
    double tolerance = 1e-3;
};

struct CalibrationOptions {
    double lambda_L_lo = 0.1;
    double lambda_L_hi = 20.0;
    double tap_lo = 1e-5;
    double tap_hi = 0.1;
    double population_scale = 1e5;
    double seed_infected_fraction = 0.01;
    double equilibration_months = 5000.0;
    int max_extensions = 3;
    IntegrationOptions integration{1e-9, 1e-7, 100.0, 20'000'000};
};

struct CalibrationResult {
    bool converged = false;
    double lambda_L = 0.0;
    double lambda_H = 0.0;
    double baseline_tap = 0.0;
    double prevalence = 0.0;
    double treated_fraction = 0.0;
    StateVector equilibrium;
    ModelParams params; ///< base params with the calibrated values substituted
    std::string message;
};

/// Long-horizon integration to the zero-control steady state; returns the
/// final state and whether max|rhs| fell below resid_tol_per_capita * N.
std::pair<StateVector, bool> equilibrium_state(const ModelParams& p, const StateVector& seed,
                                               const CalibrationOptions& opts,
                                               double resid_tol_per_capita = 1e-8);

/// Nested scalar searches: the outer bisection moves lambda_L (with
/// lambda_H = contact_ratio * lambda_L) to hit the prevalence target, the
/// inner one moves the baseline TaP rate to hit the treated fraction.
CalibrationResult calibrate(const ModelParams& base, const CalibrationTargets& targets,
                            const CalibrationOptions& opts = {});

} // namespace hivoc

#endif
