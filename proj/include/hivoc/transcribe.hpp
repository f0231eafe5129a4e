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
#ifndef HIVOC_TRANSCRIBE_HPP
#define HIVOC_TRANSCRIBE_HPP

#include "hivoc/model.hpp"
#include "hivoc/schedule.hpp"
#include "hivoc/spectral.hpp"
#include "hivoc/sqp.hpp"

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <memory>
#include <vector>

namespace hivoc {

/// Time mesh of the transcription: n_int control intervals of equal
/// length dt, each carrying the same LGR scheme mapped by the affine
/// transform tau = t_knot + dt/2 (theta + 1).
struct CollocationGrid {
    int n_int = 0;
    int n_cp = 0;
    double dt = 0.0;
    double t_f = 0.0;
    std::vector<double> knots; ///< n_int + 1 entries
    std::shared_ptr<const LgrScheme> scheme;

    /// Grid point tau^i_k (0-based interval).
    double tau(int interval, int k) const
    {
        return knots[static_cast<std::size_t>(interval)] +
               0.5 * dt * (scheme->points()[static_cast<std::size_t>(k)] + 1.0);
    }
    int points_per_interval() const { return n_cp + 1; }
};

/// Build the mesh; the LGR scheme is constructed once and shared across
/// all intervals.
CollocationGrid build_grid(int n_int, double dt, int n_cp);

/// One interval's state samples: (n_cp + 1) rows (grid points) by 9
/// columns (flat state order).
using StateMatrix = Eigen::MatrixXd;

/// Collocation residuals D X - dt/2 F(X, U) for one interval, one row per
/// collocation point. All quantities unscaled.
Eigen::MatrixXd collocation_residuals(const StateMatrix& Xi, const ControlVector& Ui,
                                      const CollocationGrid& grid, const ModelParams& p);

/// Quadrature-propagated endpoint minus the next interval's start state.
Eigen::VectorXd continuity_defect(const StateMatrix& Xi, const ControlVector& Ui,
                                  const StateVector::Vec9& next_start,
                                  const CollocationGrid& grid, const ModelParams& p);

/// Excess of the interval's quadrature spend over the zero-control
/// baseline spend, minus the budget limit; feasible when <= 0.
double budget_inequality(const StateMatrix& Xi, const StateMatrix& X0i, const ControlVector& Ui,
                         const CollocationGrid& grid, const CostParams& costs,
                         double budget_limit);

/// Zero-control collocation residuals of the baseline block plus the
/// anchor tying its start to the controlled interval start.
struct BaselineResiduals {
    Eigen::MatrixXd collocation; ///< n_cp x 9
    Eigen::VectorXd anchor;      ///< 9
};
BaselineResiduals baseline_residuals(const StateMatrix& X0i, const StateVector::Vec9& controlled_start,
                                     const CollocationGrid& grid, const ModelParams& p);

/// Quadrature of the (optionally discounted) incidence cost over the
/// whole mesh, given per-interval state samples.
double quadrature_objective(const CollocationGrid& grid, const ModelParams& p,
                            const CostParams& costs, const std::vector<StateMatrix>& states);

/// Analytic gradient of quadrature_objective with respect to every state
/// sample, in the same per-interval layout.
std::vector<StateMatrix> quadrature_objective_gradient(const CollocationGrid& grid,
                                                       const ModelParams& p,
                                                       const CostParams& costs,
                                                       const std::vector<StateMatrix>& states);

/// Flat layout of the decision vector: per interval the controlled state
/// block then the baseline state block (each (n_cp+1) x 9, row-major by
/// grid point), then all controls (u_P, u_T per interval) at the tail.
struct DecisionLayout {
    int n_int = 0;
    int n_cp = 0;
    static constexpr int kStates = StateVector::kDim;
    static constexpr int kControls = 2;

    int states_per_block() const { return (n_cp + 1) * kStates; }
    int vars_per_interval() const { return 2 * states_per_block(); }
    int num_vars() const { return n_int * vars_per_interval() + kControls * n_int; }
    int num_eq() const
    {
        return kStates + n_int * (2 * n_cp * kStates + kStates) + (n_int - 1) * kStates;
    }
    int num_ineq() const { return n_int; }

    int state_index(int interval, int k, int j, bool baseline) const
    {
        return interval * vars_per_interval() + (baseline ? states_per_block() : 0) +
               k * kStates + j;
    }
    int control_index(int interval, int c) const
    {
        return n_int * vars_per_interval() + kControls * interval + c;
    }

    // Equality rows: initial condition first, then per interval the
    // controlled collocation block, the baseline collocation block and the
    // baseline anchor; all continuity defects at the tail.
    int eq_rows_per_interval() const { return 2 * n_cp * kStates + kStates; }
    int row_initial() const { return 0; }
    int row_collocation(int interval) const
    {
        return kStates + interval * eq_rows_per_interval();
    }
    int row_baseline_collocation(int interval) const
    {
        return row_collocation(interval) + n_cp * kStates;
    }
    int row_anchor(int interval) const
    {
        return row_collocation(interval) + 2 * n_cp * kStates;
    }
    int row_defect(int interval) const
    {
        return kStates + n_int * eq_rows_per_interval() + interval * kStates;
    }
};

/// Options of the transcribed evaluators. The parallel path runs the
/// per-interval kernels under OpenMP; the serial path is the reference
/// the parallel one is tested against. Both produce bitwise identical
/// results by construction (disjoint writes, ordered reductions).
struct TranscriptionOptions {
    bool parallel = true;
    double fd_step = 1e-6; ///< relative step of the centered rhs Jacobians
};

/// Unpacked view of a decision vector (unscaled).
struct DecisionPoint {
    std::vector<StateMatrix> states;    ///< controlled, per interval
    std::vector<StateMatrix> baselines; ///< zero-control, per interval
    ControlSchedule schedule;
};

/// Optimized schedule plus the interpolating trajectory.
struct TranscriptionSolution {
    ControlSchedule schedule;
    std::vector<StateMatrix> states;
    std::vector<StateMatrix> baselines;
};

/// Trajectory evaluable anywhere on [0, t_f] by per-interval barycentric
/// interpolation of the collocation samples.
class PiecewiseTrajectory {
public:
    PiecewiseTrajectory(CollocationGrid grid, std::vector<StateMatrix> states);

    StateVector eval(double t) const;
    double t_final() const { return grid_.t_f; }

private:
    CollocationGrid grid_;
    std::vector<StateMatrix> states_;
};

/// The transcribed nonlinear program. States enter the decision vector
/// scaled by the initial population and the objective is scaled by its
/// inverse; the budget rows are scaled by the budget limit. All public
/// pack/unpack/extract surfaces speak unscaled quantities.
class TranscribedNlp {
public:
    TranscribedNlp(CollocationGrid grid, ModelParams params, CostParams costs, StateVector X0,
                   double budget_limit, TranscriptionOptions options = {});

    int num_vars() const { return layout_.num_vars(); }
    int num_eq() const { return layout_.num_eq(); }
    int num_ineq() const { return layout_.num_ineq(); }
    const DecisionLayout& layout() const { return layout_; }
    const CollocationGrid& grid() const { return grid_; }
    double state_scale() const { return state_scale_; }
    double budget_scale() const { return budget_scale_; }

    /// Scaled objective (total cost / initial population).
    double objective(const Eigen::VectorXd& z) const;
    Eigen::VectorXd objective_gradient(const Eigen::VectorXd& z) const;
    /// Unscaled total cost at a decision point.
    double objective_unscaled(const Eigen::VectorXd& z) const;

    Eigen::VectorXd eval_equalities(const Eigen::VectorXd& z) const;
    Eigen::VectorXd eval_inequalities(const Eigen::VectorXd& z) const;
    Eigen::SparseMatrix<double> equality_jacobian(const Eigen::VectorXd& z) const;
    Eigen::SparseMatrix<double> inequality_jacobian(const Eigen::VectorXd& z) const;

    Eigen::VectorXd lower_bounds() const;
    const std::vector<std::pair<int, int>>& eq_sparsity() const { return eq_pattern_; }
    const std::vector<std::pair<int, int>>& ineq_sparsity() const { return ineq_pattern_; }
    /// The state sample indices: a nonsingular square basis of the
    /// equality Jacobian (the linearized simulation system).
    std::vector<int> dependent_hint() const;

    Eigen::VectorXd pack(const DecisionPoint& point) const;
    DecisionPoint unpack(const Eigen::VectorXd& z) const;

    /// Constant states replicated from X0, controls zero: cheap start
    /// with a low cost value that violates the dynamics constraints.
    Eigen::VectorXd initial_guess_replicate() const;
    /// Same but with small positive controls.
    Eigen::VectorXd initial_guess_aggressive(double u0 = 1e-3) const;
    /// Feasible start from the zero-control collocation solve.
    Eigen::VectorXd initial_guess_simulated() const;

    TranscriptionSolution extract_solution(const Eigen::VectorXd& z) const;
    PiecewiseTrajectory solution_trajectory(const Eigen::VectorXd& z) const;

    /// Adapter handing the scaled evaluators to the SQP solver.
    NlpProblem as_nlp_problem() const;

private:
    struct IntervalEval;
    void eval_interval(const DecisionPoint& pt, int i, IntervalEval& out, bool with_budget) const;
    void equalities_into(const DecisionPoint& pt, Eigen::VectorXd& out) const;

    CollocationGrid grid_;
    ModelParams params_;
    CostParams costs_;
    StateVector x0_;
    double budget_limit_ = 0.0;
    TranscriptionOptions options_;
    DecisionLayout layout_;
    double state_scale_ = 1.0;
    double budget_scale_ = 1.0;
    std::vector<std::pair<int, int>> eq_pattern_;
    std::vector<std::pair<int, int>> ineq_pattern_;
};

/// Solution of the square equality system for a fixed schedule: the
/// collocation equivalent of simulating the ODEs. The system is block
/// triangular in time, so it is solved interval by interval with a local
/// Newton iteration.
struct FixedScheduleSolution {
    std::vector<StateMatrix> states;
    bool converged = false;
    int newton_iterations = 0;
};

FixedScheduleSolution solve_fixed_schedule(const CollocationGrid& grid, const ModelParams& p,
                                           const StateVector& X0, const ControlSchedule& schedule,
                                           double tol = 1e-10, int max_iterations = 50);

/// Zero-control baseline blocks consistent with the controlled states
/// (each solved from the controlled interval start).
std::vector<StateMatrix> solve_baseline_blocks(const CollocationGrid& grid, const ModelParams& p,
                                               const std::vector<StateMatrix>& states,
                                               double tol = 1e-10, int max_iterations = 50);

} // namespace hivoc

#endif
