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
#ifndef HIVOC_SQP_HPP
#define HIVOC_SQP_HPP

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace hivoc {

/// Smooth constrained program
///   min f(x)  s.t.  c_eq(x) = 0,  c_ineq(x) <= 0,  x >= lower_bounds,
/// presented through evaluator callbacks. Gradient and Jacobians are
/// optional; missing ones are filled in by centered finite differences
/// (restricted to the declared sparsity when given).
struct NlpProblem {
    int num_vars = 0;
    int num_eq = 0;
    int num_ineq = 0;

    std::function<double(const Eigen::VectorXd&)> objective;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> gradient;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> equalities;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> inequalities;
    std::function<Eigen::SparseMatrix<double>(const Eigen::VectorXd&)> equality_jacobian;
    std::function<Eigen::SparseMatrix<double>(const Eigen::VectorXd&)> inequality_jacobian;

    /// Componentwise lower bounds; -infinity where absent. Empty means
    /// fully unbounded.
    Eigen::VectorXd lower_bounds;

    /// Declared (row, col) structural nonzeros; used by the
    /// finite-difference fallback and kept as metadata otherwise.
    std::vector<std::pair<int, int>> eq_sparsity;
    std::vector<std::pair<int, int>> ineq_sparsity;

    /// Optional basis hint: num_eq variable indices whose columns of the
    /// equality Jacobian form a nonsingular square block. Lets large
    /// problems skip the dense automatic basis selection.
    std::vector<int> dependent_hint;
};

struct SolverOptions {
    int max_iterations = 500;
    double tol_constraint = 1e-6;  ///< max-norm feasibility tolerance
    double tol_kkt = 1e-5;         ///< stationarity + complementarity tolerance
    double tol_step = 1e-14;       ///< declare convergence stalled below this step size
    double fd_step = 1e-6;         ///< relative centered-difference step
    double merit_penalty_init = 1.0;
    double merit_penalty_margin = 0.1; ///< penalty kept above |multipliers| by this margin
    enum class Hessian { damped_bfgs, finite_difference } hessian = Hessian::damped_bfgs;
    bool verbose = false;
};

enum class SolveStatus { converged, max_iterations, line_search_failure, infeasible };

const char* to_string(SolveStatus s);

struct Multipliers {
    Eigen::VectorXd eq;     ///< equality multipliers
    Eigen::VectorXd ineq;   ///< inequality multipliers, >= 0 at a KKT point
    Eigen::VectorXd bounds; ///< lower-bound multipliers, >= 0 at a KKT point
};

struct SolverResult {
    SolveStatus status = SolveStatus::max_iterations;
    Eigen::VectorXd x;
    double objective = 0.0;
    double max_violation = 0.0;
    double kkt_residual = 0.0; ///< scaled: stationarity etc. over (1 + multiplier magnitude)
    int iterations = 0;
    Multipliers multipliers;
    /// (before, after) merit values of each accepted step.
    std::vector<std::pair<double, double>> merit_history;
    std::string message;

    bool converged() const { return status == SolveStatus::converged; }
};

/// Sequential quadratic programming with a damped BFGS approximation of
/// the reduced Lagrangian Hessian, an l1 merit line search and an
/// elastic fallback for inconsistent subproblems. Equality constraints
/// are eliminated through a basis of dependent variables (taken from
/// dependent_hint when provided, otherwise selected by column-pivoted QR).
SolverResult solve(const NlpProblem& problem, const Eigen::VectorXd& x0,
                   const SolverOptions& options = {});

/// Max-norm KKT residual: Lagrangian stationarity, complementarity and
/// constraint violation combined.
double kkt_residual(const NlpProblem& problem, const Eigen::VectorXd& x, const Multipliers& mult);

/// Centered-difference Jacobian. When a sparsity pattern is supplied only
/// the columns with declared entries are perturbed and only declared
/// entries are filled.
Eigen::MatrixXd fd_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                            const Eigen::VectorXd& x, double step,
                            const std::vector<std::pair<int, int>>* sparsity = nullptr);

} // namespace hivoc

#endif
