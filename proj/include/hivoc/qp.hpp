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
#ifndef HIVOC_QP_HPP
#define HIVOC_QP_HPP

#include <Eigen/Core>

namespace hivoc {

/// Strictly convex quadratic program
///   min 0.5 p' B p + g' p   s.t.   M p <= d,
/// B symmetric positive definite. Solved in the dual: a working set of
/// rows is kept, the equality-constrained subproblem is re-solved and
/// rows enter on primal violation and leave on negative multipliers.
struct QpResult {
    bool solved = false;
    bool infeasible = false;
    Eigen::VectorXd p;
    Eigen::VectorXd multipliers; ///< one per row of M, zero off the active set
    int iterations = 0;
};

QpResult solve_convex_qp(const Eigen::MatrixXd& B, const Eigen::VectorXd& g,
                         const Eigen::MatrixXd& M, const Eigen::VectorXd& d,
                         double tol = 1e-10);

} // namespace hivoc

#endif
