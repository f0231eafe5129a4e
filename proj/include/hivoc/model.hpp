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
#ifndef HIVOC_MODEL_HPP
#define HIVOC_MODEL_HPP

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace hivoc {

/// Compartment populations of the risk-structured transmission model.
///
/// The flat ordering used everywhere (vectors, decision variables, CSV
/// columns) is fixed to
///   0:S_H  1:S_L  2:I_AH  3:I_AL  4:I_CH  5:I_CL  6:T_H  7:T_L  8:P
/// High/low risk susceptibles, acute and chronic untreated infecteds,
/// infecteds on suppressive therapy, and susceptibles on pre-exposure
/// prophylaxis.
struct StateVector {
    static constexpr int kDim = 9;

    double S_H = 0.0;
    double S_L = 0.0;
    double I_AH = 0.0;
    double I_AL = 0.0;
    double I_CH = 0.0;
    double I_CL = 0.0;
    double T_H = 0.0;
    double T_L = 0.0;
    double P = 0.0;

    using Vec9 = Eigen::Matrix<double, kDim, 1>;

    Vec9 to_vector() const
    {
        Vec9 v;
        v << S_H, S_L, I_AH, I_AL, I_CH, I_CL, T_H, T_L, P;
        return v;
    }

    static StateVector from_vector(const Eigen::Ref<const Eigen::VectorXd>& v)
    {
        StateVector x;
        x.S_H  = v[0];
        x.S_L  = v[1];
        x.I_AH = v[2];
        x.I_AL = v[3];
        x.I_CH = v[4];
        x.I_CL = v[5];
        x.T_H  = v[6];
        x.T_L  = v[7];
        x.P    = v[8];
        return x;
    }

    /// N_H: everyone displaying high-risk behavior (PrEP and TaP included).
    double high_risk_total() const { return S_H + I_AH + I_CH + P + T_H; }
    /// N_L: everyone displaying low-risk behavior.
    double low_risk_total() const { return S_L + I_AL + I_CL + T_L; }
    /// N: total population.
    double total() const { return high_risk_total() + low_risk_total(); }
    /// All infected individuals, treated or not.
    double infected_total() const { return I_AH + I_AL + I_CH + I_CL + T_H + T_L; }

    double min_component() const
    {
        return to_vector().minCoeff();
    }

    static const char* component_name(int j);
};

/// Per-month sampling rates steering enrollment into PrEP (u_P) and
/// TaP (u_T). Both are bounded below by zero; upper bounds arise only
/// through the budget constraints.
struct ControlVector {
    double u_P = 0.0;
    double u_T = 0.0;
};

/// Epidemiological and treatment rates. Time unit is months throughout.
struct ModelParams {
    double alpha_H = 28.0;        ///< recruitment of high-risk susceptibles [ind/month]
    double alpha_L = 250.0;       ///< recruitment of low-risk susceptibles [ind/month]
    double mu = 1.0 / 360.0;      ///< exit rate (non-AIDS death, inactivity) [1/month]
    double delta_A = 0.17;        ///< acute -> chronic progression [1/month]
    double delta_C = 8.5e-3;      ///< AIDS death rate of chronic infecteds [1/month]
    double rho_H = 0.0;           ///< high -> low risk behavior change [1/month]
    double rho_L = 0.0;           ///< low -> high risk behavior change [1/month]
    double x = 0.0;               ///< PrEP failure/cancellation rate [1/month]
    double y = 0.0;               ///< TaP failure/cancellation rate [1/month]
    double baseline_tap = 0.00148; ///< standing TaP enrollment rate on chronic infecteds [1/month]
    double lambda_H = 40.9;       ///< contact rate, high risk [contacts/month]
    double lambda_L = 4.09;       ///< contact rate, low risk [contacts/month]
    double beta_A = 0.015;        ///< transmission probability per contact, acute stage
    double beta_C = 0.001;        ///< transmission probability per contact, chronic stage
    double pi = 0.0;              ///< fraction of contacts made at the own-group site
    double r_b = 4.0;             ///< odds of a high-risk person frequenting a high-risk venue

    /// All rates nonnegative, probabilities in [0,1], r_b positive.
    bool valid() const;
};

/// Coefficients of the budget functional and the optional cost discount.
struct CostParams {
    double treat_tap = 1299.0;   ///< monthly treatment cost per TaP patient [$/month]
    double treat_prep = 776.0;   ///< monthly treatment cost per PrEP patient [$/month]
    double enroll_tap = 266.0;   ///< enrollment cost per sampled-population unit, TaP [$]
    double enroll_prep = 213.0;  ///< enrollment cost per sampled-population unit, PrEP [$]
    double discount_rate = 0.0;  ///< optional cost discount rate [1/month]

    bool valid() const;
};

/// Intermediates of the contact-mixing computation, returned in full so
/// each stage can be tested in isolation.
struct MixingRates {
    double theta = 0.0;  ///< total contacts made per month
    double eta_H = 0.0;  ///< probability a random contact is with a high-risk person
    double eta_L = 0.0;
    double sigma = 0.0;  ///< transmission probability per contact at the shared site
    double tau_H = 0.0;  ///< per-capita infection rate at the shared site
    double tau_L = 0.0;
    double psi_H = 0.0;  ///< per-capita infection rate at the own-group site
    double psi_L = 0.0;
    double phi_H = 0.0;  ///< total per-capita transmission rate, high-risk susceptibles
    double phi_L = 0.0;
};

/// Probabilities that a person sampled in a high-risk venue is a
/// high-risk susceptible (zeta_P) or a chronic infected of either risk
/// group (zeta_TH, zeta_TL).
struct EnrollmentFractions {
    double zeta_P = 0.0;
    double zeta_TH = 0.0;
    double zeta_TL = 0.0;
};

/// Contact-mixing rate chain. Degenerate denominators (empty groups,
/// empty population) resolve to zero, the continuous limit along
/// nonnegative trajectories.
MixingRates mixing_rates(const StateVector& X, const ModelParams& p);

/// Venue-sampling enrollment fractions; all zero when the population is empty.
EnrollmentFractions enrollment_fractions(const StateVector& X, const ModelParams& p);

/// Time derivative of the nine compartments. The system is autonomous;
/// t is accepted for interface uniformity only.
StateVector rhs(double t, const StateVector& X, const ControlVector& u, const ModelParams& p);

/// Instantaneous incidence rate C = S_H*phi_H + S_L*phi_L [infections/month].
double incidence_cost(const StateVector& X, const ModelParams& p);

/// Analytic gradient of incidence_cost with respect to the nine states.
StateVector::Vec9 incidence_cost_gradient(const StateVector& X, const ModelParams& p);

/// Instantaneous intervention spend rate
/// B = K_T^t (T_H+T_L) + K_P^t P + K_T^e N u_T + K_P^e N u_P [$/month].
double budget_rate(const StateVector& X, const ControlVector& u, const CostParams& c);

/// Gradient of budget_rate with respect to the states (linear in X for fixed u).
StateVector::Vec9 budget_rate_state_gradient(const ControlVector& u, const CostParams& c);

/// Partial derivatives of budget_rate with respect to (u_P, u_T).
Eigen::Vector2d budget_rate_control_gradient(const StateVector& X, const CostParams& c);

/// One witnessed violation of essential nonnegativity.
struct NonnegativityViolation {
    int component = -1;
    StateVector state;
    ControlVector control;
    double derivative = 0.0;
};

struct NonnegativityReport {
    long samples = 0;
    long checks = 0;
    std::vector<NonnegativityViolation> violations;
    bool passed() const { return violations.empty(); }
};

/// Randomized check that every component's derivative is nonnegative on
/// its own zero hyperplane (states and controls sampled uniformly from
/// the nonnegative orthant). Violations are reported with the witness
/// point, never thrown.
NonnegativityReport check_essential_nonnegativity(const ModelParams& p, long samples,
                                                  std::uint64_t seed = 20260810u);

} // namespace hivoc

#endif
