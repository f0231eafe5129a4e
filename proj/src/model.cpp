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
#include "hivoc/model.hpp"

#include <cmath>
#include <random>

namespace hivoc {

namespace {

// Membership masks for the risk groups in flat state order.
// N_H = S_H + I_AH + I_CH + T_H + P, N_L = S_L + I_AL + I_CL + T_L.
constexpr bool kHighRisk[StateVector::kDim] = {true, false, true, false, true,
                                               false, true, false, true};

} // namespace

const char* StateVector::component_name(int j)
{
    static const char* names[kDim] = {"S_H", "S_L", "I_AH", "I_AL", "I_CH",
                                      "I_CL", "T_H", "T_L", "P"};
    return names[j];
}

bool ModelParams::valid() const
{
    const double rates[] = {alpha_H, alpha_L, mu,  delta_A,  delta_C,  rho_H,   rho_L,
                            x,       y,       baseline_tap, lambda_H, lambda_L};
    for (double r : rates) {
        if (!(r >= 0.0) || !std::isfinite(r)) {
            return false;
        }
    }
    const double probs[] = {beta_A, beta_C, pi};
    for (double q : probs) {
        if (!(q >= 0.0 && q <= 1.0)) {
            return false;
        }
    }
    return r_b > 0.0 && std::isfinite(r_b);
}

bool CostParams::valid() const
{
    const double vals[] = {treat_tap, treat_prep, enroll_tap, enroll_prep, discount_rate};
    for (double v : vals) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

MixingRates mixing_rates(const StateVector& X, const ModelParams& p)
{
    MixingRates r;
    const double N_H = X.high_risk_total();
    const double N_L = X.low_risk_total();

    r.theta = p.lambda_H * N_H + p.lambda_L * N_L;
    if (r.theta > 0.0) {
        r.eta_H = p.lambda_H * N_H / r.theta;
        r.eta_L = p.lambda_L * N_L / r.theta;
        // sigma in the grouped form with the per-group denominators already
        // cancelled; valid on the whole closed orthant.
        r.sigma = (p.beta_A * (p.lambda_H * X.I_AH + p.lambda_L * X.I_AL) +
                   p.beta_C * (p.lambda_H * X.I_CH + p.lambda_L * X.I_CL)) /
                  r.theta;
    }
    r.tau_H = (1.0 - p.pi) * p.lambda_H * r.sigma;
    r.tau_L = (1.0 - p.pi) * p.lambda_L * r.sigma;
    if (N_H > 0.0) {
        r.psi_H = p.pi * p.lambda_H * (p.beta_A * X.I_AH + p.beta_C * X.I_CH) / N_H;
    }
    if (N_L > 0.0) {
        r.psi_L = p.pi * p.lambda_L * (p.beta_A * X.I_AL + p.beta_C * X.I_CL) / N_L;
    }
    r.phi_H = r.psi_H + r.tau_H;
    r.phi_L = r.psi_L + r.tau_L;
    return r;
}

EnrollmentFractions enrollment_fractions(const StateVector& X, const ModelParams& p)
{
    EnrollmentFractions z;
    const double den = p.r_b * X.high_risk_total() + X.low_risk_total();
    if (den > 0.0) {
        z.zeta_P = p.r_b * X.S_H / den;
        z.zeta_TH = p.r_b * X.I_CH / den;
        z.zeta_TL = X.I_CL / den;
    }
    return z;
}

StateVector rhs(double /*t*/, const StateVector& X, const ControlVector& u, const ModelParams& p)
{
    const MixingRates mx = mixing_rates(X, p);
    const EnrollmentFractions zf = enrollment_fractions(X, p);
    const double N = X.total();
    const double vb = p.baseline_tap;

    StateVector d;
    d.S_H = p.alpha_H - (mx.phi_H + p.rho_H + p.mu) * X.S_H + p.rho_L * X.S_L + p.x * X.P -
            u.u_P * zf.zeta_P * N;
    d.S_L = p.alpha_L - (mx.phi_L + p.rho_L + p.mu) * X.S_L + p.rho_H * (X.S_H + X.P);
    d.I_AH = mx.phi_H * X.S_H - (p.rho_H + p.mu + p.delta_A) * X.I_AH + p.rho_L * X.I_AL;
    d.I_AL = mx.phi_L * X.S_L - (p.rho_L + p.mu + p.delta_A) * X.I_AL + p.rho_H * X.I_AH;
    d.I_CH = p.delta_A * X.I_AH - (p.rho_H + p.mu + p.delta_C + vb) * X.I_CH +
             p.rho_L * X.I_CL + p.y * X.T_H - u.u_T * zf.zeta_TH * N;
    d.I_CL = p.delta_A * X.I_AL - (p.rho_L + p.mu + p.delta_C + vb) * X.I_CL +
             p.rho_H * X.I_CH + p.y * X.T_L - u.u_T * zf.zeta_TL * N;
    d.T_H = -(p.y + p.rho_H + p.mu) * X.T_H + vb * X.I_CH + p.rho_L * X.T_L +
            u.u_T * zf.zeta_TH * N;
    d.T_L = -(p.y + p.rho_L + p.mu) * X.T_L + vb * X.I_CL + p.rho_H * X.T_H +
            u.u_T * zf.zeta_TL * N;
    d.P = -(p.x + p.rho_H + p.mu) * X.P + u.u_P * zf.zeta_P * N;
    return d;
}

double incidence_cost(const StateVector& X, const ModelParams& p)
{
    const MixingRates mx = mixing_rates(X, p);
    return X.S_H * mx.phi_H + X.S_L * mx.phi_L;
}

StateVector::Vec9 incidence_cost_gradient(const StateVector& X, const ModelParams& p)
{
    using Vec9 = StateVector::Vec9;
    const MixingRates mx = mixing_rates(X, p);
    const double N_H = X.high_risk_total();
    const double N_L = X.low_risk_total();

    // d theta / dX_j.
    Vec9 dtheta;
    for (int j = 0; j < StateVector::kDim; ++j) {
        dtheta[j] = kHighRisk[j] ? p.lambda_H : p.lambda_L;
    }

    // Numerator of sigma and its gradient (nonzero only on the four
    // untreated infected compartments).
    Vec9 da = Vec9::Zero();
    da[2] = p.beta_A * p.lambda_H;
    da[3] = p.beta_A * p.lambda_L;
    da[4] = p.beta_C * p.lambda_H;
    da[5] = p.beta_C * p.lambda_L;

    Vec9 dsigma = Vec9::Zero();
    if (mx.theta > 0.0) {
        dsigma = da / mx.theta - (mx.sigma / mx.theta) * dtheta;
    }

    // psi_H = pi*lambda_H*(beta_A I_AH + beta_C I_CH)/N_H and the L analogue.
    Vec9 dpsi_H = Vec9::Zero();
    if (N_H > 0.0) {
        const double h = p.beta_A * X.I_AH + p.beta_C * X.I_CH;
        for (int j = 0; j < StateVector::kDim; ++j) {
            double num = 0.0;
            if (j == 2) num += p.beta_A;
            if (j == 4) num += p.beta_C;
            dpsi_H[j] = p.pi * p.lambda_H * (num / N_H - (kHighRisk[j] ? h / (N_H * N_H) : 0.0));
        }
    }
    Vec9 dpsi_L = Vec9::Zero();
    if (N_L > 0.0) {
        const double h = p.beta_A * X.I_AL + p.beta_C * X.I_CL;
        for (int j = 0; j < StateVector::kDim; ++j) {
            double num = 0.0;
            if (j == 3) num += p.beta_A;
            if (j == 5) num += p.beta_C;
            dpsi_L[j] = p.pi * p.lambda_L * (num / N_L - (!kHighRisk[j] ? h / (N_L * N_L) : 0.0));
        }
    }

    const Vec9 dphi_H = dpsi_H + (1.0 - p.pi) * p.lambda_H * dsigma;
    const Vec9 dphi_L = dpsi_L + (1.0 - p.pi) * p.lambda_L * dsigma;

    Vec9 g = X.S_H * dphi_H + X.S_L * dphi_L;
    g[0] += mx.phi_H;
    g[1] += mx.phi_L;
    return g;
}

double budget_rate(const StateVector& X, const ControlVector& u, const CostParams& c)
{
    const double N = X.total();
    return c.treat_tap * (X.T_H + X.T_L) + c.treat_prep * X.P + c.enroll_tap * N * u.u_T +
           c.enroll_prep * N * u.u_P;
}

StateVector::Vec9 budget_rate_state_gradient(const ControlVector& u, const CostParams& c)
{
    StateVector::Vec9 g;
    g.setConstant(c.enroll_tap * u.u_T + c.enroll_prep * u.u_P);
    g[6] += c.treat_tap;
    g[7] += c.treat_tap;
    g[8] += c.treat_prep;
    return g;
}

Eigen::Vector2d budget_rate_control_gradient(const StateVector& X, const CostParams& c)
{
    const double N = X.total();
    return Eigen::Vector2d(c.enroll_prep * N, c.enroll_tap * N);
}

namespace {

// Portable uniform double in [0,1) from the top 53 bits of the generator.
double uniform01(std::mt19937_64& rng)
{
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

} // namespace

NonnegativityReport check_essential_nonnegativity(const ModelParams& p, long samples,
                                                  std::uint64_t seed)
{
    constexpr double kStateScale = 1.0e5;
    constexpr double kControlScale = 0.05;
    constexpr std::size_t kMaxWitnesses = 32;

    std::mt19937_64 rng(seed);
    NonnegativityReport report;
    report.samples = samples;

    for (long s = 0; s < samples; ++s) {
        Eigen::Matrix<double, StateVector::kDim, 1> v;
        for (int j = 0; j < StateVector::kDim; ++j) {
            v[j] = kStateScale * uniform01(rng);
        }
        ControlVector u;
        u.u_P = kControlScale * uniform01(rng);
        u.u_T = kControlScale * uniform01(rng);

        for (int i = 0; i < StateVector::kDim; ++i) {
            Eigen::Matrix<double, StateVector::kDim, 1> w = v;
            w[i] = 0.0;
            const StateVector X = StateVector::from_vector(w);
            const double di = rhs(0.0, X, u, p).to_vector()[i];
            ++report.checks;
            if (di < 0.0 && report.violations.size() < kMaxWitnesses) {
                report.violations.push_back({i, X, u, di});
            }
        }
    }
    return report;
}

} // namespace hivoc
