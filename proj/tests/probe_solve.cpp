// scratch probe: SQP on the transcribed NLP (not a registered test)
#include "hivoc/integrate.hpp"
#include "hivoc/sqp.hpp"
#include "hivoc/transcribe.hpp"

#include <chrono>
#include <cstdio>

using namespace hivoc;

int main(int argc, char** argv)
{
    const int n_int = argc > 1 ? std::atoi(argv[1]) : 3;
    const int n_cp = argc > 2 ? std::atoi(argv[2]) : 5;
    const double blim = argc > 3 ? std::atof(argv[3]) : 1e7;
    const char* guess = argc > 4 ? argv[4] : "replicate";

    ModelParams p;
    p.x = 1.0 / 24.0;
    CostParams c;
    StateVector X0;
    X0.S_H = 9900;
    X0.S_L = 89100;
    X0.I_AH = 10;
    X0.I_AL = 90;
    X0.I_CH = 90;
    X0.I_CL = 810;

    const CollocationGrid g = build_grid(n_int, 12.0, n_cp);
    const TranscribedNlp nlp(g, p, c, X0, blim);
    std::printf("vars=%d eq=%d ineq=%d\n", nlp.num_vars(), nlp.num_eq(), nlp.num_ineq());

    Eigen::VectorXd z0;
    if (std::string(guess) == "simulated") {
        z0 = nlp.initial_guess_simulated();
    } else if (std::string(guess) == "aggressive") {
        z0 = nlp.initial_guess_aggressive();
    } else {
        z0 = nlp.initial_guess_replicate();
    }

    SolverOptions opt;
    opt.max_iterations = 300;
    opt.verbose = true;

    const auto t0 = std::chrono::steady_clock::now();
    const NlpProblem prob = nlp.as_nlp_problem();
    const SolverResult r = solve(prob, z0, opt);
    const auto t1 = std::chrono::steady_clock::now();
    const double sec = std::chrono::duration<double>(t1 - t0).count();

    std::printf("status=%s iters=%d obj(scaled)=%.6f viol=%.3e kkt=%.3e time=%.2fs msg='%s'\n",
                to_string(r.status), r.iterations, r.objective, r.max_violation, r.kkt_residual,
                sec, r.message.c_str());
    std::printf("objective unscaled=%.3f\n", nlp.objective_unscaled(r.x));
    const auto sol = nlp.extract_solution(r.x);
    for (int i = 0; i < n_int; ++i) {
        std::printf("  interval %d: u_P=%.6f u_T=%.6f\n", i, sol.schedule.values[i].u_P,
                    sol.schedule.values[i].u_T);
    }
    const auto ev = evaluate_policy(p, c, X0, sol.schedule, blim);
    std::printf("resim: J=%.3f feasible=%d excess/Blim:", ev.total_cost, int(ev.feasible));
    for (double e : ev.excess_spend) {
        std::printf(" %.4f", e / blim);
    }
    std::printf("\n");
    return r.converged() ? 0 : 1;
}
