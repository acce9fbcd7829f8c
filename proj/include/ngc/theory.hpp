#pragma once

#include <cstdint>
#include <vector>

namespace ngc {

// Analytic and Monte Carlo treatment of the 2-hop voting model: N paths,
// each a chain of noisy classifiers over C classes, combined by plurality.

double pe_plus(double p, uint32_t C);   // p^2 + (1-p)/C
double pe_minus(double p, uint32_t C);  // complement, equals (1-p)(p + (C-1)/C)

struct VoteMoments {
    double ev_c;   // expected vote fraction on the true class
    double ev_w;   // expected vote fraction on one specific wrong class
    double var_c;
    double var_w;
};
VoteMoments vote_moments(double p, uint32_t C, uint32_t N);

// The printed bound divides sigma^2 by (pe+ + pe-)^2, which is 1; the
// proof's mu suggests (pe+ - pe-)^2. Both are exposed, neither is "fixed".
enum class ChebyshevVariant { AsPrinted, MuSquared };
double chebyshev_bound(double p, uint32_t C, uint32_t N, ChebyshevVariant variant);

struct WilsonCI {
    double low = 0.0, high = 1.0;
};
WilsonCI wilson95(uint64_t successes, uint64_t trials);

struct EnsembleSimConfig {
    double p = 0.7;
    uint32_t C = 10;
    uint32_t N = 1;
    uint64_t trials = 10000;
    uint64_t seed = 0;
    uint32_t hops = 2;  // exploration knob; the analytic columns assume 2
};

struct SimResult {
    double pe_plus = 0.0, pe_minus = 0.0;
    double ev_c = 0.0, ev_w = 0.0, var_c = 0.0, var_w = 0.0;
    double bound_printed = 0.0, bound_mu2 = 0.0;  // NaN when p <= 1/C
    double accuracy = 0.0;
    WilsonCI ci;
    uint64_t trials = 0;
    uint64_t seed = 0;
};

// Generative model per path: the input node is always correct; a hop with a
// correct input stays correct with probability p, otherwise goes uniform
// over the remaining C-1 classes; a hop with a wrong input goes uniform
// over all C classes. Plurality with seeded uniform tie-break.
SimResult simulate_ensemble(const EnsembleSimConfig& config);

struct GenerationSimConfig {
    double p0 = 0.6;
    double r = 0.2;  // fraction of the student-teacher gap recovered per generation
    uint32_t generations = 10;
    std::vector<uint32_t> Ns;  // one entry per generation, or a single broadcast value
    uint32_t C = 100;
    uint64_t trials = 10000;
    uint64_t seed = 0;
};

struct GenerationPoint {
    double p;            // student edge accuracy entering this generation
    double teacher_acc;  // ensemble accuracy at that p
    WilsonCI ci;
};

// p_{k+1} = p_k + r * (T_k - p_k)
std::vector<GenerationPoint> simulate_generations(const GenerationSimConfig& config);

std::vector<SimResult> sweep_classes(double p, uint32_t N, const std::vector<uint32_t>& class_counts,
                                     uint64_t trials, uint64_t seed);

}  // namespace ngc
