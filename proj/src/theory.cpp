#include "ngc/theory.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "ngc/parallel.hpp"
#include "ngc/rng.hpp"

namespace ngc {

namespace {

void check_domain(double p, uint32_t C) {
    if (!(p > 0.0) || p > 1.0)
        throw std::invalid_argument("p must lie in (0, 1], got " + std::to_string(p));
    if (C < 2) throw std::invalid_argument("class count must be >= 2");
}

constexpr double kZ95 = 1.959963984540054;

}  // namespace

double pe_plus(double p, uint32_t C) {
    check_domain(p, C);
    return p * p + (1.0 - p) / double(C);
}

double pe_minus(double p, uint32_t C) {
    check_domain(p, C);
    return 1.0 - pe_plus(p, C);
}

VoteMoments vote_moments(double p, uint32_t C, uint32_t N) {
    check_domain(p, C);
    if (N < 1) throw std::invalid_argument("path count must be >= 1");
    VoteMoments m;
    m.ev_c = pe_plus(p, C);
    m.ev_w = pe_minus(p, C) / double(C - 1);
    m.var_c = m.ev_c * (1.0 - m.ev_c) / double(N);
    m.var_w = m.ev_w * (1.0 - m.ev_w) / double(N);
    return m;
}

double chebyshev_bound(double p, uint32_t C, uint32_t N, ChebyshevVariant variant) {
    check_domain(p, C);
    if (!(p > 1.0 / double(C)))
        throw std::invalid_argument(
            "the bound assumes edge accuracy above random chance (p > 1/C); got p = " +
            std::to_string(p) + " with C = " + std::to_string(C));
    VoteMoments m = vote_moments(p, C, N);
    double sigma2 = m.var_c + m.var_w;
    double pp = pe_plus(p, C), pm = pe_minus(p, C);
    double denom = variant == ChebyshevVariant::AsPrinted ? (pp + pm) * (pp + pm)
                                                          : (pp - pm) * (pp - pm);
    return sigma2 / denom;
}

WilsonCI wilson95(uint64_t successes, uint64_t trials) {
    if (trials == 0) throw std::invalid_argument("trials must be >= 1");
    double n = double(trials), ph = double(successes) / n;
    double z2 = kZ95 * kZ95;
    double denom = 1.0 + z2 / n;
    double center = (ph + z2 / (2.0 * n)) / denom;
    double half = kZ95 * std::sqrt(ph * (1.0 - ph) / n + z2 / (4.0 * n * n)) / denom;
    WilsonCI ci;
    ci.low = std::max(0.0, center - half);
    ci.high = std::min(1.0, center + half);
    return ci;
}

namespace {

// one path through `hops` noisy classifiers; truth is class 0
inline uint32_t sample_path(Rng& rng, double p, uint32_t C, uint32_t hops) {
    uint32_t cur = 0;
    for (uint32_t h = 0; h < hops; ++h) {
        if (cur == 0) {
            if (rng.uniform() < p) continue;
            cur = 1 + uint32_t(rng.below(C - 1));
        } else {
            cur = uint32_t(rng.below(C));
        }
    }
    return cur;
}

constexpr uint64_t kChunk = 8192;

}  // namespace

SimResult simulate_ensemble(const EnsembleSimConfig& cfg) {
    check_domain(cfg.p, cfg.C);
    if (cfg.N < 1) throw std::invalid_argument("path count must be >= 1");
    if (cfg.trials < 1) throw std::invalid_argument("trials must be >= 1");
    if (cfg.hops < 1) throw std::invalid_argument("hop count must be >= 1");

    SimResult res;
    res.pe_plus = pe_plus(cfg.p, cfg.C);
    res.pe_minus = pe_minus(cfg.p, cfg.C);
    VoteMoments m = vote_moments(cfg.p, cfg.C, cfg.N);
    res.ev_c = m.ev_c;
    res.ev_w = m.ev_w;
    res.var_c = m.var_c;
    res.var_w = m.var_w;
    if (cfg.p > 1.0 / double(cfg.C)) {
        res.bound_printed = chebyshev_bound(cfg.p, cfg.C, cfg.N, ChebyshevVariant::AsPrinted);
        res.bound_mu2 = chebyshev_bound(cfg.p, cfg.C, cfg.N, ChebyshevVariant::MuSquared);
    } else {
        res.bound_printed = std::numeric_limits<double>::quiet_NaN();
        res.bound_mu2 = std::numeric_limits<double>::quiet_NaN();
    }
    res.trials = cfg.trials;
    res.seed = cfg.seed;

    // fixed-size trial chunks with derived seeds: the result does not
    // depend on how chunks are scheduled across threads
    size_t nchunks = size_t((cfg.trials + kChunk - 1) / kChunk);
    std::vector<uint64_t> wins(nchunks, 0);
    parallel_for(nchunks, [&](size_t ci) {
        Rng rng(mix_seed(cfg.seed, ci));
        uint64_t lo = uint64_t(ci) * kChunk;
        uint64_t hi = std::min(cfg.trials, lo + kChunk);
        std::vector<uint32_t> votes(cfg.C, 0), stamp(cfg.C, 0);
        std::vector<uint32_t> touched;
        touched.reserve(cfg.N);
        uint32_t cur_stamp = 0;
        uint64_t local = 0;
        for (uint64_t t = lo; t < hi; ++t) {
            ++cur_stamp;
            touched.clear();
            for (uint32_t a = 0; a < cfg.N; ++a) {
                uint32_t c = sample_path(rng, cfg.p, cfg.C, cfg.hops);
                if (stamp[c] != cur_stamp) {
                    stamp[c] = cur_stamp;
                    votes[c] = 0;
                    touched.push_back(c);
                }
                ++votes[c];
            }
            uint32_t best = 0;
            uint32_t winner = 0, ties = 0;
            for (uint32_t c : touched) {
                if (votes[c] > best) {
                    best = votes[c];
                    winner = c;
                    ties = 1;
                } else if (votes[c] == best) {
                    // reservoir pick keeps the tie-break uniform
                    ++ties;
                    if (rng.below(ties) == 0) winner = c;
                }
            }
            if (winner == 0) ++local;
        }
        wins[ci] = local;
    });
    uint64_t total = 0;
    for (uint64_t w : wins) total += w;
    res.accuracy = double(total) / double(cfg.trials);
    res.ci = wilson95(total, cfg.trials);
    return res;
}

std::vector<GenerationPoint> simulate_generations(const GenerationSimConfig& cfg) {
    check_domain(cfg.p0, cfg.C);
    if (!(cfg.r > 0.0) || cfg.r > 1.0) throw std::invalid_argument("r must lie in (0, 1]");
    if (cfg.generations < 1) throw std::invalid_argument("generations must be >= 1");
    if (cfg.Ns.empty()) throw std::invalid_argument("at least one path count required");
    if (cfg.Ns.size() != 1 && cfg.Ns.size() != cfg.generations)
        throw std::invalid_argument("path count list must have 1 entry or one per generation");

    std::vector<GenerationPoint> out;
    out.reserve(cfg.generations);
    double p = cfg.p0;
    for (uint32_t g = 0; g < cfg.generations; ++g) {
        EnsembleSimConfig ec;
        ec.p = std::min(p, 1.0);
        ec.C = cfg.C;
        ec.N = cfg.Ns.size() == 1 ? cfg.Ns[0] : cfg.Ns[g];
        ec.trials = cfg.trials;
        ec.seed = mix_seed(cfg.seed, g);
        SimResult sr = simulate_ensemble(ec);
        out.push_back({p, sr.accuracy, sr.ci});
        p = p + cfg.r * (sr.accuracy - p);
    }
    return out;
}

std::vector<SimResult> sweep_classes(double p, uint32_t N, const std::vector<uint32_t>& class_counts,
                                     uint64_t trials, uint64_t seed) {
    std::vector<SimResult> out;
    out.reserve(class_counts.size());
    for (uint32_t C : class_counts) {
        EnsembleSimConfig ec;
        ec.p = p;
        ec.C = C;
        ec.N = N;
        ec.trials = trials;
        ec.seed = seed;
        out.push_back(simulate_ensemble(ec));
    }
    return out;
}

}  // namespace ngc
