#pragma once

// Metropolis-Hastings kernel over the component index of each datapoint.
//
// The target for datapoint i is p(z | x_i)^beta. Each chain keeps its state
// across iterations together with the log joint of the incumbent, stamped with
// the parameter snapshot it was computed under. A stale stamp costs one
// refresh evaluation before the first step of a sweep.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "mhsaem/errors.hpp"
#include "mhsaem/family.hpp"
#include "mhsaem/mixture.hpp"
#include "mhsaem/proposal.hpp"
#include "mhsaem/rng.hpp"

namespace mhsaem {

struct ChainState {
    std::vector<std::uint32_t> z;           // 0-based
    std::vector<double> last_log_joint;
    std::vector<std::uint64_t> stamp;       // snapshot id of last_log_joint; 0 = never computed

    ChainState() = default;
    explicit ChainState(std::vector<std::uint32_t> init)
        : z(std::move(init)), last_log_joint(z.size(), 0.0), stamp(z.size(), 0) {}

    std::size_t size() const { return z.size(); }

    /// Independent uniform start per datapoint.
    static ChainState uniform(std::size_t n, std::size_t k, std::uint64_t seed) {
        std::vector<std::uint32_t> z(n);
        for (std::size_t i = 0; i < n; ++i) {
            CounterRng rng(seed, Stream::chain_init, i);
            z[i] = static_cast<std::uint32_t>(rng.below(k));
        }
        return ChainState(std::move(z));
    }

    void validate(std::size_t k) const {
        if (last_log_joint.size() != z.size() || stamp.size() != z.size())
            throw ValidationError("chain state arrays differ in length");
        for (auto v : z)
            if (v >= k) throw ValidationError("chain state holds an out-of-range component");
    }

    void invalidate() { std::fill(stamp.begin(), stamp.end(), 0); }

    /// Recompute every cached log joint under the given snapshot.
    template <ComponentFamily F>
    void refresh(const Mixture<F>& mix, const DataMatrix& X, std::uint64_t snapshot) {
        for (std::size_t i = 0; i < z.size(); ++i) {
            last_log_joint[i] = mix.log_joint(row_of(X, i), z[i]);
            stamp[i] = snapshot;
        }
    }
};

struct ProposalDraw {
    std::size_t z;
    double log_q_forward;   // log q(z | zbar)
    double log_q_backward;  // log q(zbar | z)
};

/// Draw from an explicit probability vector (optimal and tabular kinds).
inline ProposalDraw draw_from_probabilities(std::span<const double> probs, std::size_t zbar, double u) {
    const auto z = sample_categorical(probs, 1.0, u);
    return {z, std::log(probs[z]), std::log(probs[zbar])};
}

/// Proposal probabilities for datapoint i. For the optimal kind these are the
/// tempered responsibilities, computed from `log_joints` (length K).
inline void proposal_probabilities(const ProposalModel& q, std::size_t i, std::span<const double> log_joints, double beta,
                                   std::span<double> out) {
    const auto k = q.num_components();
    switch (q.kind()) {
        case ProposalKind::uniform: std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(k)); break;
        case ProposalKind::optimal: softmax(log_joints, beta, out); break;
        default: q.row_probabilities(i, out); break;
    }
}

/// Sample z ~ q(. | zbar) for datapoint i. The optimal kind evaluates all K
/// log joints of x_i.
template <ComponentFamily F>
ProposalDraw propose(const ProposalModel& q, std::size_t i, std::size_t zbar, const Mixture<F>& mix, ConstVectorRef x,
                     CounterRng& rng, double beta = 1.0) {
    const auto k = q.num_components();
    if (zbar >= k) throw IndexError("component index out of range");
    if (i >= q.num_points() && q.is_tabular()) throw IndexError("datapoint index out of range");
    if (q.kind() == ProposalKind::uniform) {
        const double lq = -std::log(static_cast<double>(k));
        return {static_cast<std::size_t>(rng.below(k)), lq, lq};
    }
    std::vector<double> lj(k), probs(k);
    if (q.kind() == ProposalKind::optimal) mix.log_joints(x, lj);
    proposal_probabilities(q, i, lj, beta, probs);
    return draw_from_probabilities(probs, zbar, rng.uniform());
}

/// min{1, exp(beta (l_z - l_zbar) + log q(zbar|z) - log q(z|zbar))}.
inline double acceptance_ratio(double log_joint_current, double log_joint_proposed, double log_q_forward,
                               double log_q_backward, double beta) {
    if (!(beta > 0.0)) throw ValidationError("inverse temperature must be positive");
    const double a = beta * (log_joint_proposed - log_joint_current) + log_q_backward - log_q_forward;
    if (std::isnan(a)) return 0.0;
    return a >= 0.0 ? 1.0 : std::exp(a);
}

template <ComponentFamily F>
double acceptance_ratio(const Mixture<F>& mix, ConstVectorRef x, std::size_t zbar, std::size_t z, double log_q_forward,
                        double log_q_backward, double beta) {
    if (z == zbar) {
        if (!(beta > 0.0)) throw ValidationError("inverse temperature must be positive");
        return 1.0;
    }
    return acceptance_ratio(mix.log_joint(x, zbar), mix.log_joint(x, z), log_q_forward, log_q_backward, beta);
}

struct SweepResult {
    std::size_t M = 0;
    std::vector<std::uint32_t> samples;  // |I| x M, row-major
    std::vector<double> alphas;          // |I| x M
    std::uint64_t accept_count = 0;
    std::uint64_t eval_count = 0;

    std::span<const std::uint32_t> samples_of(std::size_t b) const { return {samples.data() + b * M, M}; }

    double mean_alpha() const {
        if (alphas.empty()) return 0.0;
        double s = 0.0;
        for (double a : alphas) s += a;
        return s / static_cast<double>(alphas.size());
    }
};

struct SweepOptions {
    std::size_t M = 1;
    double beta = 1.0;
    double table_gamma = 0.0;   // step size for the forgetting table
    std::uint64_t seed = 0;
    std::uint64_t t = 0;        // iteration key for the random streams
    std::uint64_t snapshot = 1; // id of `mix`, compared against chain stamps
};

/// M sequential MH steps for each i in `batch`, starting from chain.z[i].
/// Tabular rows are updated with the M emitted states after each datapoint.
///
/// eval_count: one per proposed state, plus one incumbent refresh when the
/// cached log joint is stale. The optimal kind spends K per datapoint instead.
template <ComponentFamily F>
SweepResult mh_sweep(ChainState& chain, const Mixture<F>& mix, const DataMatrix& X, std::span<const std::size_t> batch,
                     ProposalModel& q, const SweepOptions& opt) {
    const auto k = mix.num_components();
    if (opt.M < 1) throw ValidationError("M must be at least 1");
    if (batch.empty()) throw ValidationError("minibatch is empty");
    if (!(opt.beta > 0.0)) throw ValidationError("inverse temperature must be positive");
    if (q.num_components() != k) throw ValidationError("proposal and mixture disagree on K");
    if (chain.size() != static_cast<std::size_t>(X.rows())) throw ValidationError("chain length differs from N");

    SweepResult res;
    res.M = opt.M;
    res.samples.resize(batch.size() * opt.M);
    res.alphas.resize(batch.size() * opt.M);

    std::vector<double> lj(k), probs(k);
    const bool optimal = q.kind() == ProposalKind::optimal;
    const bool uniform = q.kind() == ProposalKind::uniform;
    const double log_uniform = -std::log(static_cast<double>(k));

    for (std::size_t b = 0; b < batch.size(); ++b) {
        const std::size_t i = batch[b];
        if (i >= chain.size()) throw IndexError("datapoint index out of range");
        const auto x = row_of(X, i);
        std::size_t zbar = chain.z[i];
        double l_bar;

        if (optimal) {
            mix.log_joints(x, lj);
            res.eval_count += k;
            proposal_probabilities(q, i, lj, opt.beta, probs);
            l_bar = lj[zbar];
        } else {
            if (chain.stamp[i] != opt.snapshot) {
                chain.last_log_joint[i] = mix.log_joint_unchecked(x, zbar);
                chain.stamp[i] = opt.snapshot;
                ++res.eval_count;
            }
            l_bar = chain.last_log_joint[i];
            if (!uniform) q.row_probabilities(i, probs);
        }

        for (std::size_t j = 0; j < opt.M; ++j) {
            CounterRng rng(opt.seed, Stream::mh_step, opt.t, i, j);
            std::size_t z;
            double lqf, lqb;
            if (uniform) {
                z = static_cast<std::size_t>(rng.below(k));
                lqf = lqb = log_uniform;
            } else {
                const auto d = draw_from_probabilities(probs, zbar, rng.uniform());
                z = d.z;
                lqf = d.log_q_forward;
                lqb = d.log_q_backward;
            }
            double l_new;
            if (optimal) {
                l_new = lj[z];
            } else {
                l_new = mix.log_joint_unchecked(x, z);
                ++res.eval_count;
            }
            // The optimal proposal is the tempered target itself: exact acceptance.
            const double alpha = (optimal || z == zbar) ? 1.0 : acceptance_ratio(l_bar, l_new, lqf, lqb, opt.beta);
            const double u = rng.uniform();
            if (u < alpha) {
                ++res.accept_count;
                zbar = z;
                l_bar = l_new;
            }
            res.samples[b * opt.M + j] = static_cast<std::uint32_t>(zbar);
            res.alphas[b * opt.M + j] = alpha;
        }

        chain.z[i] = static_cast<std::uint32_t>(zbar);
        chain.last_log_joint[i] = l_bar;
        chain.stamp[i] = opt.snapshot;
        if (q.is_tabular())
            for (std::size_t j = 0; j < opt.M; ++j) q.tf_update(i, res.samples[b * opt.M + j], opt.table_gamma);
    }
    return res;
}

} // namespace mhsaem
