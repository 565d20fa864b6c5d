#pragma once

// Common iteration loop for EM, SAEM, MCSAEM, SSAEM, TSAEM and MHSAEM.
//
// One iteration t:
//   1. snapshot theta, draw the minibatch I_t (all rows for EM)
//   2. E-step: exact, top-M, truncated, Monte Carlo or MH, producing a
//      |I| x K weight matrix W (rows sum to one)
//   3. M-step: stochastic-approximation blend of sufficient statistics, or a
//      gradient step on Q built from W
//   4. metrics: untempered log-likelihood on a cadence, bias, AAR
// Only step 2 and 3 count toward wall time.

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "mhsaem/diagnostics.hpp"
#include "mhsaem/errors.hpp"
#include "mhsaem/family.hpp"
#include "mhsaem/gaussian.hpp"
#include "mhsaem/gradient.hpp"
#include "mhsaem/io.hpp"
#include "mhsaem/mh.hpp"
#include "mhsaem/mixture.hpp"
#include "mhsaem/proposal.hpp"
#include "mhsaem/rng.hpp"
#include "mhsaem/schedule.hpp"
#include "mhsaem/selection.hpp"

namespace mhsaem {

enum class Algorithm { em, saem, mcsaem, ssaem, tsaem, mhsaem };
enum class MStep { suffstats, gradient };

/// Normalization of the minibatch objective seen by the gradient step:
/// mean over I, plain sum over I, or sum scaled by N/|I| (full-data scale).
enum class GradientScale { mean, sum, dataset };

inline std::string to_string(GradientScale g) {
    switch (g) {
        case GradientScale::mean: return "mean";
        case GradientScale::sum: return "sum";
        case GradientScale::dataset: return "dataset";
    }
    return "?";
}

inline GradientScale gradient_scale_from_string(const std::string& s) {
    for (auto g : {GradientScale::mean, GradientScale::sum, GradientScale::dataset})
        if (to_string(g) == s) return g;
    throw ValidationError("unknown gradient scale '" + s + "'");
}

inline std::string to_string(Algorithm a) {
    switch (a) {
        case Algorithm::em: return "em";
        case Algorithm::saem: return "saem";
        case Algorithm::mcsaem: return "mcsaem";
        case Algorithm::ssaem: return "ssaem";
        case Algorithm::tsaem: return "tsaem";
        case Algorithm::mhsaem: return "mhsaem";
    }
    return "?";
}

inline Algorithm algorithm_from_string(const std::string& s) {
    for (auto a : {Algorithm::em, Algorithm::saem, Algorithm::mcsaem, Algorithm::ssaem, Algorithm::tsaem, Algorithm::mhsaem})
        if (to_string(a) == s) return a;
    throw ValidationError("unknown algorithm '" + s + "'");
}

inline std::string to_string(MStep m) { return m == MStep::gradient ? "gradient" : "suffstats"; }
inline MStep m_step_from_string(const std::string& s) {
    if (s == "suffstats") return MStep::suffstats;
    if (s == "gradient") return MStep::gradient;
    throw ValidationError("unknown M-step '" + s + "'");
}

struct TrainerConfig {
    Algorithm algorithm = Algorithm::mhsaem;
    std::size_t B = 100;
    std::size_t M = 1;
    std::size_t Mbar = 1;  // distance-based truncation: nearest means per datapoint
    std::size_t T = 1000;
    ProposalKind proposal = ProposalKind::uniform;
    double proposal_floor = ProposalModel::default_floor;
    MStep m_step = MStep::suffstats;
    OptimizerKind optimizer = OptimizerKind::plain;
    GradientScale gradient_scale = GradientScale::dataset;
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
    Schedule gamma = Schedule::piecewise(50, 1.0, 0.05);
    AnnealSchedule anneal{};  // T is taken from the config
    std::uint64_t seed = 0;
    std::size_t loglik_every = 0;  // 0: every iteration up to N = 20000, else every 10th
    bool record_bias = true;
    bool record_wall_time = true;

    bool sampling() const { return algorithm == Algorithm::mcsaem || algorithm == Algorithm::mhsaem; }
    bool full_batch() const { return algorithm == Algorithm::em; }

    std::size_t batch_size(std::size_t n) const { return full_batch() ? n : B; }

    std::size_t loglik_cadence(std::size_t n) const {
        if (loglik_every) return loglik_every;
        return n <= 20000 ? 1 : 10;
    }

    AnnealSchedule anneal_schedule() const {
        AnnealSchedule a = anneal;
        a.T = T;
        return a;
    }

    void validate(std::size_t n, std::size_t k, const std::string& family_id) const {
        if (T < 1) throw ValidationError("T must be at least 1");
        if (n < 1) throw ValidationError("dataset is empty");
        if (!full_batch() && (B < 1 || B > n)) throw ValidationError("B must satisfy 1 <= B <= N");
        if (M < 1 || M > k) throw ValidationError("M must satisfy 1 <= M <= K");
        if (algorithm == Algorithm::tsaem && (Mbar < 1 || Mbar > k)) throw ValidationError("Mbar must satisfy 1 <= Mbar <= K");
        if (!(proposal_floor >= 0.0)) throw ValidationError("proposal floor must be nonnegative");
        gamma.validate();
        anneal_schedule().validate();
        const bool gaussian = family_id == GaussianFamily::id;
        if ((algorithm == Algorithm::ssaem || algorithm == Algorithm::tsaem) && (!gaussian || m_step != MStep::suffstats))
            throw UnsupportedAlgorithm(to_string(algorithm) + " needs Gaussian components and the suffstats M-step");
        if (m_step == MStep::suffstats && !gaussian)
            throw UnsupportedAlgorithm("the suffstats M-step needs Gaussian components");
        if (optimizer == OptimizerKind::adam && !(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 &&
                                                   adam_beta2 < 1.0 && adam_eps > 0.0))
            throw ValidationError("invalid Adam hyperparameters");
    }
};

// ---------------------------------------------------------------------------
// Default initialization: means uniform in the unit cube, identity scale,
// weights uniform draws normalized.

template <ComponentFamily F>
MixtureParams default_init(std::size_t k, std::size_t dim, std::uint64_t seed) {
    if (k < 1 || dim < 1) throw ValidationError("K and D must be positive");
    MixtureParams theta;
    theta.family_id = std::string(F::id);
    theta.dim = dim;
    theta.nu.resize(static_cast<Eigen::Index>(k));
    std::vector<double> w(k);
    double total = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        CounterRng rng(seed, Stream::init, c);
        Vector mean(static_cast<Eigen::Index>(dim));
        for (auto& m : mean) m = rng.uniform();
        theta.components.push_back(F::initial(mean));
        w[c] = rng.uniform();
        while (w[c] <= 0.0) w[c] = rng.uniform();
        total += w[c];
    }
    for (std::size_t c = 0; c < k; ++c) theta.nu[static_cast<Eigen::Index>(c)] = std::log(w[c] / total);
    return theta;
}

inline MixtureParams default_init(const std::string& family_id, std::size_t k, std::size_t dim, std::uint64_t seed) {
    return with_family(family_id, [&](auto fam) { return default_init<decltype(fam)>(k, dim, seed); });
}

/// B distinct row indices, sorted. B = N yields 0..N-1.
inline std::vector<std::size_t> draw_minibatch(std::size_t n, std::size_t b, std::uint64_t seed, std::uint64_t t) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (b >= n) return idx;
    CounterRng rng(seed, Stream::batch, t);
    for (std::size_t j = 0; j < b; ++j) {
        const auto r = j + static_cast<std::size_t>(rng.below(n - j));
        std::swap(idx[j], idx[r]);
    }
    idx.resize(b);
    std::sort(idx.begin(), idx.end());
    return idx;
}

// ---------------------------------------------------------------------------
// Sufficient statistics of weighted minibatches.

/// Per-component stats  scale * sum_b W(b,k) [1, x_b, x_b x_b^T]  for dense W.
inline std::vector<SufficientStats> weighted_stats(const DataMatrix& Xb, const Eigen::MatrixXd& W, double scale) {
    const auto k = static_cast<std::size_t>(W.cols());
    const auto d = static_cast<std::size_t>(Xb.cols());
    std::vector<SufficientStats> out(k, SufficientStats::zero(d));
    for (std::size_t c = 0; c < k; ++c) {
        const Vector w = W.col(static_cast<Eigen::Index>(c));
        out[c].s0 = scale * w.sum();
        out[c].s1.noalias() = scale * (Xb.transpose() * w);
        DataMatrix wx = Xb.array().colwise() * w.array();
        out[c].s2.noalias() = scale * (Xb.transpose() * wx);
    }
    return out;
}

/// Same as weighted_stats but iterating only over nonzero entries of W.
inline std::vector<SufficientStats> sparse_weighted_stats(const DataMatrix& X, std::span<const std::size_t> batch,
                                                          const Eigen::MatrixXd& W, double scale) {
    const auto k = static_cast<std::size_t>(W.cols());
    std::vector<SufficientStats> out(k, SufficientStats::zero(static_cast<std::size_t>(X.cols())));
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto x = row_of(X, batch[b]);
        for (std::size_t c = 0; c < k; ++c) {
            const double w = W(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(c));
            if (w != 0.0) out[c].add(x, scale * w);
        }
    }
    return out;
}

/// prev_k <- (1 - gamma) prev_k + gamma batch_k for the listed components.
inline void sa_update_stats(std::vector<SufficientStats>& prev, const std::vector<SufficientStats>& batch, double gamma,
                            std::span<const std::size_t> components) {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ValidationError("step size must lie in [0, 1]");
    for (auto k : components) prev.at(k).blend(batch.at(k), gamma);
}

inline std::vector<std::size_t> touched_columns(const Eigen::MatrixXd& W) {
    std::vector<std::size_t> out;
    for (Eigen::Index c = 0; c < W.cols(); ++c)
        if ((W.col(c).array() != 0.0).any()) out.push_back(static_cast<std::size_t>(c));
    return out;
}

// ---------------------------------------------------------------------------

struct TrainerState {
    std::size_t next_t = 1;
    MixtureParams theta;
    ChainState chain;
    ProposalModel proposal;
    std::vector<SufficientStats> stats;
    Optimizer optimizer;
    double elapsed_s = 0.0;
};

struct RunResult {
    MixtureParams theta;
    std::vector<IterationRecord> records;
    std::string status = "ok";
    std::string message;
    std::optional<std::size_t> failed_at;
};

template <ComponentFamily F>
class Trainer {
public:
    Trainer(TrainerConfig cfg, const DataMatrix& X, MixtureParams theta_init) : cfg_(std::move(cfg)), X_(X) {
        if (!X_.allFinite()) throw ValidationError("dataset contains non-finite values");
        if (theta_init.family_id != F::id) throw ValidationError("initial parameters belong to another family");
        theta_init.validate();
        Mixture<F> check(theta_init);  // validates block layouts
        if (static_cast<std::size_t>(X_.cols()) != theta_init.dim) throw ValidationError("data dimension differs from D");
        const auto n = static_cast<std::size_t>(X_.rows());
        const auto k = theta_init.num_components();
        cfg_.validate(n, k, theta_init.family_id);
        anneal_ = cfg_.anneal_schedule();

        st_.theta = std::move(theta_init);
        if (cfg_.algorithm == Algorithm::mhsaem) {
            st_.chain = ChainState::uniform(n, k, cfg_.seed);
            st_.proposal = ProposalModel(cfg_.proposal, n, k, cfg_.proposal_floor);
        }
        if constexpr (std::is_same_v<F, GaussianFamily>) {
            if (cfg_.m_step == MStep::suffstats) {
                const Vector pi = st_.theta.weights();
                for (std::size_t c = 0; c < k; ++c) {
                    const auto g = GaussianParams::from_flat(st_.theta.components[c], st_.theta.dim);
                    st_.stats.push_back(gaussian_stats_from_params(g, static_cast<double>(n) * pi[static_cast<Eigen::Index>(c)]));
                    st_.theta.nu[static_cast<Eigen::Index>(c)] = std::log(st_.stats[c].s0);
                }
            }
        }
        st_.optimizer.kind = cfg_.optimizer;
        st_.optimizer.beta1 = cfg_.adam_beta1;
        st_.optimizer.beta2 = cfg_.adam_beta2;
        st_.optimizer.eps = cfg_.adam_eps;
        st_.optimizer.reset(st_.theta);
    }

    const TrainerConfig& config() const { return cfg_; }
    const TrainerState& state() const { return st_; }
    const MixtureParams& params() const { return st_.theta; }
    bool done() const { return st_.next_t > cfg_.T; }

    /// Replace the mutable state, e.g. from a checkpoint.
    void restore(TrainerState s) {
        const auto n = static_cast<std::size_t>(X_.rows());
        const auto k = s.theta.num_components();
        Mixture<F> check(s.theta);
        if (k != st_.theta.num_components() || s.theta.dim != st_.theta.dim)
            throw ValidationError("checkpoint parameters do not match the configuration");
        if (cfg_.algorithm == Algorithm::mhsaem) {
            if (s.chain.size() != n) throw ValidationError("checkpoint chain length differs from N");
            s.chain.validate(k);
            if (s.proposal.num_points() != n || s.proposal.num_components() != k || s.proposal.kind() != cfg_.proposal)
                throw ValidationError("checkpoint proposal does not match the configuration");
        }
        if (s.stats.size() != st_.stats.size()) throw ValidationError("checkpoint statistics do not match the configuration");
        s.optimizer.kind = cfg_.optimizer;
        s.optimizer.beta1 = cfg_.adam_beta1;
        s.optimizer.beta2 = cfg_.adam_beta2;
        s.optimizer.eps = cfg_.adam_eps;
        if (!s.optimizer.initialized_for(s.theta)) throw ValidationError("checkpoint optimizer state does not match");
        if (s.next_t < 1 || s.next_t > cfg_.T + 1) throw ValidationError("checkpoint iteration out of range");
        st_ = std::move(s);
    }

    /// Run iteration next_t and return its record.
    IterationRecord step() {
        if (done()) throw ValidationError("training already finished");
        const std::size_t t = st_.next_t;
        const auto n = static_cast<std::size_t>(X_.rows());
        const auto k = st_.theta.num_components();

        IterationRecord rec;
        rec.t = t;
        rec.beta = anneal_(t);
        // Full-batch EM with statistics replaces them outright.
        rec.gamma = (cfg_.algorithm == Algorithm::em && cfg_.m_step == MStep::suffstats) ? 1.0 : cfg_.gamma(t);
        const double beta = rec.beta, gamma = rec.gamma;

        const auto t0 = clock::now();
        double excluded = 0.0;

        const Mixture<F> mix = snapshot(t);
        const auto batch = draw_minibatch(n, cfg_.batch_size(n), cfg_.seed, t);
        const auto bsz = batch.size();
        const double scale_stats = static_cast<double>(n) / static_cast<double>(bsz);

        Eigen::MatrixXd W;           // |I| x K weights
        bool dense = false;
        std::vector<std::size_t> touched;
        DataMatrix Xb;

        switch (cfg_.algorithm) {
            case Algorithm::em:
            case Algorithm::saem: {
                Xb = cfg_.full_batch() ? X_ : gather_rows(X_, batch);
                W = exact_e_step(mix, Xb, beta);
                rec.eval_count = bsz * k;
                dense = true;
                break;
            }
            case Algorithm::ssaem: {
                Xb = gather_rows(X_, batch);
                const Eigen::MatrixXd R = exact_e_step(mix, Xb, beta);
                rec.eval_count = bsz * k;
                W = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(bsz), static_cast<Eigen::Index>(k));
                std::vector<double> row(k);
                for (std::size_t b = 0; b < bsz; ++b) {
                    for (std::size_t c = 0; c < k; ++c) row[c] = R(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(c));
                    const auto sel = ssaem_select(row, cfg_.M);
                    for (std::size_t s = 0; s < sel.indices.size(); ++s)
                        W(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(sel.indices[s])) = sel.weights[s];
                }
                break;
            }
            case Algorithm::tsaem: {
                const auto nb = mean_neighbors(st_.theta);
                W = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(bsz), static_cast<Eigen::Index>(k));
                for (std::size_t b = 0; b < bsz; ++b) {
                    const auto x = row_of(X_, batch[b]);
                    const auto sel = restricted_responsibilities(mix, x, nb.candidates(x, cfg_.M, cfg_.Mbar), beta);
                    rec.eval_count += sel.indices.size();
                    for (std::size_t s = 0; s < sel.indices.size(); ++s)
                        W(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(sel.indices[s])) = sel.weights[s];
                }
                break;
            }
            case Algorithm::mcsaem: {
                std::vector<double> lj(k), probs(k);
                std::vector<std::uint32_t> samples(bsz * cfg_.M);
                for (std::size_t b = 0; b < bsz; ++b) {
                    const auto i = batch[b];
                    mix.log_joints(row_of(X_, i), lj);
                    softmax(lj, beta, probs);
                    for (std::size_t j = 0; j < cfg_.M; ++j) {
                        CounterRng rng(cfg_.seed, Stream::mh_step, t, i, j);
                        samples[b * cfg_.M + j] = static_cast<std::uint32_t>(sample_categorical(probs, 1.0, rng.uniform()));
                    }
                }
                rec.eval_count = bsz * k;
                rec.aar = 1.0;
                W = sample_frequencies(samples, bsz, cfg_.M, k);
                break;
            }
            case Algorithm::mhsaem: {
                SweepOptions opt;
                opt.M = cfg_.M;
                opt.beta = beta;
                opt.table_gamma = gamma;
                opt.seed = cfg_.seed;
                opt.t = t;
                opt.snapshot = t;
                const auto res = mh_sweep(st_.chain, mix, X_, batch, st_.proposal, opt);
                rec.eval_count = res.eval_count;
                rec.aar = average_acceptance(res.alphas);
                W = sample_frequencies(res.samples, bsz, cfg_.M, k);
                break;
            }
        }

        if (cfg_.sampling() && cfg_.record_bias) {
            const auto tb = clock::now();
            if (Xb.rows() == 0) Xb = gather_rows(X_, batch);
            const Eigen::MatrixXd R = exact_e_step(mix, Xb, beta);
            rec.bias = gradient_bias(st_.theta, mix, X_, batch, W, R);
            excluded += seconds_since(tb);
        }

        // M-step
        if (cfg_.m_step == MStep::suffstats) {
            if constexpr (std::is_same_v<F, GaussianFamily>) {
                std::vector<SufficientStats> sbar;
                if (dense) {
                    sbar = weighted_stats(Xb, W, scale_stats);
                    touched.resize(k);
                    std::iota(touched.begin(), touched.end(), 0);
                } else {
                    sbar = sparse_weighted_stats(X_, batch, W, scale_stats);
                    touched = touched_columns(W);
                }
                apply_stats(sbar, gamma, touched, t);
            }
        } else {
            double scale = 1.0;
            if (cfg_.gradient_scale == GradientScale::mean) scale = 1.0 / static_cast<double>(bsz);
            if (cfg_.gradient_scale == GradientScale::dataset) scale = scale_stats;
            const auto g = weighted_gradient(st_.theta, mix, X_, batch, W, scale);
            st_.optimizer.step(st_.theta, g, gamma, t);
        }

        st_.elapsed_s += seconds_since(t0) - excluded;
        if (cfg_.record_wall_time) rec.wall_time_s = st_.elapsed_s;

        const auto every = cfg_.loglik_cadence(n);
        if (t == 1 || t == cfg_.T || t % every == 0) {
            const double ll = snapshot(t).dataset_loglik(X_);
            if (!std::isfinite(ll)) throw NumericalError("non-finite log-likelihood", t);
            rec.loglik = ll;
        }
        st_.next_t = t + 1;
        return rec;
    }

private:
    using clock = std::chrono::steady_clock;
    static double seconds_since(clock::time_point t0) {
        return std::chrono::duration<double>(clock::now() - t0).count();
    }

    Mixture<F> snapshot(std::size_t t) const {
        try {
            return Mixture<F>(st_.theta);
        } catch (const ValidationError& e) {
            throw NumericalError(std::string("invalid parameters: ") + e.what(), t);
        }
    }

    void apply_stats(const std::vector<SufficientStats>& sbar, double gamma, std::span<const std::size_t> touched,
                     std::size_t t) {
        for (auto c : touched) {
            SufficientStats next = st_.stats[c];
            next.blend(sbar[c], gamma);
            if (!(next.s0 > 0.0) || !std::isfinite(next.s0)) continue;  // empty: keep previous parameters
            GaussianEstimate est;
            try {
                est = gaussian_params_from(next);
            } catch (const EmptyComponent&) {
                continue;
            } catch (const NumericalError& e) {
                throw NumericalError(std::string(e.what()) + " (component " + std::to_string(c + 1) + ")", t);
            }
            st_.stats[c] = std::move(next);
            st_.theta.components[c] = est.params.to_flat();
            st_.theta.nu[static_cast<Eigen::Index>(c)] = std::log(st_.stats[c].s0);
        }
    }

    TrainerConfig cfg_;
    const DataMatrix& X_;
    AnnealSchedule anneal_;
    TrainerState st_;
};

/// Run the remaining iterations. Numerical failures end the run early with
/// status "numerical" and the iteration recorded in failed_at.
template <ComponentFamily F>
RunResult run(Trainer<F>& trainer, const std::function<void(const IterationRecord&)>& on_record = {}) {
    RunResult out;
    try {
        while (!trainer.done()) {
            auto rec = trainer.step();
            if (on_record) on_record(rec);
            out.records.push_back(rec);
        }
    } catch (const NumericalError& e) {
        out.status = "numerical";
        out.message = e.what();
        out.failed_at = e.iteration();
    }
    out.theta = trainer.params();
    return out;
}

template <ComponentFamily F>
RunResult run(const TrainerConfig& cfg, const DataMatrix& X, const MixtureParams& theta_init,
              const std::function<void(const IterationRecord&)>& on_record = {}) {
    Trainer<F> trainer(cfg, X, theta_init);
    return run(trainer, on_record);
}

// ---------------------------------------------------------------------------
// Serialization of configs and trainer state.

inline Json config_to_json(const TrainerConfig& c) {
    return Json{{"algorithm", to_string(c.algorithm)},
                {"B", c.B},
                {"M", c.M},
                {"Mbar", c.Mbar},
                {"T", c.T},
                {"proposal", to_string(c.proposal)},
                {"proposal_floor", c.proposal_floor},
                {"m_step", to_string(c.m_step)},
                {"optimizer", to_string(c.optimizer)},
                {"gradient_scale", to_string(c.gradient_scale)},
                {"adam", {{"beta1", c.adam_beta1}, {"beta2", c.adam_beta2}, {"eps", c.adam_eps}}},
                {"schedule",
                 {{"kind", to_string(c.gamma.kind)},
                  {"value", c.gamma.value},
                  {"warmup", c.gamma.warmup},
                  {"warmup_value", c.gamma.warmup_value},
                  {"exponent", c.gamma.exponent}}},
                {"anneal",
                 {{"enabled", c.anneal.enabled},
                  {"beta_min", c.anneal.beta_min},
                  {"beta_max", c.anneal.beta_max},
                  {"tau_fraction", c.anneal.tau_fraction}}},
                {"seed", c.seed},
                {"loglik_every", c.loglik_every},
                {"record_bias", c.record_bias},
                {"record_wall_time", c.record_wall_time}};
}

namespace detail {
template <class T>
void read_field(const Json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const Json::exception&) {
        throw ValidationError(where + ": field '" + key + "' has the wrong type");
    }
}
} // namespace detail

/// Overlay the fields present in j onto `c`. Unknown fields are rejected.
inline void config_update_from_json(TrainerConfig& c, const Json& j, const std::string& where = "train config") {
    using detail::read_field;
    reject_unknown_keys(j,
                        {"algorithm", "B", "M", "Mbar", "T", "proposal", "proposal_floor", "m_step", "optimizer", "gradient_scale", "adam",
                         "schedule", "anneal", "seed", "loglik_every", "record_bias", "record_wall_time"},
                        where);
    std::string s;
    if (j.contains("algorithm")) {
        read_field(j, "algorithm", s, where);
        c.algorithm = algorithm_from_string(s);
    }
    read_field(j, "B", c.B, where);
    read_field(j, "M", c.M, where);
    read_field(j, "Mbar", c.Mbar, where);
    read_field(j, "T", c.T, where);
    if (j.contains("proposal")) {
        read_field(j, "proposal", s, where);
        c.proposal = proposal_kind_from_string(s);
    }
    read_field(j, "proposal_floor", c.proposal_floor, where);
    if (j.contains("m_step")) {
        read_field(j, "m_step", s, where);
        c.m_step = m_step_from_string(s);
    }
    if (j.contains("optimizer")) {
        read_field(j, "optimizer", s, where);
        c.optimizer = optimizer_kind_from_string(s);
    }
    if (j.contains("gradient_scale")) {
        read_field(j, "gradient_scale", s, where);
        c.gradient_scale = gradient_scale_from_string(s);
    }
    if (j.contains("adam")) {
        const auto& a = j.at("adam");
        reject_unknown_keys(a, {"beta1", "beta2", "eps"}, where + ".adam");
        read_field(a, "beta1", c.adam_beta1, where);
        read_field(a, "beta2", c.adam_beta2, where);
        read_field(a, "eps", c.adam_eps, where);
    }
    if (j.contains("schedule")) {
        const auto& a = j.at("schedule");
        reject_unknown_keys(a, {"kind", "value", "warmup", "warmup_value", "exponent"}, where + ".schedule");
        if (a.contains("kind")) {
            read_field(a, "kind", s, where);
            c.gamma.kind = schedule_kind_from_string(s);
        }
        read_field(a, "value", c.gamma.value, where);
        read_field(a, "warmup", c.gamma.warmup, where);
        read_field(a, "warmup_value", c.gamma.warmup_value, where);
        read_field(a, "exponent", c.gamma.exponent, where);
    }
    if (j.contains("anneal")) {
        const auto& a = j.at("anneal");
        reject_unknown_keys(a, {"enabled", "beta_min", "beta_max", "tau_fraction"}, where + ".anneal");
        read_field(a, "enabled", c.anneal.enabled, where);
        read_field(a, "beta_min", c.anneal.beta_min, where);
        read_field(a, "beta_max", c.anneal.beta_max, where);
        read_field(a, "tau_fraction", c.anneal.tau_fraction, where);
    }
    read_field(j, "seed", c.seed, where);
    read_field(j, "loglik_every", c.loglik_every, where);
    read_field(j, "record_bias", c.record_bias, where);
    read_field(j, "record_wall_time", c.record_wall_time, where);
}

inline TrainerConfig config_from_json(const Json& j) {
    TrainerConfig c;
    config_update_from_json(c, j);
    return c;
}

inline Json stats_to_json(const SufficientStats& s) {
    Json s2 = Json::array();
    for (Eigen::Index r = 0; r < s.s2.rows(); ++r) {
        Json row = Json::array();
        for (Eigen::Index c = 0; c < s.s2.cols(); ++c) row.push_back(s.s2(r, c));
        s2.push_back(row);
    }
    return Json{{"s0", s.s0}, {"s1", vector_to_json(s.s1)}, {"s2", s2}};
}

inline SufficientStats stats_from_json(const Json& j, std::size_t dim) {
    reject_unknown_keys(j, {"s0", "s1", "s2"}, "statistics");
    SufficientStats s = SufficientStats::zero(dim);
    s.s0 = j.at("s0").get<double>();
    s.s1 = vector_from_json(j.at("s1"));
    const auto& rows = j.at("s2");
    if (static_cast<std::size_t>(s.s1.size()) != dim || rows.size() != dim) throw ValidationError("statistics have wrong dimension");
    for (std::size_t r = 0; r < dim; ++r) {
        const auto v = vector_from_json(rows[r]);
        if (static_cast<std::size_t>(v.size()) != dim) throw ValidationError("statistics have wrong dimension");
        s.s2.row(static_cast<Eigen::Index>(r)) = v.transpose();
    }
    return s;
}

inline Json state_to_json(const TrainerState& s) {
    Json j{{"next_t", s.next_t}, {"params", params_to_json(s.theta)}, {"elapsed_s", s.elapsed_s}};
    if (s.chain.size()) {
        std::vector<std::uint64_t> z(s.chain.z.begin(), s.chain.z.end());
        for (auto& v : z) ++v;
        j["chain"] = z;
    }
    if (s.proposal.is_tabular()) j["table"] = s.proposal.table();
    if (!s.stats.empty()) {
        Json st = Json::array();
        for (const auto& x : s.stats) st.push_back(stats_to_json(x));
        j["stats"] = st;
    }
    Json opt{{"steps", s.optimizer.steps}};
    if (s.optimizer.kind == OptimizerKind::adam) {
        Json m = Json::array(), v = Json::array();
        for (const auto& x : s.optimizer.m) m.push_back(vector_to_json(x));
        for (const auto& x : s.optimizer.v) v.push_back(vector_to_json(x));
        opt["m"] = m;
        opt["v"] = v;
    }
    j["optimizer"] = opt;
    return j;
}

/// Rebuild the state of a trainer created with the same config and data.
template <ComponentFamily F>
TrainerState state_from_json(const Json& j, const Trainer<F>& trainer) {
    reject_unknown_keys(j, {"next_t", "params", "elapsed_s", "chain", "table", "stats", "optimizer"}, "run state");
    TrainerState s = trainer.state();
    s.next_t = j.at("next_t").get<std::size_t>();
    s.theta = params_from_json(j.at("params"));
    s.elapsed_s = j.value("elapsed_s", 0.0);
    const auto k = s.theta.num_components();
    if (j.contains("chain")) {
        std::vector<std::uint32_t> z;
        for (const auto& v : j.at("chain")) {
            const auto e = v.get<std::uint64_t>();
            if (e < 1 || e > k) throw ValidationError("run state: chain entry out of range");
            z.push_back(static_cast<std::uint32_t>(e - 1));
        }
        s.chain = ChainState(std::move(z));
    }
    if (j.contains("table")) s.proposal.set_table(j.at("table").get<std::vector<double>>());
    if (j.contains("stats")) {
        s.stats.clear();
        for (const auto& x : j.at("stats")) s.stats.push_back(stats_from_json(x, s.theta.dim));
    }
    const auto& opt = j.at("optimizer");
    reject_unknown_keys(opt, {"steps", "m", "v"}, "run state optimizer");
    s.optimizer.steps = opt.at("steps").get<std::vector<std::uint64_t>>();
    if (opt.contains("m")) {
        s.optimizer.m.clear();
        s.optimizer.v.clear();
        for (const auto& x : opt.at("m")) s.optimizer.m.push_back(vector_from_json(x));
        for (const auto& x : opt.at("v")) s.optimizer.v.push_back(vector_from_json(x));
    }
    return s;
}

} // namespace mhsaem
