#pragma once

// Synthetic Gaussian mixtures with a target maximum pairwise overlap.
//
// Overlap of components k and l is the total misclassification probability
//   w_kl = P_{x~k}[pi_l p_l(x) > pi_k p_k(x)] + P_{x~l}[pi_k p_k(x) > pi_l p_l(x)],
// estimated by Monte Carlo. Generation bisects a global covariance scale c on
// log c, reusing the same base normals at every c, until the largest pairwise
// overlap matches the request.

#include <Eigen/Core>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mhsaem/errors.hpp"
#include "mhsaem/family.hpp"
#include "mhsaem/gaussian.hpp"
#include "mhsaem/io.hpp"
#include "mhsaem/mixture.hpp"
#include "mhsaem/rng.hpp"

namespace mhsaem {

struct GenSpec {
    std::size_t D = 2;
    std::size_t K = 10;
    std::size_t N = 1000;
    double omega = 0.5;
    std::uint64_t seed = 0;
    std::size_t mc_samples = 10000;
    double tolerance = 0.1;  // relative

    void validate() const {
        if (D < 1 || K < 1 || N < 1) throw ValidationError("generate: D, K and N must be positive");
        if (!(omega > 0.0 && omega < 1.0)) throw ValidationError("generate: omega must lie in (0, 1)");
        if (mc_samples < 100) throw ValidationError("generate: mc_samples must be at least 100");
        if (!(tolerance > 0.0 && tolerance < 1.0)) throw ValidationError("generate: tolerance must lie in (0, 1)");
    }
};

struct OverlapEstimate {
    double omega = 0.0;
    double std_error = 0.0;
};

namespace detail {

/// Fraction of `draws` rows from `src` that the rival classifies as its own.
inline std::size_t misclassified(const GaussianFamily::Prepared& src, double lw_src, const GaussianFamily::Prepared& rival,
                                 double lw_rival, const DataMatrix& draws) {
    const auto n = static_cast<std::size_t>(draws.rows());
    std::vector<double> a(n), b(n);
    GaussianFamily::log_density_all(src, draws, a);
    GaussianFamily::log_density_all(rival, draws, b);
    std::size_t count = 0;
    for (std::size_t s = 0; s < n; ++s) count += (lw_rival + b[s] > lw_src + a[s]) ? 1 : 0;
    return count;
}

inline DataMatrix base_normals(std::uint64_t seed, std::size_t k, std::size_t l, std::size_t n, std::size_t dim) {
    CounterRng rng(seed, Stream::overlap, k, l);
    DataMatrix u(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = rng.normal();
    return u;
}

inline DataMatrix transform(const GaussianFamily::Prepared& p, const DataMatrix& u) {
    DataMatrix x = u * p.chol.transpose();
    x.rowwise() += p.mean.transpose();
    return x;
}

inline void reject_identical(const MixtureParams& theta, std::size_t k, std::size_t l) {
    if (theta.components[k] == theta.components[l])
        throw ValidationError("overlap is undefined for identical components " + std::to_string(k + 1) + " and " +
                              std::to_string(l + 1));
}

} // namespace detail

/// Monte Carlo estimate of w_kl with mc_samples draws from each component.
inline OverlapEstimate pairwise_overlap(const MixtureParams& theta, std::size_t k, std::size_t l, std::size_t mc_samples,
                                        std::uint64_t seed) {
    if (theta.family_id != GaussianFamily::id) throw UnsupportedAlgorithm("overlap needs Gaussian components");
    if (k >= theta.num_components() || l >= theta.num_components()) throw IndexError("component index out of range");
    if (k == l) throw ValidationError("overlap needs two distinct components");
    if (mc_samples < 1) throw ValidationError("overlap needs at least one sample");
    detail::reject_identical(theta, k, l);
    const Mixture<GaussianFamily> mix(theta);
    const auto& pk = mix.component(k);
    const auto& pl = mix.component(l);
    const auto a = std::min(k, l), b = std::max(k, l);
    const DataMatrix xk = detail::transform(pk, detail::base_normals(seed, a, b * 2 + (k == a ? 0 : 1), mc_samples, theta.dim));
    const DataMatrix xl = detail::transform(pl, detail::base_normals(seed, a, b * 2 + (l == a ? 0 : 1), mc_samples, theta.dim));
    const double n = static_cast<double>(mc_samples);
    const double p1 = static_cast<double>(detail::misclassified(pk, mix.log_weight(k), pl, mix.log_weight(l), xk)) / n;
    const double p2 = static_cast<double>(detail::misclassified(pl, mix.log_weight(l), pk, mix.log_weight(k), xl)) / n;
    return {p1 + p2, std::sqrt(p1 * (1.0 - p1) / n + p2 * (1.0 - p2) / n)};
}

struct MaxOverlap {
    double omega = 0.0;
    double std_error = 0.0;
    std::size_t k = 0, l = 0;
};

inline MaxOverlap max_pairwise_overlap(const MixtureParams& theta, std::size_t mc_samples, std::uint64_t seed) {
    MaxOverlap best;
    for (std::size_t k = 0; k < theta.num_components(); ++k)
        for (std::size_t l = k + 1; l < theta.num_components(); ++l) {
            const auto o = pairwise_overlap(theta, k, l, mc_samples, seed);
            if (o.omega > best.omega || (k == 0 && l == 1)) best = {o.omega, o.std_error, k, l};
        }
    return best;
}

/// Haar-distributed rotation from the QR factorization of a Gaussian matrix.
inline Eigen::MatrixXd random_rotation(std::size_t dim, CounterRng& rng) {
    const auto d = static_cast<Eigen::Index>(dim);
    Eigen::MatrixXd g(d, d);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index c = 0; c < d; ++c)
        if (r(c, c) < 0.0) q.col(c) *= -1.0;
    return q;
}

struct Generated {
    MixtureParams theta_true;
    DataMatrix X;
    std::vector<std::size_t> labels;
    double achieved_omega = 0.0;
    double omega_std_error = 0.0;
    double scale = 1.0;  // global covariance multiplier
};

struct GenerationError : ValidationError {
    using ValidationError::ValidationError;
};

/// Unscaled parameters: means in the unit cube, rotated log-uniform spectra in
/// [0.5, 2], Dirichlet(5) weights.
inline std::pair<MixtureParams, std::vector<Eigen::MatrixXd>> draw_skeleton(const GenSpec& spec) {
    MixtureParams theta;
    theta.family_id = std::string(GaussianFamily::id);
    theta.dim = spec.D;
    theta.nu.resize(static_cast<Eigen::Index>(spec.K));
    std::vector<Eigen::MatrixXd> covs;
    std::vector<double> g(spec.K);
    double total = 0.0;
    for (std::size_t k = 0; k < spec.K; ++k) {
        CounterRng rng(spec.seed, Stream::generate, 0, k);
        Vector mean(static_cast<Eigen::Index>(spec.D));
        for (auto& m : mean) m = rng.uniform();
        const Eigen::MatrixXd q = random_rotation(spec.D, rng);
        Vector eig(static_cast<Eigen::Index>(spec.D));
        for (auto& e : eig) e = std::exp(std::log(0.5) + rng.uniform() * (std::log(2.0) - std::log(0.5)));
        covs.push_back(q * eig.asDiagonal() * q.transpose());
        theta.components.push_back(mean);  // mean only; scaled covariance attached later
        std::gamma_distribution<double> gamma(5.0, 1.0);
        g[k] = gamma(rng);
        total += g[k];
    }
    for (std::size_t k = 0; k < spec.K; ++k) theta.nu[static_cast<Eigen::Index>(k)] = std::log(g[k] / total);
    return {theta, covs};
}

inline MixtureParams scaled_mixture(const MixtureParams& skeleton, const std::vector<Eigen::MatrixXd>& covs, double c) {
    MixtureParams theta = skeleton;
    for (std::size_t k = 0; k < covs.size(); ++k) {
        Eigen::MatrixXd s = c * covs[k];
        s = 0.5 * (s + s.transpose());
        theta.components[k] = GaussianParams::from_covariance(skeleton.components[k], s).to_flat();
    }
    return theta;
}

inline Generated generate(const GenSpec& spec) {
    spec.validate();
    auto [skeleton, covs] = draw_skeleton(spec);
    Generated out;

    if (spec.K == 1) {
        out.theta_true = scaled_mixture(skeleton, covs, 1.0);
    } else {
        auto overlap_at = [&](double log_c) {
            return max_pairwise_overlap(scaled_mixture(skeleton, covs, std::exp(log_c)), spec.mc_samples, spec.seed);
        };
        const double target = spec.omega;
        auto close = [&](double w) { return std::abs(w - target) <= spec.tolerance * target; };

        double lo = 0.0, hi = 0.0;
        MaxOverlap at = overlap_at(0.0);
        double log_c = 0.0;
        int steps = 1;
        double seen_min = at.omega, seen_max = at.omega;
        // Bracket by doubling the log-scale stride.
        double stride = std::log(4.0);
        if (!close(at.omega)) {
            bool below = at.omega < target;
            lo = hi = 0.0;
            while (true) {
                if (steps >= 60)
                    throw GenerationError("could not bracket the requested overlap; achieved range [" +
                                          format_double(seen_min) + ", " + format_double(seen_max) + "]");
                const double next = log_c + (below ? stride : -stride);
                const auto o = overlap_at(next);
                ++steps;
                seen_min = std::min(seen_min, o.omega);
                seen_max = std::max(seen_max, o.omega);
                if (close(o.omega)) {
                    log_c = next;
                    at = o;
                    break;
                }
                if ((o.omega < target) != below) {
                    lo = below ? log_c : next;
                    hi = below ? next : log_c;
                    break;
                }
                log_c = next;
                stride *= 2.0;
            }
            while (!close(at.omega) && lo != hi) {
                if (steps >= 60)
                    throw GenerationError("overlap bisection did not converge; achieved range [" + format_double(seen_min) +
                                          ", " + format_double(seen_max) + "]");
                log_c = 0.5 * (lo + hi);
                at = overlap_at(log_c);
                ++steps;
                seen_min = std::min(seen_min, at.omega);
                seen_max = std::max(seen_max, at.omega);
                if (at.omega < target) lo = log_c;
                else hi = log_c;
            }
        }
        out.theta_true = scaled_mixture(skeleton, covs, std::exp(log_c));
        out.scale = std::exp(log_c);
        out.achieved_omega = at.omega;
        out.omega_std_error = at.std_error;
    }

    const Mixture<GaussianFamily> mix(out.theta_true);
    const Vector pi = out.theta_true.weights();
    std::vector<double> w(pi.data(), pi.data() + pi.size());
    out.X.resize(static_cast<Eigen::Index>(spec.N), static_cast<Eigen::Index>(spec.D));
    out.labels.resize(spec.N);
    Vector x(static_cast<Eigen::Index>(spec.D));
    for (std::size_t i = 0; i < spec.N; ++i) {
        CounterRng rng(spec.seed, Stream::generate, 1, i);
        const auto k = sample_categorical(w, rng.uniform());
        GaussianFamily::sample(mix.component(k), rng, x);
        out.X.row(static_cast<Eigen::Index>(i)) = x.transpose();
        out.labels[i] = k;
    }
    return out;
}

inline Json genspec_to_json(const GenSpec& s) {
    return Json{{"D", s.D},         {"K", s.K},   {"N", s.N}, {"omega", s.omega}, {"seed", s.seed},
                {"mc_samples", s.mc_samples}, {"tolerance", s.tolerance}};
}

inline void genspec_update_from_json(GenSpec& s, const Json& j, const std::string& where = "generate config") {
    reject_unknown_keys(j, {"D", "K", "N", "omega", "seed", "mc_samples", "tolerance"}, where);
    try {
        if (j.contains("D")) s.D = j.at("D").get<std::size_t>();
        if (j.contains("K")) s.K = j.at("K").get<std::size_t>();
        if (j.contains("N")) s.N = j.at("N").get<std::size_t>();
        if (j.contains("omega")) s.omega = j.at("omega").get<double>();
        if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("mc_samples")) s.mc_samples = j.at("mc_samples").get<std::size_t>();
        if (j.contains("tolerance")) s.tolerance = j.at("tolerance").get<double>();
    } catch (const Json::exception& e) {
        throw ValidationError(where + ": " + e.what());
    }
}

} // namespace mhsaem
