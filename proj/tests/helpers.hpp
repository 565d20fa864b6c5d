#pragma once

// Shared fixtures and extended-precision oracles for the unit tests.

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "mhsaem/mhsaem.hpp"

namespace testing_support {

using namespace mhsaem;

inline Vector random_vector(CounterRng& rng, Eigen::Index n, double lo = -1.0, double hi = 1.0) {
    Vector v(n);
    for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
    return v;
}

/// Random SPD covariance with eigenvalues in [0.3, 2].
inline Eigen::MatrixXd random_covariance(CounterRng& rng, std::size_t d) {
    const Eigen::MatrixXd q = random_rotation(d, rng);
    Vector eig = random_vector(rng, static_cast<Eigen::Index>(d), 0.3, 2.0);
    return q * eig.asDiagonal() * q.transpose();
}

inline MixtureParams random_gmm(std::uint64_t seed, std::size_t k, std::size_t d, double spread = 3.0) {
    CounterRng rng(seed, Stream::test, 101);
    MixtureParams theta;
    theta.family_id = "gaussian";
    theta.dim = d;
    theta.nu = random_vector(rng, static_cast<Eigen::Index>(k), -1.0, 1.0);
    for (std::size_t c = 0; c < k; ++c) {
        const Vector mean = random_vector(rng, static_cast<Eigen::Index>(d), -spread, spread);
        theta.components.push_back(GaussianParams::from_covariance(mean, random_covariance(rng, d)).to_flat());
    }
    return theta;
}

inline MixtureParams random_flow_mixture(std::uint64_t seed, std::size_t k, std::size_t d) {
    CounterRng rng(seed, Stream::test, 202);
    MixtureParams theta;
    theta.family_id = "flow";
    theta.dim = d;
    theta.nu = random_vector(rng, static_cast<Eigen::Index>(k), -1.0, 1.0);
    for (std::size_t c = 0; c < k; ++c) {
        ElementwiseFlowParams p;
        const auto dd = static_cast<Eigen::Index>(d);
        p.mu = random_vector(rng, dd, -2.0, 2.0);
        p.log_scale = random_vector(rng, dd, -0.5, 0.5);
        p.skew = random_vector(rng, dd, -0.5, 0.5);
        p.log_tail = random_vector(rng, dd, -0.4, 0.4);
        theta.components.push_back(p.to_flat());
    }
    return theta;
}

inline DataMatrix sample_rows(const MixtureParams& theta, std::size_t n, std::uint64_t seed) {
    DataMatrix X(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(theta.dim));
    const Vector pi = theta.weights();
    std::vector<double> w(pi.data(), pi.data() + pi.size());
    Vector x(static_cast<Eigen::Index>(theta.dim));
    with_family(theta.family_id, [&](auto fam) {
        using F = decltype(fam);
        const Mixture<F> mix(theta);
        for (std::size_t i = 0; i < n; ++i) {
            CounterRng rng(seed, Stream::test, 303, i);
            const auto k = sample_categorical(w, rng.uniform());
            F::sample(mix.component(k), rng, x);
            X.row(static_cast<Eigen::Index>(i)) = x.transpose();
        }
        return 0;
    });
    return X;
}

// --- long double oracles, independent of the library's factorization code ---

using LMat = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
using LVec = Eigen::Matrix<long double, Eigen::Dynamic, 1>;

/// log N(x; mean, cov) via Gaussian elimination in long double.
inline long double oracle_gaussian_logpdf(const Vector& mean, const Eigen::MatrixXd& cov, const Vector& x) {
    const auto d = mean.size();
    LMat a = cov.cast<long double>();
    LVec r = (x - mean).cast<long double>();
    LVec sol = r;
    long double logdet = 0.0L;
    // elimination without pivoting is fine for SPD matrices
    for (Eigen::Index p = 0; p < d; ++p) {
        logdet += std::log(a(p, p));
        for (Eigen::Index q = p + 1; q < d; ++q) {
            const long double f = a(q, p) / a(p, p);
            for (Eigen::Index c = p; c < d; ++c) a(q, c) -= f * a(p, c);
            sol(q) -= f * sol(p);
        }
    }
    for (Eigen::Index p = d - 1; p >= 0; --p) {
        long double s = sol(p);
        for (Eigen::Index c = p + 1; c < d; ++c) s -= a(p, c) * sol(c);
        sol(p) = s / a(p, p);
    }
    const long double quad = r.dot(sol);
    return -0.5L * static_cast<long double>(d) * std::log(2.0L * std::numbers::pi_v<long double>) - 0.5L * logdet -
           0.5L * quad;
}

inline std::vector<long double> oracle_log_joints(const MixtureParams& theta, const Vector& x) {
    std::vector<long double> out;
    long double z = 0.0L;
    for (Eigen::Index k = 0; k < theta.nu.size(); ++k) z += std::exp(static_cast<long double>(theta.nu[k]));
    for (std::size_t k = 0; k < theta.num_components(); ++k) {
        const auto g = GaussianParams::from_flat(theta.components[k], theta.dim);
        out.push_back(std::log(std::exp(static_cast<long double>(theta.nu[static_cast<Eigen::Index>(k)])) / z) +
                      oracle_gaussian_logpdf(g.mean, g.covariance(), x));
    }
    return out;
}

inline long double oracle_log_marginal(const MixtureParams& theta, const Vector& x) {
    long double s = 0.0L;
    for (auto v : oracle_log_joints(theta, x)) s += std::exp(v);
    return std::log(s);
}

inline std::vector<double> oracle_responsibilities(const MixtureParams& theta, const Vector& x, long double beta = 1.0L) {
    const auto lj = oracle_log_joints(theta, x);
    long double s = 0.0L;
    for (auto v : lj) s += std::exp(beta * v);
    std::vector<double> r;
    for (auto v : lj) r.push_back(static_cast<double>(std::exp(beta * v) / s));
    return r;
}

/// Central finite-difference gradient of f at v with step h.
template <class Fn>
Vector finite_difference(Fn&& f, const Vector& v, double h = 1e-5) {
    Vector g(v.size());
    for (Eigen::Index p = 0; p < v.size(); ++p) {
        Vector a = v, b = v;
        a[p] += h;
        b[p] -= h;
        g[p] = (f(a) - f(b)) / (2.0 * h);
    }
    return g;
}

/// Relative error on entries with magnitude above 1e-8, absolute otherwise.
inline void expect_gradient_close(const Vector& analytic, const Vector& numeric, double rel = 1e-5, double abs_tol = 1e-8) {
    ASSERT_EQ(analytic.size(), numeric.size());
    for (Eigen::Index p = 0; p < analytic.size(); ++p) {
        const double scale = std::max(std::abs(analytic[p]), std::abs(numeric[p]));
        if (scale > 1e-8) EXPECT_LE(std::abs(analytic[p] - numeric[p]) / scale, rel) << "entry " << p;
        else EXPECT_LE(std::abs(analytic[p] - numeric[p]), abs_tol) << "entry " << p;
    }
}

inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("mhsaem-test-" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

} // namespace testing_support
