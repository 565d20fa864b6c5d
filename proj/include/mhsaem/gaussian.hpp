#pragma once

// Multivariate normal components parameterized by a Cholesky factor of the
// covariance, together with the exponential-family sufficient statistics used
// by the closed-form M-steps.
//
// Flat parameter layout (length D + D(D+1)/2):
//   [ mean (D) | log diag(L) (D) | strictly-lower L, row-major (D(D-1)/2) ]
// Storing the diagonal as a logarithm keeps gradient steps inside the set of
// valid factors.

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mhsaem/errors.hpp"
#include "mhsaem/family.hpp"

namespace mhsaem {

struct GaussianParams {
    Vector mean;
    Eigen::MatrixXd chol_cov;  // lower triangular, positive diagonal

    std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }

    Eigen::MatrixXd covariance() const { return chol_cov * chol_cov.transpose(); }

    void validate() const {
        const auto d = mean.size();
        if (chol_cov.rows() != d || chol_cov.cols() != d)
            throw ValidationError("Gaussian: Cholesky factor has wrong shape");
        if (!mean.allFinite() || !chol_cov.allFinite())
            throw ValidationError("Gaussian: non-finite parameters");
        for (Eigen::Index a = 0; a < d; ++a)
            if (!(chol_cov(a, a) > 0.0)) throw ValidationError("Gaussian: Cholesky factor is not positive definite");
    }

    Vector to_flat() const {
        validate();
        const auto d = static_cast<Eigen::Index>(dim());
        Vector eta(d + d * (d + 1) / 2);
        eta.head(d) = mean;
        for (Eigen::Index a = 0; a < d; ++a) eta(d + a) = std::log(chol_cov(a, a));
        Eigen::Index p = 2 * d;
        for (Eigen::Index a = 1; a < d; ++a)
            for (Eigen::Index b = 0; b < a; ++b) eta(p++) = chol_cov(a, b);
        return eta;
    }

    static GaussianParams from_flat(const Vector& eta, std::size_t dim) {
        const auto d = static_cast<Eigen::Index>(dim);
        if (eta.size() != d + d * (d + 1) / 2) throw ValidationError("Gaussian: parameter vector has wrong length");
        if (!eta.allFinite()) throw ValidationError("Gaussian: non-finite parameters");
        GaussianParams g;
        g.mean = eta.head(d);
        g.chol_cov = Eigen::MatrixXd::Zero(d, d);
        for (Eigen::Index a = 0; a < d; ++a) g.chol_cov(a, a) = std::exp(eta(d + a));
        Eigen::Index p = 2 * d;
        for (Eigen::Index a = 1; a < d; ++a)
            for (Eigen::Index b = 0; b < a; ++b) g.chol_cov(a, b) = eta(p++);
        for (Eigen::Index a = 0; a < d; ++a)
            if (!(g.chol_cov(a, a) > 0.0) || !std::isfinite(g.chol_cov(a, a)))
                throw ValidationError("Gaussian: Cholesky factor is not positive definite");
        return g;
    }

    /// Factor an SPD covariance. Throws if it is not positive definite.
    static GaussianParams from_covariance(const Vector& mean, const Eigen::MatrixXd& cov) {
        Eigen::LLT<Eigen::MatrixXd> llt(cov);
        if (llt.info() != Eigen::Success) throw ValidationError("Gaussian: covariance is not positive definite");
        GaussianParams g{mean, llt.matrixL()};
        g.validate();
        return g;
    }
};

struct GaussianFamily {
    static constexpr std::string_view id = "gaussian";

    struct Prepared {
        std::size_t dim = 0;
        Vector mean;
        Eigen::MatrixXd chol;            // L
        std::vector<double> packed;      // rows of L up to and including the diagonal
        std::vector<double> inv_diag;
        double log_norm = 0.0;           // -D/2 log(2 pi) - sum log L_aa
    };

    static std::size_t num_params(std::size_t dim) { return dim + dim * (dim + 1) / 2; }

    static Prepared prepare(const Vector& eta, std::size_t dim) { return prepare(GaussianParams::from_flat(eta, dim)); }

    static Prepared prepare(const GaussianParams& g) {
        g.validate();
        Prepared p;
        p.dim = g.dim();
        p.mean = g.mean;
        p.chol = g.chol_cov.triangularView<Eigen::Lower>();
        const auto d = static_cast<Eigen::Index>(p.dim);
        p.packed.reserve(static_cast<std::size_t>(d * (d + 1) / 2));
        p.inv_diag.resize(p.dim);
        double log_det = 0.0;
        for (Eigen::Index a = 0; a < d; ++a) {
            for (Eigen::Index b = 0; b <= a; ++b) p.packed.push_back(p.chol(a, b));
            p.inv_diag[a] = 1.0 / p.chol(a, a);
            log_det += std::log(p.chol(a, a));
        }
        p.log_norm = -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi) - log_det;
        return p;
    }

    static double log_density(const Prepared& p, ConstVectorRef x) {
        double stack[32];
        std::vector<double> heap;
        double* v = stack;
        if (p.dim > 32) {
            heap.resize(p.dim);
            v = heap.data();
        }
        double quad = 0.0;
        const double* row = p.packed.data();
        for (std::size_t a = 0; a < p.dim; ++a) {
            double s = x[static_cast<Eigen::Index>(a)] - p.mean[static_cast<Eigen::Index>(a)];
            for (std::size_t b = 0; b < a; ++b) s -= row[b] * v[b];
            v[a] = s * p.inv_diag[a];
            quad += v[a] * v[a];
            row += a + 1;
        }
        return p.log_norm - 0.5 * quad;
    }

    /// Row-wise log density of every row of X via one triangular solve.
    static void log_density_all(const Prepared& p, const DataMatrix& X, std::span<double> out) {
        Eigen::MatrixXd diff = X.transpose();
        diff.colwise() -= p.mean;
        p.chol.triangularView<Eigen::Lower>().solveInPlace(diff);
        for (Eigen::Index i = 0; i < diff.cols(); ++i) out[i] = p.log_norm - 0.5 * diff.col(i).squaredNorm();
    }

    static double grad_log_density(const Prepared& p, ConstVectorRef x, VectorRef grad) {
        const auto d = static_cast<Eigen::Index>(p.dim);
        Vector v = x - p.mean;
        p.chol.triangularView<Eigen::Lower>().solveInPlace(v);        // v = L^-1 (x - mu)
        Vector w = v;
        p.chol.transpose().triangularView<Eigen::Upper>().solveInPlace(w);  // w = Sigma^-1 (x - mu)
        grad.head(d) = w;
        for (Eigen::Index a = 0; a < d; ++a) grad(d + a) = p.chol(a, a) * w(a) * v(a) - 1.0;
        Eigen::Index k = 2 * d;
        for (Eigen::Index a = 1; a < d; ++a)
            for (Eigen::Index b = 0; b < a; ++b) grad(k++) = w(a) * v(b);
        return p.log_norm - 0.5 * v.squaredNorm();
    }

    template <class Rng>
    static void sample(const Prepared& p, Rng& rng, VectorRef out) {
        Vector u(static_cast<Eigen::Index>(p.dim));
        for (auto& e : u) e = rng.normal();
        out = p.mean + p.chol.triangularView<Eigen::Lower>() * u;
    }

    /// Default initial component: given mean, identity covariance.
    static Vector initial(const Vector& mean) {
        const auto d = mean.size();
        return GaussianParams{mean, Eigen::MatrixXd::Identity(d, d)}.to_flat();
    }
};

/// Expected count, first and second moments attributed to one component.
struct SufficientStats {
    double s0 = 0.0;
    Vector s1;
    Eigen::MatrixXd s2;

    static SufficientStats zero(std::size_t dim) {
        const auto d = static_cast<Eigen::Index>(dim);
        return {0.0, Vector::Zero(d), Eigen::MatrixXd::Zero(d, d)};
    }

    void add(ConstVectorRef x, double weight) {
        s0 += weight;
        s1.noalias() += weight * x;
        s2.noalias() += (weight * x) * x.transpose();
    }

    void scale(double c) {
        s0 *= c;
        s1 *= c;
        s2 *= c;
    }

    /// this <- (1 - gamma) * this + gamma * target
    void blend(const SufficientStats& target, double gamma) {
        s0 = (1.0 - gamma) * s0 + gamma * target.s0;
        s1 = (1.0 - gamma) * s1 + gamma * target.s1;
        s2 = (1.0 - gamma) * s2 + gamma * target.s2;
    }
};

inline SufficientStats gaussian_stats_of(ConstVectorRef x) {
    return {1.0, x, x * x.transpose()};
}

/// Statistics of a component with weight `count` and the given parameters.
inline SufficientStats gaussian_stats_from_params(const GaussianParams& g, double count) {
    return {count, count * g.mean, count * (g.covariance() + g.mean * g.mean.transpose())};
}

struct GaussianEstimate {
    GaussianParams params;
    double weight_share;  // s0
};

/// Ridge added to the covariance diagonal before factorization.
inline double covariance_ridge(const Eigen::MatrixXd& cov) {
    const double d = static_cast<double>(cov.rows());
    return std::max(1e-6 * cov.trace() / d, 1e-9);
}

inline GaussianEstimate gaussian_params_from(const SufficientStats& st) {
    if (!(st.s0 > 0.0)) throw EmptyComponent("sufficient statistics have zero mass");
    const auto d = st.s1.size();
    Vector mean = st.s1 / st.s0;
    Eigen::MatrixXd cov = st.s2 / st.s0 - mean * mean.transpose();
    cov = 0.5 * (cov + cov.transpose());
    double ridge = covariance_ridge(cov);
    for (int attempt = 0; attempt < 8; ++attempt) {
        Eigen::MatrixXd reg = cov;
        reg.diagonal().array() += ridge;
        Eigen::LLT<Eigen::MatrixXd> llt(reg);
        if (llt.info() == Eigen::Success) {
            Eigen::MatrixXd l = llt.matrixL();
            bool ok = l.allFinite();
            for (Eigen::Index a = 0; ok && a < d; ++a) ok = l(a, a) > 0.0;
            if (ok) return {GaussianParams{mean, l}, st.s0};
        }
        ridge *= 10.0;
    }
    throw NumericalError("covariance from sufficient statistics is not positive definite");
}

} // namespace mhsaem
