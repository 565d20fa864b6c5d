#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mhsaem/errors.hpp"
#include "mhsaem/family.hpp"
#include "mhsaem/flow.hpp"
#include "mhsaem/gaussian.hpp"

namespace mhsaem {

/// Mixture parameters: unconstrained log-weights nu (weights = softmax(nu)) and
/// one flat parameter block per component. Component indices are 0-based in
/// the C++ API and 1-based in every serialized artifact.
struct MixtureParams {
    std::string family_id;
    std::size_t dim = 0;
    Vector nu;
    std::vector<Vector> components;

    std::size_t num_components() const { return components.size(); }

    Vector weights() const {
        Vector w(nu.size());
        softmax(std::span<const double>(nu.data(), nu.size()), 1.0, std::span<double>(w.data(), w.size()));
        return w;
    }

    Vector log_weights() const {
        const double lse = logsumexp(std::span<const double>(nu.data(), nu.size()));
        return nu.array() - lse;
    }

    void validate() const {
        if (components.empty()) throw ValidationError("mixture must have at least one component");
        if (static_cast<std::size_t>(nu.size()) != components.size())
            throw ValidationError("mixture: nu and components differ in length");
        if (!nu.allFinite()) throw ValidationError("mixture: non-finite log-weights");
        for (const auto& c : components)
            if (!c.allFinite()) throw ValidationError("mixture: non-finite component parameters");
    }

    bool operator==(const MixtureParams&) const = default;
};

/// Immutable evaluation view of a MixtureParams snapshot for one family.
template <ComponentFamily F>
class Mixture {
public:
    using Family = F;
    using Prepared = typename F::Prepared;

    explicit Mixture(const MixtureParams& theta) : dim_(theta.dim) {
        theta.validate();
        if (theta.family_id != F::id)
            throw ValidationError("mixture family '" + theta.family_id + "' does not match '" + std::string(F::id) + "'");
        const std::size_t expected = F::num_params(theta.dim);
        log_weights_ = theta.log_weights();
        prepared_.reserve(theta.components.size());
        for (const auto& eta : theta.components) {
            if (static_cast<std::size_t>(eta.size()) != expected)
                throw ValidationError("mixture: component parameter block has wrong length");
            prepared_.push_back(F::prepare(eta, theta.dim));
        }
    }

    std::size_t num_components() const { return prepared_.size(); }
    std::size_t dim() const { return dim_; }
    double log_weight(std::size_t k) const { return log_weights_[static_cast<Eigen::Index>(k)]; }
    const Vector& log_weights() const { return log_weights_; }
    const Prepared& component(std::size_t k) const { return prepared_[k]; }

    /// log p(x | z = k) + log pi_k
    double log_joint(ConstVectorRef x, std::size_t k) const {
        if (k >= prepared_.size()) throw IndexError("component index out of range");
        return log_joint_unchecked(x, k);
    }

    double log_joint_unchecked(ConstVectorRef x, std::size_t k) const {
        return log_weights_[static_cast<Eigen::Index>(k)] + F::log_density(prepared_[k], x);
    }

    void log_joints(ConstVectorRef x, std::span<double> out) const {
        for (std::size_t k = 0; k < prepared_.size(); ++k) out[k] = log_joint_unchecked(x, k);
    }

    double log_marginal(ConstVectorRef x) const {
        std::vector<double> lj(prepared_.size());
        log_joints(x, lj);
        return logsumexp(lj);
    }

    /// Posterior p(z | x) tempered by beta: softmax of beta * log_joint.
    Vector responsibilities(ConstVectorRef x, double beta = 1.0) const {
        std::vector<double> lj(prepared_.size());
        log_joints(x, lj);
        Vector r(static_cast<Eigen::Index>(lj.size()));
        softmax(lj, beta, std::span<double>(r.data(), r.size()));
        return r;
    }

    /// Per-row log marginals, streaming over components.
    Vector row_log_marginals(const DataMatrix& X) const {
        const auto n = X.rows();
        Vector m = Vector::Constant(n, -std::numeric_limits<double>::infinity());
        Vector s = Vector::Zero(n);
        std::vector<double> lp(static_cast<std::size_t>(n));
        for (std::size_t k = 0; k < prepared_.size(); ++k) {
            log_density_all<F>(prepared_[k], X, lp);
            const double lw = log_weights_[static_cast<Eigen::Index>(k)];
            for (Eigen::Index i = 0; i < n; ++i) {
                const double v = lw + lp[static_cast<std::size_t>(i)];
                if (v > m[i]) {
                    s[i] = s[i] * std::exp(m[i] - v) + 1.0;
                    m[i] = v;
                } else {
                    s[i] += std::exp(v - m[i]);
                }
            }
        }
        return m.array() + s.array().log();
    }

    double dataset_loglik(const DataMatrix& X) const {
        if (X.rows() == 0) throw ValidationError("dataset is empty");
        return row_log_marginals(X).sum();
    }

    /// N x K matrix of log joints for the given rows of X.
    Eigen::MatrixXd log_joint_matrix(const DataMatrix& X) const {
        const auto n = X.rows();
        Eigen::MatrixXd lj(n, static_cast<Eigen::Index>(prepared_.size()));
        std::vector<double> lp(static_cast<std::size_t>(n));
        for (std::size_t k = 0; k < prepared_.size(); ++k) {
            log_density_all<F>(prepared_[k], X, lp);
            const double lw = log_weights_[static_cast<Eigen::Index>(k)];
            for (Eigen::Index i = 0; i < n; ++i) lj(i, static_cast<Eigen::Index>(k)) = lw + lp[static_cast<std::size_t>(i)];
        }
        return lj;
    }

private:
    std::size_t dim_;
    Vector log_weights_;
    std::vector<Prepared> prepared_;
};

// Checked free-function forms of the mixture primitives.

template <ComponentFamily F>
double log_joint(const MixtureParams& theta, ConstVectorRef x, std::size_t k) {
    require_finite(x, "datapoint");
    return Mixture<F>(theta).log_joint(x, k);
}

template <ComponentFamily F>
double log_marginal(const MixtureParams& theta, ConstVectorRef x) {
    require_finite(x, "datapoint");
    return Mixture<F>(theta).log_marginal(x);
}

template <ComponentFamily F>
Vector responsibilities(const MixtureParams& theta, ConstVectorRef x, double beta = 1.0) {
    require_finite(x, "datapoint");
    return Mixture<F>(theta).responsibilities(x, beta);
}

template <ComponentFamily F>
double dataset_loglik(const MixtureParams& theta, const DataMatrix& X) {
    if (X.rows() == 0) throw ValidationError("dataset is empty");
    if (!X.allFinite()) throw ValidationError("dataset contains non-finite values");
    return Mixture<F>(theta).dataset_loglik(X);
}

template <ComponentFamily F>
double family_log_density(const Vector& eta, ConstVectorRef x) {
    require_finite(x, "datapoint");
    return F::log_density(F::prepare(eta, static_cast<std::size_t>(x.size())), x);
}

template <ComponentFamily F>
Vector family_grad_log_density(const Vector& eta, ConstVectorRef x) {
    require_finite(x, "datapoint");
    Vector g(eta.size());
    F::grad_log_density(F::prepare(eta, static_cast<std::size_t>(x.size())), x, g);
    return g;
}

/// Call fn with a default-constructed family tag matching the runtime id.
template <class Fn>
decltype(auto) with_family(const std::string& family_id, Fn&& fn) {
    if (family_id == GaussianFamily::id) return fn(GaussianFamily{});
    if (family_id == ElementwiseFlowFamily::id) return fn(ElementwiseFlowFamily{});
    throw ValidationError("unknown component family '" + family_id + "'");
}

} // namespace mhsaem
