#pragma once

// Generic gradient M-step. The objective for a minibatch I with weights
// w_{ik} (sample frequencies or responsibilities) is
//
//   Q(theta) = (1/|I|) sum_i sum_k w_ik [ log p_{eta_k}(x_i) + log softmax(nu)_k ]
//
// so dQ/d eta_k = (1/|I|) sum_i w_ik grad log p_k(x_i) and
//    dQ/d nu_k  = (1/|I|) sum_i w_ik - pi_k.
// The sampled step touches only components that were sampled.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mhsaem/errors.hpp"
#include "mhsaem/family.hpp"
#include "mhsaem/mixture.hpp"

namespace mhsaem {

struct MixtureGradient {
    Vector nu;
    std::vector<Vector> eta;
    std::vector<char> touched;

    static MixtureGradient zero(const MixtureParams& theta) {
        MixtureGradient g;
        g.nu = Vector::Zero(theta.nu.size());
        for (const auto& c : theta.components) g.eta.push_back(Vector::Zero(c.size()));
        g.touched.assign(theta.num_components(), 0);
        return g;
    }

    Vector flat() const {
        Eigen::Index n = nu.size();
        for (const auto& e : eta) n += e.size();
        Vector out(n);
        out.head(nu.size()) = nu;
        Eigen::Index p = nu.size();
        for (const auto& e : eta) {
            out.segment(p, e.size()) = e;
            p += e.size();
        }
        return out;
    }
};

/// Gradient of Q for an explicit |I| x K weight matrix W. Rows of W are the
/// weights of batch[b]; `scale` multiplies the whole objective.
template <ComponentFamily F>
MixtureGradient weighted_gradient(const MixtureParams& theta, const Mixture<F>& mix, const DataMatrix& X,
                                  std::span<const std::size_t> batch, const Eigen::MatrixXd& W, double scale) {
    auto g = MixtureGradient::zero(theta);
    const Vector pi = theta.weights();
    Vector buf;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto x = row_of(X, batch[b]);
        double row_total = 0.0;
        for (std::size_t k = 0; k < g.eta.size(); ++k) {
            const double w = W(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(k));
            row_total += w;
            if (w == 0.0) continue;
            buf.resize(g.eta[k].size());
            F::grad_log_density(mix.component(k), x, buf);
            g.eta[k] += (scale * w) * buf;
            g.nu[static_cast<Eigen::Index>(k)] += scale * w;
            g.touched[k] = 1;
        }
        g.nu -= (scale * row_total) * pi;
    }
    return g;
}

/// |I| x K matrix of sample frequencies: count of z_{ij} = k divided by M.
inline Eigen::MatrixXd sample_frequencies(std::span<const std::uint32_t> samples, std::size_t batch_size, std::size_t M,
                                          std::size_t K) {
    Eigen::MatrixXd W = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(batch_size), static_cast<Eigen::Index>(K));
    const double inc = 1.0 / static_cast<double>(M);
    for (std::size_t b = 0; b < batch_size; ++b)
        for (std::size_t j = 0; j < M; ++j) {
            const auto z = samples[b * M + j];
            if (z >= K) throw IndexError("sampled component out of range");
            W(static_cast<Eigen::Index>(b), z) += inc;
        }
    return W;
}

/// Squared distance between the sampled gradient and the exact gradient
/// under tempered responsibilities R, both summed over the minibatch.
template <ComponentFamily F>
double gradient_bias(const MixtureParams& theta, const Mixture<F>& mix, const DataMatrix& X,
                     std::span<const std::size_t> batch, const Eigen::MatrixXd& W_sampled, const Eigen::MatrixXd& R) {
    if (W_sampled.rows() != R.rows() || W_sampled.cols() != R.cols())
        throw ValidationError("bias: weight matrices differ in shape");
    // The gradient is linear in the weights, so the difference of the two
    // estimators is the gradient of the weight difference. The -pi terms cancel
    // because every row of both matrices sums to one.
    const Eigen::MatrixXd D = W_sampled - R;
    auto g = MixtureGradient::zero(theta);
    Vector buf;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto x = row_of(X, batch[b]);
        for (std::size_t k = 0; k < g.eta.size(); ++k) {
            const double w = D(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(k));
            if (w == 0.0) continue;
            buf.resize(g.eta[k].size());
            F::grad_log_density(mix.component(k), x, buf);
            g.eta[k] += w * buf;
            g.nu[static_cast<Eigen::Index>(k)] += w;
        }
    }
    double s = g.nu.squaredNorm();
    for (const auto& e : g.eta) s += e.squaredNorm();
    return s;
}

enum class OptimizerKind { plain, adam };

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "plain"; }
inline OptimizerKind optimizer_kind_from_string(const std::string& s) {
    if (s == "plain" || s == "sgd") return OptimizerKind::plain;
    if (s == "adam") return OptimizerKind::adam;
    throw ValidationError("unknown optimizer '" + s + "'");
}

/// Ascent optimizer over the per-component blocks (nu_k, eta_k). Adam keeps
/// one bias-correction counter per block, advanced only when the block moves.
struct Optimizer {
    OptimizerKind kind = OptimizerKind::plain;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<Vector> m, v;              // per block: [nu_k, eta_k...]
    std::vector<std::uint64_t> steps;

    void reset(const MixtureParams& theta) {
        m.clear();
        v.clear();
        steps.assign(theta.num_components(), 0);
        if (kind != OptimizerKind::adam) return;
        for (const auto& c : theta.components) {
            m.push_back(Vector::Zero(c.size() + 1));
            v.push_back(Vector::Zero(c.size() + 1));
        }
    }

    bool initialized_for(const MixtureParams& theta) const {
        if (steps.size() != theta.num_components()) return false;
        if (kind == OptimizerKind::adam) return m.size() == theta.num_components();
        return true;
    }

    /// theta <- theta + lr * direction(g) for touched blocks only.
    void step(MixtureParams& theta, const MixtureGradient& g, double lr, std::size_t iteration) {
        if (!initialized_for(theta)) reset(theta);
        for (std::size_t k = 0; k < theta.num_components(); ++k) {
            if (!g.touched[k]) continue;
            const auto kk = static_cast<Eigen::Index>(k);
            if (!std::isfinite(g.nu[kk]) || !g.eta[k].allFinite())
                throw NumericalError("non-finite gradient for component " + std::to_string(k + 1), iteration);
            ++steps[k];
            if (kind == OptimizerKind::plain) {
                theta.nu[kk] += lr * g.nu[kk];
                theta.components[k] += lr * g.eta[k];
            } else {
                const auto n = g.eta[k].size();
                Vector grad(n + 1);
                grad << g.nu[kk], g.eta[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * grad;
                v[k] = beta2 * v[k] + (1.0 - beta2) * grad.cwiseProduct(grad);
                const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps[k]));
                const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps[k]));
                Vector dir = (m[k] / c1).array() / ((v[k] / c2).array().sqrt() + eps);
                theta.nu[kk] += lr * dir[0];
                theta.components[k] += lr * dir.tail(n);
            }
            if (!std::isfinite(theta.nu[kk]) || !theta.components[k].allFinite())
                throw NumericalError("non-finite parameters for component " + std::to_string(k + 1), iteration);
        }
    }
};

} // namespace mhsaem
