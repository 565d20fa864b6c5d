#pragma once

// Element-wise sinh-arcsinh flow over a standard normal base:
//
//   x_d = mu_d + e^{s_d} * sinh(e^{b_d} * asinh(u_d) + a_d),   u ~ N(0, I)
//
// The inverse is closed form, so the density follows from the change of
// variables. Parameters mu = s = a = b = 0 give the standard normal exactly.
//
// Flat parameter layout (length 4D): [ mu | log_scale s | skew a | log_tail b ].

#include <Eigen/Core>

#include <cmath>
#include <numbers>
#include <string_view>

#include "mhsaem/errors.hpp"
#include "mhsaem/family.hpp"

namespace mhsaem {

struct ElementwiseFlowParams {
    Vector mu;
    Vector log_scale;
    Vector skew;
    Vector log_tail;

    std::size_t dim() const { return static_cast<std::size_t>(mu.size()); }

    static ElementwiseFlowParams identity(std::size_t dim) {
        const auto d = static_cast<Eigen::Index>(dim);
        return {Vector::Zero(d), Vector::Zero(d), Vector::Zero(d), Vector::Zero(d)};
    }

    Vector to_flat() const {
        const auto d = mu.size();
        if (log_scale.size() != d || skew.size() != d || log_tail.size() != d)
            throw ValidationError("flow: parameter blocks have mismatched lengths");
        Vector eta(4 * d);
        eta << mu, log_scale, skew, log_tail;
        return eta;
    }

    static ElementwiseFlowParams from_flat(const Vector& eta, std::size_t dim) {
        const auto d = static_cast<Eigen::Index>(dim);
        if (eta.size() != 4 * d) throw ValidationError("flow: parameter vector has wrong length");
        if (!eta.allFinite()) throw ValidationError("flow: non-finite parameters");
        return {eta.segment(0, d), eta.segment(d, d), eta.segment(2 * d, d), eta.segment(3 * d, d)};
    }
};

namespace detail {
inline double log_cosh(double h) {
    const double a = std::abs(h);
    return a + std::log1p(std::exp(-2.0 * a)) - std::numbers::ln2;
}
} // namespace detail

struct ElementwiseFlowFamily {
    static constexpr std::string_view id = "flow";

    struct Prepared {
        std::size_t dim = 0;
        Vector mu, log_scale, inv_scale, skew, log_tail, inv_tail;
    };

    static std::size_t num_params(std::size_t dim) { return 4 * dim; }

    static Prepared prepare(const Vector& eta, std::size_t dim) {
        auto p = ElementwiseFlowParams::from_flat(eta, dim);
        Prepared out;
        out.dim = dim;
        out.mu = p.mu;
        out.log_scale = p.log_scale;
        out.inv_scale = (-p.log_scale.array()).exp();
        out.skew = p.skew;
        out.log_tail = p.log_tail;
        out.inv_tail = (-p.log_tail.array()).exp();
        return out;
    }

    static double log_density(const Prepared& p, ConstVectorRef x) {
        constexpr double half_log_2pi = 0.91893853320467274178;
        double acc = 0.0;
        for (Eigen::Index d = 0; d < static_cast<Eigen::Index>(p.dim); ++d) {
            const double y = (x[d] - p.mu[d]) * p.inv_scale[d];
            const double h = (std::asinh(y) - p.skew[d]) * p.inv_tail[d];
            const double u = std::sinh(h);
            acc += -half_log_2pi - 0.5 * u * u + detail::log_cosh(h) - p.log_tail[d] - 0.5 * std::log1p(y * y) -
                   p.log_scale[d];
        }
        return acc;
    }

    static double grad_log_density(const Prepared& p, ConstVectorRef x, VectorRef grad) {
        constexpr double half_log_2pi = 0.91893853320467274178;
        const auto dim = static_cast<Eigen::Index>(p.dim);
        double acc = 0.0;
        for (Eigen::Index d = 0; d < dim; ++d) {
            const double y = (x[d] - p.mu[d]) * p.inv_scale[d];
            const double r = std::sqrt(1.0 + y * y);
            const double h = (std::asinh(y) - p.skew[d]) * p.inv_tail[d];
            const double u = std::sinh(h);
            acc += -half_log_2pi - 0.5 * u * u + detail::log_cosh(h) - p.log_tail[d] - 0.5 * std::log1p(y * y) -
                   p.log_scale[d];

            const double dg_dh = -u * std::cosh(h) + std::tanh(h);
            const double dg_dy = dg_dh * p.inv_tail[d] / r - y / (r * r);
            grad[d] = -dg_dy * p.inv_scale[d];           // mu
            grad[dim + d] = -dg_dy * y - 1.0;             // log_scale
            grad[2 * dim + d] = -dg_dh * p.inv_tail[d];   // skew
            grad[3 * dim + d] = -dg_dh * h - 1.0;         // log_tail
        }
        return acc;
    }

    template <class Rng>
    static void sample(const Prepared& p, Rng& rng, VectorRef out) {
        for (Eigen::Index d = 0; d < static_cast<Eigen::Index>(p.dim); ++d) {
            const double u = rng.normal();
            out[d] = p.mu[d] + std::exp(p.log_scale[d]) * std::sinh(std::exp(p.log_tail[d]) * std::asinh(u) + p.skew[d]);
        }
    }

    static Vector initial(const Vector& mean) {
        auto p = ElementwiseFlowParams::identity(static_cast<std::size_t>(mean.size()));
        p.mu = mean;
        return p.to_flat();
    }
};

} // namespace mhsaem
