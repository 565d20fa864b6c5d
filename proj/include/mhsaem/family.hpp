#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <limits>
#include <span>
#include <string_view>

#include "mhsaem/errors.hpp"

namespace mhsaem {

/// N x D data; rows are datapoints and stay contiguous in memory.
using DataMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using ConstVectorRef = Eigen::Ref<const Eigen::VectorXd>;
using VectorRef = Eigen::Ref<Eigen::VectorXd>;

inline Eigen::Map<const Eigen::VectorXd> row_of(const DataMatrix& X, std::size_t i) {
    return {X.data() + static_cast<Eigen::Index>(i) * X.cols(), X.cols()};
}

/// A family of component densities p_eta(x | z). Parameters are flat real
/// vectors in a family-defined layout; `prepare` turns them into whatever the
/// density evaluation needs (factorizations, exponentiated scales, ...).
template <class F>
concept ComponentFamily = requires(const typename F::Prepared& prep, const Vector& eta, ConstVectorRef x,
                                   VectorRef grad, std::size_t dim) {
    { F::id } -> std::convertible_to<std::string_view>;
    { F::num_params(dim) } -> std::same_as<std::size_t>;
    { F::prepare(eta, dim) } -> std::same_as<typename F::Prepared>;
    { F::log_density(prep, x) } -> std::same_as<double>;
    // Writes d log p / d eta into grad and returns log p.
    { F::grad_log_density(prep, x, grad) } -> std::same_as<double>;
};

/// Families that can evaluate many rows at once (used by the full-data paths).
template <class F>
concept BatchedFamily = ComponentFamily<F> && requires(const typename F::Prepared& prep, const DataMatrix& X,
                                                      std::span<double> out) {
    { F::log_density_all(prep, X, out) };
};

template <ComponentFamily F>
void log_density_all(const typename F::Prepared& prep, const DataMatrix& X, std::span<double> out) {
    if constexpr (BatchedFamily<F>) {
        F::log_density_all(prep, X, out);
    } else {
        for (Eigen::Index i = 0; i < X.rows(); ++i) out[i] = F::log_density(prep, row_of(X, i));
    }
}

inline double logsumexp(std::span<const double> v) {
    if (v.empty()) return -std::numeric_limits<double>::infinity();
    const double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

/// out_k = exp(beta * v_k) / sum_l exp(beta * v_l); returns log of the normalizer.
inline double softmax(std::span<const double> v, double beta, std::span<double> out) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : v) m = std::max(m, beta * x);
    double s = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k) {
        out[k] = std::exp(beta * v[k] - m);
        s += out[k];
    }
    for (double& o : out) o /= s;
    return m + std::log(s);
}

inline bool all_finite(const Eigen::Ref<const Eigen::MatrixXd>& m) { return m.allFinite(); }

inline void require_finite(ConstVectorRef x, const char* what) {
    if (!x.allFinite()) throw ValidationError(std::string(what) + " contains non-finite values");
}

} // namespace mhsaem
