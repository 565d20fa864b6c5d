#pragma once

// Deterministic E-step variants: exact (tempered) responsibilities, the
// sparse top-M selection and the truncated distance-based candidate sets.

#include <Eigen/Core>

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include "mhsaem/errors.hpp"
#include "mhsaem/family.hpp"
#include "mhsaem/mixture.hpp"

namespace mhsaem {

inline DataMatrix gather_rows(const DataMatrix& X, std::span<const std::size_t> rows) {
    DataMatrix out(static_cast<Eigen::Index>(rows.size()), X.cols());
    for (std::size_t b = 0; b < rows.size(); ++b) out.row(static_cast<Eigen::Index>(b)) = X.row(static_cast<Eigen::Index>(rows[b]));
    return out;
}

/// Rows are softmax(beta * log_joint) over components.
template <ComponentFamily F>
Eigen::MatrixXd exact_e_step(const Mixture<F>& mix, const DataMatrix& X, double beta = 1.0) {
    if (!(beta > 0.0)) throw ValidationError("inverse temperature must be positive");
    Eigen::MatrixXd lj = mix.log_joint_matrix(X);
    const auto k = lj.cols();
    std::vector<double> row(static_cast<std::size_t>(k)), out(static_cast<std::size_t>(k));
    for (Eigen::Index i = 0; i < lj.rows(); ++i) {
        for (Eigen::Index c = 0; c < k; ++c) row[c] = lj(i, c);
        softmax(row, beta, out);
        for (Eigen::Index c = 0; c < k; ++c) lj(i, c) = out[c];
    }
    return lj;
}

struct Selection {
    std::vector<std::size_t> indices;
    std::vector<double> weights;  // sums to 1
};

/// The M largest entries of a responsibility row, ties to the lower index.
inline Selection ssaem_select(std::span<const double> row, std::size_t M) {
    const auto k = row.size();
    if (M < 1 || M > k) throw ValidationError("top-M selection needs 1 <= M <= K");
    std::vector<std::size_t> idx(k);
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(M), idx.end(),
                      [&](std::size_t a, std::size_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
    idx.resize(M);
    std::sort(idx.begin(), idx.end());
    Selection s;
    s.indices = idx;
    double total = 0.0;
    for (auto i : idx) total += row[i];
    for (auto i : idx) s.weights.push_back(total > 0.0 ? row[i] / total : 1.0 / static_cast<double>(M));
    return s;
}

/// Component-to-component nearest-mean neighbour lists, rebuilt once per
/// parameter snapshot (K^2 distance computations).
class MeanNeighbors {
public:
    explicit MeanNeighbors(std::vector<Vector> means) : means_(std::move(means)) {
        const auto k = means_.size();
        order_.resize(k);
        std::vector<double> d(k);
        for (std::size_t a = 0; a < k; ++a) {
            for (std::size_t b = 0; b < k; ++b) d[b] = (means_[a] - means_[b]).squaredNorm();
            auto& o = order_[a];
            for (std::size_t b = 0; b < k; ++b)
                if (b != a) o.push_back(b);
            std::stable_sort(o.begin(), o.end(), [&](std::size_t u, std::size_t v) { return d[u] < d[v]; });
        }
        distance_ops_ = k * k;
    }

    std::size_t num_components() const { return means_.size(); }
    const std::vector<Vector>& means() const { return means_; }
    std::size_t distance_ops() const { return distance_ops_; }

    /// The Mbar means nearest to x, plus the M nearest neighbours of the closest one.
    std::vector<std::size_t> candidates(ConstVectorRef x, std::size_t M, std::size_t Mbar) const {
        const auto k = means_.size();
        if (M < 1 || Mbar < 1) throw ValidationError("candidate set sizes must be positive");
        std::vector<std::size_t> idx(k);
        std::iota(idx.begin(), idx.end(), 0);
        std::vector<double> d(k);
        for (std::size_t c = 0; c < k; ++c) d[c] = (x - means_[c]).squaredNorm();
        const auto take = std::min(Mbar, k);
        std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end(),
                          [&](std::size_t a, std::size_t b) { return d[a] < d[b] || (d[a] == d[b] && a < b); });
        std::vector<char> in(k, 0);
        for (std::size_t c = 0; c < take; ++c) in[idx[c]] = 1;
        const auto& nb = order_[idx[0]];
        for (std::size_t c = 0; c < std::min(M, nb.size()); ++c) in[nb[c]] = 1;
        std::vector<std::size_t> out;
        for (std::size_t c = 0; c < k; ++c)
            if (in[c]) out.push_back(c);
        return out;
    }

private:
    std::vector<Vector> means_;
    std::vector<std::vector<std::size_t>> order_;
    std::size_t distance_ops_ = 0;
};

inline MeanNeighbors mean_neighbors(const MixtureParams& theta) {
    if (theta.family_id != GaussianFamily::id)
        throw UnsupportedAlgorithm("distance-based truncation needs Gaussian components");
    std::vector<Vector> means;
    for (const auto& eta : theta.components) means.push_back(eta.head(static_cast<Eigen::Index>(theta.dim)));
    return MeanNeighbors(std::move(means));
}

/// Candidate set for x (0-based, sorted).
inline std::vector<std::size_t> tsaem_select(const MixtureParams& theta, ConstVectorRef x, std::size_t M, std::size_t Mbar) {
    require_finite(x, "datapoint");
    return mean_neighbors(theta).candidates(x, M, Mbar);
}

/// Responsibilities renormalized over a candidate set.
template <ComponentFamily F>
Selection restricted_responsibilities(const Mixture<F>& mix, ConstVectorRef x, std::vector<std::size_t> set,
                                      double beta = 1.0) {
    std::vector<double> lj(set.size()), w(set.size());
    for (std::size_t c = 0; c < set.size(); ++c) lj[c] = mix.log_joint_unchecked(x, set[c]);
    softmax(lj, beta, w);
    return {std::move(set), std::move(w)};
}

} // namespace mhsaem
