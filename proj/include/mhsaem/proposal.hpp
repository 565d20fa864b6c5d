#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mhsaem/errors.hpp"

namespace mhsaem {

enum class ProposalKind { uniform, optimal, tabular, tabular_forgetting };

inline std::string to_string(ProposalKind k) {
    switch (k) {
        case ProposalKind::uniform: return "uniform";
        case ProposalKind::optimal: return "optimal";
        case ProposalKind::tabular: return "tabular";
        case ProposalKind::tabular_forgetting: return "tabular-forgetting";
    }
    return "?";
}

inline ProposalKind proposal_kind_from_string(const std::string& s) {
    if (s == "uniform" || s == "U") return ProposalKind::uniform;
    if (s == "optimal" || s == "O") return ProposalKind::optimal;
    if (s == "tabular" || s == "T") return ProposalKind::tabular;
    if (s == "tabular-forgetting" || s == "TF") return ProposalKind::tabular_forgetting;
    throw ValidationError("unknown proposal '" + s + "'");
}

/// Proposal distribution q(z | zbar) over component indices for each datapoint.
///
/// The tabular kinds are independence proposals q_i(z) = alpha_i(z) learned
/// per datapoint from its own chain. Each row n_i starts at 1/K and is updated
/// with every sample the chain emits for datapoint i:
///   tabular:             n_{i,z} <- n_{i,z} + 1
///   tabular-forgetting:  n_i <- (1 - e_z gamma) . n_i + gamma e_z
/// alpha_i is the row after flooring each entry at floor/K, normalized.
class ProposalModel {
public:
    static constexpr double default_floor = 1e-6;

    ProposalModel() = default;

    ProposalModel(ProposalKind kind, std::size_t num_points, std::size_t num_components, double floor = default_floor)
        : kind_(kind), n_(num_points), k_(num_components), floor_(floor) {
        if (num_components == 0) throw ValidationError("proposal needs at least one component");
        if (!(floor >= 0.0)) throw ValidationError("proposal floor must be nonnegative");
        if (is_tabular()) table_.assign(n_ * k_, 1.0 / static_cast<double>(k_));
    }

    ProposalKind kind() const { return kind_; }
    std::size_t num_points() const { return n_; }
    std::size_t num_components() const { return k_; }
    double floor() const { return floor_; }
    bool is_tabular() const { return kind_ == ProposalKind::tabular || kind_ == ProposalKind::tabular_forgetting; }

    std::span<const double> row(std::size_t i) const {
        check_row(i);
        return {table_.data() + i * k_, k_};
    }
    std::span<double> row(std::size_t i) {
        check_row(i);
        return {table_.data() + i * k_, k_};
    }
    const std::vector<double>& table() const { return table_; }
    void set_table(std::vector<double> t) {
        if (t.size() != table_.size()) throw ValidationError("proposal table has wrong size");
        for (double v : t)
            if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("proposal table entries must be finite and nonnegative");
        table_ = std::move(t);
    }

    /// alpha_i: floored and normalized row i.
    void row_probabilities(std::size_t i, std::span<double> out) const {
        const auto r = row(i);
        const double f = floor_ / static_cast<double>(k_);
        double s = 0.0;
        for (std::size_t k = 0; k < k_; ++k) {
            out[k] = std::max(r[k], f);
            s += out[k];
        }
        for (auto& o : out) o /= s;
    }

    /// Record one chain sample z_new for datapoint i.
    void tf_update(std::size_t i, std::size_t z_new, double gamma) {
        if (!(gamma >= 0.0 && gamma <= 1.0)) throw ValidationError("step size must lie in [0, 1]");
        if (z_new >= k_) throw IndexError("component index out of range");
        if (!is_tabular()) return;
        auto r = row(i);
        if (kind_ == ProposalKind::tabular_forgetting)
            r[z_new] = (1.0 - gamma) * r[z_new] + gamma;
        else
            r[z_new] += 1.0;
    }

private:
    void check_row(std::size_t i) const {
        if (!is_tabular()) throw ValidationError("proposal has no table");
        if (i >= n_) throw IndexError("datapoint index out of range");
    }

    ProposalKind kind_ = ProposalKind::uniform;
    std::size_t n_ = 0;
    std::size_t k_ = 1;
    double floor_ = default_floor;
    std::vector<double> table_;  // row-major N x K
};

} // namespace mhsaem
