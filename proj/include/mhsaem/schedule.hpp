#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "mhsaem/errors.hpp"

namespace mhsaem {

/// Step-size schedule gamma_t, t = 1, 2, ...
struct Schedule {
    enum class Kind { constant, piecewise, robbins_monro };

    Kind kind = Kind::piecewise;
    double value = 0.05;           // constant value, or plateau after warmup
    std::size_t warmup = 50;       // piecewise: gamma = warmup_value for t <= warmup
    double warmup_value = 1.0;
    double exponent = 0.6;         // robbins-monro: (1 + max(0, t - warmup))^-exponent

    static Schedule constant(double c) { return {Kind::constant, c, 0, 1.0, 0.6}; }
    static Schedule piecewise(std::size_t warmup, double warmup_value, double value) {
        return {Kind::piecewise, value, warmup, warmup_value, 0.6};
    }
    static Schedule robbins_monro(double exponent, std::size_t offset = 0) {
        return {Kind::robbins_monro, 0.0, offset, 1.0, exponent};
    }

    void validate() const {
        auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
        switch (kind) {
            case Kind::constant:
                if (!in01(value)) throw ValidationError("schedule: constant step size must lie in [0, 1]");
                break;
            case Kind::piecewise:
                if (!in01(value) || !in01(warmup_value)) throw ValidationError("schedule: step sizes must lie in [0, 1]");
                break;
            case Kind::robbins_monro:
                if (!(exponent > 0.5 && exponent <= 1.0))
                    throw ValidationError("schedule: Robbins-Monro exponent must lie in (0.5, 1]");
                break;
        }
    }

    double operator()(std::size_t t) const {
        if (t < 1) throw ValidationError("schedule: iterations are numbered from 1");
        switch (kind) {
            case Kind::constant: return value;
            case Kind::piecewise: return t <= warmup ? warmup_value : value;
            case Kind::robbins_monro: {
                const double over = t > warmup ? static_cast<double>(t - warmup) : 0.0;
                return std::pow(1.0 + over, -exponent);
            }
        }
        return value;
    }
};

inline std::string to_string(Schedule::Kind k) {
    switch (k) {
        case Schedule::Kind::constant: return "constant";
        case Schedule::Kind::piecewise: return "piecewise";
        case Schedule::Kind::robbins_monro: return "robbins-monro";
    }
    return "?";
}

inline Schedule::Kind schedule_kind_from_string(const std::string& s) {
    if (s == "constant") return Schedule::Kind::constant;
    if (s == "piecewise") return Schedule::Kind::piecewise;
    if (s == "robbins-monro") return Schedule::Kind::robbins_monro;
    throw ValidationError("unknown schedule kind '" + s + "'");
}

/// Inverse temperature beta_t: beta_min at t = 1, beta_max at tau = ceil(tau_fraction T),
/// exactly 1 at t = T, linear in between. Disabled schedules return 1.
struct AnnealSchedule {
    bool enabled = true;
    double beta_min = 0.1;
    double beta_max = 1.2;
    double tau_fraction = 2.0 / 3.0;
    std::size_t T = 0;

    static AnnealSchedule none() { return {false, 1.0, 1.0, 0.5, 0}; }

    std::size_t tau() const {
        const double raw = tau_fraction * static_cast<double>(T);
        auto c = static_cast<std::size_t>(std::ceil(raw));
        // ceil(2/3 * 3000) must be 2000, not 2001 from rounding in 2/3.
        if (c > 0 && std::abs(raw - static_cast<double>(c - 1)) < 1e-9 * std::max(1.0, raw)) --c;
        return c;
    }

    void validate() const {
        if (!enabled) return;
        if (!(beta_min > 0.0) || !(beta_max > 0.0) || !std::isfinite(beta_min) || !std::isfinite(beta_max))
            throw ValidationError("anneal: temperatures must be positive");
        if (!(tau_fraction > 0.0 && tau_fraction < 1.0)) throw ValidationError("anneal: tau_fraction must lie in (0, 1)");
        if (T < 3) throw ValidationError("anneal: needs at least 3 iterations");
        const auto knot = tau();
        if (knot <= 1 || knot >= T) throw ValidationError("anneal: knot must fall strictly inside (1, T)");
    }

    double operator()(std::size_t t) const {
        if (!enabled) return 1.0;
        if (t < 1 || t > T) throw ValidationError("anneal: iteration out of range");
        const auto knot = tau();
        if (t == 1) return beta_min;
        if (t == knot) return beta_max;
        if (t == T) return 1.0;
        if (t < knot) {
            const double f = static_cast<double>(t - 1) / static_cast<double>(knot - 1);
            return beta_min + f * (beta_max - beta_min);
        }
        const double f = static_cast<double>(t - knot) / static_cast<double>(T - knot);
        return beta_max + f * (1.0 - beta_max);
    }
};

} // namespace mhsaem
