#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mhsaem/errors.hpp"
#include "mhsaem/io.hpp"

namespace mhsaem {

struct IterationRecord {
    std::size_t t = 0;
    std::optional<double> wall_time_s;
    std::optional<double> loglik;
    std::optional<double> aar;
    std::optional<double> bias;
    std::uint64_t eval_count = 0;
    double beta = 1.0;
    double gamma = 1.0;

    bool operator==(const IterationRecord&) const = default;
};

inline double average_acceptance(std::span<const double> alphas) {
    if (alphas.empty()) throw ValidationError("no acceptance ratios to average");
    double s = 0.0;
    for (double a : alphas) s += a;
    return s / static_cast<double>(alphas.size());
}

struct T95Result {
    std::size_t t95 = 1;                  // 1-based position in the trace
    std::optional<double> time95_s;
    std::optional<double> ae;
    double value_at_t95 = 0.0;
};

/// First index whose value reaches 95% of the min-max range of the trace.
inline T95Result t95_and_ae(std::span<const double> trace, std::optional<double> loglik_true = std::nullopt,
                            std::span<const double> times = {}) {
    if (trace.empty()) throw ValidationError("t95 needs a nonempty trace");
    const auto [lo, hi] = std::minmax_element(trace.begin(), trace.end());
    T95Result r;
    if (*hi == *lo) {
        r.t95 = 1;
    } else {
        const double level = *lo + 0.95 * (*hi - *lo);
        for (std::size_t t = 0; t < trace.size(); ++t)
            if (trace[t] >= level) {
                r.t95 = t + 1;
                break;
            }
    }
    r.value_at_t95 = trace[r.t95 - 1];
    if (!times.empty()) {
        if (times.size() != trace.size()) throw ValidationError("t95: times and trace differ in length");
        r.time95_s = times[r.t95 - 1];
    }
    if (loglik_true) r.ae = std::abs(r.value_at_t95 - *loglik_true);
    return r;
}

struct RunSummary {
    std::optional<std::size_t> t95;       // iteration number
    std::optional<double> time95_s;
    std::optional<double> ae;
    std::optional<double> final_loglik;
    std::uint64_t total_evals = 0;
    std::string aar_scope = "minibatch";
    std::string status = "ok";
};

/// Summary over the iterations that carry a log-likelihood.
inline RunSummary summarize(const std::vector<IterationRecord>& records, std::optional<double> loglik_true = std::nullopt) {
    RunSummary s;
    std::vector<double> trace, times;
    std::vector<std::size_t> ts;
    bool have_times = true;
    for (const auto& r : records) {
        s.total_evals += r.eval_count;
        if (!r.loglik) continue;
        trace.push_back(*r.loglik);
        ts.push_back(r.t);
        if (r.wall_time_s) times.push_back(*r.wall_time_s);
        else have_times = false;
    }
    if (trace.empty()) return s;
    const auto res = t95_and_ae(trace, loglik_true, have_times ? std::span<const double>(times) : std::span<const double>());
    s.t95 = ts[res.t95 - 1];
    s.time95_s = res.time95_s;
    s.ae = res.ae;
    s.final_loglik = trace.back();
    return s;
}

namespace detail {
inline std::string opt_cell(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }
inline std::optional<double> opt_parse(std::string_view s) {
    if (s.empty()) return std::nullopt;
    return parse_double(s);
}
template <class T>
Json opt_json(const std::optional<T>& v) { return v ? Json(*v) : Json(nullptr); }
template <class T>
std::optional<T> json_opt(const Json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<T>();
}
} // namespace detail

inline const char* metrics_header = "t,wall_time_s,loglik,aar,bias,eval_count,beta,gamma";

inline std::string metrics_row(const IterationRecord& r) {
    using detail::opt_cell;
    return std::to_string(r.t) + "," + opt_cell(r.wall_time_s) + "," + opt_cell(r.loglik) + "," + opt_cell(r.aar) + "," +
           opt_cell(r.bias) + "," + std::to_string(r.eval_count) + "," + format_double(r.beta) + "," +
           format_double(r.gamma) + "\n";
}

inline std::string metrics_to_csv(const std::vector<IterationRecord>& records) {
    std::string out = std::string(metrics_header) + "\n";
    for (const auto& r : records) out += metrics_row(r);
    return out;
}

inline std::vector<IterationRecord> metrics_from_csv(std::string_view text) {
    std::vector<IterationRecord> out;
    bool header = true;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        auto line = text.substr(0, nl);
        text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        if (header) {
            if (line != metrics_header) throw ValidationError("metrics CSV: unexpected header");
            header = false;
            continue;
        }
        const auto c = split_csv_line(line);
        if (c.size() != 8) throw ValidationError("metrics CSV: expected 8 columns");
        IterationRecord r;
        r.t = static_cast<std::size_t>(parse_double(c[0]));
        r.wall_time_s = detail::opt_parse(c[1]);
        r.loglik = detail::opt_parse(c[2]);
        r.aar = detail::opt_parse(c[3]);
        r.bias = detail::opt_parse(c[4]);
        r.eval_count = static_cast<std::uint64_t>(parse_double(c[5]));
        r.beta = parse_double(c[6]);
        r.gamma = parse_double(c[7]);
        out.push_back(r);
    }
    return out;
}

inline void write_metrics_csv(const std::filesystem::path& p, const std::vector<IterationRecord>& r) {
    write_text_file(p, metrics_to_csv(r));
}
inline std::vector<IterationRecord> read_metrics_csv(const std::filesystem::path& p) {
    return metrics_from_csv(read_text_file(p));
}

inline Json summary_to_json(const RunSummary& s) {
    using detail::opt_json;
    return Json{{"t95", opt_json(s.t95)},
                {"time95_s", opt_json(s.time95_s)},
                {"ae", opt_json(s.ae)},
                {"final_loglik", opt_json(s.final_loglik)},
                {"total_evals", s.total_evals},
                {"aar_scope", s.aar_scope},
                {"status", s.status}};
}

inline RunSummary summary_from_json(const Json& j) {
    reject_unknown_keys(j, {"t95", "time95_s", "ae", "final_loglik", "total_evals", "aar_scope", "status"}, "summary");
    RunSummary s;
    s.t95 = detail::json_opt<std::size_t>(j, "t95");
    s.time95_s = detail::json_opt<double>(j, "time95_s");
    s.ae = detail::json_opt<double>(j, "ae");
    s.final_loglik = detail::json_opt<double>(j, "final_loglik");
    s.total_evals = j.value("total_evals", std::uint64_t{0});
    s.aar_scope = j.value("aar_scope", std::string("minibatch"));
    s.status = j.value("status", std::string("ok"));
    return s;
}

/// Linearly interpolated percentile, p in [0, 1].
inline double percentile(std::vector<double> v, double p) {
    if (v.empty()) throw ValidationError("percentile of an empty sample");
    std::sort(v.begin(), v.end());
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline double median(std::vector<double> v) { return percentile(std::move(v), 0.5); }

} // namespace mhsaem
