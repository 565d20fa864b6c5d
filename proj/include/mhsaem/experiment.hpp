#pragma once

// Experiment harness behind the command-line tool. Every command takes a JSON
// document; unknown fields are rejected. Output paths default to a directory
// under $MHSAEM_OUTPUT_ROOT (or ./runs).

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "mhsaem/diagnostics.hpp"
#include "mhsaem/errors.hpp"
#include "mhsaem/io.hpp"
#include "mhsaem/mixture.hpp"
#include "mhsaem/synthgen.hpp"
#include "mhsaem/trainer.hpp"

namespace mhsaem {

namespace fs = std::filesystem;

inline fs::path output_root() {
    if (const char* env = std::getenv("MHSAEM_OUTPUT_ROOT"); env && *env) return fs::path(env);
    return fs::path("runs");
}

inline fs::path output_dir(const Json& cfg, const std::string& command) {
    if (cfg.contains("output") && !cfg.at("output").is_null()) return fs::path(cfg.at("output").get<std::string>());
    return output_root() / command;
}

// ---------------------------------------------------------------------------
// generate

struct GenerateRequest {
    GenSpec spec;
    bool labels = false;
    fs::path output;
};

inline GenerateRequest parse_generate(const Json& cfg) {
    GenerateRequest r;
    Json spec = cfg;
    for (const char* key : {"labels", "output"}) spec.erase(key);
    genspec_update_from_json(r.spec, spec);
    if (!cfg.contains("seed")) throw ValidationError("generate config: 'seed' is required");
    r.labels = cfg.value("labels", false);
    r.output = output_dir(cfg, "generate");
    r.spec.validate();
    return r;
}

struct GenerateOutput {
    fs::path data, truth, meta;
    Generated result;
};

/// Writes data.csv, truth.json and meta.json.
inline GenerateOutput cmd_generate(const Json& cfg) {
    const auto req = parse_generate(cfg);
    GenerateOutput out;
    out.result = generate(req.spec);
    out.data = req.output / "data.csv";
    out.truth = req.output / "truth.json";
    out.meta = req.output / "meta.json";
    write_data_csv(out.data, out.result.X, req.labels ? &out.result.labels : nullptr);
    save_params(out.truth, out.result.theta_true);
    const double ll = Mixture<GaussianFamily>(out.result.theta_true).dataset_loglik(out.result.X);
    write_json_file(out.meta, Json{{"spec", genspec_to_json(req.spec)},
                                   {"achieved_omega", out.result.achieved_omega},
                                   {"omega_std_error", out.result.omega_std_error},
                                   {"covariance_scale", out.result.scale},
                                   {"truth_loglik", ll}});
    return out;
}

// ---------------------------------------------------------------------------
// train

struct TrainRequest {
    TrainerConfig trainer;
    fs::path data;
    std::string family = "gaussian";
    std::optional<std::size_t> K;
    std::optional<fs::path> init;
    std::optional<fs::path> truth;
    std::optional<fs::path> resume;
    std::optional<std::size_t> stop_after;
    fs::path output;
};

inline const std::vector<std::string>& train_request_keys() {
    static const std::vector<std::string> keys{"data", "family", "K", "init", "truth", "resume", "stop_after", "output"};
    return keys;
}

inline TrainRequest parse_train(const Json& cfg, const std::string& where = "train config") {
    if (!cfg.is_object()) throw ValidationError(where + ": expected an object");
    TrainRequest r;
    Json tc = cfg;
    for (const auto& key : train_request_keys()) tc.erase(key);
    config_update_from_json(r.trainer, tc, where);
    try {
        if (!cfg.contains("data")) throw ValidationError(where + ": 'data' is required");
        if (!cfg.contains("seed")) throw ValidationError(where + ": 'seed' is required");
        r.data = cfg.at("data").get<std::string>();
        r.family = cfg.value("family", std::string("gaussian"));
        if (cfg.contains("K") && !cfg.at("K").is_null()) r.K = cfg.at("K").get<std::size_t>();
        if (cfg.contains("init") && !cfg.at("init").is_null()) r.init = cfg.at("init").get<std::string>();
        if (cfg.contains("truth") && !cfg.at("truth").is_null()) r.truth = cfg.at("truth").get<std::string>();
        if (cfg.contains("resume") && !cfg.at("resume").is_null()) r.resume = cfg.at("resume").get<std::string>();
        if (cfg.contains("stop_after") && !cfg.at("stop_after").is_null()) r.stop_after = cfg.at("stop_after").get<std::size_t>();
    } catch (const Json::exception& e) {
        throw ValidationError(where + ": " + e.what());
    }
    if (!r.init && !r.K) throw ValidationError(where + ": either 'K' or 'init' is required");
    r.output = output_dir(cfg, "train");
    return r;
}

struct TrainOutcome {
    RunSummary summary;
    RunResult result;
    fs::path dir;
};

/// The part of a train config that must match on resume.
inline Json raw_cfg_without_runtime(const Json& cfg) {
    Json c = cfg;
    for (const char* key : {"resume", "stop_after", "output"}) c.erase(key);
    return c;
}

/// Train on an in-memory dataset. A resumed run keeps the records its
/// predecessor wrote next to the checkpoint.
template <ComponentFamily F>
TrainOutcome train_on(const TrainRequest& req, const DataMatrix& X, const Json& raw_cfg, bool write_files) {
    const auto d = static_cast<std::size_t>(X.cols());
    MixtureParams init = req.init ? load_params(*req.init) : default_init<F>(*req.K, d, req.trainer.seed);
    if (req.K && init.num_components() != *req.K) throw ValidationError("'K' differs from the initial checkpoint");
    if (init.dim != d) throw ValidationError("initial parameters have dimension " + std::to_string(init.dim) +
                                             " but the data has " + std::to_string(d));
    std::optional<double> ll_true;
    if (req.truth) {
        const auto truth = load_params(*req.truth);
        ll_true = with_family(truth.family_id, [&](auto fam) {
            return Mixture<decltype(fam)>(truth).dataset_loglik(X);
        });
    }

    Trainer<F> trainer(req.trainer, X, init);
    std::vector<IterationRecord> prefix;
    if (req.resume) {
        const Json state = read_json_file(*req.resume);
        if (!state.contains("config") || !state.contains("state")) throw ValidationError("resume file is not a run checkpoint");
        if (state.at("config") != raw_cfg_without_runtime(raw_cfg))
            throw ValidationError("resume checkpoint was written with a different configuration");
        trainer.restore(state_from_json(state.at("state"), trainer));
        const auto metrics = req.resume->parent_path() / "metrics.csv";
        if (fs::exists(metrics))
            for (const auto& r : read_metrics_csv(metrics))
                if (r.t < trainer.state().next_t) prefix.push_back(r);
    }

    TrainOutcome out;
    out.dir = req.output;
    out.result.records = prefix;
    try {
        while (!trainer.done() && (!req.stop_after || trainer.state().next_t <= *req.stop_after))
            out.result.records.push_back(trainer.step());
    } catch (const NumericalError& e) {
        out.result.status = "numerical";
        out.result.message = e.what();
        out.result.failed_at = e.iteration();
    }
    out.result.theta = trainer.params();
    out.summary = summarize(out.result.records, ll_true);
    out.summary.aar_scope = req.trainer.full_batch() ? "dataset" : "minibatch";
    out.summary.status = out.result.status == "ok" ? (trainer.done() ? "ok" : "stopped") : out.result.status;

    if (write_files) {
        write_metrics_csv(req.output / "metrics.csv", out.result.records);
        write_json_file(req.output / "summary.json", summary_to_json(out.summary));
        save_params(req.output / "final.json", out.result.theta);
        write_json_file(req.output / "checkpoint.json",
                        Json{{"config", raw_cfg_without_runtime(raw_cfg)}, {"state", state_to_json(trainer.state())}});
    }
    return out;
}

inline TrainOutcome cmd_train(const Json& cfg) {
    const auto req = parse_train(cfg);
    const auto ds = read_data_csv(req.data);
    return with_family(req.family, [&](auto fam) { return train_on<decltype(fam)>(req, ds.X, cfg, true); });
}

// ---------------------------------------------------------------------------
// sweep

struct SweepCell {
    std::size_t index = 0;
    Json config;  // full train config for the cell
    std::optional<std::size_t> D;
};

struct SweepRow {
    std::string algorithm;
    std::size_t K = 0, B = 0, M = 0, D = 0;
    std::uint64_t seed = 0;
    std::string status;
    RunSummary summary;
};

inline std::string opt_csv(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

inline std::string sweep_rows_csv(const std::vector<SweepRow>& rows) {
    std::string out = "cell,algorithm,K,B,M,D,seed,status,t95,time95_s,ae,final_loglik,total_evals\n";
    for (std::size_t c = 0; c < rows.size(); ++c) {
        const auto& r = rows[c];
        out += std::to_string(c + 1) + "," + r.algorithm + "," + std::to_string(r.K) + "," + std::to_string(r.B) + "," +
               std::to_string(r.M) + "," + std::to_string(r.D) + "," + std::to_string(r.seed) + "," + r.status + "," +
               (r.summary.t95 ? std::to_string(*r.summary.t95) : std::string()) + "," + opt_csv(r.summary.time95_s) + "," +
               opt_csv(r.summary.ae) + "," + opt_csv(r.summary.final_loglik) + "," + std::to_string(r.summary.total_evals) +
               "\n";
    }
    return out;
}

/// Median, 1st and 99th percentile per (algorithm, K, B, M, D) over seeds.
inline std::string sweep_aggregate_csv(const std::vector<SweepRow>& rows) {
    using Key = std::tuple<std::string, std::size_t, std::size_t, std::size_t, std::size_t>;
    std::map<Key, std::vector<const SweepRow*>> groups;
    std::vector<Key> order;
    for (const auto& r : rows) {
        Key k{r.algorithm, r.K, r.B, r.M, r.D};
        if (!groups.count(k)) order.push_back(k);
        groups[k].push_back(&r);
    }
    std::string out = "algorithm,K,B,M,D,cells,ok";
    const char* metrics[] = {"t95", "time95_s", "ae", "final_loglik", "total_evals"};
    for (auto m : metrics) out += std::string(",") + m + "_median," + m + "_p01," + m + "_p99";
    out += "\n";
    for (const auto& k : order) {
        const auto& g = groups[k];
        std::size_t ok = 0;
        std::vector<std::vector<double>> vals(5);
        for (const auto* r : g) {
            if (r->status != "ok") continue;
            ++ok;
            if (r->summary.t95) vals[0].push_back(static_cast<double>(*r->summary.t95));
            if (r->summary.time95_s) vals[1].push_back(*r->summary.time95_s);
            if (r->summary.ae) vals[2].push_back(*r->summary.ae);
            if (r->summary.final_loglik) vals[3].push_back(*r->summary.final_loglik);
            vals[4].push_back(static_cast<double>(r->summary.total_evals));
        }
        out += std::get<0>(k) + "," + std::to_string(std::get<1>(k)) + "," + std::to_string(std::get<2>(k)) + "," +
               std::to_string(std::get<3>(k)) + "," + std::to_string(std::get<4>(k)) + "," + std::to_string(g.size()) + "," +
               std::to_string(ok);
        for (const auto& v : vals) {
            if (v.empty()) out += ",,,";
            else out += "," + format_double(median(v)) + "," + format_double(percentile(v, 0.01)) + "," +
                        format_double(percentile(v, 0.99));
        }
        out += "\n";
    }
    return out;
}

struct SweepOutcome {
    std::vector<SweepRow> rows;
    fs::path dir;
};

/// Config: {base: train config, grid: {algorithm|K|B|M|D|seed: [...]},
///          generate: optional generate config used when the grid varies D,
///          output}. Cells run one after another; a failing cell is recorded
///          and the sweep continues.
inline SweepOutcome cmd_sweep(const Json& cfg, const std::function<void(const SweepRow&)>& on_cell = {}) {
    reject_unknown_keys(cfg, {"base", "grid", "generate", "output"}, "sweep config");
    if (!cfg.contains("base") || !cfg.contains("grid")) throw ValidationError("sweep config: 'base' and 'grid' are required");
    const Json& base = cfg.at("base");
    const Json& grid = cfg.at("grid");
    reject_unknown_keys(grid, {"algorithm", "K", "B", "M", "D", "seed"}, "sweep grid");
    const bool vary_d = grid.contains("D");
    if (vary_d && !cfg.contains("generate")) throw ValidationError("sweep config: a 'D' grid needs a 'generate' block");

    SweepOutcome out;
    out.dir = output_dir(cfg, "sweep");

    // Expand the grid in a fixed key order.
    std::vector<std::pair<std::string, Json>> axes;
    for (const char* key : {"algorithm", "K", "B", "M", "D", "seed"}) {
        if (!grid.contains(key)) continue;
        const auto& v = grid.at(key);
        if (!v.is_array() || v.empty()) throw ValidationError(std::string("sweep grid: '") + key + "' must be a nonempty list");
        axes.emplace_back(key, v);
    }
    std::vector<Json> cells{Json::object()};
    for (const auto& [key, values] : axes) {
        std::vector<Json> next;
        for (const auto& c : cells)
            for (const auto& v : values) {
                Json n = c;
                n[key] = v;
                next.push_back(n);
            }
        cells = std::move(next);
    }

    std::map<std::size_t, fs::path> datasets;
    for (std::size_t c = 0; c < cells.size(); ++c) {
        Json tc = base;
        std::optional<std::size_t> d;
        for (const auto& [key, v] : cells[c].items()) {
            if (key == "D") d = v.get<std::size_t>();
            else tc[key] = v;
        }
        const auto cell_dir = out.dir / ("cell-" + std::to_string(c + 1));
        tc["output"] = cell_dir.string();
        SweepRow row;
        row.algorithm = tc.value("algorithm", std::string("mhsaem"));
        row.K = tc.value("K", std::size_t{0});
        row.B = tc.value("B", TrainerConfig{}.B);
        row.M = tc.value("M", TrainerConfig{}.M);
        row.seed = tc.value("seed", std::uint64_t{0});
        try {
            if (d) {
                if (!datasets.count(*d)) {
                    Json g = cfg.at("generate");
                    g["D"] = *d;
                    g["output"] = (out.dir / ("data-D" + std::to_string(*d))).string();
                    datasets[*d] = cmd_generate(g).data;
                }
                tc["data"] = datasets[*d].string();
            }
            const auto res = cmd_train(tc);
            row.summary = res.summary;
            row.status = res.summary.status;
            row.D = static_cast<std::size_t>(res.result.theta.dim);
            if (row.K == 0) row.K = res.result.theta.num_components();
        } catch (const std::exception& e) {
            row.status = std::string("error: ") + e.what();
            for (auto& ch : row.status)
                if (ch == ',' || ch == '\n') ch = ';';
            if (d) row.D = *d;
        }
        if (on_cell) on_cell(row);
        out.rows.push_back(row);
        write_text_file(out.dir / "cells.csv", sweep_rows_csv(out.rows));
    }
    write_text_file(out.dir / "aggregate.csv", sweep_aggregate_csv(out.rows));
    return out;
}

// ---------------------------------------------------------------------------
// eval

/// Config: {data, params, truth?, metrics?, output?}. Reports the dataset
/// log-likelihood of `params` and, when a metrics CSV is given, its summary.
inline Json cmd_eval(const Json& cfg) {
    reject_unknown_keys(cfg, {"data", "params", "truth", "metrics", "output"}, "eval config");
    if (!cfg.contains("data")) throw ValidationError("eval config: 'data' is required");
    const auto ds = read_data_csv(cfg.at("data").get<std::string>());
    const auto n = static_cast<double>(ds.X.rows());
    Json out{{"N", ds.X.rows()}, {"D", ds.X.cols()}};
    auto ll_of = [&](const MixtureParams& p) {
        if (p.dim != static_cast<std::size_t>(ds.X.cols())) throw ValidationError("parameters and data differ in dimension");
        return with_family(p.family_id, [&](auto fam) { return Mixture<decltype(fam)>(p).dataset_loglik(ds.X); });
    };
    std::optional<double> ll_true;
    if (cfg.contains("truth")) {
        ll_true = ll_of(load_params(cfg.at("truth").get<std::string>()));
        out["truth_loglik"] = *ll_true;
        out["truth_loglik_per_point"] = *ll_true / n;
    }
    if (cfg.contains("params")) {
        const double ll = ll_of(load_params(cfg.at("params").get<std::string>()));
        out["loglik"] = ll;
        out["loglik_per_point"] = ll / n;
        if (ll_true) out["abs_error"] = std::abs(ll - *ll_true);
    }
    if (cfg.contains("metrics"))
        out["summary"] = summary_to_json(summarize(read_metrics_csv(cfg.at("metrics").get<std::string>()), ll_true));
    if (cfg.contains("output")) write_json_file(cfg.at("output").get<std::string>(), out);
    return out;
}

} // namespace mhsaem
