// mhsaem: generate synthetic mixtures, train, sweep and evaluate.
//
// Each subcommand reads an optional JSON config (--config) and applies flag
// overrides on top. Exit codes: 0 ok, 1 invalid input, 2 numerical abort,
// 3 I/O failure.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "mhsaem/mhsaem.hpp"

using mhsaem::Json;

namespace {

template <class T>
void set_if(Json& j, const char* key, const std::optional<T>& v) {
    if (v) j[key] = *v;
}

Json load_config(const std::string& path) {
    if (path.empty()) return Json::object();
    Json j = mhsaem::read_json_file(path);
    if (!j.is_object()) throw mhsaem::ValidationError("config '" + path + "' must hold a JSON object");
    return j;
}

int exit_code(mhsaem::ExitCode c) { return static_cast<int>(c); }

struct GenerateFlags {
    std::string config;
    std::optional<std::size_t> D, K, N, mc_samples;
    std::optional<double> omega, tolerance;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output;
    bool labels = false;

    Json build() const {
        Json j = load_config(config);
        set_if(j, "D", D);
        set_if(j, "K", K);
        set_if(j, "N", N);
        set_if(j, "mc_samples", mc_samples);
        set_if(j, "omega", omega);
        set_if(j, "tolerance", tolerance);
        set_if(j, "seed", seed);
        set_if(j, "output", output);
        if (labels) j["labels"] = true;
        return j;
    }
};

struct TrainFlags {
    std::string config;
    std::optional<std::string> data, family, init, truth, resume, output;
    std::optional<std::string> algorithm, proposal, m_step, optimizer, gradient_scale, schedule;
    std::optional<std::size_t> K, B, M, Mbar, T, warmup, loglik_every, stop_after;
    std::optional<double> gamma, warmup_gamma, exponent, floor, beta_min, beta_max, tau_fraction;
    std::optional<std::uint64_t> seed;
    bool no_anneal = false, no_bias = false, no_wall_time = false;

    void add(CLI::App* app) {
        app->add_option("--config", config, "JSON config; flags override its fields");
        app->add_option("--data", data, "data CSV (one row per datapoint)");
        app->add_option("--family", family, "component family: gaussian | flow");
        app->add_option("--k", K, "number of components K");
        app->add_option("--init", init, "initial parameter checkpoint (default: unit-cube means, identity scale)");
        app->add_option("--truth", truth, "ground-truth checkpoint, enables the absolute error");
        app->add_option("--resume", resume, "run checkpoint to resume from");
        app->add_option("--stop-after", stop_after, "stop after this iteration and write a checkpoint");
        app->add_option("--output", output, "output directory");
        app->add_option("--algorithm", algorithm, "em | saem | mcsaem | ssaem | tsaem | mhsaem");
        app->add_option("--proposal", proposal, "MH proposal: uniform | optimal | tabular | tabular-forgetting");
        app->add_option("--proposal-floor", floor, "tabular proposal floor (mass floor/K per component)");
        app->add_option("--m-step", m_step, "suffstats | gradient");
        app->add_option("--optimizer", optimizer, "gradient optimizer: plain | adam");
        app->add_option("--gradient-scale", gradient_scale, "gradient objective over the minibatch: mean | sum | dataset (x N/B)");
        app->add_option("--b", B, "minibatch size B");
        app->add_option("--m", M, "samples or selections per datapoint M");
        app->add_option("--mbar", Mbar, "nearest means per datapoint for tsaem");
        app->add_option("--t", T, "iterations T");
        app->add_option("--schedule", schedule, "step-size schedule: constant | piecewise | robbins-monro");
        app->add_option("--gamma", gamma, "constant step size, or plateau after warmup");
        app->add_option("--warmup", warmup, "piecewise warmup length (robbins-monro offset)");
        app->add_option("--warmup-gamma", warmup_gamma, "step size during warmup");
        app->add_option("--exponent", exponent, "robbins-monro exponent in (0.5, 1]");
        app->add_option("--beta-min", beta_min, "annealing start temperature");
        app->add_option("--beta-max", beta_max, "annealing peak temperature");
        app->add_option("--tau-fraction", tau_fraction, "annealing peak position as a fraction of T");
        app->add_flag("--no-anneal", no_anneal, "disable annealing (beta = 1 throughout)");
        app->add_option("--seed", seed, "random seed (required)");
        app->add_option("--loglik-every", loglik_every, "log-likelihood cadence (0: automatic)");
        app->add_flag("--no-bias", no_bias, "skip the bias diagnostic");
        app->add_flag("--no-wall-time", no_wall_time, "leave wall_time_s empty so metrics are reproducible byte for byte");
    }

    Json build() const {
        Json j = load_config(config);
        set_if(j, "data", data);
        set_if(j, "family", family);
        set_if(j, "K", K);
        set_if(j, "init", init);
        set_if(j, "truth", truth);
        set_if(j, "resume", resume);
        set_if(j, "stop_after", stop_after);
        set_if(j, "output", output);
        set_if(j, "algorithm", algorithm);
        set_if(j, "proposal", proposal);
        set_if(j, "proposal_floor", floor);
        set_if(j, "m_step", m_step);
        set_if(j, "optimizer", optimizer);
        set_if(j, "gradient_scale", gradient_scale);
        set_if(j, "B", B);
        set_if(j, "M", M);
        set_if(j, "Mbar", Mbar);
        set_if(j, "T", T);
        set_if(j, "seed", seed);
        set_if(j, "loglik_every", loglik_every);
        if (schedule || gamma || warmup || warmup_gamma || exponent) {
            Json s = j.value("schedule", Json::object());
            set_if(s, "kind", schedule);
            set_if(s, "value", gamma);
            set_if(s, "warmup", warmup);
            set_if(s, "warmup_value", warmup_gamma);
            set_if(s, "exponent", exponent);
            j["schedule"] = s;
        }
        if (beta_min || beta_max || tau_fraction || no_anneal) {
            Json a = j.value("anneal", Json::object());
            set_if(a, "beta_min", beta_min);
            set_if(a, "beta_max", beta_max);
            set_if(a, "tau_fraction", tau_fraction);
            if (no_anneal) a["enabled"] = false;
            j["anneal"] = a;
        }
        if (no_bias) j["record_bias"] = false;
        if (no_wall_time) j["record_wall_time"] = false;
        return j;
    }
};

void print_summary(const mhsaem::RunSummary& s) { std::cout << mhsaem::summary_to_json(s).dump(2) << "\n"; }

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mixture model training with Metropolis-Hastings stochastic-approximation EM"};
    app.require_subcommand(1);
    app.footer("Environment: MHSAEM_OUTPUT_ROOT sets the default output root (default ./runs).\n"
               "Exit codes: 0 ok, 1 invalid input, 2 numerical abort, 3 I/O failure.");

    GenerateFlags gen;
    auto* g = app.add_subcommand("generate", "synthetic Gaussian mixture with a target maximum pairwise overlap");
    g->add_option("--config", gen.config, "JSON config; flags override its fields");
    g->add_option("--d", gen.D, "dimension D");
    g->add_option("--k", gen.K, "components K");
    g->add_option("--n", gen.N, "datapoints N");
    g->add_option("--omega", gen.omega, "target maximum pairwise overlap in (0, 1)");
    g->add_option("--seed", gen.seed, "random seed (required)");
    g->add_option("--mc-samples", gen.mc_samples, "Monte Carlo draws per overlap estimate (default 10000)");
    g->add_option("--tolerance", gen.tolerance, "relative overlap tolerance (default 0.1)");
    g->add_flag("--labels", gen.labels, "write a header row and a 1-based label column");
    g->add_option("--output", gen.output, "output directory");

    TrainFlags tr;
    auto* t = app.add_subcommand("train", "fit a mixture; writes metrics.csv, summary.json, final.json, checkpoint.json");
    tr.add(t);

    std::string sweep_config;
    std::optional<std::string> sweep_output;
    auto* s = app.add_subcommand("sweep", "grid of training runs; writes cells.csv and aggregate.csv");
    s->add_option("--config", sweep_config,
                  "JSON {base: train config, grid: {algorithm|K|B|M|D|seed: [...]}, generate: {...}, output}")
        ->required();
    s->add_option("--output", sweep_output, "output directory");

    std::string eval_config;
    std::optional<std::string> ev_data, ev_params, ev_truth, ev_metrics, ev_output;
    auto* e = app.add_subcommand("eval", "log-likelihood of a checkpoint and summary of a metrics file");
    e->add_option("--config", eval_config, "JSON config; flags override its fields");
    e->add_option("--data", ev_data, "data CSV");
    e->add_option("--params", ev_params, "parameter checkpoint");
    e->add_option("--truth", ev_truth, "ground-truth checkpoint");
    e->add_option("--metrics", ev_metrics, "metrics CSV to summarize");
    e->add_option("--output", ev_output, "write the report here as JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int rc = app.exit(err);
        return rc == 0 ? 0 : exit_code(mhsaem::ExitCode::validation);
    }

    try {
        if (*g) {
            const auto out = mhsaem::cmd_generate(gen.build());
            std::cout << "wrote " << out.data.string() << " (achieved omega " << out.result.achieved_omega << ")\n";
        } else if (*t) {
            const auto out = mhsaem::cmd_train(tr.build());
            print_summary(out.summary);
            if (out.result.status == "numerical") {
                std::cerr << "numerical failure at iteration " << out.result.failed_at.value_or(0) << ": "
                          << out.result.message << "\n";
                return exit_code(mhsaem::ExitCode::numerical);
            }
        } else if (*s) {
            Json cfg = load_config(sweep_config);
            set_if(cfg, "output", sweep_output);
            const auto out = mhsaem::cmd_sweep(cfg, [](const mhsaem::SweepRow& r) {
                std::cerr << r.algorithm << " K=" << r.K << " B=" << r.B << " M=" << r.M << " seed=" << r.seed << ": "
                          << r.status << "\n";
            });
            std::cout << "wrote " << (out.dir / "cells.csv").string() << "\n";
        } else if (*e) {
            Json cfg = load_config(eval_config);
            set_if(cfg, "data", ev_data);
            set_if(cfg, "params", ev_params);
            set_if(cfg, "truth", ev_truth);
            set_if(cfg, "metrics", ev_metrics);
            set_if(cfg, "output", ev_output);
            std::cout << mhsaem::cmd_eval(cfg).dump(2) << "\n";
        }
    } catch (const mhsaem::ValidationError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return exit_code(mhsaem::ExitCode::validation);
    } catch (const mhsaem::IndexError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return exit_code(mhsaem::ExitCode::validation);
    } catch (const mhsaem::EmptyComponent& err) {
        std::cerr << "error: " << err.what() << "\n";
        return exit_code(mhsaem::ExitCode::numerical);
    } catch (const mhsaem::NumericalError& err) {
        std::cerr << "numerical failure: " << err.what() << "\n";
        return exit_code(mhsaem::ExitCode::numerical);
    } catch (const mhsaem::IoError& err) {
        std::cerr << "I/O error: " << err.what() << "\n";
        return exit_code(mhsaem::ExitCode::io);
    } catch (const Json::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return exit_code(mhsaem::ExitCode::validation);
    }
    return 0;
}
