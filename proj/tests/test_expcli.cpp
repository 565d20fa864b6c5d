#include "helpers.hpp"

#include <cstdio>
#include <cstdlib>
#include <sys/wait.h>

using namespace mhsaem;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

struct Proc {
    int code;
    std::string out;
};

Proc run_cli(const std::string& args) {
    const std::string cmd = std::string(MHSAEM_CLI_PATH) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return {-1, ""};
    std::string out;
    char buf[4096];
    while (std::fgets(buf, sizeof buf, pipe)) out += buf;
    const int status = pclose(pipe);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

fs::path make_dataset(const fs::path& dir, std::size_t D, std::size_t K, std::size_t N, double omega, std::uint64_t seed) {
    cmd_generate(Json{{"D", D}, {"K", K}, {"N", N}, {"omega", omega}, {"seed", seed}, {"output", dir.string()}});
    return dir / "data.csv";
}

Json train_cfg(const fs::path& data, const fs::path& out) {
    return Json{{"data", data.string()}, {"K", 4}, {"seed", 3}, {"T", 60}, {"B", 50},
                {"record_wall_time", false}, {"output", out.string()}};
}

} // namespace

TEST(CmdGenerate, ByteIdenticalAcrossRuns) {
    const auto dir = scratch_dir("gen-determinism");
    const Json cfg{{"D", 2}, {"K", 5}, {"N", 200}, {"omega", 0.3}, {"seed", 8}, {"labels", true}};
    Json a = cfg, b = cfg;
    a["output"] = (dir / "a").string();
    b["output"] = (dir / "b").string();
    cmd_generate(a);
    cmd_generate(b);
    for (const char* f : {"data.csv", "truth.json", "meta.json"})
        EXPECT_EQ(read_text_file(dir / "a" / f), read_text_file(dir / "b" / f)) << f;
    const auto ds = read_data_csv(dir / "a" / "data.csv");
    ASSERT_TRUE(ds.labels);
    EXPECT_EQ(ds.X.rows(), 200);
}

TEST(CmdGenerate, MetadataMatchesReestimatedOverlap) {
    const auto dir = scratch_dir("gen-overlap");
    const auto out = cmd_generate(Json{{"D", 2}, {"K", 10}, {"N", 1000}, {"omega", 0.5}, {"seed", 2}, {"output", dir.string()}});
    const auto meta = read_json_file(out.meta);
    const auto theta = load_params(out.truth);
    const auto again = max_pairwise_overlap(theta, 20000, 4242);
    const double recorded = meta.at("achieved_omega").get<double>();
    EXPECT_NEAR(again.omega, recorded, 0.1 * 0.5 + 3.0 * again.std_error);
    EXPECT_NEAR(recorded, 0.5, 0.05 + 1e-12);
    const auto ds = read_data_csv(out.data);
    EXPECT_NEAR(meta.at("truth_loglik").get<double>(), dataset_loglik<GaussianFamily>(theta, ds.X), 1e-9);
}

TEST(CmdGenerate, SingleComponent) {
    const auto dir = scratch_dir("gen-k1");
    const auto out = cmd_generate(Json{{"D", 3}, {"K", 1}, {"N", 20}, {"omega", 0.5}, {"seed", 1}, {"output", dir.string()}});
    EXPECT_EQ(load_params(out.truth).num_components(), 1u);
    EXPECT_EQ(read_json_file(out.meta).at("achieved_omega").get<double>(), 0.0);
}

TEST(CmdGenerate, RequiresSeedAndRejectsUnknownFields) {
    EXPECT_THROW(cmd_generate(Json{{"D", 2}}), ValidationError);
    EXPECT_THROW(cmd_generate(Json{{"seed", 1}, {"colour", "red"}}), ValidationError);
}

TEST(CmdTrain, EmSingleComponentMatchesClosedForm) {
    const auto dir = scratch_dir("train-em-k1");
    const auto data = make_dataset(dir / "data", 2, 3, 300, 0.2, 1);
    const auto res = cmd_train(Json{{"data", data.string()}, {"K", 1}, {"seed", 1}, {"algorithm", "em"}, {"T", 3},
                                    {"output", (dir / "run").string()}});
    const auto X = read_data_csv(data).X;
    const Vector mean = X.colwise().mean().transpose();
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(2, 2);
    for (Eigen::Index i = 0; i < X.rows(); ++i) cov += (X.row(i).transpose() - mean) * (X.row(i) - mean.transpose());
    cov /= static_cast<double>(X.rows());
    MixtureParams mle;
    mle.family_id = "gaussian";
    mle.dim = 2;
    mle.nu = Vector::Zero(1);
    mle.components.push_back(GaussianParams::from_covariance(mean, cov).to_flat());
    const double exact = dataset_loglik<GaussianFamily>(mle, X);
    EXPECT_LT(std::abs(*res.summary.final_loglik - exact), 1e-6 * std::abs(exact));
    for (const char* f : {"metrics.csv", "summary.json", "final.json", "checkpoint.json"}) EXPECT_TRUE(fs::exists(dir / "run" / f)) << f;
}

TEST(CmdTrain, OptimalProposalMatchesMonteCarloSaem) {
    const auto dir = scratch_dir("train-o-vs-mc");
    const auto data = make_dataset(dir / "data", 2, 4, 400, 0.3, 2);
    Json a = train_cfg(data, dir / "mh");
    a["algorithm"] = "mhsaem";
    a["proposal"] = "optimal";
    Json b = train_cfg(data, dir / "mc");
    b["algorithm"] = "mcsaem";
    cmd_train(a);
    cmd_train(b);
    EXPECT_EQ(read_text_file(dir / "mh" / "metrics.csv"), read_text_file(dir / "mc" / "metrics.csv"));
}

TEST(CmdTrain, OutputsRoundTrip) {
    const auto dir = scratch_dir("train-roundtrip");
    const auto data = make_dataset(dir / "data", 2, 4, 300, 0.3, 3);
    Json cfg = train_cfg(data, dir / "run");
    cfg["record_wall_time"] = true;
    cfg["truth"] = (dir / "data" / "truth.json").string();
    const auto res = cmd_train(cfg);
    const auto text = read_text_file(dir / "run" / "metrics.csv");
    EXPECT_EQ(metrics_to_csv(read_metrics_csv(dir / "run" / "metrics.csv")), text);
    EXPECT_EQ(read_metrics_csv(dir / "run" / "metrics.csv"), res.result.records);
    EXPECT_EQ(load_params(dir / "run" / "final.json"), res.result.theta);
    const auto summary = read_json_file(dir / "run" / "summary.json");
    EXPECT_EQ(summary_to_json(summary_from_json(summary)), summary);
    EXPECT_TRUE(res.summary.ae.has_value());
    EXPECT_EQ(res.summary.aar_scope, "minibatch");
}

TEST(CmdTrain, ResumeReproducesUninterruptedRun) {
    const auto dir = scratch_dir("train-resume");
    const auto data = make_dataset(dir / "data", 2, 4, 300, 0.3, 4);
    for (const char* proposal : {"uniform", "tabular-forgetting"}) {
        Json base = train_cfg(data, dir / "full");
        base["proposal"] = proposal;
        cmd_train(base);
        Json part = base;
        part["output"] = (dir / "part").string();
        part["stop_after"] = 23;
        const auto p = cmd_train(part);
        EXPECT_EQ(p.summary.status, "stopped");
        Json rest = base;
        rest["output"] = (dir / "rest").string();
        rest["resume"] = (dir / "part" / "checkpoint.json").string();
        cmd_train(rest);
        EXPECT_EQ(read_text_file(dir / "rest" / "metrics.csv"), read_text_file(dir / "full" / "metrics.csv")) << proposal;
        EXPECT_EQ(read_text_file(dir / "rest" / "final.json"), read_text_file(dir / "full" / "final.json")) << proposal;

        Json other = rest;
        other["B"] = 40;
        EXPECT_THROW(cmd_train(other), ValidationError);
    }
}

TEST(CmdTrain, RejectsIncompleteConfigs) {
    const auto dir = scratch_dir("train-invalid");
    const auto data = make_dataset(dir / "data", 2, 3, 100, 0.3, 5);
    EXPECT_THROW(cmd_train(Json{{"data", data.string()}, {"K", 3}}), ValidationError);
    EXPECT_THROW(cmd_train(Json{{"data", data.string()}, {"seed", 1}}), ValidationError);
    EXPECT_THROW(cmd_train(Json{{"K", 3}, {"seed", 1}}), ValidationError);
    EXPECT_THROW(cmd_train(Json{{"data", data.string()}, {"K", 3}, {"seed", 1}, {"nonsense", 1}}), ValidationError);
    EXPECT_THROW(cmd_train(Json{{"data", (dir / "missing.csv").string()}, {"K", 3}, {"seed", 1}}), IoError);
}

TEST(CmdSweep, SingleCellEqualsTrain) {
    const auto dir = scratch_dir("sweep-single");
    const auto data = make_dataset(dir / "data", 2, 4, 300, 0.3, 6);
    Json base = train_cfg(data, dir / "unused");
    base.erase("output");
    const auto sweep = cmd_sweep(Json{{"base", base}, {"grid", {{"seed", {3}}}}, {"output", (dir / "sweep").string()}});
    Json single = base;
    single["output"] = (dir / "train").string();
    cmd_train(single);
    ASSERT_EQ(sweep.rows.size(), 1u);
    EXPECT_EQ(read_text_file(dir / "sweep" / "cell-1" / "metrics.csv"), read_text_file(dir / "train" / "metrics.csv"));
    EXPECT_TRUE(fs::exists(dir / "sweep" / "cells.csv"));
    EXPECT_TRUE(fs::exists(dir / "sweep" / "aggregate.csv"));
}

TEST(CmdSweep, CostConstantInKForMhsaem) {
    const auto dir = scratch_dir("sweep-k");
    const auto data = make_dataset(dir / "data", 2, 5, 500, 0.3, 7);
    const Json base{{"data", data.string()}, {"T", 10}, {"B", 50}, {"M", 2}, {"seed", 1}, {"record_bias", false}};
    const auto sweep = cmd_sweep(Json{{"base", base},
                                      {"grid", {{"algorithm", {"mhsaem", "em"}}, {"K", {10, 25, 50, 100}}}},
                                      {"output", (dir / "sweep").string()}});
    ASSERT_EQ(sweep.rows.size(), 8u);
    std::map<std::size_t, std::uint64_t> mh, em;
    for (const auto& r : sweep.rows) {
        ASSERT_EQ(r.status, "ok");
        (r.algorithm == "mhsaem" ? mh : em)[r.K] = r.summary.total_evals;
    }
    for (std::size_t k : {25u, 50u, 100u}) {
        EXPECT_EQ(mh[k], mh[10]);
        EXPECT_EQ(em[k] * 10, em[10] * k);
    }
    EXPECT_EQ(mh[10], 10u * 50u * 3u);
}

TEST(CmdSweep, AggregatesSeedsAndIsolatesFailures) {
    const auto dir = scratch_dir("sweep-agg");
    const auto data = make_dataset(dir / "data", 2, 3, 200, 0.3, 8);
    const Json base{{"data", data.string()}, {"K", 3}, {"T", 20}, {"B", 20}, {"record_wall_time", false}};
    const auto sweep = cmd_sweep(Json{{"base", base},
                                      {"grid", {{"M", {1, 5}}, {"seed", {1, 2, 3}}}},
                                      {"output", (dir / "sweep").string()}});
    ASSERT_EQ(sweep.rows.size(), 6u);
    std::size_t failed = 0;
    for (const auto& r : sweep.rows) failed += r.status.rfind("error:", 0) == 0;
    EXPECT_EQ(failed, 3u);  // M = 5 > K
    const auto agg = read_text_file(dir / "sweep" / "aggregate.csv");
    const auto first = agg.find('\n') + 1;
    const std::string row = agg.substr(first, agg.find('\n', first) - first);
    const auto lines = split_csv_line(row);
    EXPECT_EQ(lines[0], "mhsaem");
    EXPECT_EQ(lines[5], "3");
    EXPECT_EQ(lines[6], "3");
    for (std::size_t c = 7; c < 10; ++c) EXPECT_FALSE(lines[c].empty());
}

TEST(CmdSweep, GeneratesDataPerDimension) {
    const auto dir = scratch_dir("sweep-d");
    const Json base{{"K", 3}, {"T", 5}, {"B", 20}, {"seed", 1}};
    const Json gen{{"K", 3}, {"N", 100}, {"omega", 0.2}, {"seed", 4}};
    const auto sweep = cmd_sweep(Json{{"base", base}, {"grid", {{"D", {1, 3}}}}, {"generate", gen}, {"output", (dir / "s").string()}});
    ASSERT_EQ(sweep.rows.size(), 2u);
    EXPECT_EQ(sweep.rows[0].D, 1u);
    EXPECT_EQ(sweep.rows[1].D, 3u);
    EXPECT_EQ(sweep.rows[1].status, "ok");
}

TEST(CmdEval, ReportsLikelihoods) {
    const auto dir = scratch_dir("eval");
    const auto data = make_dataset(dir / "data", 2, 3, 150, 0.3, 9);
    Json cfg = train_cfg(data, dir / "run");
    cfg["K"] = 3;
    cmd_train(cfg);
    const auto rep = cmd_eval(Json{{"data", data.string()},
                                   {"params", (dir / "run" / "final.json").string()},
                                   {"truth", (dir / "data" / "truth.json").string()},
                                   {"metrics", (dir / "run" / "metrics.csv").string()},
                                   {"output", (dir / "eval.json").string()}});
    EXPECT_NEAR(rep.at("loglik_per_point").get<double>() * 150.0, rep.at("loglik").get<double>(), 1e-9);
    EXPECT_TRUE(rep.contains("abs_error"));
    EXPECT_TRUE(rep.at("summary").contains("t95"));
    EXPECT_EQ(read_json_file(dir / "eval.json"), rep);
}

TEST(Cli, HelpDocumentsConfigFields) {
    const auto top = run_cli("--help");
    EXPECT_EQ(top.code, 0);
    for (const char* sub : {"generate", "train", "sweep", "eval", "MHSAEM_OUTPUT_ROOT"}) EXPECT_NE(top.out.find(sub), std::string::npos) << sub;
    const auto train = run_cli("train --help");
    EXPECT_EQ(train.code, 0);
    for (const char* flag : {"--algorithm", "--proposal", "--m-step", "--optimizer", "--b", "--m", "--t", "--schedule", "--gamma",
                             "--beta-min", "--beta-max", "--tau-fraction", "--seed", "--resume", "--loglik-every"})
        EXPECT_NE(train.out.find(flag), std::string::npos) << flag;
    const auto gen = run_cli("generate --help");
    for (const char* flag : {"--d", "--k", "--n", "--omega", "--mc-samples", "--tolerance", "--labels"})
        EXPECT_NE(gen.out.find(flag), std::string::npos) << flag;
}

TEST(Cli, ExitCodes) {
    const auto dir = scratch_dir("cli-exit");
    EXPECT_NE(run_cli("train --no-such-flag").code, 0);
    EXPECT_EQ(run_cli("frobnicate").code, 1);
    EXPECT_EQ(run_cli("generate --d 2 --k 3 --n 50 --omega 0.3 --output " + (dir / "g").string()).code, 1);  // no seed
    EXPECT_EQ(run_cli("generate --d 2 --k 3 --n 50 --omega 0.3 --seed 1 --output " + (dir / "g").string()).code, 0);
    const auto data = (dir / "g" / "data.csv").string();
    EXPECT_EQ(run_cli("train --data " + (dir / "missing.csv").string() + " --k 3 --seed 1").code, 3);
    EXPECT_EQ(run_cli("train --data " + data + " --k 3 --seed 1 --m 9 --b 20 --output " + (dir / "t").string()).code, 1);
    EXPECT_EQ(run_cli("train --data " + data + " --k 3 --seed 1 --t 20 --m-step gradient --gradient-scale sum --schedule constant "
                      "--gamma 1 --b 50 --output " + (dir / "t").string()).code,
              2);
    EXPECT_EQ(run_cli("train --data " + data + " --k 3 --seed 1 --t 20 --b 20 --output " + (dir / "t").string()).code, 0);
}

TEST(Cli, MatchedSeedRunsAreByteIdentical) {
    const auto dir = scratch_dir("cli-determinism");
    ASSERT_EQ(run_cli("generate --d 2 --k 4 --n 300 --omega 0.3 --seed 5 --output " + (dir / "g").string()).code, 0);
    const std::string args = "train --data " + (dir / "g" / "data.csv").string() + " --k 4 --seed 2 --t 50 --b 30 --no-wall-time --output ";
    ASSERT_EQ(run_cli(args + (dir / "a").string()).code, 0);
    ASSERT_EQ(run_cli(args + (dir / "b").string()).code, 0);
    EXPECT_EQ(read_text_file(dir / "a" / "metrics.csv"), read_text_file(dir / "b" / "metrics.csv"));
}

TEST(Cli, ConfigFileWithFlagOverrides) {
    const auto dir = scratch_dir("cli-config");
    ASSERT_EQ(run_cli("generate --d 2 --k 3 --n 100 --omega 0.3 --seed 5 --output " + (dir / "g").string()).code, 0);
    write_json_file(dir / "train.json", Json{{"data", (dir / "g" / "data.csv").string()}, {"K", 3}, {"seed", 1}, {"T", 40},
                                             {"algorithm", "saem"}, {"B", 20}});
    ASSERT_EQ(run_cli("train --config " + (dir / "train.json").string() + " --t 7 --output " + (dir / "r").string()).code, 0);
    EXPECT_EQ(read_metrics_csv(dir / "r" / "metrics.csv").size(), 7u);
    write_json_file(dir / "bad.json", Json{{"data", "x"}, {"K", 3}, {"seed", 1}, {"tee", 40}});
    EXPECT_EQ(run_cli("train --config " + (dir / "bad.json").string()).code, 1);
}

TEST(Cli, OutputRootFromEnvironment) {
    const auto dir = scratch_dir("cli-env");
    const auto r = run_cli("generate --d 1 --k 2 --n 10 --omega 0.3 --seed 1");  // default root is ./runs
    (void)r;
    const std::string cmd = "MHSAEM_OUTPUT_ROOT=" + dir.string() + " " + MHSAEM_CLI_PATH +
                            " generate --d 1 --k 2 --n 10 --omega 0.3 --seed 1 > /dev/null 2>&1";
    ASSERT_EQ(std::system(cmd.c_str()), 0);
    EXPECT_TRUE(fs::exists(dir / "generate" / "data.csv"));
}
