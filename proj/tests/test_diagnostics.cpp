#include "helpers.hpp"

using namespace mhsaem;
using namespace testing_support;

namespace {

DataMatrix rows_for(std::uint64_t seed, const MixtureParams& theta, std::size_t n) { return sample_rows(theta, n, seed); }

std::vector<std::size_t> iota_batch(std::size_t n) {
    std::vector<std::size_t> b(n);
    for (std::size_t i = 0; i < n; ++i) b[i] = i;
    return b;
}

} // namespace

TEST(GradientBias, ZeroForSingleComponent) {
    const auto theta = random_gmm(1, 1, 2);
    const auto X = rows_for(1, theta, 10);
    const auto batch = iota_batch(10);
    const Mixture<GaussianFamily> mix(theta);
    const std::vector<std::uint32_t> z(10, 0);
    const auto W = sample_frequencies(z, 10, 1, 1);
    const auto R = exact_e_step(mix, X, 1.0);
    EXPECT_EQ(gradient_bias(theta, mix, X, batch, W, R), 0.0);
}

TEST(GradientBias, ExactWeightsGiveZero) {
    const auto theta = random_gmm(2, 4, 2);
    const auto X = rows_for(2, theta, 15);
    const Mixture<GaussianFamily> mix(theta);
    const auto R = exact_e_step(mix, X, 0.8);
    EXPECT_EQ(gradient_bias(theta, mix, X, iota_batch(15), R, R), 0.0);
}

TEST(GradientBias, EqualsNormOfGradientDifference) {
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto theta = s % 2 ? random_flow_mixture(s, 3, 2) : random_gmm(s, 3, 2);
        const auto X = rows_for(s, theta, 12);
        const auto batch = iota_batch(12);
        with_family(theta.family_id, [&](auto fam) {
            using F = decltype(fam);
            const Mixture<F> mix(theta);
            const auto R = exact_e_step(mix, X, 1.0);
            std::vector<std::uint32_t> z(12);
            CounterRng rng(s);
            for (auto& v : z) v = static_cast<std::uint32_t>(rng.below(3));
            const auto W = sample_frequencies(z, 12, 1, 3);
            const Vector diff = weighted_gradient(theta, mix, X, batch, W, 1.0).flat() -
                                weighted_gradient(theta, mix, X, batch, R, 1.0).flat();
            EXPECT_NEAR(gradient_bias(theta, mix, X, batch, W, R), diff.squaredNorm(), 1e-9 * diff.squaredNorm());
            return 0;
        });
    }
}

TEST(GradientBias, ShiftInvariantInLogWeights) {
    auto theta = random_gmm(3, 5, 2);
    const auto X = rows_for(3, theta, 20);
    const auto batch = iota_batch(20);
    std::vector<std::uint32_t> z(40);
    CounterRng rng(3);
    for (auto& v : z) v = static_cast<std::uint32_t>(rng.below(5));
    const auto W = sample_frequencies(z, 20, 2, 5);
    const Mixture<GaussianFamily> mix(theta);
    const double a = gradient_bias(theta, mix, X, batch, W, exact_e_step(mix, X, 1.0));
    theta.nu.array() += 3.5;
    const Mixture<GaussianFamily> mix2(theta);
    const double b = gradient_bias(theta, mix2, X, batch, W, exact_e_step(mix2, X, 1.0));
    EXPECT_LT(std::abs(a - b), 1e-10 * std::max(1.0, a));
}

TEST(GradientBias, ShrinksLikeOneOverM) {
    // Samples drawn exactly from the responsibilities: E[bias] = c / M.
    const auto theta = random_gmm(4, 4, 2, 1.0);
    const std::size_t n = 10;
    const auto X = rows_for(4, theta, n);
    const auto batch = iota_batch(n);
    const Mixture<GaussianFamily> mix(theta);
    const auto R = exact_e_step(mix, X, 1.0);
    std::vector<double> mean_bias;
    const std::size_t Ms[] = {1, 4, 16, 64};
    for (std::size_t M : Ms) {
        double acc = 0.0;
        const int reps = 400;
        for (int r = 0; r < reps; ++r) {
            std::vector<std::uint32_t> z(n * M);
            for (std::size_t b = 0; b < n; ++b) {
                std::vector<double> row(R.cols());
                for (Eigen::Index k = 0; k < R.cols(); ++k) row[static_cast<std::size_t>(k)] = R(static_cast<Eigen::Index>(b), k);
                for (std::size_t j = 0; j < M; ++j) {
                    CounterRng rng(M, Stream::test, static_cast<std::uint64_t>(r), b, j);
                    z[b * M + j] = static_cast<std::uint32_t>(sample_categorical(row, rng.uniform()));
                }
            }
            acc += gradient_bias(theta, mix, X, batch, sample_frequencies(z, n, M, 4), R);
        }
        mean_bias.push_back(acc / reps);
    }
    for (std::size_t i = 1; i < 4; ++i) {
        const double ratio = mean_bias[i - 1] / mean_bias[i];
        EXPECT_GT(ratio, 4.0 * 0.75) << "M " << Ms[i];
        EXPECT_LT(ratio, 4.0 * 1.33) << "M " << Ms[i];
    }
}

TEST(AverageAcceptance, Examples) {
    const double mixed[] = {1.0, 0.0, 0.5};
    EXPECT_EQ(average_acceptance(mixed), 0.5);
    const double ones[] = {1.0, 1.0, 1.0, 1.0};
    EXPECT_EQ(average_acceptance(ones), 1.0);
    EXPECT_THROW(average_acceptance(std::span<const double>{}), ValidationError);
}

TEST(T95, MonotoneTrace) {
    std::vector<double> trace;
    for (int t = 0; t <= 100; ++t) trace.push_back(-100.0 + t);
    const auto r = t95_and_ae(trace);
    EXPECT_EQ(trace[r.t95 - 1], -5.0);
    EXPECT_EQ(r.t95, 96u);
    EXPECT_FALSE(r.ae);
}

TEST(T95, MaximumAtStartAndConstant) {
    const std::vector<double> down{5.0, 3.0, 1.0};
    EXPECT_EQ(t95_and_ae(down).t95, 1u);
    const std::vector<double> flat{2.0, 2.0, 2.0};
    EXPECT_EQ(t95_and_ae(flat).t95, 1u);
    EXPECT_THROW(t95_and_ae(std::vector<double>{}), ValidationError);
}

TEST(T95, AbsoluteErrorAndTime) {
    const std::vector<double> trace{-10.0, -2.0, -1.0, -1.2};
    const std::vector<double> times{0.1, 0.2, 0.3, 0.4};
    const auto r = t95_and_ae(trace, -0.5, times);
    EXPECT_EQ(r.t95, 3u);
    EXPECT_DOUBLE_EQ(*r.ae, 0.5);
    EXPECT_DOUBLE_EQ(*r.time95_s, 0.3);
}

TEST(T95, TruncationAfterReachingLevel) {
    // When the trace minimum comes first, truncating after the maximum keeps
    // both extremes and hence t95.
    CounterRng rng(9);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<double> trace{-1000.0};
        double v = -1000.0;
        for (int t = 0; t < 60; ++t) {
            v += rng.uniform() * 40.0 - 5.0;
            trace.push_back(v);
        }
        const auto r = t95_and_ae(trace);
        const auto peak = static_cast<std::size_t>(std::max_element(trace.begin(), trace.end()) - trace.begin());
        for (std::size_t cut = peak + 1; cut <= trace.size(); ++cut)
            EXPECT_EQ(t95_and_ae(std::span<const double>(trace.data(), cut)).t95, r.t95);
    }
}

TEST(Summary, UsesRecordsWithLoglik) {
    std::vector<IterationRecord> recs;
    for (std::size_t t = 1; t <= 10; ++t) {
        IterationRecord r;
        r.t = t;
        r.wall_time_s = 0.1 * static_cast<double>(t);
        r.eval_count = 3;
        if (t % 2 == 1 || t == 10) r.loglik = static_cast<double>(t);
        recs.push_back(r);
    }
    const auto s = summarize(recs, 12.0);
    EXPECT_EQ(s.total_evals, 30u);
    EXPECT_EQ(*s.final_loglik, 10.0);
    // Trace 1,3,5,7,9,10: level 9.55, first reached at t = 10.
    EXPECT_EQ(*s.t95, 10u);
    EXPECT_DOUBLE_EQ(*s.time95_s, 1.0);
    EXPECT_DOUBLE_EQ(*s.ae, 2.0);
    const auto back = summary_from_json(Json::parse(summary_to_json(s).dump()));
    EXPECT_EQ(back.t95, s.t95);
    EXPECT_EQ(back.ae, s.ae);
    EXPECT_EQ(back.total_evals, s.total_evals);
}

TEST(MetricsCsv, RoundTripsBitExactly) {
    std::vector<IterationRecord> recs;
    CounterRng rng(2);
    for (std::size_t t = 1; t <= 50; ++t) {
        IterationRecord r;
        r.t = t;
        if (t % 3) r.wall_time_s = rng.uniform();
        if (t % 4) r.loglik = -1000.0 * rng.uniform();
        if (t % 5) r.aar = rng.uniform();
        if (t % 2) r.bias = rng.uniform() * 1e5;
        r.eval_count = rng.below(100000);
        r.beta = 0.1 + rng.uniform();
        r.gamma = rng.uniform();
        recs.push_back(r);
    }
    const auto text = metrics_to_csv(recs);
    EXPECT_EQ(text.substr(0, text.find('\n')), "t,wall_time_s,loglik,aar,bias,eval_count,beta,gamma");
    const auto back = metrics_from_csv(text);
    EXPECT_EQ(back, recs);
    EXPECT_EQ(metrics_to_csv(back), text);
    EXPECT_THROW(metrics_from_csv("a,b\n"), ValidationError);
}

TEST(Percentiles, LinearInterpolation) {
    const std::vector<double> v{4.0, 1.0, 3.0, 2.0, 5.0};
    EXPECT_EQ(median(v), 3.0);
    EXPECT_EQ(percentile(v, 0.0), 1.0);
    EXPECT_EQ(percentile(v, 1.0), 5.0);
    EXPECT_DOUBLE_EQ(percentile(v, 0.01), 1.04);
    EXPECT_DOUBLE_EQ(median({1.0, 2.0}), 1.5);
}

TEST(RunRecords, InvariantsHold) {
    const auto theta = random_gmm(6, 5, 2);
    const auto X = rows_for(6, theta, 400);
    TrainerConfig c;
    c.algorithm = Algorithm::mhsaem;
    c.T = 120;
    c.B = 40;
    const auto res = run<GaussianFamily>(c, X, default_init<GaussianFamily>(5, 2, 6));
    ASSERT_EQ(res.status, "ok");
    for (std::size_t i = 0; i < res.records.size(); ++i) {
        const auto& r = res.records[i];
        EXPECT_EQ(r.t, i + 1);
        if (i) EXPECT_GE(*r.wall_time_s, *res.records[i - 1].wall_time_s);
        EXPECT_GE(*r.aar, 0.0);
        EXPECT_LE(*r.aar, 1.0);
        EXPECT_GE(*r.bias, 0.0);
        EXPECT_GT(r.beta, 0.0);
    }
}
