#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ropi/asap.hpp"
#include "ropi/verification.hpp"

namespace ropi {
namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

AsapPolicy random_policy(int k, Rng& rng) {
    AsapPolicy p(k, kNumActions, {}, uniform(rng, 0.5, 2.0));
    Eigen::VectorXd theta(p.parameters().size());
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] = normal(rng);
    p.set_parameters(theta);
    return p;
}

EnvState random_state(Rng& rng) {
    return {uniform(rng, -2, 2), uniform(rng, -2, 2), uniform(rng, -2, 2), uniform(rng, -2, 2)};
}

TEST(OptionProbabilities, NoHyperplanesMeansOneCertainOption) {
    const Eigen::VectorXd p = option_probabilities(Eigen::VectorXd(0), 1.0);
    ASSERT_EQ(p.size(), 1);
    EXPECT_EQ(p[0], 1.0);
}

TEST(OptionProbabilities, PointOnTheHyperplaneIsEvenlySplit) {
    const Eigen::VectorXd p = option_probabilities(vec({0.0}), 1.0);
    EXPECT_EQ(p[0], 0.5);
    EXPECT_EQ(p[1], 0.5);
}

TEST(OptionProbabilities, TwoHyperplanesClosedForm) {
    const Eigen::VectorXd p = option_probabilities(vec({10.0, -10.0}), 1.0);
    const double hi = 1.0 / (1.0 + std::exp(-10.0));
    const double lo = 1.0 / (1.0 + std::exp(10.0));
    // Option index bit k set = positive side of hyperplane k.
    EXPECT_NEAR(p[0], lo * hi, 1e-15);
    EXPECT_NEAR(p[1], hi * hi, 1e-15);
    EXPECT_NEAR(p[2], lo * lo, 1e-15);
    EXPECT_NEAR(p[3], hi * lo, 1e-15);
    EXPECT_NEAR(p.sum(), 1.0, 1e-12);
}

TEST(AsapPolicy, IdenticalOptionsIgnoreHyperplanes) {
    Rng rng(1);
    AsapPolicy p(2);
    p.initialize(rng, 3.0);
    for (std::size_t i = 0; i < p.num_options(); ++i) p.set_option_logits(i, vec({0.3, -0.8}));
    const Eigen::VectorXd expected = softmax(vec({0.3, -0.8}));
    for (int t = 0; t < 20; ++t) EXPECT_LT((p.action_probabilities(random_state(rng)) - expected).norm(), 1e-12);
}

TEST(AsapPolicy, DeepInsideRegionFollowsItsOption) {
    AsapPolicy p(1);
    p.set_hyperplane(0, vec({0.0, 0.0, 1.0, 0.0, 0.0}));
    p.set_option_logits(0, vec({10.0, -10.0}));
    p.set_option_logits(1, vec({-10.0, 10.0}));
    EXPECT_GT(p.action_probability({0.0, 0.0, -20.0, 0.0}, 0), 0.99);
    EXPECT_GT(p.action_probability({0.0, 0.0, 20.0, 0.0}, 1), 0.99);
}

TEST(AsapPolicy, ProbabilitiesAreNormalised) {
    Rng rng(2);
    for (int t = 0; t < 10000; ++t) {
        const AsapPolicy p = random_policy(t % 4, rng);
        const EnvState x = random_state(rng);
        EXPECT_NEAR(p.option_probabilities(x).sum(), 1.0, 1e-10);
        const Eigen::VectorXd pi = p.action_probabilities(x);
        EXPECT_NEAR(pi.sum(), 1.0, 1e-10);
        EXPECT_GT(pi.minCoeff(), 0.0);
    }
}

TEST(AsapPolicy, FlatPolicyIsTheSoftmaxBaseline) {
    AsapPolicy flat = AsapPolicy::flat();
    flat.set_option_logits(0, vec({0.7, -0.1}));
    const Eigen::VectorXd expected = softmax(vec({0.7, -0.1}));
    EXPECT_EQ(flat.action_probabilities({1.0, 2.0, 3.0, 4.0}), expected);
    Eigen::VectorXd score = -expected;
    score[1] += 1.0;
    EXPECT_EQ(flat.log_gradient({0.0, 0.0, 0.0, 0.0}, 1), score);
}

TEST(AsapPolicy, LogGradientMatchesFiniteDifferences) {
    const auto r = verify::check_asap_gradients({}, 200);
    EXPECT_TRUE(r.passed) << r.detail;
}

TEST(AsapPolicy, ScoreIdentity) {
    const auto r = verify::check_score_identity({}, 1000);
    EXPECT_TRUE(r.passed) << r.detail;
}

TEST(AsapPolicy, ParameterLayoutIsBetaThenChi) {
    AsapPolicy p(2);
    EXPECT_EQ(p.parameters().size(), 2 * 5 + 4 * 2);
    p.set_hyperplane(1, vec({1, 2, 3, 4, 5}));
    p.set_option_logits(3, vec({6, 7}));
    EXPECT_EQ(p.parameters().segment(5, 5), vec({1, 2, 3, 4, 5}));
    EXPECT_EQ(p.parameters().tail(2), vec({6, 7}));
}

TEST(AsapPolicy, InitialisationLeavesActionsUniform) {
    Rng rng(3);
    AsapPolicy p(1);
    p.initialize(rng);
    EXPECT_TRUE(p.parameters().tail(4).isZero(0.0));
    EXPECT_FALSE(p.parameters().head(5).isZero(0.0));
    EXPECT_NEAR(p.action_probability(random_state(rng), 0), 0.5, 1e-15);
}

TEST(AsapPolicy, InvalidConstructionIsAConfigError) {
    EXPECT_THROW(AsapPolicy(-1), ConfigError);
    EXPECT_THROW(AsapPolicy(1, 2, {}, 0.0), ConfigError);
    HyperplaneFeatureMap bad;
    bad.scale = {1.0, 1.0};
    EXPECT_THROW(AsapPolicy(1, 2, bad), ConfigError);
}

TEST(SampleAction, DeterministicMixtureAlwaysPicksTheSameAction) {
    AsapPolicy p(1);
    p.set_hyperplane(0, vec({0.0, 0.0, 0.0, 0.0, 1000.0}));
    p.set_option_logits(1, vec({-1000.0, 1000.0}));
    Rng rng(4);
    for (int t = 0; t < 1000; ++t) {
        const auto c = p.sample_choice({0.0, 0.0, 0.0, 0.0}, rng);
        EXPECT_EQ(c.option, 1u);
        EXPECT_EQ(c.action, 1);
    }
}

TEST(SampleAction, FrequenciesMatchProbabilitiesWithinThreeSigma) {
    Rng rng(5);
    const AsapPolicy p = random_policy(2, rng);
    const EnvState x = random_state(rng);
    const double p1 = p.action_probability(x, 1);
    const int n = 100000;
    int ones = 0;
    for (int t = 0; t < n; ++t) ones += p.sample(x, rng);
    const double sigma = std::sqrt(n * p1 * (1.0 - p1));
    EXPECT_LT(std::abs(ones - n * p1), 3.0 * sigma);
}

TEST(SampleAction, SameSeedSameSequence) {
    Rng init(6);
    const AsapPolicy p = random_policy(1, init);
    Rng a(99), b(99);
    for (int t = 0; t < 100; ++t) EXPECT_EQ(p.sample({0.1, 0.0, 0.0, 0.0}, a), p.sample({0.1, 0.0, 0.0, 0.0}, b));
}

TEST(PartitionMap, ThetaAlignedHyperplaneSplitsAlongAVerticalLine) {
    AsapPolicy p(1);
    p.set_hyperplane(0, vec({0.0, 0.0, 1.0, 0.0, 0.0}));
    PartitionGrid grid;
    grid.theta_points = 5;
    grid.theta_dot_points = 4;
    const auto cells = partition_map(p, grid);
    ASSERT_EQ(cells.size(), 20u);
    for (const auto& c : cells) {
        if (c.theta < 0.0) {
            EXPECT_EQ(c.option_label, 0u);
        }
        if (c.theta > 0.0) {
            EXPECT_EQ(c.option_label, 1u);
        }
    }
}

TEST(PartitionMap, LabelsAreInvariantUnderPositiveRescaling) {
    Rng rng(7);
    AsapPolicy p = random_policy(1, rng);
    AsapPolicy scaled = p;
    scaled.set_hyperplane(0, 3.5 * p.hyperplane_matrix().row(0).transpose());
    const PartitionGrid grid;
    const auto a = partition_map(p, grid);
    const auto b = partition_map(scaled, grid);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].option_label, b[i].option_label);
}

TEST(PartitionMap, RegionsAreComplementaryHalfSpaces) {
    Rng rng(8);
    const AsapPolicy p = random_policy(1, rng);
    const PartitionGrid grid;
    for (const auto& c : partition_map(p, grid)) {
        EnvState x = grid.base;
        x[2] = c.theta;
        x[3] = c.theta_dot;
        const double z = p.hyperplane_activations(x)[0];
        if (z > 0.0) {
            EXPECT_EQ(c.option_label, 1u);
        }
        if (z < 0.0) {
            EXPECT_EQ(c.option_label, 0u);
        }
    }
}

TEST(PartitionMap, CsvHasOneRowPerCell) {
    AsapPolicy p(1);
    const auto grid = parse_partition_grid("-0.2:0.2:7,-1:1:3");
    const auto cells = partition_map(p, grid);
    const auto path = std::filesystem::temp_directory_path() / "ropi_partition_test.csv";
    write_partition_csv(cells, path.string());
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "theta,theta_dot,option_label");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    EXPECT_EQ(rows, 21);
    std::filesystem::remove(path);
    EXPECT_THROW(partition_map(AsapPolicy::flat(), grid), ContractViolation);
    EXPECT_THROW(parse_partition_grid("1:2"), ConfigError);
}

}  // namespace
}  // namespace ropi
