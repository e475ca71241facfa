#include "urdg/error.hpp"
#include "urdg/nets.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace urdg {
namespace {

ModelDims dims() {
  ModelDims d;
  d.modalities = {{"A", 6}, {"B", 4}};
  d.z_dim = 4;
  d.hidden_dim = 8;
  d.num_classes = 3;
  d.num_permutations = 5;
  return d;
}

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int r, int c) {
  std::normal_distribution<double> n;
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = n(rng);
  return m;
}

Parameters zeroed(Parameters p) {
  for (auto& [name, w] : p.weights) w.setZero();
  return p;
}

TEST(Nets, Shapes) {
  const Parameters p = init_parameters(dims(), 1);
  const Eigen::VectorXd x = Eigen::VectorXd::Ones(6);
  const Eigen::VectorXd z = encode_general(p, "A", x);
  const Eigen::VectorXd zbar = encode_specific(p, "A", x);
  EXPECT_EQ(z.size(), 4);
  EXPECT_EQ(zbar.size(), 4);
  EXPECT_EQ(decode(p, "A", z, zbar).size(), 6);
  EXPECT_EQ(decode(p, "B", z, zbar).size(), 4);
  EXPECT_EQ(classify(p, "A", x).size(), 3);
  EXPECT_EQ(classify(p, "fusion", Eigen::VectorXd::Ones(10)).size(), 3);
  const auto [mu, logvar] = club_net_forward(p, "A", z);
  EXPECT_EQ(mu.size(), 4);
  EXPECT_EQ(logvar.size(), 4);
  EXPECT_THROW(encode_general(p, "A", Eigen::VectorXd::Ones(5)), ValidationError);
  EXPECT_THROW(encode_general(p, "C", x), ValidationError);
}

TEST(Nets, ZeroWeightsGiveZeroOutputs) {
  const Parameters p = zeroed(init_parameters(dims(), 1));
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(6, -1, 1);
  EXPECT_TRUE(encode_general(p, "A", x).isZero());
  EXPECT_TRUE(encode_specific(p, "A", x).isZero());
  EXPECT_TRUE(decode(p, "A", Eigen::VectorXd::Ones(4), Eigen::VectorXd::Ones(4)).isZero());
  const Eigen::VectorXd logits = classify(p, "A", x);
  const Eigen::ArrayXd prob = logits.array().exp() / logits.array().exp().sum();
  EXPECT_TRUE(prob.isApproxToConstant(1.0 / 3.0, 1e-15));
}

TEST(Nets, ClubLogVarClamped) {
  Parameters p = zeroed(init_parameters(dims(), 1));
  p.weights.at("club/A/logvar/b2").setConstant(12.0);
  const auto [mu, logvar] = club_net_forward(p, "A", Eigen::VectorXd::Ones(4));
  EXPECT_TRUE(logvar.isApproxToConstant(8.0));
  p.weights.at("club/A/logvar/b2").setConstant(-12.0);
  EXPECT_TRUE(club_net_forward(p, "A", Eigen::VectorXd::Ones(4)).second.isApproxToConstant(-8.0));
}

TEST(Nets, InitContract) {
  const Parameters a = init_parameters(dims(), 9);
  EXPECT_EQ(a, init_parameters(dims(), 9));
  EXPECT_NE(a, init_parameters(dims(), 10));
  for (const auto& [name, w] : a.weights) {
    if (name.ends_with("/gamma")) {
      EXPECT_TRUE(w.isOnes()) << name;
    } else if (name.ends_with("/beta") || name.find("/b") != std::string::npos) {
      EXPECT_TRUE(w.isZero()) << name;
    } else {
      const double bound = 1.0 / std::sqrt(static_cast<double>(w.rows()));
      EXPECT_LE(w.cwiseAbs().maxCoeff(), bound) << name;
    }
  }
}

TEST(Nets, ParametersJsonRoundTrip) {
  const Parameters a = init_parameters(dims(), 3);
  EXPECT_EQ(parameters_from_json(parameters_to_json(a)), a);
}

class Ibn : public ::testing::Test {
 protected:
  Parameters p = init_parameters(dims(), 2);
  std::mt19937_64 rng{5};

  Eigen::MatrixXd apply(const Eigen::MatrixXd& v, bool training = true) {
    BatchContext ctx;
    ctx.training = training;
    ctx.running_stats = &p.buffers;
    return ibn_layer(p, IbnSite::unified, "A", v, ctx);
  }
};

TEST_F(Ibn, ConstantFrontHalfNormalizesToZero) {
  Eigen::MatrixXd v = random_matrix(rng, 5, 4);
  for (int i = 0; i < 5; ++i) v.row(i).head(2).setConstant(0.3 * i - 1.0);
  const Eigen::MatrixXd out = apply(v) - v;
  EXPECT_LT(out.leftCols(2).cwiseAbs().maxCoeff(), 1e-12);
}

TEST_F(Ibn, ZeroAffineIsIdentity) {
  p.weights.at("ibn_ur/A/gamma").setZero();
  p.weights.at("ibn_ur/A/beta").setZero();
  const Eigen::MatrixXd v = random_matrix(rng, 4, 4);
  EXPECT_TRUE(apply(v).isApprox(v, 1e-15));
  EXPECT_TRUE(apply(v, false).isApprox(v, 1e-15));
}

TEST_F(Ibn, TwoSampleBatchNorm) {
  Eigen::MatrixXd v = random_matrix(rng, 2, 4);
  v.block(0, 2, 1, 2).setConstant(-1.0);
  v.block(1, 2, 1, 2).setConstant(1.0);
  const Eigen::MatrixXd bn = (apply(v) - v).rightCols(2);
  const double expected = 1.0 / std::sqrt(1.0 + 1e-5);
  EXPECT_NEAR(bn(0, 0), -expected, 1e-12);
  EXPECT_NEAR(bn(1, 1), expected, 1e-12);
}

TEST_F(Ibn, TrainModeBatchMeanIsZero) {
  const Eigen::MatrixXd v = random_matrix(rng, 7, 4) * 3.0;
  const Eigen::MatrixXd bn = (apply(v) - v).rightCols(2);
  EXPECT_LT(bn.colwise().mean().cwiseAbs().maxCoeff(), 1e-6);
}

TEST_F(Ibn, TrainModeUpdatesRunningStats) {
  const auto before = p.buffers;
  apply(random_matrix(rng, 6, 4) + Eigen::MatrixXd::Constant(6, 4, 2.0));
  EXPECT_NE(p.buffers.at("ibn_ur/A/running_mean"), before.at("ibn_ur/A/running_mean"));
}

TEST_F(Ibn, EvalModeIgnoresBatchComposition) {
  p.buffers.at("ibn_ur/A/running_mean") << 0.5, -0.2;
  p.buffers.at("ibn_ur/A/running_var") << 2.0, 0.7;
  const Eigen::MatrixXd batch = random_matrix(rng, 6, 4);
  const Eigen::MatrixXd alone = apply(batch.topRows(1), false);
  const Eigen::MatrixXd together = apply(batch, false);
  EXPECT_TRUE(alone.row(0).isApprox(together.row(0), 1e-15));
  Eigen::MatrixXd other = random_matrix(rng, 6, 4);
  other.row(3) = batch.row(0);
  EXPECT_TRUE(apply(other, false).row(3).isApprox(alone.row(0), 1e-15));
}

TEST_F(Ibn, InstanceNormIdempotentOnNormalizedInput) {
  Eigen::MatrixXd v = random_matrix(rng, 4, 4);
  for (int i = 0; i < 4; ++i) v.row(i).head(2) << -1.0, 1.0;  // mean 0, variance 1
  const Eigen::MatrixXd in = (apply(v) - v).leftCols(2);
  EXPECT_LT((in - v.leftCols(2)).cwiseAbs().maxCoeff(), 1e-4);
}

TEST_F(Ibn, EvalWithoutStatisticsThrows) {
  BatchContext ctx;
  ctx.training = false;
  ad::Tape tape;
  BoundParams bound(tape, p, nullptr);
  EXPECT_THROW(nn::ibn(bound, IbnSite::unified, "A", tape.constant(random_matrix(rng, 2, 4)), ctx), ValidationError);
}

}  // namespace
}  // namespace urdg
