#include "urdg/config.hpp"
#include "urdg/digest.hpp"
#include "urdg/error.hpp"
#include "urdg/trainer.hpp"

#include <gtest/gtest.h>

#include <filesystem>

namespace urdg {
namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.generator.samples_per_class_per_domain = 8;
  c.epochs = 3;
  c.batch_size = 16;
  c.seed = 4;
  return c;
}

ExperimentConfig unified(Method m) {
  ExperimentConfig c = small_config();
  c.method = m;
  c.alignment = Alignment::scl;
  c.decoupling = Decoupling::cid;
  c.optimizer.kind = OptimizerKind::adam;
  c.optimizer.lr = 3e-3;
  return c;
}

Dataset first_batch(const ExperimentConfig& c) {
  const Dataset data = generate(c.generator);
  return Dataset(data.begin(), data.begin() + c.batch_size);
}

std::map<std::string, Eigen::MatrixXd> delta(const Parameters& after, const Parameters& before, bool club) {
  std::map<std::string, Eigen::MatrixXd> d;
  for (const auto& [name, w] : after.weights) {
    if (is_club_weight(name) == club) d[name] = w - before.weights.at(name);
  }
  return d;
}

TEST(Config, JsonRoundTripAndDefaults) {
  ExperimentConfig c = unified(Method::ur_jigen);
  c.train_modalities = {"B"};
  c.mix.mode = MixMode::fixed;
  nlohmann::json j = c;
  EXPECT_EQ(j.get<ExperimentConfig>(), c);
  EXPECT_EQ(nlohmann::json::object().get<ExperimentConfig>(), ExperimentConfig{});
  j["learning_rate"] = 1.0;
  EXPECT_THROW(j.get<ExperimentConfig>(), ValidationError);
}

TEST(Config, ValidationNamesField) {
  auto field_of = [](const ExperimentConfig& c, bool full = true) {
    try {
      c.validate(full);
    } catch (const ValidationError& e) {
      return e.field();
    }
    return std::string();
  };
  ExperimentConfig c = small_config();
  EXPECT_EQ(field_of(c), "");
  c.dims.z_dim = 5;
  EXPECT_NE(field_of(c), "");
  c = small_config();
  c.train_modalities = {"A", "C"};
  EXPECT_NE(field_of(c), "");
  c = small_config();
  c.method = Method::ur_mixup;
  EXPECT_NE(field_of(c), "");
  EXPECT_EQ(field_of(c, false), "");
  c = small_config();
  c.alignment = Alignment::ucl;
  c.train_modalities = {"A"};
  EXPECT_NE(field_of(c), "");
  c = small_config();
  c.target_or_source_domain = 3;
  EXPECT_NE(field_of(c), "");
}

TEST(Config, Digests) {
  const ExperimentConfig a = small_config();
  ExperimentConfig b = a;
  EXPECT_EQ(config_digest(a), config_digest(b));
  EXPECT_EQ(config_digest(a).size(), 64u);
  b.seed = 99;
  b.generator.seed = 5;
  EXPECT_NE(config_digest(a), config_digest(b));
  EXPECT_EQ(seedless_digest(a), seedless_digest(b));
  b.epochs = 4;
  EXPECT_NE(seedless_digest(a), seedless_digest(b));
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Trainer, ZeroEpochsKeepsInitialParameters) {
  ExperimentConfig c = small_config();
  c.epochs = 0;
  const TrainState s = fit(c);
  EXPECT_EQ(s.params, init_state(c).params);
  EXPECT_TRUE(s.history.empty());
}

TEST(Trainer, HistoryLengthAndDeterminism) {
  for (Method m : {Method::base, Method::mixup, Method::jigen, Method::ibn, Method::ur_mixup, Method::ur_jigen,
                   Method::ur_ibn}) {
    ExperimentConfig c = is_unified(m) ? unified(m) : small_config();
    c.method = m;
    const TrainState a = fit(c);
    EXPECT_EQ(a.history.size(), 3u) << to_string(m);
    EXPECT_TRUE(a == fit(c)) << to_string(m);
  }
}

TEST(Trainer, ResumeIsBitIdentical) {
  const ExperimentConfig c = unified(Method::ur_mixup);
  const TrainState straight = fit(c);

  const Dataset data = generate(c.generator);
  const DatasetSplit split = make_split(c, data);
  TrainState partial = init_state(c);
  train_epochs(partial, split.train, c, 1);
  const auto path = std::filesystem::temp_directory_path() / "urdg_resume.json";
  save_state(partial, path);
  TrainState resumed = load_state(path);
  EXPECT_TRUE(resumed == partial);
  train_epochs(resumed, split.train, c);
  EXPECT_TRUE(resumed == straight);
}

TEST(Trainer, StepFromCheckpointIsRepeatable) {
  const ExperimentConfig c = unified(Method::ur_jigen);
  const Dataset batch = first_batch(c);
  const TrainState start = init_state(c);
  TrainState a = start, b = start;
  train_step(a, batch, c);
  train_step(b, batch, c);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a.params == start.params);
}

TEST(Trainer, ZeroInnerStepsLeavesQNetworks) {
  ExperimentConfig c = unified(Method::ur_mixup);
  c.qnet_inner_steps = 0;
  const TrainState start = init_state(c);
  TrainState s = start;
  train_step(s, first_batch(c), c);
  for (const auto& [name, d] : delta(s.params, start.params, true)) EXPECT_TRUE(d.isZero()) << name;
}

TEST(Trainer, GradientFlowSeparation) {
  ExperimentConfig c = unified(Method::ur_mixup);
  c.qnet_inner_steps = 2;
  c.qnet_lr = 1e-2;
  const Dataset batch = first_batch(c);
  const TrainState start = init_state(c);

  // q-networks see only club_nll: their update ignores the main objective.
  TrainState with_club = start, without_club = start;
  ExperimentConfig no_club = c;
  no_club.weights.mutual_info = 0.0;
  train_step(with_club, batch, c);
  train_step(without_club, batch, no_club);
  EXPECT_EQ(delta(with_club.params, start.params, true), delta(without_club.params, start.params, true));

  // Encoders see only the main objective: q fitting never leaks into them.
  TrainState fitted = start, unfitted = start;
  ExperimentConfig no_inner = no_club;
  no_inner.qnet_inner_steps = 0;
  train_step(fitted, batch, no_club);
  train_step(unfitted, batch, no_inner);
  EXPECT_EQ(delta(fitted.params, start.params, false), delta(unfitted.params, start.params, false));
}

TEST(Trainer, ClassificationOnlyMatchesReferenceStep) {
  ExperimentConfig c = small_config();
  c.weights = LossWeights{1.0, 0.0, 0.0, 0.0, 0.0};
  const Dataset batch = first_batch(c);
  TrainState s = init_state(c);
  Parameters expected = s.params;
  train_step(s, batch, c);

  // Plain joint classification: per-modality heads and the fusion head, equally weighted.
  ad::Tape tape;
  BoundParams p(tape, expected, [](const std::string& n) { return !is_club_weight(n); });
  std::vector<int> labels;
  for (const auto& x : batch) labels.push_back(x.class_label);
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(batch.size()), 6);
  for (std::size_t i = 0; i < labels.size(); ++i) y(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  std::vector<ad::Var> hats;
  ad::Var sum;
  for (const auto& m : {"A", "B"}) {
    ad::Var x = tape.constant(stack_modality(batch, m));
    ad::Var hat = nn::decode(p, m, nn::encode_general(p, m, x), nn::encode_specific(p, m, x));
    hats.push_back(hat);
    ad::Var ce = loss::soft_cross_entropy(nn::classify(p, m, hat), y);
    sum = sum.valid() ? ad::add(sum, ce) : ce;
  }
  sum = ad::add(sum, loss::soft_cross_entropy(nn::classify(p, "fusion", ad::concat_cols(hats)), y));
  tape.backward(ad::scale(sum, 1.0 / 3.0));
  OptimizerState opt;
  optimizer_step(expected, opt, p.gradients(), c.optimizer);

  for (const auto& [name, w] : expected.weights) {
    EXPECT_LT((w - s.params.weights.at(name)).cwiseAbs().maxCoeff(), 1e-14) << name;
  }
}

TEST(Trainer, ReconstructionWeightIsLinear) {
  ExperimentConfig c = unified(Method::ur_mixup);
  const Dataset batch = first_batch(c);
  const TrainState s = init_state(c);
  const LossBreakdown one = evaluate_losses(s, batch, c);
  c.weights.reconstruction *= 2.0;
  const LossBreakdown two = evaluate_losses(s, batch, c);
  EXPECT_NEAR(two.total - one.total, one.reconstruction, 1e-12);
}

TEST(Trainer, EvaluateLossesDoesNotMutate) {
  const ExperimentConfig c = unified(Method::ur_ibn);
  const TrainState s = init_state(c);
  const TrainState copy = s;
  evaluate_losses(s, first_batch(c), c);
  EXPECT_TRUE(s == copy);
}

TEST(Trainer, NoiseFreeBaseSeparable) {
  ExperimentConfig c;
  c.generator.noise_sigma = 0.0;
  c.generator.samples_per_class_per_domain = 10;
  c.epochs = 20;
  const MetricsReport r = run_experiment(c);
  EXPECT_EQ(r.at("train", "A+B"), 1.0);

  const auto& h = r.loss_history;
  ASSERT_EQ(h.size(), 20u);
  for (std::size_t e = 1; e < h.size(); ++e) EXPECT_LE(h[e].total, h[e - 1].total + 1e-6) << "epoch " << e;
}

TEST(Trainer, NonFiniteLossAborts) {
  ExperimentConfig c = small_config();
  c.optimizer.lr = 1e6;
  c.epochs = 5;
  EXPECT_THROW(fit(c), NumericalError);
}

TEST(Experiment, ReportSchemaAndDeterminism) {
  const ExperimentConfig c = unified(Method::ur_mixup);
  const MetricsReport a = run_experiment(c);
  EXPECT_EQ(a, run_experiment(c));
  for (const auto& split : {"train", "test"}) {
    for (const auto& subset : {"A", "B", "A+B"}) EXPECT_NO_THROW(a.at(split, subset));
  }
  EXPECT_EQ(a.config_digest, config_digest(c));
  ASSERT_TRUE(a.probes.has_value());
  ASSERT_TRUE(a.alignment.has_value());
  nlohmann::json j = a;
  EXPECT_EQ(j.get<MetricsReport>(), a);
}

TEST(Experiment, SingleSourceReportsEachHeldOutDomain) {
  ExperimentConfig c = small_config();
  c.protocol = Protocol::single_source;
  c.target_or_source_domain = 1;
  const MetricsReport r = run_experiment(c);
  EXPECT_NO_THROW(r.at("test/domain0", "A+B"));
  EXPECT_NO_THROW(r.at("test/domain2", "A"));
}

TEST(Ablation, Cells) {
  ExperimentConfig base = unified(Method::ur_mixup);
  const auto grid = ablation_cells(base, parse_axes("alignment,decoupling", base));
  ASSERT_EQ(grid.size(), 7u);
  const std::vector<std::pair<std::string, std::string>> rows{{"none", "none"}, {"ucl", "none"}, {"scl", "none"},
                                                             {"ucl", "mid"},   {"scl", "mid"},  {"ucl", "cid"},
                                                             {"scl", "cid"}};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(grid[i].axis_values.at("alignment"), rows[i].first);
    EXPECT_EQ(grid[i].axis_values.at("decoupling"), rows[i].second);
  }
  const auto mix = ablation_cells(base, parse_axes("mix.mode", base));
  ASSERT_EQ(mix.size(), 2u);
  EXPECT_EQ(mix[0].config.mix.mode, MixMode::fixed);
  EXPECT_EQ(mix[1].config.mix.mode, MixMode::rand);

  base.method = Method::ur_jigen;
  const auto jig = ablation_cells(base, parse_axes("jigsaw.P", base));
  std::vector<int> ps;
  for (const auto& cell : jig) ps.push_back(cell.config.jigsaw.permutations);
  EXPECT_EQ(ps, (std::vector<int>{2, 6, 12, 24}));
  EXPECT_EQ(parse_axes("jigsaw.P=3:5", base).jigsaw_p, (std::vector<int>{3, 5}));
  EXPECT_EQ(ablation_cells(base, parse_axes("", base)).size(), 1u);
  EXPECT_THROW(parse_axes("alignment,depth", base), ValidationError);
}

TEST(Ablation, IdenticalCellsGiveIdenticalRows) {
  ExperimentConfig base = small_config();
  base.epochs = 1;
  const auto rows = run_ablation_suite(base, parse_axes("", base));
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].report, run_experiment(base));
  EXPECT_EQ(ablation_csv(rows, {}), ablation_csv(run_ablation_suite(base, {}), {}));
}

}  // namespace
}  // namespace urdg
