#pragma once

// Declarative description of one experiment. The JSON form mirrors the field
// names below; missing keys take defaults and unknown keys are rejected.

#include "urdg/dgops.hpp"
#include "urdg/losses.hpp"
#include "urdg/nets.hpp"
#include "urdg/synthbench.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace urdg {

enum class Method { base, mixup, jigen, ibn, ur_mixup, ur_jigen, ur_ibn };
enum class Alignment { none, ucl, scl };
enum class Decoupling { none, mid, cid };
enum class OptimizerKind { sgd_momentum, adam };
/// How several modalities are combined at test time.
enum class FusionRule { fusion_head, logit_average };

std::string to_string(Method m);
std::string to_string(Alignment a);
std::string to_string(Decoupling d);
std::string to_string(OptimizerKind k);
std::string to_string(FusionRule f);
Method method_from_string(const std::string& s);
Alignment alignment_from_string(const std::string& s);
Decoupling decoupling_from_string(const std::string& s);
OptimizerKind optimizer_kind_from_string(const std::string& s);
FusionRule fusion_rule_from_string(const std::string& s);

bool is_unified(Method m);

struct LatentDims {
  int z_dim = 8;
  int hidden_dim = 32;

  bool operator==(const LatentDims&) const = default;
};

struct JigsawSpec {
  int segments = 4;       // O
  int permutations = 24;  // P

  bool operator==(const JigsawSpec&) const = default;
};

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::sgd_momentum;
  double lr = 1e-2;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-4;

  bool operator==(const OptimizerSpec&) const = default;
};

struct ExperimentConfig {
  GeneratorSpec generator;
  LatentDims dims;
  Method method = Method::base;
  Alignment alignment = Alignment::none;
  Decoupling decoupling = Decoupling::none;
  LossWeights weights;
  MixSpec mix;
  JigsawSpec jigsaw;
  OptimizerSpec optimizer;
  int epochs = 20;
  int batch_size = 32;
  int qnet_inner_steps = 1;
  double qnet_lr = 1e-3;
  Protocol protocol = Protocol::multi_source;
  int target_or_source_domain = 0;
  std::uint64_t seed = 0;
  /// Modalities the model is built and trained on; empty means all.
  std::vector<std::string> train_modalities;
  FusionRule fusion_rule = FusionRule::fusion_head;
  double temperature = 0.1;
  double mid_margin = 1.0;

  /// Throws ValidationError naming the first offending field. With
  /// `require_full_framework`, UR methods must enable alignment and decoupling.
  void validate(bool require_full_framework = true) const;

  /// Trained modalities in generator order.
  std::vector<std::string> modalities() const;
  ModelDims model_dims() const;

  bool operator==(const ExperimentConfig&) const = default;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// Reads and validates a config file. Parse failures raise FormatError.
ExperimentConfig load_config(const std::filesystem::path& path, bool require_full_framework = true);

}  // namespace urdg
