#pragma once

// Evaluation: subset accuracies, modality-competition tables, linear probes,
// cross-modal alignment and embedding export. Nothing here mutates parameters.

#include "urdg/config.hpp"
#include "urdg/losses.hpp"
#include "urdg/nets.hpp"
#include "urdg/synthbench.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace urdg {

/// Which optional layers a trained model runs at inference.
struct InferenceSpec {
  bool raw_ibn = false;
  bool unified_ibn = false;
  FusionRule fusion_rule = FusionRule::fusion_head;
};

InferenceSpec inference_spec(const ExperimentConfig& config);

/// Eval-mode latents, one row per sample. `general` is post-IBN when the
/// model uses a unified IBN layer.
struct EncodedSet {
  std::map<std::string, Eigen::MatrixXd> general;
  std::map<std::string, Eigen::MatrixXd> specific;
};

EncodedSet encode_set(const Parameters& params, const Dataset& data, const InferenceSpec& spec = {});

/// Orders `subset` by the model's modality order; rejects empty, unknown or repeated names.
std::vector<std::string> canonical_subset(const ModelDims& dims, const std::vector<std::string>& subset);
std::string subset_key(const std::vector<std::string>& canonical);

/// Class logits for `subset`: the modality head for one modality, the fusion
/// head for the full modality set, and the mean of per-modality logits for a
/// proper multi-modality subset (or always, under FusionRule::logit_average).
Eigen::MatrixXd predict_logits(const Parameters& params, const Dataset& data, const std::vector<std::string>& subset,
                               const InferenceSpec& spec = {});

/// Exact top-1 accuracy (correct / total) in BN eval mode.
double evaluate(const Parameters& params, const Dataset& test, const std::vector<std::string>& subset,
                const InferenceSpec& spec = {});

struct ProbeMetrics {
  double class_on_z = 0.0;
  double domain_on_z = 0.0;
  double class_on_zbar = 0.0;
  double domain_on_zbar = 0.0;

  bool operator==(const ProbeMetrics&) const = default;
};

struct AlignmentMetrics {
  double paired_cosine_mean = 0.0;
  double unpaired_cosine_mean = 0.0;

  bool operator==(const AlignmentMetrics&) const = default;
};

/// Held-out accuracy of a multinomial linear probe on standardized features,
/// 70/30 split by a seeded shuffle.
double linear_probe_accuracy(const Eigen::MatrixXd& features, const std::vector<int>& labels, std::uint64_t seed);

/// Probes on latents pooled over modalities.
ProbeMetrics probe_disentanglement(const Parameters& params, const Dataset& data, const InferenceSpec& spec = {},
                                   std::uint64_t seed = 0);

/// Cosine between general latents of different modalities: same sample
/// (paired) against all mismatched sample pairs, averaged over modality pairs.
AlignmentMetrics alignment_metrics(const Parameters& params, const Dataset& data, const InferenceSpec& spec = {});
AlignmentMetrics alignment_metrics(const EncodedSet& encoded);

/// Top-2 principal directions of the centred rows; each direction's sign makes
/// its largest-magnitude entry positive.
Eigen::MatrixXd pca_project_2d(const Eigen::MatrixXd& rows);

/// CSV: id,modality,stream,domain,class,x,y with one row per sample, modality and stream.
void export_embeddings(const Parameters& params, const Dataset& data, const std::filesystem::path& path,
                       const InferenceSpec& spec = {});

struct MetricsReport {
  std::string config_digest;
  std::string method;
  /// split ("train", "test", "test/domain<d>") -> subset key ("A", "A+B") -> accuracy.
  std::map<std::string, std::map<std::string, double>> accuracy;
  std::optional<ProbeMetrics> probes;
  std::optional<AlignmentMetrics> alignment;
  /// Per-epoch mean losses.
  std::vector<LossBreakdown> loss_history;

  double at(const std::string& split, const std::string& subset) const;
  bool operator==(const MetricsReport&) const = default;
};

void to_json(nlohmann::json& j, const MetricsReport& r);
void from_json(const nlohmann::json& j, MetricsReport& r);
void to_json(nlohmann::json& j, const LossBreakdown& b);
void from_json(const nlohmann::json& j, LossBreakdown& b);

/// split,subset,accuracy rows.
std::string report_csv(const MetricsReport& r);

/// Accuracies of one method under each training regime ("<m>-only", "multimodal").
struct CompetitionTable {
  std::string method;
  std::vector<std::string> modalities;
  /// regime -> test subset key -> accuracy.
  std::map<std::string, std::map<std::string, double>> accuracy;
  /// Config digests per regime.
  std::map<std::string, std::string> digests;
  /// Generator digests per regime; equal across regimes by construction.
  std::map<std::string, std::string> generator_digests;

  /// acc(m | multimodal) - acc(m | m-only).
  double delta_joint(const std::string& modality) const;
  std::vector<std::string> regimes() const;
};

/// Trains `config` once per single-modality regime and once on all modalities.
CompetitionTable competition_analysis(const ExperimentConfig& config);

/// DG-method improvement over `base` under joint training minus the same under
/// single-modality training, for one modality.
double delta_gain(const CompetitionTable& method, const CompetitionTable& base, const std::string& modality);

/// method,regime,subset,accuracy rows.
std::string competition_csv(const std::vector<CompetitionTable>& tables);

}  // namespace urdg
