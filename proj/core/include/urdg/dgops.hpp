#pragma once

// Domain-generalization operators, in their direct-transfer form (on raw
// per-modality features) and their unified-representation form (on the
// general latents z).

#include "urdg/autodiff.hpp"
#include "urdg/nets.hpp"
#include "urdg/synthbench.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace urdg {

using Permutation = std::vector<int>;

/// P distinct permutations of {0..O-1}; the label of a permutation is its
/// index, and perms[0] is the identity.
class PermutationCodebook {
 public:
  PermutationCodebook(int segments, std::vector<Permutation> perms);

  int segments() const { return segments_; }
  int size() const { return static_cast<int>(perms_.size()); }
  const Permutation& at(int index) const;
  const std::vector<Permutation>& perms() const { return perms_; }
  /// Index of `perm`, or -1 if absent.
  int label_of(const Permutation& perm) const;

  bool operator==(const PermutationCodebook&) const = default;

 private:
  int segments_;
  std::vector<Permutation> perms_;
};

void to_json(nlohmann::json& j, const PermutationCodebook& cb);
PermutationCodebook codebook_from_json(const nlohmann::json& j);

/// Identity first, then greedy max-min Hamming selection over all O!
/// permutations with seeded tie-breaking. Requires 2 <= O <= 8, 1 <= P <= O!.
PermutationCodebook build_codebook(int segments, int count, std::uint64_t seed);

Permutation inverse_permutation(const Permutation& perm);
int hamming_distance(const Permutation& a, const Permutation& b);

/// Output segment k is input segment perm[k].
Eigen::VectorXd jigen_shuffle(const Eigen::VectorXd& v, const PermutationCodebook& codebook, int perm_index);
/// Applies an arbitrary permutation of segments (used for inverses).
Eigen::VectorXd permute_segments(const Eigen::VectorXd& v, const Permutation& perm);

/// Which modality feeds each segment slot, and which codebook permutation follows.
struct JigsawDraw {
  std::vector<int> slot_modality;
  int perm_index = 0;
};

JigsawDraw draw_jigsaw(int num_modalities, const PermutationCodebook& codebook, std::mt19937_64& rng);

struct ComposedJigsaw {
  Eigen::VectorXd vector;
  int label = 0;
};

/// Builds z^r from per-slot modality choices, then shuffles it.
ComposedJigsaw ur_jigen_compose(const std::vector<Eigen::VectorXd>& general, const PermutationCodebook& codebook,
                                const JigsawDraw& draw);
ComposedJigsaw ur_jigen_compose(const std::vector<Eigen::VectorXd>& general, const PermutationCodebook& codebook,
                                std::mt19937_64& rng);

/// gather_blocks table for a batch of composites (sources = modalities).
std::vector<std::vector<ad::BlockRef>> jigsaw_block_table(const std::vector<JigsawDraw>& draws,
                                                          const PermutationCodebook& codebook);

/// Mean cross-entropy of P-way logits against permutation labels.
ad::Var jigen_loss(const ad::Var& logits, const std::vector<int>& labels);
/// Plain form: classifier `head` ("shared" or a modality) applied to `composed` rows.
double jigen_loss(const Parameters& params, const std::string& head, const Eigen::MatrixXd& composed,
                  const std::vector<int>& labels);

enum class MixMode { rand, fixed };

struct MixSpec {
  MixMode mode = MixMode::rand;
  double beta_alpha = 0.2;
  double fixed_lambda = 0.5;
  std::uint64_t partner_seed = 0;

  void validate() const;
  bool operator==(const MixSpec&) const = default;
};

void to_json(nlohmann::json& j, const MixSpec& m);
void from_json(const nlohmann::json& j, MixSpec& m);
std::string to_string(MixMode m);
MixMode mix_mode_from_string(const std::string& s);

/// One partner index and one lambda per batch row, shared by every modality.
struct MixPlan {
  std::vector<Eigen::Index> partner;
  std::vector<double> lambda;
};

/// Partners come from one uniformly random permutation of the batch.
MixPlan plan_mixup(std::size_t batch_size, const MixSpec& spec, std::mt19937_64& rng);

/// lambda_i * x_i + (1 - lambda_i) * x_partner(i), row-wise.
ad::Var mix_rows(const ad::Var& x, const MixPlan& plan);
Eigen::MatrixXd mix_rows(const Eigen::MatrixXd& x, const MixPlan& plan);
Eigen::MatrixXd mix_labels(const std::vector<int>& labels, int num_classes, const MixPlan& plan);
Eigen::MatrixXd one_hot(const std::vector<int>& labels, int num_classes);

struct MixedBatch {
  Dataset samples;
  Eigen::MatrixXd soft_labels;
};

MixedBatch mixup_raw(const Dataset& batch, int num_classes, const MixPlan& plan);
MixedBatch mixup_raw(const Dataset& batch, int num_classes, const MixSpec& spec, std::mt19937_64& rng);

struct MixedLatents {
  /// Mixed general latents per modality.
  std::map<std::string, Eigen::MatrixXd> general;
  /// The anchor's own specific latents, unchanged.
  std::map<std::string, Eigen::MatrixXd> specific;
  Eigen::MatrixXd soft_labels;
};

/// `latents[m]` holds one LatentPair per batch row.
MixedLatents ur_mixup(const std::map<std::string, std::vector<LatentPair>>& latents, const std::vector<int>& labels,
                      int num_classes, const MixPlan& plan);

enum class IbnMode { raw_baseline, unified };

/// IBN on raw per-modality features (raw_baseline) or on general latents (unified).
ad::Var apply_ibn(BoundParams& params, IbnMode mode, const std::string& modality, const ad::Var& vectors,
                  BatchContext& ctx);
Eigen::MatrixXd apply_ibn(const Parameters& params, IbnMode mode, const std::string& modality,
                          const Eigen::MatrixXd& vectors, BatchContext ctx);

}  // namespace urdg
