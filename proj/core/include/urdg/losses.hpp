#pragma once

// Scalar training objectives. Each loss has a tape form (used by the trainer
// and by gradient checks) and, where useful, a plain-value form.

#include "urdg/autodiff.hpp"
#include "urdg/nets.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <map>
#include <span>
#include <string>
#include <vector>

namespace urdg {

struct LossWeights {
  double classification = 1.0;  // alpha1
  double contrastive = 2.0;     // alpha2
  double mutual_info = 2.0;     // alpha3
  double reconstruction = 1.0;  // alpha4
  double jigsaw = 1.0;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

struct ContrastiveEntry {
  Eigen::VectorXd embedding;
  int class_label = 0;
  int sample_index = 0;
  std::string modality;
};

struct ContrastiveBatch {
  std::vector<ContrastiveEntry> entries;
  double temperature = 0.1;
};

/// Individual loss values plus their weighted sum.
struct LossBreakdown {
  double classification = 0.0;
  double contrastive = 0.0;
  double mutual_info = 0.0;
  double reconstruction = 0.0;
  double jigsaw = 0.0;
  double total = 0.0;

  std::map<std::string, double> as_map() const;
  bool operator==(const LossBreakdown&) const = default;
};

namespace loss {

/// Sum over anchors of -1/|P(i)| sum_p log softmax_{a != i}(z_i . z_a / tau)[p],
/// with rows L2-normalized first and P(i) = {p != i : group[p] == group[i]}.
/// Anchors with no positives contribute 0.
ad::Var contrastive(const ad::Var& embeddings, std::span<const int> groups, double temperature);

/// Positives share the class label.
ad::Var supcon(const ad::Var& embeddings, std::span<const int> class_labels, double temperature);
/// Positives are the other views of the same sample; rejects batches without negatives.
ad::Var unsup_contrastive(const ad::Var& embeddings, std::span<const int> sample_index, double temperature);

/// N x N matrix of log q(zbar_j | z_i) under diag Gaussians (mu_i, exp(logvar_i)).
ad::Var gaussian_log_density_matrix(const ad::Var& mu, const ad::Var& logvar, const ad::Var& zbar);

/// Mean Gaussian negative log-likelihood of zbar_i under (mu_i, logvar_i).
ad::Var club_nll(const ad::Var& mu, const ad::Var& logvar, const ad::Var& zbar);
/// (1/N) sum_i [log q(zbar_i|z_i) - (1/N) sum_j log q(zbar_j|z_i)], j = i included.
ad::Var club_estimate(const ad::Var& mu, const ad::Var& logvar, const ad::Var& zbar);

/// Batch mean of ||x - x_hat||^2.
ad::Var recon(const ad::Var& x, const ad::Var& x_hat);
/// Batch mean of -sum_k y_k log softmax(logits)_k.
ad::Var soft_cross_entropy(const ad::Var& logits, const Eigen::MatrixXd& soft_labels);
/// Batch mean of max(0, margin - mean_d (z - zbar)^2).
ad::Var mse_decoupling(const ad::Var& z, const ad::Var& zbar, double margin);

}  // namespace loss

// Plain-value forms.
double supcon_loss(const ContrastiveBatch& batch);
double unsup_contrastive_loss(const ContrastiveBatch& batch);
/// `pairs` are (z, zbar); q-network weights come from `params` for `modality`.
double club_nll(const Parameters& params, const std::string& modality, const std::vector<LatentPair>& pairs);
double club_estimate(const Parameters& params, const std::string& modality, const std::vector<LatentPair>& pairs);
double recon_loss(const Eigen::VectorXd& x, const Eigen::VectorXd& x_hat);
double soft_cross_entropy(const Eigen::VectorXd& logits, const Eigen::VectorXd& soft_label);
double mse_decoupling_loss(const Eigen::VectorXd& z, const Eigen::VectorXd& zbar, double margin = 1.0);

/// Fills `total`; throws NumericalError naming the first non-finite component.
LossBreakdown total_loss(LossBreakdown components, const LossWeights& weights);

/// Throws ValidationError unless entries are >= 0 and sum to 1 within 1e-8.
void check_simplex(const Eigen::Ref<const Eigen::VectorXd>& p);

}  // namespace urdg
