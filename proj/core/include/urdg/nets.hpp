#pragma once

// Differentiable model components. Parameters are a flat, name-keyed store:
//
//   general/<m>/{w1,b1,w2,b2}    category encoder for modality m
//   specific/<m>/{w1,b1,w2,b2}   category-agnostic encoder
//   decoder/<m>/{w1,b1,w2,b2}    (z ++ zbar) -> x_hat
//   head/<m>/{w,b}, head/fusion/{w,b}
//   jigsaw/shared/{w,b}          permutation classifier on composed latents
//   jigsaw/<m>/{w,b}             per-modality permutation classifiers
//   club/<m>/{mu,logvar}/{w1,b1,w2,b2}
//   ibn_ur/<m>/{gamma,beta}, ibn_raw/<m>/{gamma,beta}
//
// BN running statistics are buffers: <ibn prefix>/running_{mean,var}.

#include "urdg/autodiff.hpp"
#include "urdg/synthbench.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace urdg {

struct ModelDims {
  std::vector<ModalitySpec> modalities;
  int z_dim = 8;
  int hidden_dim = 32;
  int num_classes = 6;
  int num_permutations = 24;

  void validate() const;
  int raw_dim(const std::string& modality) const;
  int fusion_dim() const;
  std::vector<std::string> modality_names() const;
  bool has_modality(const std::string& modality) const;

  bool operator==(const ModelDims&) const = default;
};

void to_json(nlohmann::json& j, const ModelDims& dims);
void from_json(const nlohmann::json& j, ModelDims& dims);

struct LatentPair {
  Eigen::VectorXd general;
  Eigen::VectorXd specific;
};

struct Parameters {
  ModelDims dims;
  std::map<std::string, Eigen::MatrixXd> weights;
  std::map<std::string, Eigen::MatrixXd> buffers;

  const Eigen::MatrixXd& weight(const std::string& name) const;

  bool operator==(const Parameters&) const = default;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, gamma = 1,
/// beta = 0, running mean 0 / var 1.
Parameters init_parameters(const ModelDims& dims, std::uint64_t seed);

/// True for weights owned by the CLUB variational networks.
bool is_club_weight(const std::string& name);

/// {name: {"rows","cols","data"}} with row-major data.
nlohmann::json matrices_to_json(const std::map<std::string, Eigen::MatrixXd>& ms);
std::map<std::string, Eigen::MatrixXd> matrices_from_json(const nlohmann::json& j);

// Checkpoints: JSON keyed by component name, each entry {"rows","cols","data"}.
nlohmann::json parameters_to_json(const Parameters& params);
Parameters parameters_from_json(const nlohmann::json& j);
void save_parameters(const Parameters& params, const std::filesystem::path& path);
Parameters load_parameters(const std::filesystem::path& path);

/// Binds parameters onto a tape on first use. Names accepted by `trainable`
/// become leaves; the rest are constants.
class BoundParams {
 public:
  BoundParams(ad::Tape& tape, const Parameters& params, std::function<bool(const std::string&)> trainable);

  ad::Var operator()(const std::string& name);
  ad::Tape& tape() { return tape_; }
  const ModelDims& dims() const { return params_.dims; }

  /// Gradients of every bound leaf after tape().backward(). Leaves that took
  /// no part in the loss get zero matrices.
  std::map<std::string, Eigen::MatrixXd> gradients() const;

 private:
  ad::Tape& tape_;
  const Parameters& params_;
  std::function<bool(const std::string&)> trainable_;
  std::map<std::string, ad::Var> bound_;
};

/// Batch statistics context for the IBN layer.
struct BatchContext {
  bool training = true;
  /// Receives updated running statistics in training mode (may be null).
  std::map<std::string, Eigen::MatrixXd>* running_stats = nullptr;
  double momentum = 0.9;
  double eps = 1e-5;
};

enum class IbnSite { unified, raw };

namespace nn {

// Batched forward passes on a tape; rows are samples.
ad::Var encode_general(BoundParams& p, const std::string& modality, const ad::Var& x);
ad::Var encode_specific(BoundParams& p, const std::string& modality, const ad::Var& x);
ad::Var decode(BoundParams& p, const std::string& modality, const ad::Var& z, const ad::Var& zbar);
/// `head` is a modality name or "fusion".
ad::Var classify(BoundParams& p, const std::string& head, const ad::Var& features);
/// Returns (mu, log variance clamped to [-8, 8]).
std::pair<ad::Var, ad::Var> club_forward(BoundParams& p, const std::string& modality, const ad::Var& z);
/// `head` is "shared" or a modality name.
ad::Var jigsaw_logits(BoundParams& p, const std::string& head, const ad::Var& features);
/// [IN(front) ++ BN(back)] * gamma + beta, plus the residual input.
ad::Var ibn(BoundParams& p, IbnSite site, const std::string& modality, const ad::Var& v, BatchContext& ctx);

std::string ibn_prefix(IbnSite site, const std::string& modality);

}  // namespace nn

// Single-vector evaluation helpers.
Eigen::VectorXd encode_general(const Parameters& params, const std::string& modality, const Eigen::VectorXd& x);
Eigen::VectorXd encode_specific(const Parameters& params, const std::string& modality, const Eigen::VectorXd& x);
Eigen::VectorXd decode(const Parameters& params, const std::string& modality, const Eigen::VectorXd& z,
                       const Eigen::VectorXd& zbar);
Eigen::VectorXd classify(const Parameters& params, const std::string& head, const Eigen::VectorXd& features);
std::pair<Eigen::VectorXd, Eigen::VectorXd> club_net_forward(const Parameters& params, const std::string& modality,
                                                             const Eigen::VectorXd& z);
/// Batched IBN outside a training tape; rows are samples.
Eigen::MatrixXd ibn_layer(const Parameters& params, IbnSite site, const std::string& modality, const Eigen::MatrixXd& v,
                          BatchContext ctx);

}  // namespace urdg
