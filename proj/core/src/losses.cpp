#include "urdg/losses.hpp"

#include "urdg/error.hpp"

#include <cmath>
#include <numbers>
#include <set>

namespace urdg {

namespace {

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

void require_finite(const ad::Var& v, const std::string& what) {
  if (!v.value().allFinite()) throw ValidationError(what, "contains non-finite values");
}

ad::Var stack_pairs(ad::Tape& tape, const std::vector<LatentPair>& pairs, bool general) {
  const auto& first = general ? pairs.front().general : pairs.front().specific;
  Eigen::MatrixXd m(static_cast<Eigen::Index>(pairs.size()), first.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& v = general ? pairs[i].general : pairs[i].specific;
    if (v.size() != first.size()) throw ValidationError("pairs", "inconsistent latent lengths");
    m.row(static_cast<Eigen::Index>(i)) = v.transpose();
  }
  return tape.constant(std::move(m));
}

ad::Var contrastive_batch_embeddings(ad::Tape& tape, const ContrastiveBatch& batch) {
  if (batch.entries.empty()) throw ValidationError("batch", "empty contrastive batch");
  const Eigen::Index dim = batch.entries.front().embedding.size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(batch.entries.size()), dim);
  for (std::size_t i = 0; i < batch.entries.size(); ++i) {
    if (batch.entries[i].embedding.size() != dim) throw ValidationError("batch", "inconsistent embedding lengths");
    m.row(static_cast<Eigen::Index>(i)) = batch.entries[i].embedding.transpose();
  }
  return tape.constant(std::move(m));
}

}  // namespace

void LossWeights::validate() const {
  auto check = [](double v, const char* field) {
    if (!std::isfinite(v) || v < 0) throw ValidationError(field, "loss weight must be finite and >= 0");
  };
  check(classification, "weights.alpha1");
  check(contrastive, "weights.alpha2");
  check(mutual_info, "weights.alpha3");
  check(reconstruction, "weights.alpha4");
  check(jigsaw, "weights.jig_weight");
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = nlohmann::json{{"alpha1", w.classification},
                     {"alpha2", w.contrastive},
                     {"alpha3", w.mutual_info},
                     {"alpha4", w.reconstruction},
                     {"jig_weight", w.jigsaw}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  static const std::set<std::string> known{"alpha1", "alpha2", "alpha3", "alpha4", "jig_weight"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ValidationError("weights." + key, "unknown field");
  }
  w.classification = j.value("alpha1", w.classification);
  w.contrastive = j.value("alpha2", w.contrastive);
  w.mutual_info = j.value("alpha3", w.mutual_info);
  w.reconstruction = j.value("alpha4", w.reconstruction);
  w.jigsaw = j.value("jig_weight", w.jigsaw);
}

std::map<std::string, double> LossBreakdown::as_map() const {
  return {{"cls", classification}, {"scl", contrastive}, {"club", mutual_info},
          {"rec", reconstruction}, {"jig", jigsaw},      {"total", total}};
}

namespace loss {

ad::Var contrastive(const ad::Var& embeddings, std::span<const int> groups, double temperature) {
  const Eigen::Index n = embeddings.rows();
  if (n < 2) throw ValidationError("batch", "contrastive loss needs at least 2 entries");
  if (static_cast<Eigen::Index>(groups.size()) != n) throw ValidationError("batch", "one group label per entry required");
  if (!(temperature > 0)) throw ValidationError("temperature", "must be positive");
  require_finite(embeddings, "embeddings");

  Mask others = Mask::Constant(n, n, true);
  for (Eigen::Index i = 0; i < n; ++i) others(i, i) = false;
  Eigen::MatrixXd weight = Eigen::MatrixXd::Zero(n, n);
  bool any_positive = false;
  for (Eigen::Index i = 0; i < n; ++i) {
    int positives = 0;
    for (Eigen::Index p = 0; p < n; ++p) positives += (p != i && groups[p] == groups[i]) ? 1 : 0;
    if (positives == 0) continue;
    any_positive = true;
    for (Eigen::Index p = 0; p < n; ++p) {
      if (p != i && groups[p] == groups[i]) weight(i, p) = -1.0 / positives;
    }
  }
  if (!any_positive) throw ValidationError("batch", "no anchor has a positive");

  ad::Tape& tape = *embeddings.tape();
  ad::Var unit = ad::l2_normalize_rows(embeddings);
  ad::Var sim = ad::scale(ad::matmul(unit, ad::transpose(unit)), 1.0 / temperature);
  ad::Var logp = ad::masked_log_softmax_rows(sim, others);
  return ad::sum(ad::mul(logp, tape.constant(std::move(weight))));
}

ad::Var supcon(const ad::Var& embeddings, std::span<const int> class_labels, double temperature) {
  return contrastive(embeddings, class_labels, temperature);
}

ad::Var unsup_contrastive(const ad::Var& embeddings, std::span<const int> sample_index, double temperature) {
  bool has_negative = false;
  for (std::size_t i = 0; i < sample_index.size() && !has_negative; ++i) {
    for (std::size_t j = 0; j < sample_index.size(); ++j) {
      if (sample_index[j] != sample_index[i]) {
        has_negative = true;
        break;
      }
    }
  }
  if (!has_negative) throw ValidationError("batch", "every anchor's candidates are all positives (no negatives)");
  return contrastive(embeddings, sample_index, temperature);
}

ad::Var gaussian_log_density_matrix(const ad::Var& mu, const ad::Var& logvar, const ad::Var& zbar) {
  if (mu.rows() != zbar.rows() || mu.cols() != zbar.cols() || logvar.rows() != mu.rows() || logvar.cols() != mu.cols()) {
    throw ValidationError("pairs", "mu, logvar and zbar must share a shape");
  }
  const double d = static_cast<double>(mu.cols());
  ad::Var precision = ad::exp(ad::scale(logvar, -1.0));
  ad::Var quad_target = ad::matmul(precision, ad::transpose(ad::mul(zbar, zbar)));
  ad::Var cross = ad::matmul(ad::mul(precision, mu), ad::transpose(zbar));
  ad::Var quad_mean = ad::row_sums(ad::mul(ad::mul(mu, mu), precision));
  ad::Var quad = ad::add_col(ad::sub(quad_target, ad::scale(cross, 2.0)), quad_mean);
  ad::Var norm = ad::add_scalar(ad::scale(ad::row_sums(logvar), -0.5), -0.5 * d * std::log(2.0 * std::numbers::pi));
  return ad::add_col(ad::scale(quad, -0.5), norm);
}

ad::Var club_nll(const ad::Var& mu, const ad::Var& logvar, const ad::Var& zbar) {
  if (mu.rows() < 1) throw ValidationError("pairs", "club_nll needs at least one pair");
  if (mu.rows() != zbar.rows() || mu.cols() != zbar.cols() || logvar.rows() != mu.rows() || logvar.cols() != mu.cols()) {
    throw ValidationError("pairs", "mu, logvar and zbar must share a shape");
  }
  const double n = static_cast<double>(mu.rows());
  const double d = static_cast<double>(mu.cols());
  ad::Var r = ad::sub(zbar, mu);
  ad::Var scaled = ad::mul(ad::mul(r, r), ad::exp(ad::scale(logvar, -1.0)));
  ad::Var per_entry = ad::scale(ad::add(scaled, logvar), 0.5);
  return ad::add_scalar(ad::scale(ad::sum(per_entry), 1.0 / n), 0.5 * d * std::log(2.0 * std::numbers::pi));
}

ad::Var club_estimate(const ad::Var& mu, const ad::Var& logvar, const ad::Var& zbar) {
  const Eigen::Index n = mu.rows();
  if (n < 2) throw ValidationError("pairs", "club_estimate needs at least 2 pairs");
  ad::Var logq = gaussian_log_density_matrix(mu, logvar, zbar);
  // (1/N^2) sum_ij [log q(zbar_i|z_i) - log q(zbar_j|z_i)]
  ad::Var diag = ad::row_sums(ad::mul(logq, mu.tape()->constant(Eigen::MatrixXd::Identity(n, n))));
  ad::Var gap = ad::add_col(ad::scale(logq, -1.0), diag);
  const double nn = static_cast<double>(n);
  return ad::scale(ad::sum(gap), 1.0 / (nn * nn));
}

ad::Var recon(const ad::Var& x, const ad::Var& x_hat) {
  if (x.rows() != x_hat.rows() || x.cols() != x_hat.cols()) throw ValidationError("x_hat", "shape must match x");
  if (x.rows() == 0) throw ValidationError("x", "empty batch");
  ad::Var diff = ad::sub(x, x_hat);
  return ad::scale(ad::sum(ad::mul(diff, diff)), 1.0 / static_cast<double>(x.rows()));
}

ad::Var soft_cross_entropy(const ad::Var& logits, const Eigen::MatrixXd& soft_labels) {
  if (soft_labels.rows() != logits.rows() || soft_labels.cols() != logits.cols()) {
    throw ValidationError("soft_label", "shape must match logits");
  }
  if (logits.rows() == 0) throw ValidationError("logits", "empty batch");
  for (Eigen::Index i = 0; i < soft_labels.rows(); ++i) check_simplex(soft_labels.row(i).transpose());
  ad::Var logp = ad::log_softmax_rows(logits);
  ad::Var weighted = ad::mul(logp, logits.tape()->constant(soft_labels));
  return ad::scale(ad::sum(weighted), -1.0 / static_cast<double>(logits.rows()));
}

ad::Var mse_decoupling(const ad::Var& z, const ad::Var& zbar, double margin) {
  if (z.rows() != zbar.rows() || z.cols() != zbar.cols()) throw ValidationError("zbar", "shape must match z");
  if (!(margin > 0)) throw ValidationError("margin", "must be positive");
  ad::Var diff = ad::sub(z, zbar);
  ad::Var msd = ad::scale(ad::row_sums(ad::mul(diff, diff)), 1.0 / static_cast<double>(z.cols()));
  return ad::mean(ad::relu(ad::add_scalar(ad::scale(msd, -1.0), margin)));
}

}  // namespace loss

void check_simplex(const Eigen::Ref<const Eigen::VectorXd>& p) {
  if (!p.allFinite() || (p.array() < 0.0).any()) throw ValidationError("soft_label", "entries must be finite and >= 0");
  if (std::abs(p.sum() - 1.0) > 1e-8) throw ValidationError("soft_label", "entries must sum to 1");
}

double supcon_loss(const ContrastiveBatch& batch) {
  ad::Tape tape;
  std::vector<int> labels;
  for (const auto& e : batch.entries) labels.push_back(e.class_label);
  return loss::supcon(contrastive_batch_embeddings(tape, batch), labels, batch.temperature).scalar();
}

double unsup_contrastive_loss(const ContrastiveBatch& batch) {
  ad::Tape tape;
  std::vector<int> index;
  for (const auto& e : batch.entries) index.push_back(e.sample_index);
  return loss::unsup_contrastive(contrastive_batch_embeddings(tape, batch), index, batch.temperature).scalar();
}

double club_nll(const Parameters& params, const std::string& modality, const std::vector<LatentPair>& pairs) {
  if (pairs.empty()) throw ValidationError("pairs", "club_nll needs at least one pair");
  ad::Tape tape;
  BoundParams p(tape, params, nullptr);
  auto [mu, logvar] = nn::club_forward(p, modality, stack_pairs(tape, pairs, true));
  return loss::club_nll(mu, logvar, stack_pairs(tape, pairs, false)).scalar();
}

double club_estimate(const Parameters& params, const std::string& modality, const std::vector<LatentPair>& pairs) {
  if (pairs.size() < 2) throw ValidationError("pairs", "club_estimate needs at least 2 pairs");
  ad::Tape tape;
  BoundParams p(tape, params, nullptr);
  auto [mu, logvar] = nn::club_forward(p, modality, stack_pairs(tape, pairs, true));
  return loss::club_estimate(mu, logvar, stack_pairs(tape, pairs, false)).scalar();
}

double recon_loss(const Eigen::VectorXd& x, const Eigen::VectorXd& x_hat) {
  if (x.size() != x_hat.size()) throw ValidationError("x_hat", "length must match x");
  return (x - x_hat).squaredNorm();
}

double soft_cross_entropy(const Eigen::VectorXd& logits, const Eigen::VectorXd& soft_label) {
  if (logits.size() != soft_label.size()) throw ValidationError("soft_label", "length must match logits");
  ad::Tape tape;
  return loss::soft_cross_entropy(tape.constant(logits.transpose()), soft_label.transpose()).scalar();
}

double mse_decoupling_loss(const Eigen::VectorXd& z, const Eigen::VectorXd& zbar, double margin) {
  if (z.size() != zbar.size()) throw ValidationError("zbar", "length must match z");
  ad::Tape tape;
  return loss::mse_decoupling(tape.constant(z.transpose()), tape.constant(zbar.transpose()), margin).scalar();
}

LossBreakdown total_loss(LossBreakdown c, const LossWeights& w) {
  const std::pair<const char*, double> parts[] = {{"cls", c.classification},
                                                  {"scl", c.contrastive},
                                                  {"club", c.mutual_info},
                                                  {"rec", c.reconstruction},
                                                  {"jig", c.jigsaw}};
  for (const auto& [name, v] : parts) {
    if (!std::isfinite(v)) throw NumericalError(name, "non-finite loss component");
  }
  c.total = w.classification * c.classification + w.contrastive * c.contrastive + w.mutual_info * c.mutual_info +
            w.reconstruction * c.reconstruction + w.jigsaw * c.jigsaw;
  return c;
}

}  // namespace urdg
