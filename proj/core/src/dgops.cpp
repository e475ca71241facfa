#include "urdg/dgops.hpp"

#include "urdg/error.hpp"
#include "urdg/losses.hpp"

#include <boost/random/beta_distribution.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

namespace urdg {

PermutationCodebook::PermutationCodebook(int segments, std::vector<Permutation> perms)
    : segments_(segments), perms_(std::move(perms)) {
  if (segments_ < 1) throw ValidationError("segments", "must be >= 1");
  if (perms_.empty()) throw ValidationError("permutations", "codebook must not be empty");
  std::set<Permutation> seen;
  for (const auto& p : perms_) {
    if (static_cast<int>(p.size()) != segments_) throw ValidationError("permutations", "wrong permutation length");
    Permutation sorted = p;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < segments_; ++i) {
      if (sorted[static_cast<std::size_t>(i)] != i) throw ValidationError("permutations", "not a permutation");
    }
    if (!seen.insert(p).second) throw ValidationError("permutations", "duplicate permutation");
  }
  Permutation identity(static_cast<std::size_t>(segments_));
  std::iota(identity.begin(), identity.end(), 0);
  if (perms_.front() != identity) throw ValidationError("permutations", "identity must be the first permutation");
}

const Permutation& PermutationCodebook::at(int index) const {
  if (index < 0 || index >= size()) {
    throw ValidationError("perm_index", std::to_string(index) + " outside [0, " + std::to_string(size()) + ")");
  }
  return perms_[static_cast<std::size_t>(index)];
}

int PermutationCodebook::label_of(const Permutation& perm) const {
  auto it = std::find(perms_.begin(), perms_.end(), perm);
  return it == perms_.end() ? -1 : static_cast<int>(it - perms_.begin());
}

void to_json(nlohmann::json& j, const PermutationCodebook& cb) {
  j = nlohmann::json{{"O", cb.segments()}, {"P", cb.size()}, {"perms", cb.perms()}};
}

PermutationCodebook codebook_from_json(const nlohmann::json& j) {
  auto perms = j.at("perms").get<std::vector<Permutation>>();
  if (static_cast<int>(perms.size()) != j.at("P").get<int>()) throw FormatError(0, "codebook P does not match perms");
  return PermutationCodebook(j.at("O").get<int>(), std::move(perms));
}

int hamming_distance(const Permutation& a, const Permutation& b) {
  int d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i] ? 1 : 0;
  return d;
}

Permutation inverse_permutation(const Permutation& perm) {
  Permutation inv(perm.size());
  for (std::size_t k = 0; k < perm.size(); ++k) inv[static_cast<std::size_t>(perm[k])] = static_cast<int>(k);
  return inv;
}

PermutationCodebook build_codebook(int segments, int count, std::uint64_t seed) {
  if (segments < 2 || segments > 8) throw ValidationError("jigsaw.segments", "must be in [2, 8]");
  int factorial = 1;
  for (int i = 2; i <= segments; ++i) factorial *= i;
  if (count < 1 || count > factorial) {
    throw ValidationError("jigsaw.permutations",
                          std::to_string(count) + " outside [1, " + std::to_string(factorial) + "] for O=" +
                              std::to_string(segments));
  }

  std::vector<Permutation> all;
  Permutation p(static_cast<std::size_t>(segments));
  std::iota(p.begin(), p.end(), 0);
  do {
    all.push_back(p);
  } while (std::next_permutation(p.begin(), p.end()));

  std::mt19937_64 rng(seed);
  std::vector<Permutation> chosen{all.front()};
  std::vector<bool> taken(all.size(), false);
  taken[0] = true;
  std::vector<int> min_dist(all.size());
  for (std::size_t i = 0; i < all.size(); ++i) min_dist[i] = hamming_distance(all[i], all.front());

  std::vector<std::size_t> best;
  while (static_cast<int>(chosen.size()) < count) {
    int best_d = -1;
    best.clear();
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (taken[i]) continue;
      if (min_dist[i] > best_d) {
        best_d = min_dist[i];
        best.assign(1, i);
      } else if (min_dist[i] == best_d) {
        best.push_back(i);
      }
    }
    std::uniform_int_distribution<std::size_t> pick(0, best.size() - 1);
    const std::size_t next = best[pick(rng)];
    taken[next] = true;
    chosen.push_back(all[next]);
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (!taken[i]) min_dist[i] = std::min(min_dist[i], hamming_distance(all[i], all[next]));
    }
  }
  return PermutationCodebook(segments, std::move(chosen));
}

Eigen::VectorXd permute_segments(const Eigen::VectorXd& v, const Permutation& perm) {
  const auto o = static_cast<Eigen::Index>(perm.size());
  if (o == 0 || v.size() % o != 0) {
    throw ValidationError("vector", "length " + std::to_string(v.size()) + " is not divisible by " + std::to_string(o));
  }
  const Eigen::Index len = v.size() / o;
  Eigen::VectorXd out(v.size());
  for (Eigen::Index k = 0; k < o; ++k) out.segment(k * len, len) = v.segment(perm[static_cast<std::size_t>(k)] * len, len);
  return out;
}

Eigen::VectorXd jigen_shuffle(const Eigen::VectorXd& v, const PermutationCodebook& codebook, int perm_index) {
  return permute_segments(v, codebook.at(perm_index));
}

JigsawDraw draw_jigsaw(int num_modalities, const PermutationCodebook& codebook, std::mt19937_64& rng) {
  if (num_modalities < 1) throw ValidationError("modalities", "need at least one modality");
  std::uniform_int_distribution<int> pick_modality(0, num_modalities - 1);
  std::uniform_int_distribution<int> pick_perm(0, codebook.size() - 1);
  JigsawDraw d;
  d.slot_modality.resize(static_cast<std::size_t>(codebook.segments()));
  for (auto& m : d.slot_modality) m = pick_modality(rng);
  d.perm_index = pick_perm(rng);
  return d;
}

ComposedJigsaw ur_jigen_compose(const std::vector<Eigen::VectorXd>& general, const PermutationCodebook& codebook,
                                const JigsawDraw& draw) {
  if (general.empty()) throw ValidationError("general", "need at least one modality");
  const Eigen::Index n = general.front().size();
  const int o = codebook.segments();
  for (const auto& z : general) {
    if (z.size() != n) throw ValidationError("general", "modalities must share a latent length");
  }
  if (n % o != 0) {
    throw ValidationError("vector", "length " + std::to_string(n) + " is not divisible by " + std::to_string(o));
  }
  if (static_cast<int>(draw.slot_modality.size()) != o) throw ValidationError("draw", "one modality per slot required");
  const Eigen::Index len = n / o;
  Eigen::VectorXd composed(n);
  for (int k = 0; k < o; ++k) {
    const int m = draw.slot_modality[static_cast<std::size_t>(k)];
    if (m < 0 || m >= static_cast<int>(general.size())) throw ValidationError("draw", "modality index out of range");
    composed.segment(k * len, len) = general[static_cast<std::size_t>(m)].segment(k * len, len);
  }
  return {jigen_shuffle(composed, codebook, draw.perm_index), draw.perm_index};
}

ComposedJigsaw ur_jigen_compose(const std::vector<Eigen::VectorXd>& general, const PermutationCodebook& codebook,
                                std::mt19937_64& rng) {
  return ur_jigen_compose(general, codebook, draw_jigsaw(static_cast<int>(general.size()), codebook, rng));
}

std::vector<std::vector<ad::BlockRef>> jigsaw_block_table(const std::vector<JigsawDraw>& draws,
                                                          const PermutationCodebook& codebook) {
  std::vector<std::vector<ad::BlockRef>> table;
  table.reserve(draws.size());
  for (const auto& d : draws) {
    const Permutation& perm = codebook.at(d.perm_index);
    std::vector<ad::BlockRef> row(perm.size());
    for (std::size_t k = 0; k < perm.size(); ++k) {
      const int src_block = perm[k];
      row[k] = {d.slot_modality[static_cast<std::size_t>(src_block)], src_block};
    }
    table.push_back(std::move(row));
  }
  return table;
}

ad::Var jigen_loss(const ad::Var& logits, const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows()) throw ValidationError("labels", "one label per row");
  for (int l : labels) {
    if (l < 0 || l >= logits.cols()) {
      throw ValidationError("labels", "permutation label " + std::to_string(l) + " outside [0, " +
                                          std::to_string(logits.cols()) + ")");
    }
  }
  return loss::soft_cross_entropy(logits, one_hot(labels, static_cast<int>(logits.cols())));
}

double jigen_loss(const Parameters& params, const std::string& head, const Eigen::MatrixXd& composed,
                  const std::vector<int>& labels) {
  ad::Tape tape;
  BoundParams p(tape, params, nullptr);
  return jigen_loss(nn::jigsaw_logits(p, head, tape.constant(composed)), labels).scalar();
}

void MixSpec::validate() const {
  if (!(beta_alpha > 0) || !std::isfinite(beta_alpha)) throw ValidationError("mix.beta_alpha", "must be positive");
  if (!(fixed_lambda >= 0.0 && fixed_lambda <= 1.0)) throw ValidationError("mix.fixed_lambda", "must lie in [0, 1]");
}

std::string to_string(MixMode m) { return m == MixMode::rand ? "rand" : "fixed"; }

MixMode mix_mode_from_string(const std::string& s) {
  if (s == "rand") return MixMode::rand;
  if (s == "fixed") return MixMode::fixed;
  throw ValidationError("mix.mode", "unknown mix mode '" + s + "'");
}

void to_json(nlohmann::json& j, const MixSpec& m) {
  j = nlohmann::json{{"mode", to_string(m.mode)},
                     {"beta_alpha", m.beta_alpha},
                     {"fixed_lambda", m.fixed_lambda},
                     {"partner_seed", m.partner_seed}};
}

void from_json(const nlohmann::json& j, MixSpec& m) {
  static const std::set<std::string> known{"mode", "beta_alpha", "fixed_lambda", "partner_seed"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ValidationError("mix." + key, "unknown field");
  }
  if (j.contains("mode")) m.mode = mix_mode_from_string(j.at("mode").get<std::string>());
  m.beta_alpha = j.value("beta_alpha", m.beta_alpha);
  m.fixed_lambda = j.value("fixed_lambda", m.fixed_lambda);
  m.partner_seed = j.value("partner_seed", m.partner_seed);
}

MixPlan plan_mixup(std::size_t batch_size, const MixSpec& spec, std::mt19937_64& rng) {
  if (batch_size < 2) throw ValidationError("batch", "mixup needs at least 2 samples");
  spec.validate();
  MixPlan plan;
  plan.partner.resize(batch_size);
  std::iota(plan.partner.begin(), plan.partner.end(), Eigen::Index{0});
  std::shuffle(plan.partner.begin(), plan.partner.end(), rng);
  plan.lambda.resize(batch_size);
  if (spec.mode == MixMode::fixed) {
    std::fill(plan.lambda.begin(), plan.lambda.end(), spec.fixed_lambda);
  } else {
    boost::random::beta_distribution<double> beta(spec.beta_alpha, spec.beta_alpha);
    for (auto& l : plan.lambda) {
      l = beta(rng);
      // Both gamma draws can underflow to zero for tiny alpha.
      if (!std::isfinite(l)) l = 0.5;
    }
  }
  return plan;
}

namespace {

void check_plan(Eigen::Index rows, const MixPlan& plan) {
  if (static_cast<Eigen::Index>(plan.partner.size()) != rows || plan.lambda.size() != plan.partner.size()) {
    throw ValidationError("plan", "mix plan does not match the batch size");
  }
  if (rows < 2) throw ValidationError("batch", "mixup needs at least 2 samples");
}

}  // namespace

ad::Var mix_rows(const ad::Var& x, const MixPlan& plan) {
  check_plan(x.rows(), plan);
  ad::Tape& t = *x.tape();
  Eigen::MatrixXd lam(x.rows(), 1);
  Eigen::MatrixXd rest(x.rows(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    lam(i, 0) = plan.lambda[static_cast<std::size_t>(i)];
    rest(i, 0) = 1.0 - lam(i, 0);
  }
  return ad::add(ad::mul_col(x, t.constant(lam)), ad::mul_col(ad::gather_rows(x, plan.partner), t.constant(rest)));
}

Eigen::MatrixXd mix_rows(const Eigen::MatrixXd& x, const MixPlan& plan) {
  check_plan(x.rows(), plan);
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double l = plan.lambda[static_cast<std::size_t>(i)];
    out.row(i) = l * x.row(i) + (1.0 - l) * x.row(plan.partner[static_cast<std::size_t>(i)]);
  }
  return out;
}

Eigen::MatrixXd one_hot(const std::vector<int>& labels, int num_classes) {
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) throw ValidationError("labels", "label outside [0, K)");
    y(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return y;
}

Eigen::MatrixXd mix_labels(const std::vector<int>& labels, int num_classes, const MixPlan& plan) {
  return mix_rows(one_hot(labels, num_classes), plan);
}

MixedBatch mixup_raw(const Dataset& batch, int num_classes, const MixPlan& plan) {
  check_plan(static_cast<Eigen::Index>(batch.size()), plan);
  MixedBatch out;
  std::vector<int> labels;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& a = batch[i];
    const auto& b = batch[static_cast<std::size_t>(plan.partner[i])];
    const double l = plan.lambda[i];
    MultiModalSample s;
    s.id = a.id + "+" + b.id;
    s.class_label = a.class_label;
    s.domain_label = a.domain_label;
    for (const auto& [name, x] : a.features) s.features.emplace(name, l * x + (1.0 - l) * b.features.at(name));
    out.samples.push_back(std::move(s));
    labels.push_back(a.class_label);
  }
  out.soft_labels = mix_labels(labels, num_classes, plan);
  return out;
}

MixedBatch mixup_raw(const Dataset& batch, int num_classes, const MixSpec& spec, std::mt19937_64& rng) {
  return mixup_raw(batch, num_classes, plan_mixup(batch.size(), spec, rng));
}

MixedLatents ur_mixup(const std::map<std::string, std::vector<LatentPair>>& latents, const std::vector<int>& labels,
                      int num_classes, const MixPlan& plan) {
  MixedLatents out;
  for (const auto& [name, pairs] : latents) {
    check_plan(static_cast<Eigen::Index>(pairs.size()), plan);
    const Eigen::Index dim = pairs.front().general.size();
    Eigen::MatrixXd z(static_cast<Eigen::Index>(pairs.size()), dim);
    Eigen::MatrixXd zbar(static_cast<Eigen::Index>(pairs.size()), pairs.front().specific.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      z.row(static_cast<Eigen::Index>(i)) = pairs[i].general.transpose();
      zbar.row(static_cast<Eigen::Index>(i)) = pairs[i].specific.transpose();
    }
    out.general[name] = mix_rows(z, plan);
    out.specific[name] = std::move(zbar);
  }
  out.soft_labels = mix_labels(labels, num_classes, plan);
  return out;
}

ad::Var apply_ibn(BoundParams& params, IbnMode mode, const std::string& modality, const ad::Var& vectors,
                  BatchContext& ctx) {
  return nn::ibn(params, mode == IbnMode::unified ? IbnSite::unified : IbnSite::raw, modality, vectors, ctx);
}

Eigen::MatrixXd apply_ibn(const Parameters& params, IbnMode mode, const std::string& modality,
                          const Eigen::MatrixXd& vectors, BatchContext ctx) {
  return ibn_layer(params, mode == IbnMode::unified ? IbnSite::unified : IbnSite::raw, modality, vectors, ctx);
}

}  // namespace urdg
