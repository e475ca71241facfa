#include "urdg/evalkit.hpp"

#include "urdg/digest.hpp"
#include "urdg/error.hpp"
#include "urdg/trainer.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace urdg {

namespace {

struct Forward {
  EncodedSet latents;
  std::map<std::string, Eigen::MatrixXd> x_hat;
};

Forward forward(const Parameters& params, const Dataset& data, const std::vector<std::string>& mods,
                const InferenceSpec& spec, bool want_decode) {
  if (data.empty()) throw ValidationError("data", "empty dataset");
  std::map<std::string, Eigen::MatrixXd> stats = params.buffers;
  BatchContext ctx;
  ctx.training = false;
  ctx.running_stats = &stats;
  ad::Tape tape;
  BoundParams p(tape, params, nullptr);
  Forward out;
  for (const auto& m : mods) {
    ad::Var in = tape.constant(stack_modality(data, m));
    if (spec.raw_ibn) in = nn::ibn(p, IbnSite::raw, m, in, ctx);
    ad::Var z = nn::encode_general(p, m, in);
    if (spec.unified_ibn) z = nn::ibn(p, IbnSite::unified, m, z, ctx);
    ad::Var zbar = nn::encode_specific(p, m, in);
    if (want_decode) out.x_hat.emplace(m, nn::decode(p, m, z, zbar).value());
    out.latents.general.emplace(m, z.value());
    out.latents.specific.emplace(m, zbar.value());
  }
  return out;
}

Eigen::MatrixXd head_logits(const Parameters& params, const std::string& head, const Eigen::MatrixXd& features) {
  ad::Tape tape;
  BoundParams p(tape, params, nullptr);
  return nn::classify(p, head, tape.constant(features)).value();
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p = logits.colwise() - logits.rowwise().maxCoeff();
  p = p.array().exp();
  return p.array().colwise() / p.rowwise().sum().array();
}

std::vector<int> argmax_rows(const Eigen::MatrixXd& m) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Eigen::Index k = 0;
    m.row(i).maxCoeff(&k);
    out[static_cast<std::size_t>(i)] = static_cast<int>(k);
  }
  return out;
}

Eigen::MatrixXd normalized_rows(const Eigen::MatrixXd& m) {
  Eigen::VectorXd norms = m.rowwise().norm().cwiseMax(1e-12);
  return norms.cwiseInverse().asDiagonal() * m;
}

}  // namespace

InferenceSpec inference_spec(const ExperimentConfig& config) {
  InferenceSpec s;
  s.raw_ibn = config.method == Method::ibn;
  s.unified_ibn = config.method == Method::ur_ibn;
  s.fusion_rule = config.fusion_rule;
  return s;
}

EncodedSet encode_set(const Parameters& params, const Dataset& data, const InferenceSpec& spec) {
  return forward(params, data, params.dims.modality_names(), spec, false).latents;
}

std::vector<std::string> canonical_subset(const ModelDims& dims, const std::vector<std::string>& subset) {
  if (subset.empty()) throw ValidationError("subset", "modality subset must not be empty");
  std::set<std::string> wanted;
  for (const auto& m : subset) {
    if (!dims.has_modality(m)) throw ValidationError("subset", "unknown modality '" + m + "'");
    if (!wanted.insert(m).second) throw ValidationError("subset", "repeated modality '" + m + "'");
  }
  std::vector<std::string> out;
  for (const auto& m : dims.modality_names()) {
    if (wanted.contains(m)) out.push_back(m);
  }
  return out;
}

std::string subset_key(const std::vector<std::string>& canonical) {
  std::string key;
  for (const auto& m : canonical) key += (key.empty() ? "" : "+") + m;
  return key;
}

Eigen::MatrixXd predict_logits(const Parameters& params, const Dataset& data, const std::vector<std::string>& subset,
                               const InferenceSpec& spec) {
  const auto mods = canonical_subset(params.dims, subset);
  const Forward f = forward(params, data, mods, spec, true);
  if (mods.size() == 1) return head_logits(params, mods.front(), f.x_hat.at(mods.front()));
  const bool full = mods.size() == params.dims.modalities.size();
  if (full && spec.fusion_rule == FusionRule::fusion_head) {
    Eigen::Index cols = 0;
    for (const auto& m : mods) cols += f.x_hat.at(m).cols();
    Eigen::MatrixXd fused(static_cast<Eigen::Index>(data.size()), cols);
    Eigen::Index at = 0;
    for (const auto& m : mods) {
      const auto& x = f.x_hat.at(m);
      fused.middleCols(at, x.cols()) = x;
      at += x.cols();
    }
    return head_logits(params, "fusion", fused);
  }
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(data.size()), params.dims.num_classes);
  for (const auto& m : mods) sum += head_logits(params, m, f.x_hat.at(m));
  return sum / static_cast<double>(mods.size());
}

double evaluate(const Parameters& params, const Dataset& test, const std::vector<std::string>& subset,
                const InferenceSpec& spec) {
  const auto pred = argmax_rows(predict_logits(params, test, subset, spec));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) correct += pred[i] == test[i].class_label ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

double linear_probe_accuracy(const Eigen::MatrixXd& features, const std::vector<int>& labels, std::uint64_t seed) {
  const auto n = static_cast<Eigen::Index>(labels.size());
  if (features.rows() != n) throw ValidationError("labels", "one label per feature row");
  std::map<int, int> remap;
  for (int l : labels) remap.emplace(l, 0);
  if (remap.size() < 2) throw ValidationError("labels", "probe needs at least two distinct labels");
  int next = 0;
  for (auto& [_, v] : remap) v = next++;
  const int classes = next;

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<Eigen::Index>(std::llround(0.7 * static_cast<double>(n)));
  if (n_train < 1 || n_train >= n) throw ValidationError("data", "too few samples for a 70/30 probe split");

  auto rows = [&](Eigen::Index begin, Eigen::Index end) {
    Eigen::MatrixXd x(end - begin, features.cols());
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(end - begin, classes);
    std::vector<int> l;
    for (Eigen::Index i = begin; i < end; ++i) {
      const auto src = order[static_cast<std::size_t>(i)];
      x.row(i - begin) = features.row(src);
      const int c = remap.at(labels[static_cast<std::size_t>(src)]);
      y(i - begin, c) = 1.0;
      l.push_back(c);
    }
    return std::make_tuple(x, y, l);
  };
  auto [x_train, y_train, l_train] = rows(0, n_train);
  auto [x_test, y_test, l_test] = rows(n_train, n);
  (void)l_train;
  (void)y_test;

  const Eigen::RowVectorXd mu = x_train.colwise().mean();
  Eigen::RowVectorXd sd = ((x_train.rowwise() - mu).array().square().colwise().mean()).sqrt();
  for (Eigen::Index j = 0; j < sd.size(); ++j) {
    if (sd(j) < 1e-12) sd(j) = 1.0;
  }
  x_train = (x_train.rowwise() - mu).array().rowwise() / sd.array();
  x_test = (x_test.rowwise() - mu).array().rowwise() / sd.array();

  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(features.cols(), classes);
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(classes);
  Eigen::MatrixXd vw = w;
  Eigen::RowVectorXd vb = b;
  constexpr double kLr = 0.5;
  constexpr double kMomentum = 0.9;
  constexpr double kDecay = 1e-4;
  const double inv_n = 1.0 / static_cast<double>(n_train);
  for (int it = 0; it < 500; ++it) {
    const Eigen::MatrixXd logits = (x_train * w).rowwise() + b;
    const Eigen::MatrixXd g = (softmax_rows(logits) - y_train) * inv_n;
    vw = kMomentum * vw + x_train.transpose() * g + kDecay * w;
    vb = kMomentum * vb + g.colwise().sum();
    w -= kLr * vw;
    b -= kLr * vb;
  }
  const auto pred = argmax_rows((x_test * w).rowwise() + b);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == l_test[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

ProbeMetrics probe_disentanglement(const Parameters& params, const Dataset& data, const InferenceSpec& spec,
                                   std::uint64_t seed) {
  const EncodedSet enc = encode_set(params, data, spec);
  auto pool = [&](const std::map<std::string, Eigen::MatrixXd>& by_modality) {
    Eigen::Index cols = 0;
    for (const auto& [_, m] : by_modality) cols += m.cols();
    Eigen::MatrixXd out(static_cast<Eigen::Index>(data.size()), cols);
    Eigen::Index at = 0;
    for (const auto& m : params.dims.modality_names()) {
      const auto& block = by_modality.at(m);
      out.middleCols(at, block.cols()) = block;
      at += block.cols();
    }
    return out;
  };
  const Eigen::MatrixXd z = pool(enc.general);
  const Eigen::MatrixXd zbar = pool(enc.specific);
  std::vector<int> classes;
  std::vector<int> domains;
  for (const auto& s : data) {
    classes.push_back(s.class_label);
    domains.push_back(s.domain_label);
  }
  ProbeMetrics p;
  p.class_on_z = linear_probe_accuracy(z, classes, seed);
  p.domain_on_z = linear_probe_accuracy(z, domains, seed);
  p.class_on_zbar = linear_probe_accuracy(zbar, classes, seed);
  p.domain_on_zbar = linear_probe_accuracy(zbar, domains, seed);
  return p;
}

AlignmentMetrics alignment_metrics(const EncodedSet& encoded) {
  if (encoded.general.size() < 2) throw ValidationError("modalities", "alignment needs at least two modalities");
  std::vector<Eigen::MatrixXd> normed;
  for (const auto& [_, z] : encoded.general) normed.push_back(normalized_rows(z));
  const Eigen::Index n = normed.front().rows();
  if (n < 2) throw ValidationError("data", "alignment needs at least two samples");
  double paired = 0.0;
  double unpaired = 0.0;
  int pairs = 0;
  for (std::size_t a = 0; a < normed.size(); ++a) {
    for (std::size_t b = a + 1; b < normed.size(); ++b) {
      const Eigen::MatrixXd c = normed[a] * normed[b].transpose();
      const double trace = c.trace();
      paired += trace / static_cast<double>(n);
      unpaired += (c.sum() - trace) / static_cast<double>(n * (n - 1));
      ++pairs;
    }
  }
  return {paired / pairs, unpaired / pairs};
}

AlignmentMetrics alignment_metrics(const Parameters& params, const Dataset& data, const InferenceSpec& spec) {
  return alignment_metrics(encode_set(params, data, spec));
}

Eigen::MatrixXd pca_project_2d(const Eigen::MatrixXd& rows) {
  if (rows.rows() < 1 || rows.cols() < 2) throw ValidationError("rows", "projection needs >= 1 row and >= 2 columns");
  const Eigen::MatrixXd centred = rows.rowwise() - rows.colwise().mean();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(centred.transpose() * centred);
  const Eigen::Index d = rows.cols();
  Eigen::MatrixXd dirs(d, 2);
  for (int k = 0; k < 2; ++k) {
    Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - k);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    dirs.col(k) = v;
  }
  return centred * dirs;
}

void export_embeddings(const Parameters& params, const Dataset& data, const std::filesystem::path& path,
                       const InferenceSpec& spec) {
  const EncodedSet enc = encode_set(params, data, spec);
  const auto mods = params.dims.modality_names();
  const auto n = static_cast<Eigen::Index>(data.size());
  Eigen::MatrixXd pooled(n * static_cast<Eigen::Index>(mods.size()) * 2, params.dims.z_dim);
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (const auto& m : mods) {
      pooled.row(r++) = enc.general.at(m).row(i);
      pooled.row(r++) = enc.specific.at(m).row(i);
    }
  }
  const Eigen::MatrixXd xy = pca_project_2d(pooled);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.precision(17);
  out << "id,modality,stream,domain,class,x,y\n";
  r = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = data[static_cast<std::size_t>(i)];
    for (const auto& m : mods) {
      for (const char* stream : {"general", "specific"}) {
        out << s.id << ',' << m << ',' << stream << ',' << s.domain_label << ',' << s.class_label << ','
            << xy(r, 0) << ',' << xy(r, 1) << '\n';
        ++r;
      }
    }
  }
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

double MetricsReport::at(const std::string& split, const std::string& subset) const {
  auto s = accuracy.find(split);
  if (s == accuracy.end()) throw ValidationError("split", "no split '" + split + "' in report");
  auto v = s->second.find(subset);
  if (v == s->second.end()) throw ValidationError("subset", "no subset '" + subset + "' in split '" + split + "'");
  return v->second;
}

void to_json(nlohmann::json& j, const LossBreakdown& b) {
  j = nlohmann::json::object();
  for (const auto& [k, v] : b.as_map()) j[k] = v;
}

void from_json(const nlohmann::json& j, LossBreakdown& b) {
  b.classification = j.at("cls").get<double>();
  b.contrastive = j.at("scl").get<double>();
  b.mutual_info = j.at("club").get<double>();
  b.reconstruction = j.at("rec").get<double>();
  b.jigsaw = j.at("jig").get<double>();
  b.total = j.at("total").get<double>();
}

void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = nlohmann::json{{"config_digest", r.config_digest}, {"method", r.method}, {"accuracy", r.accuracy}};
  if (r.probes) {
    j["probes"] = {{"class_on_z", r.probes->class_on_z},
                   {"domain_on_z", r.probes->domain_on_z},
                   {"class_on_zbar", r.probes->class_on_zbar},
                   {"domain_on_zbar", r.probes->domain_on_zbar}};
  } else {
    j["probes"] = nullptr;
  }
  if (r.alignment) {
    j["alignment"] = {{"paired_cosine_mean", r.alignment->paired_cosine_mean},
                      {"unpaired_cosine_mean", r.alignment->unpaired_cosine_mean}};
  } else {
    j["alignment"] = nullptr;
  }
  j["loss_history"] = nlohmann::json::array();
  for (std::size_t e = 0; e < r.loss_history.size(); ++e) {
    nlohmann::json row = r.loss_history[e];
    row["epoch"] = e;
    j["loss_history"].push_back(row);
  }
}

void from_json(const nlohmann::json& j, MetricsReport& r) {
  r.config_digest = j.at("config_digest").get<std::string>();
  r.method = j.at("method").get<std::string>();
  r.accuracy = j.at("accuracy").get<std::map<std::string, std::map<std::string, double>>>();
  r.probes.reset();
  if (j.contains("probes") && !j.at("probes").is_null()) {
    const auto& p = j.at("probes");
    r.probes = ProbeMetrics{p.at("class_on_z").get<double>(), p.at("domain_on_z").get<double>(),
                            p.at("class_on_zbar").get<double>(), p.at("domain_on_zbar").get<double>()};
  }
  r.alignment.reset();
  if (j.contains("alignment") && !j.at("alignment").is_null()) {
    const auto& a = j.at("alignment");
    r.alignment = AlignmentMetrics{a.at("paired_cosine_mean").get<double>(), a.at("unpaired_cosine_mean").get<double>()};
  }
  r.loss_history.clear();
  if (j.contains("loss_history")) {
    for (const auto& row : j.at("loss_history")) r.loss_history.push_back(row.get<LossBreakdown>());
  }
}

std::string report_csv(const MetricsReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << "split,subset,accuracy\n";
  for (const auto& [split, subsets] : r.accuracy) {
    for (const auto& [subset, acc] : subsets) out << split << ',' << subset << ',' << acc << '\n';
  }
  return out.str();
}

double CompetitionTable::delta_joint(const std::string& modality) const {
  return accuracy.at("multimodal").at(modality) - accuracy.at(modality + "-only").at(modality);
}

std::vector<std::string> CompetitionTable::regimes() const {
  std::vector<std::string> out;
  for (const auto& m : modalities) out.push_back(m + "-only");
  out.emplace_back("multimodal");
  return out;
}

CompetitionTable competition_analysis(const ExperimentConfig& config) {
  const auto mods = config.modalities();
  if (mods.size() < 2) throw ValidationError("train_modalities", "competition analysis needs >= 2 modalities");
  CompetitionTable t;
  t.method = to_string(config.method);
  t.modalities = mods;
  for (const auto& m : mods) {
    ExperimentConfig single = config;
    single.train_modalities = {m};
    const MetricsReport r = run_experiment(single);
    t.accuracy[m + "-only"][m] = r.at("test", m);
    t.digests[m + "-only"] = r.config_digest;
    t.generator_digests[m + "-only"] = json_digest(single.generator);
  }
  ExperimentConfig joint = config;
  joint.train_modalities = mods;
  const MetricsReport r = run_experiment(joint);
  t.accuracy["multimodal"] = r.accuracy.at("test");
  t.digests["multimodal"] = r.config_digest;
  t.generator_digests["multimodal"] = json_digest(joint.generator);
  return t;
}

double delta_gain(const CompetitionTable& method, const CompetitionTable& base, const std::string& modality) {
  const std::string only = modality + "-only";
  const double joint_gain =
      method.accuracy.at("multimodal").at(modality) - base.accuracy.at("multimodal").at(modality);
  const double single_gain = method.accuracy.at(only).at(modality) - base.accuracy.at(only).at(modality);
  return joint_gain - single_gain;
}

std::string competition_csv(const std::vector<CompetitionTable>& tables) {
  std::ostringstream out;
  out.precision(17);
  out << "method,regime,subset,accuracy\n";
  for (const auto& t : tables) {
    for (const auto& regime : t.regimes()) {
      auto it = t.accuracy.find(regime);
      if (it == t.accuracy.end()) continue;
      for (const auto& [subset, acc] : it->second) out << t.method << ',' << regime << ',' << subset << ',' << acc << '\n';
    }
  }
  return out.str();
}

}  // namespace urdg
