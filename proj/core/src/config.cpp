#include "urdg/config.hpp"

#include "urdg/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <set>
#include <utility>

namespace urdg {

namespace {

template <typename E, std::size_t N>
std::string enum_name(E value, const std::array<std::pair<E, const char*>, N>& table) {
  for (const auto& [v, name] : table) {
    if (v == value) return name;
  }
  return "?";
}

template <typename E, std::size_t N>
E enum_parse(const std::string& s, const std::array<std::pair<E, const char*>, N>& table, const char* field) {
  for (const auto& [v, name] : table) {
    if (s == name) return v;
  }
  std::string allowed;
  for (const auto& [v, name] : table) allowed += (allowed.empty() ? "" : ", ") + std::string(name);
  throw ValidationError(field, "unknown value '" + s + "' (expected one of: " + allowed + ")");
}

constexpr std::array<std::pair<Method, const char*>, 7> kMethods{{{Method::base, "base"},
                                                                  {Method::mixup, "mixup"},
                                                                  {Method::jigen, "jigen"},
                                                                  {Method::ibn, "ibn"},
                                                                  {Method::ur_mixup, "ur_mixup"},
                                                                  {Method::ur_jigen, "ur_jigen"},
                                                                  {Method::ur_ibn, "ur_ibn"}}};
constexpr std::array<std::pair<Alignment, const char*>, 3> kAlignments{
    {{Alignment::none, "none"}, {Alignment::ucl, "ucl"}, {Alignment::scl, "scl"}}};
constexpr std::array<std::pair<Decoupling, const char*>, 3> kDecouplings{
    {{Decoupling::none, "none"}, {Decoupling::mid, "mid"}, {Decoupling::cid, "cid"}}};
constexpr std::array<std::pair<OptimizerKind, const char*>, 2> kOptimizers{
    {{OptimizerKind::sgd_momentum, "sgd_momentum"}, {OptimizerKind::adam, "adam"}}};
constexpr std::array<std::pair<FusionRule, const char*>, 2> kFusionRules{
    {{FusionRule::fusion_head, "fusion_head"}, {FusionRule::logit_average, "logit_average"}}};

void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& prefix) {
  if (!j.is_object()) throw ValidationError(prefix.empty() ? "config" : prefix, "expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ValidationError(prefix.empty() ? key : prefix + "." + key, "unknown field");
  }
}

void require(bool ok, const std::string& field, const std::string& message) {
  if (!ok) throw ValidationError(field, message);
}

bool positive_finite(double v) { return std::isfinite(v) && v > 0.0; }

}  // namespace

std::string to_string(Method m) { return enum_name(m, kMethods); }
std::string to_string(Alignment a) { return enum_name(a, kAlignments); }
std::string to_string(Decoupling d) { return enum_name(d, kDecouplings); }
std::string to_string(OptimizerKind k) { return enum_name(k, kOptimizers); }
std::string to_string(FusionRule f) { return enum_name(f, kFusionRules); }
Method method_from_string(const std::string& s) { return enum_parse(s, kMethods, "method"); }
Alignment alignment_from_string(const std::string& s) { return enum_parse(s, kAlignments, "alignment"); }
Decoupling decoupling_from_string(const std::string& s) { return enum_parse(s, kDecouplings, "decoupling"); }
OptimizerKind optimizer_kind_from_string(const std::string& s) { return enum_parse(s, kOptimizers, "optimizer.kind"); }
FusionRule fusion_rule_from_string(const std::string& s) { return enum_parse(s, kFusionRules, "fusion_rule"); }

bool is_unified(Method m) { return m == Method::ur_mixup || m == Method::ur_jigen || m == Method::ur_ibn; }

std::vector<std::string> ExperimentConfig::modalities() const {
  const auto all = generator.modality_names();
  if (train_modalities.empty()) return all;
  std::vector<std::string> out;
  for (const auto& name : all) {
    if (std::find(train_modalities.begin(), train_modalities.end(), name) != train_modalities.end()) {
      out.push_back(name);
    }
  }
  return out;
}

ModelDims ExperimentConfig::model_dims() const {
  ModelDims d;
  for (const auto& m : generator.modalities) {
    if (train_modalities.empty() ||
        std::find(train_modalities.begin(), train_modalities.end(), m.name) != train_modalities.end()) {
      d.modalities.push_back(m);
    }
  }
  d.z_dim = dims.z_dim;
  d.hidden_dim = dims.hidden_dim;
  d.num_classes = generator.num_classes;
  d.num_permutations = jigsaw.permutations;
  return d;
}

void ExperimentConfig::validate(bool require_full_framework) const {
  generator.validate();

  const auto all = generator.modality_names();
  std::set<std::string> seen;
  for (const auto& m : train_modalities) {
    require(std::find(all.begin(), all.end(), m) != all.end(), "train_modalities",
            "unknown modality '" + m + "'");
    require(seen.insert(m).second, "train_modalities", "duplicate modality '" + m + "'");
  }
  const auto mods = modalities();

  require(dims.z_dim >= 2 && dims.z_dim % 2 == 0, "dims.z_dim", "must be an even integer >= 2");
  require(dims.hidden_dim >= 2, "dims.hidden_dim", "must be >= 2");
  model_dims().validate();

  weights.validate();
  mix.validate();

  require(jigsaw.segments >= 2 && jigsaw.segments <= 8, "jigsaw.O", "must be in [2, 8]");
  int factorial = 1;
  for (int i = 2; i <= jigsaw.segments; ++i) factorial *= i;
  require(jigsaw.permutations >= 1 && jigsaw.permutations <= factorial, "jigsaw.P",
          "must be in [1, O!] = [1, " + std::to_string(factorial) + "]");
  if (method == Method::ur_jigen) {
    require(dims.z_dim % jigsaw.segments == 0, "jigsaw.O", "z_dim must be divisible by the segment count");
  }
  if (method == Method::jigen) {
    for (const auto& m : generator.modalities) {
      require(m.dim % jigsaw.segments == 0, "jigsaw.O",
              "raw dim of '" + m.name + "' must be divisible by the segment count");
    }
  }
  if (method == Method::ibn) {
    for (const auto& m : generator.modalities) {
      require(m.dim % 2 == 0, "generator.modalities", "ibn needs even raw dims, '" + m.name + "' is odd");
    }
  }

  require(positive_finite(optimizer.lr), "optimizer.lr", "must be positive");
  require(optimizer.momentum >= 0.0 && optimizer.momentum < 1.0, "optimizer.momentum", "must be in [0, 1)");
  require(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0, "optimizer.betas", "beta1 must be in [0, 1)");
  require(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0, "optimizer.betas", "beta2 must be in [0, 1)");
  require(std::isfinite(optimizer.weight_decay) && optimizer.weight_decay >= 0.0, "optimizer.weight_decay",
          "must be non-negative");

  require(epochs >= 0, "epochs", "must be non-negative");
  require(batch_size >= 2, "batch_size", "must be >= 2");
  require(qnet_inner_steps >= 0, "qnet_inner_steps", "must be non-negative");
  require(positive_finite(qnet_lr), "qnet_lr", "must be positive");
  require(positive_finite(temperature), "temperature", "must be positive");
  require(positive_finite(mid_margin), "mid_margin", "must be positive");

  require(target_or_source_domain >= 0 && target_or_source_domain < generator.num_domains, "target_or_source_domain",
          "must be in [0, num_domains)");
  require(generator.num_domains >= 2, "generator.num_domains", "at least one domain must be held out");

  if (alignment == Alignment::ucl) {
    require(mods.size() >= 2, "alignment", "ucl needs at least two trained modalities");
  }
  if (require_full_framework && is_unified(method)) {
    require(alignment != Alignment::none, "alignment", to_string(method) + " requires alignment != none");
    require(decoupling != Decoupling::none, "decoupling", to_string(method) + " requires decoupling != none");
  }
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{
      {"generator", c.generator},
      {"dims", {{"z_dim", c.dims.z_dim}, {"hidden_dim", c.dims.hidden_dim}}},
      {"method", to_string(c.method)},
      {"alignment", to_string(c.alignment)},
      {"decoupling", to_string(c.decoupling)},
      {"weights", c.weights},
      {"mix", c.mix},
      {"jigsaw", {{"O", c.jigsaw.segments}, {"P", c.jigsaw.permutations}}},
      {"optimizer",
       {{"kind", to_string(c.optimizer.kind)},
        {"lr", c.optimizer.lr},
        {"momentum", c.optimizer.momentum},
        {"betas", {c.optimizer.beta1, c.optimizer.beta2}},
        {"weight_decay", c.optimizer.weight_decay}}},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"qnet_inner_steps", c.qnet_inner_steps},
      {"qnet_lr", c.qnet_lr},
      {"protocol", to_string(c.protocol)},
      {"target_or_source_domain", c.target_or_source_domain},
      {"seed", c.seed},
      {"train_modalities", c.train_modalities},
      {"fusion_rule", to_string(c.fusion_rule)},
      {"temperature", c.temperature},
      {"mid_margin", c.mid_margin},
  };
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  reject_unknown(j,
                 {"generator", "dims", "method", "alignment", "decoupling", "weights", "mix", "jigsaw", "optimizer",
                  "epochs", "batch_size", "qnet_inner_steps", "qnet_lr", "protocol", "target_or_source_domain",
                  "seed", "train_modalities", "fusion_rule", "temperature", "mid_margin"},
                 "");
  if (j.contains("generator")) c.generator = j.at("generator").get<GeneratorSpec>();
  if (j.contains("dims")) {
    const auto& d = j.at("dims");
    reject_unknown(d, {"z_dim", "hidden_dim"}, "dims");
    c.dims.z_dim = d.value("z_dim", c.dims.z_dim);
    c.dims.hidden_dim = d.value("hidden_dim", c.dims.hidden_dim);
  }
  if (j.contains("method")) c.method = method_from_string(j.at("method").get<std::string>());
  if (j.contains("alignment")) c.alignment = alignment_from_string(j.at("alignment").get<std::string>());
  if (j.contains("decoupling")) c.decoupling = decoupling_from_string(j.at("decoupling").get<std::string>());
  if (j.contains("weights")) c.weights = j.at("weights").get<LossWeights>();
  if (j.contains("mix")) c.mix = j.at("mix").get<MixSpec>();
  if (j.contains("jigsaw")) {
    const auto& g = j.at("jigsaw");
    reject_unknown(g, {"O", "P"}, "jigsaw");
    c.jigsaw.segments = g.value("O", c.jigsaw.segments);
    c.jigsaw.permutations = g.value("P", c.jigsaw.permutations);
  }
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    reject_unknown(o, {"kind", "lr", "momentum", "betas", "weight_decay"}, "optimizer");
    if (o.contains("kind")) c.optimizer.kind = optimizer_kind_from_string(o.at("kind").get<std::string>());
    c.optimizer.lr = o.value("lr", c.optimizer.lr);
    c.optimizer.momentum = o.value("momentum", c.optimizer.momentum);
    if (o.contains("betas")) {
      const auto betas = o.at("betas").get<std::vector<double>>();
      require(betas.size() == 2, "optimizer.betas", "expected [beta1, beta2]");
      c.optimizer.beta1 = betas[0];
      c.optimizer.beta2 = betas[1];
    }
    c.optimizer.weight_decay = o.value("weight_decay", c.optimizer.weight_decay);
  }
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.qnet_inner_steps = j.value("qnet_inner_steps", c.qnet_inner_steps);
  c.qnet_lr = j.value("qnet_lr", c.qnet_lr);
  if (j.contains("protocol")) c.protocol = protocol_from_string(j.at("protocol").get<std::string>());
  c.target_or_source_domain = j.value("target_or_source_domain", c.target_or_source_domain);
  c.seed = j.value("seed", c.seed);
  if (j.contains("train_modalities")) c.train_modalities = j.at("train_modalities").get<std::vector<std::string>>();
  if (j.contains("fusion_rule")) c.fusion_rule = fusion_rule_from_string(j.at("fusion_rule").get<std::string>());
  c.temperature = j.value("temperature", c.temperature);
  c.mid_margin = j.value("mid_margin", c.mid_margin);
}

ExperimentConfig load_config(const std::filesystem::path& path, bool require_full_framework) {
  std::ifstream in(path);
  if (!in) throw ValidationError("config", "cannot open '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(0, path.string() + ": " + e.what());
  }
  ExperimentConfig c;
  try {
    c = j.get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config", e.what());
  }
  c.validate(require_full_framework);
  return c;
}

}  // namespace urdg
