#include "urdg/synthbench.hpp"

#include "urdg/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace urdg {

namespace {

/// Columns form an orthonormal basis when rows >= cols, else scaled Gaussian.
Eigen::MatrixXd random_map(std::mt19937_64& rng, int rows, int cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(rows, cols);
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < rows; ++i) g(i, j) = normal(rng);
  }
  if (rows >= cols) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    return qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
  }
  return g / std::sqrt(static_cast<double>(rows));
}

/// Class -> circle position. Modality 1 keeps the natural order; modality 0
/// puts class 2 between classes 0 and 1; later modalities are shuffled.
std::vector<int> class_ordering(std::mt19937_64& rng, std::size_t modality_index, int num_classes) {
  std::vector<int> pos(static_cast<std::size_t>(num_classes));
  std::iota(pos.begin(), pos.end(), 0);
  if (modality_index == 1) return pos;
  if (modality_index == 0) {
    if (num_classes >= 3) {
      std::swap(pos[1], pos[2]);
      std::shuffle(pos.begin() + 3, pos.end(), rng);
    }
    return pos;
  }
  std::shuffle(pos.begin(), pos.end(), rng);
  return pos;
}

void require(bool ok, const std::string& field, const std::string& message) {
  if (!ok) throw ValidationError(field, message);
}

}  // namespace

void GeneratorSpec::validate() const {
  require(num_classes >= 2, "num_classes", "must be >= 2");
  require(num_domains >= 2, "num_domains", "must be >= 2");
  require(!modalities.empty(), "modalities", "at least one modality is required");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < modalities.size(); ++i) {
    const std::string field = "modalities[" + std::to_string(i) + "]";
    require(!modalities[i].name.empty(), field + ".name", "must be non-empty");
    require(seen.insert(modalities[i].name).second, field + ".name", "duplicate modality '" + modalities[i].name + "'");
    require(modalities[i].dim >= 2, field + ".dim", "must be >= 2");
  }
  require(samples_per_class_per_domain >= 1, "samples_per_class_per_domain", "must be >= 1");
  require(std::isfinite(class_separation) && class_separation > 0, "class_separation", "must be positive");
  require(std::isfinite(domain_shift_scale) && domain_shift_scale >= 0, "domain_shift_scale", "must be >= 0");
  require(std::isfinite(noise_sigma) && noise_sigma >= 0, "noise_sigma", "must be >= 0");
}

std::vector<std::string> GeneratorSpec::modality_names() const {
  std::vector<std::string> names;
  for (const auto& m : modalities) names.push_back(m.name);
  return names;
}

void to_json(nlohmann::json& j, const GeneratorSpec& spec) {
  nlohmann::json mods = nlohmann::json::array();
  for (const auto& m : spec.modalities) mods.push_back({{"name", m.name}, {"dim", m.dim}});
  j = nlohmann::json{{"num_classes", spec.num_classes},
                     {"num_domains", spec.num_domains},
                     {"modalities", mods},
                     {"samples_per_class_per_domain", spec.samples_per_class_per_domain},
                     {"class_separation", spec.class_separation},
                     {"domain_shift_scale", spec.domain_shift_scale},
                     {"noise_sigma", spec.noise_sigma},
                     {"conflict_mode", spec.conflict_mode},
                     {"seed", spec.seed}};
}

void from_json(const nlohmann::json& j, GeneratorSpec& spec) {
  if (!j.is_object()) throw ValidationError("generator", "must be an object");
  static const std::set<std::string> known{"num_classes",      "num_domains", "modalities",    "samples_per_class_per_domain",
                                           "class_separation", "domain_shift_scale", "noise_sigma", "conflict_mode",
                                           "seed"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ValidationError(key, "unknown generator field");
  }
  auto get = [&](const char* key, auto& out) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(out);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(key, e.what());
    }
  };
  get("num_classes", spec.num_classes);
  get("num_domains", spec.num_domains);
  get("samples_per_class_per_domain", spec.samples_per_class_per_domain);
  get("class_separation", spec.class_separation);
  get("domain_shift_scale", spec.domain_shift_scale);
  get("noise_sigma", spec.noise_sigma);
  get("conflict_mode", spec.conflict_mode);
  get("seed", spec.seed);
  if (j.contains("modalities")) {
    const auto& mods = j.at("modalities");
    if (!mods.is_array()) throw ValidationError("modalities", "must be an array");
    spec.modalities.clear();
    for (std::size_t i = 0; i < mods.size(); ++i) {
      const std::string field = "modalities[" + std::to_string(i) + "]";
      try {
        spec.modalities.push_back({mods[i].at("name").get<std::string>(), mods[i].at("dim").get<int>()});
      } catch (const nlohmann::json::exception& e) {
        throw ValidationError(field, e.what());
      }
    }
  }
}

GeneratorGeometry generator_geometry(const GeneratorSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const int k = spec.num_classes;
  const int d = spec.num_domains;
  const int class_latent = spec.conflict_mode ? 2 : k;
  constexpr int domain_latent = 2;

  // Domain offsets are shared by all modalities.
  Eigen::MatrixXd nu(d, domain_latent);
  if (spec.conflict_mode) {
    for (int i = 0; i < d; ++i) {
      const double angle = 2.0 * std::numbers::pi * i / d;
      nu(i, 0) = spec.domain_shift_scale * std::cos(angle);
      nu(i, 1) = spec.domain_shift_scale * std::sin(angle);
    }
  } else {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int i = 0; i < d; ++i) {
      for (int c = 0; c < domain_latent; ++c) nu(i, c) = spec.domain_shift_scale * normal(rng);
    }
  }

  // Arc layout: at least six slots so that a class can sit strictly between two others.
  const double step = 2.0 * std::numbers::pi / std::max(k, 6);
  const double radius = spec.class_separation / (2.0 * std::sin(step / 2.0));

  GeneratorGeometry geo;
  for (std::size_t m = 0; m < spec.modalities.size(); ++m) {
    const auto& mod = spec.modalities[m];
    Eigen::MatrixXd mu(k, class_latent);
    if (spec.conflict_mode) {
      const auto pos = class_ordering(rng, m, k);
      for (int c = 0; c < k; ++c) {
        mu(c, 0) = radius * std::cos(step * pos[static_cast<std::size_t>(c)]);
        mu(c, 1) = radius * std::sin(step * pos[static_cast<std::size_t>(c)]);
      }
      geo.class_positions[mod.name] = pos;
    } else {
      mu = Eigen::MatrixXd::Identity(k, k) * (spec.class_separation / std::numbers::sqrt2);
    }
    const Eigen::MatrixXd a = random_map(rng, mod.dim, class_latent);
    const Eigen::MatrixXd b = random_map(rng, mod.dim, domain_latent);
    geo.class_prototypes[mod.name] = mu * a.transpose();
    geo.domain_offsets[mod.name] = nu * b.transpose();
  }
  return geo;
}

Dataset generate(const GeneratorSpec& spec) {
  const GeneratorGeometry geo = generator_geometry(spec);
  // Noise stream is independent of the geometry stream.
  std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);

  Dataset out;
  out.reserve(static_cast<std::size_t>(spec.num_classes * spec.num_domains * spec.samples_per_class_per_domain));
  for (int d = 0; d < spec.num_domains; ++d) {
    for (int c = 0; c < spec.num_classes; ++c) {
      for (int i = 0; i < spec.samples_per_class_per_domain; ++i) {
        MultiModalSample s;
        std::ostringstream id;
        id << "d" << d << "_c" << c << "_" << i;
        s.id = id.str();
        s.class_label = c;
        s.domain_label = d;
        for (const auto& mod : spec.modalities) {
          Eigen::VectorXd x = geo.class_prototypes.at(mod.name).row(c).transpose() +
                              geo.domain_offsets.at(mod.name).row(d).transpose();
          for (int j = 0; j < mod.dim; ++j) x(j) += spec.noise_sigma * normal(rng);
          s.features.emplace(mod.name, std::move(x));
        }
        out.push_back(std::move(s));
      }
    }
  }
  return out;
}

std::vector<int> domains_of(const Dataset& data) {
  std::set<int> d;
  for (const auto& s : data) d.insert(s.domain_label);
  return {d.begin(), d.end()};
}

DatasetSplit split_multi_source(const Dataset& data, int target_domain) {
  const auto domains = domains_of(data);
  if (!std::binary_search(domains.begin(), domains.end(), target_domain)) {
    throw ValidationError("target_domain", "domain " + std::to_string(target_domain) + " not present in data");
  }
  DatasetSplit split;
  split.protocol_tag = Protocol::multi_source;
  split.held_out_domains = {target_domain};
  for (const auto& s : data) (s.domain_label == target_domain ? split.test : split.train).push_back(s);
  return split;
}

DatasetSplit split_single_source(const Dataset& data, int source_domain) {
  const auto domains = domains_of(data);
  if (!std::binary_search(domains.begin(), domains.end(), source_domain)) {
    throw ValidationError("source_domain", "domain " + std::to_string(source_domain) + " not present in data");
  }
  DatasetSplit split;
  split.protocol_tag = Protocol::single_source;
  for (int d : domains) {
    if (d != source_domain) split.held_out_domains.push_back(d);
  }
  for (const auto& s : data) (s.domain_label == source_domain ? split.train : split.test).push_back(s);
  return split;
}

nlohmann::json sample_to_json(const MultiModalSample& sample) {
  nlohmann::json feats = nlohmann::json::object();
  for (const auto& [name, v] : sample.features) {
    feats[name] = std::vector<double>(v.data(), v.data() + v.size());
  }
  return nlohmann::json{{"id", sample.id}, {"class", sample.class_label}, {"domain", sample.domain_label}, {"features", feats}};
}

MultiModalSample sample_from_json(const nlohmann::json& j) {
  MultiModalSample s;
  s.id = j.at("id").get<std::string>();
  s.class_label = j.at("class").get<int>();
  s.domain_label = j.at("domain").get<int>();
  const auto& feats = j.at("features");
  if (!feats.is_object()) throw std::invalid_argument("features must be an object");
  for (const auto& [name, arr] : feats.items()) {
    if (!arr.is_array()) throw std::invalid_argument("feature '" + name + "' must be an array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i) {
      if (!arr[i].is_number()) throw std::invalid_argument("feature '" + name + "' has a non-numeric entry");
      v(static_cast<Eigen::Index>(i)) = arr[i].get<double>();
      if (!std::isfinite(v(static_cast<Eigen::Index>(i)))) {
        throw std::invalid_argument("feature '" + name + "' has a non-finite entry");
      }
    }
    s.features.emplace(name, std::move(v));
  }
  return s;
}

void save_records(const Dataset& samples, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  for (const auto& s : samples) {
    for (const auto& [name, v] : s.features) {
      if (!v.allFinite()) throw std::invalid_argument("sample " + s.id + ": non-finite feature in '" + name + "'");
    }
    out << sample_to_json(s).dump() << '\n';
  }
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

Dataset load_records(const std::filesystem::path& path, const std::vector<std::string>& expected_modalities) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  const std::set<std::string> expected(expected_modalities.begin(), expected_modalities.end());
  std::set<std::string> first_keys;
  Dataset out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    MultiModalSample s;
    try {
      s = sample_from_json(nlohmann::json::parse(line));
    } catch (const std::exception& e) {
      throw FormatError(lineno, e.what());
    }
    std::set<std::string> keys;
    for (const auto& [name, _] : s.features) keys.insert(name);
    const std::set<std::string>& want = expected.empty() ? (out.empty() ? keys : first_keys) : expected;
    for (const auto& name : want) {
      if (!keys.contains(name)) throw FormatError(lineno, "sample " + s.id + " is missing modality '" + name + "'");
    }
    if (keys != want) throw FormatError(lineno, "sample " + s.id + " has unexpected modalities");
    if (out.empty()) first_keys = keys;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t count, std::size_t batch_size, std::uint64_t seed,
                                                   bool shuffle) {
  if (batch_size < 2) throw ValidationError("batch_size", "must be >= 2");
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t at = 0; at < count; at += batch_size) {
    const std::size_t end = std::min(count, at + batch_size);
    if (end - at < 2) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

Eigen::MatrixXd stack_modality(const Dataset& samples, const std::string& modality) {
  std::vector<std::size_t> all(samples.size());
  std::iota(all.begin(), all.end(), 0);
  return stack_modality(samples, modality, all);
}

Eigen::MatrixXd stack_modality(const Dataset& samples, const std::string& modality,
                               const std::vector<std::size_t>& index) {
  if (index.empty()) return {};
  const Eigen::Index dim = samples.at(index.front()).features.at(modality).size();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(index.size()), dim);
  for (std::size_t r = 0; r < index.size(); ++r) {
    const auto& v = samples.at(index[r]).features.at(modality);
    if (v.size() != dim) throw std::invalid_argument("inconsistent feature length for modality '" + modality + "'");
    out.row(static_cast<Eigen::Index>(r)) = v.transpose();
  }
  return out;
}

std::string to_string(Protocol p) { return p == Protocol::multi_source ? "multi_source" : "single_source"; }

Protocol protocol_from_string(const std::string& s) {
  if (s == "multi_source") return Protocol::multi_source;
  if (s == "single_source") return Protocol::single_source;
  throw ValidationError("protocol", "unknown protocol '" + s + "'");
}

}  // namespace urdg
