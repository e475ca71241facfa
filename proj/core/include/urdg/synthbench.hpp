#pragma once

// Seeded synthetic paired-multimodal, multi-domain classification data.
//
// Modality m of a sample with class c and domain d is
//
//     x = A_m * mu_c^m + B_m * nu_d + sigma * eps,   eps ~ N(0, I)
//
// with fixed random maps A_m, B_m per modality. Class prototypes live either
// on orthogonal axes (plain mode) or on a circle whose class ordering differs
// between modalities (conflict mode), so that interpolating two classes in one
// modality lands on a third class there but not in another modality.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace urdg {

struct ModalitySpec {
  std::string name;
  int dim = 0;

  bool operator==(const ModalitySpec&) const = default;
};

struct GeneratorSpec {
  int num_classes = 6;
  int num_domains = 3;
  std::vector<ModalitySpec> modalities{{"A", 16}, {"B", 16}};
  int samples_per_class_per_domain = 40;
  double class_separation = 2.0;
  double domain_shift_scale = 1.0;
  double noise_sigma = 0.3;
  bool conflict_mode = true;
  std::uint64_t seed = 0;

  /// Throws ValidationError naming the first violated field.
  void validate() const;
  std::vector<std::string> modality_names() const;

  bool operator==(const GeneratorSpec&) const = default;
};

void to_json(nlohmann::json& j, const GeneratorSpec& spec);
/// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, GeneratorSpec& spec);

struct MultiModalSample {
  std::string id;
  std::map<std::string, Eigen::VectorXd> features;
  int class_label = 0;
  int domain_label = 0;

  bool operator==(const MultiModalSample&) const = default;
};

using Dataset = std::vector<MultiModalSample>;

enum class Protocol { multi_source, single_source };

struct DatasetSplit {
  Dataset train;
  Dataset test;
  std::vector<int> held_out_domains;
  Protocol protocol_tag = Protocol::multi_source;
};

/// Raw-space class prototypes (A_m mu_c^m, one row per class) and domain
/// offsets (B_m nu_d, one row per domain) for every modality.
struct GeneratorGeometry {
  std::map<std::string, Eigen::MatrixXd> class_prototypes;
  std::map<std::string, Eigen::MatrixXd> domain_offsets;
  /// Position of each class on the circle (conflict mode only).
  std::map<std::string, std::vector<int>> class_positions;
};

GeneratorGeometry generator_geometry(const GeneratorSpec& spec);

Dataset generate(const GeneratorSpec& spec);

DatasetSplit split_multi_source(const Dataset& data, int target_domain);
DatasetSplit split_single_source(const Dataset& data, int source_domain);

/// JSON Lines, one {"id","class","domain","features":{modality:[...]}} per line.
void save_records(const Dataset& samples, const std::filesystem::path& path);
/// `expected_modalities`, when non-empty, must equal each record's modality set.
Dataset load_records(const std::filesystem::path& path, const std::vector<std::string>& expected_modalities = {});

nlohmann::json sample_to_json(const MultiModalSample& sample);
MultiModalSample sample_from_json(const nlohmann::json& j);

/// Index batches over `count` samples. Trailing batches of size 1 are dropped.
std::vector<std::vector<std::size_t>> make_batches(std::size_t count, std::size_t batch_size, std::uint64_t seed,
                                                   bool shuffle);

/// Sorted distinct domain labels present in `data`.
std::vector<int> domains_of(const Dataset& data);

/// Stacks one modality of `samples` (optionally restricted to `index`) into rows.
Eigen::MatrixXd stack_modality(const Dataset& samples, const std::string& modality);
Eigen::MatrixXd stack_modality(const Dataset& samples, const std::string& modality,
                               const std::vector<std::size_t>& index);

std::string to_string(Protocol p);
Protocol protocol_from_string(const std::string& s);

}  // namespace urdg
