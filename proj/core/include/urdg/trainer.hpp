#pragma once

// Training loop for every method variant. All randomness derives from the
// config seeds; a TrainState saved at an epoch boundary resumes bit-for-bit.

#include "urdg/config.hpp"
#include "urdg/dgops.hpp"
#include "urdg/evalkit.hpp"
#include "urdg/losses.hpp"
#include "urdg/nets.hpp"
#include "urdg/synthbench.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace urdg {

/// Per-parameter slots: momentum buffers for SGD, (m, v) for Adam.
struct OptimizerState {
  std::map<std::string, Eigen::MatrixXd> first;
  std::map<std::string, Eigen::MatrixXd> second;
  long steps = 0;

  bool operator==(const OptimizerState&) const = default;
};

struct TrainState {
  Parameters params;
  OptimizerState main_opt;
  OptimizerState qnet_opt;
  int epoch = 0;
  long step = 0;
  std::mt19937_64 rng;
  /// Mean losses of each completed epoch.
  std::vector<LossBreakdown> history;

  bool operator==(const TrainState& o) const;
};

TrainState init_state(const ExperimentConfig& config);

nlohmann::json state_to_json(const TrainState& state);
TrainState state_from_json(const nlohmann::json& j);
void save_state(const TrainState& state, const std::filesystem::path& path);
TrainState load_state(const std::filesystem::path& path);

/// Applies one update to `params` (only names present in `grads`).
void optimizer_step(Parameters& params, OptimizerState& slots, const std::map<std::string, Eigen::MatrixXd>& grads,
                    const OptimizerSpec& spec);

/// One training step: q-network updates (cid only) followed by one main update.
/// Throws NumericalError naming the first non-finite loss component.
LossBreakdown train_step(TrainState& state, const Dataset& batch, const ExperimentConfig& config,
                         const PermutationCodebook& codebook);
LossBreakdown train_step(TrainState& state, const Dataset& batch, const ExperimentConfig& config);

/// Loss components at fixed parameters, without updating anything.
LossBreakdown evaluate_losses(const TrainState& state, const Dataset& batch, const ExperimentConfig& config);

PermutationCodebook config_codebook(const ExperimentConfig& config);

/// Called after every epoch with the epoch index (0-based) and its mean losses.
using EpochCallback = std::function<void(int, const LossBreakdown&)>;

/// Trains from `state.epoch` until `until_epoch` (default: config.epochs).
void train_epochs(TrainState& state, const Dataset& train, const ExperimentConfig& config,
                  std::optional<int> until_epoch = std::nullopt, const EpochCallback& on_epoch = {});

/// Fits a freshly initialised model on `train`.
TrainState fit(const ExperimentConfig& config, const Dataset& train, const EpochCallback& on_epoch = {});
/// Generates data, splits it per protocol and fits on the training part.
TrainState fit(const ExperimentConfig& config, const EpochCallback& on_epoch = {});

DatasetSplit make_split(const ExperimentConfig& config, const Dataset& data);

struct ExperimentResult {
  TrainState state;
  DatasetSplit split;
  Dataset data;
  MetricsReport report;
};

/// Fits, then evaluates the train split, the held-out split and (single
/// source) each held-out domain, for every single modality and the full set.
ExperimentResult run_experiment_full(const ExperimentConfig& config, const EpochCallback& on_epoch = {});
MetricsReport run_experiment(const ExperimentConfig& config);

/// Builds the report for already trained parameters.
MetricsReport build_report(const ExperimentConfig& config, const TrainState& state, const DatasetSplit& split,
                           const Dataset& data);

struct AblationAxes {
  bool alignment = false;
  bool decoupling = false;
  bool mix_mode = false;
  std::vector<int> jigsaw_p;

  bool empty() const { return !alignment && !decoupling && !mix_mode && jigsaw_p.empty(); }
};

/// Comma-separated axes: alignment, decoupling, mix.mode, jigsaw.P[=p1:p2:...].
/// jigsaw.P without values uses {2,6,12,24} when O=4, else {128,256,384,512}.
AblationAxes parse_axes(const std::string& spec, const ExperimentConfig& base);

struct AblationCell {
  std::map<std::string, std::string> axis_values;
  ExperimentConfig config;
};

/// Cells of the cross product. alignment+decoupling together give the 7-row
/// grid: none/none, ucl/none, scl/none, ucl/mid, scl/mid, ucl/cid, scl/cid.
std::vector<AblationCell> ablation_cells(const ExperimentConfig& base, const AblationAxes& axes);

struct AblationRow {
  AblationCell cell;
  MetricsReport report;
};

std::vector<AblationRow> run_ablation_suite(const ExperimentConfig& base, const AblationAxes& axes,
                                            const std::function<void(const AblationRow&)>& on_row = {});

/// One row per cell: axis columns then one "<split>:<subset>" column per accuracy.
std::string ablation_csv(const std::vector<AblationRow>& rows, const AblationAxes& axes);

}  // namespace urdg
