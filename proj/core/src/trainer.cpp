#include "urdg/trainer.hpp"

#include "urdg/digest.hpp"
#include "urdg/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace urdg {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) { return splitmix(splitmix(a) ^ (b + 0x632be59bd9b4e019ULL)); }

constexpr std::uint64_t kStepStream = 0x5354455053ULL;
constexpr std::uint64_t kBatchStream = 0x4241544348ULL;

bool uses_codebook(Method m) { return m == Method::jigen || m == Method::ur_jigen; }

ad::Var mean_of(const std::vector<ad::Var>& terms) {
  ad::Var acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = ad::add(acc, terms[i]);
  return terms.size() == 1 ? acc : ad::scale(acc, 1.0 / static_cast<double>(terms.size()));
}

ad::Var sum_of(const std::vector<ad::Var>& terms) {
  ad::Var acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = ad::add(acc, terms[i]);
  return acc;
}

struct Encoded {
  std::map<std::string, ad::Var> general;
  std::map<std::string, ad::Var> specific;
};

Encoded encode(BoundParams& p, const ExperimentConfig& config, const std::vector<std::string>& mods,
               const std::map<std::string, Eigen::MatrixXd>& raw, BatchContext& ctx) {
  Encoded out;
  ad::Tape& t = p.tape();
  for (const auto& m : mods) {
    ad::Var in = t.constant(raw.at(m));
    if (config.method == Method::ibn) in = apply_ibn(p, IbnMode::raw_baseline, m, in, ctx);
    ad::Var z = nn::encode_general(p, m, in);
    if (config.method == Method::ur_ibn) z = apply_ibn(p, IbnMode::unified, m, z, ctx);
    out.general.emplace(m, z);
    out.specific.emplace(m, nn::encode_specific(p, m, in));
  }
  return out;
}

void update_qnets(TrainState& state, const ExperimentConfig& config, const std::vector<std::string>& mods,
                  const Encoded& enc) {
  OptimizerSpec q;
  q.kind = OptimizerKind::adam;
  q.lr = config.qnet_lr;
  q.weight_decay = 0.0;
  for (int s = 0; s < config.qnet_inner_steps; ++s) {
    ad::Tape tape;
    BoundParams p(tape, state.params, is_club_weight);
    std::vector<ad::Var> terms;
    for (const auto& m : mods) {
      auto [mu, logvar] = nn::club_forward(p, m, tape.constant(enc.general.at(m).value()));
      terms.push_back(loss::club_nll(mu, logvar, tape.constant(enc.specific.at(m).value())));
    }
    ad::Var nll = mean_of(terms);
    if (!std::isfinite(nll.scalar())) throw NumericalError("club_nll", "non-finite q-network likelihood");
    tape.backward(nll);
    optimizer_step(state.params, state.qnet_opt, p.gradients(), q);
  }
}

// Builds the main objective; with `update`, also runs the q-network steps and
// the main optimizer step.
LossBreakdown run_step(TrainState& state, const Dataset& batch, const ExperimentConfig& config,
                       const PermutationCodebook& codebook, bool update) {
  const auto mods = config.modalities();
  const auto n = static_cast<Eigen::Index>(batch.size());
  if (n < 2) throw ValidationError("batch", "a training step needs at least 2 samples");
  const int num_classes = config.generator.num_classes;

  std::vector<int> labels;
  labels.reserve(batch.size());
  for (const auto& s : batch) labels.push_back(s.class_label);
  std::map<std::string, Eigen::MatrixXd> raw;
  for (const auto& m : mods) raw.emplace(m, stack_modality(batch, m));

  ad::Tape tape;
  BoundParams p(tape, state.params, [](const std::string& name) { return !is_club_weight(name); });
  BatchContext ctx;
  ctx.training = true;
  ctx.running_stats = &state.params.buffers;

  Encoded enc = encode(p, config, mods, raw, ctx);
  if (update && config.decoupling == Decoupling::cid) update_qnets(state, config, mods, enc);

  // Classification path.
  Eigen::MatrixXd soft = one_hot(labels, num_classes);
  Encoded cls = enc;
  bool mixed = false;
  if (config.method == Method::mixup) {
    const MixPlan plan = plan_mixup(batch.size(), config.mix, state.rng);
    std::map<std::string, Eigen::MatrixXd> mixed_raw;
    for (const auto& m : mods) mixed_raw.emplace(m, mix_rows(raw.at(m), plan));
    cls = encode(p, config, mods, mixed_raw, ctx);
    soft = mix_labels(labels, num_classes, plan);
    mixed = true;
  } else if (config.method == Method::ur_mixup) {
    const MixPlan plan = plan_mixup(batch.size(), config.mix, state.rng);
    for (const auto& m : mods) cls.general.at(m) = mix_rows(enc.general.at(m), plan);
    soft = mix_labels(labels, num_classes, plan);
    mixed = true;
  }

  std::map<std::string, ad::Var> x_hat;
  std::vector<ad::Var> cls_terms;
  std::vector<ad::Var> fused;
  for (const auto& m : mods) {
    x_hat.emplace(m, nn::decode(p, m, cls.general.at(m), cls.specific.at(m)));
    cls_terms.push_back(loss::soft_cross_entropy(nn::classify(p, m, x_hat.at(m)), soft));
    fused.push_back(x_hat.at(m));
  }
  if (mods.size() >= 2) {
    cls_terms.push_back(loss::soft_cross_entropy(nn::classify(p, "fusion", ad::concat_cols(fused)), soft));
  }
  ad::Var l_cls = mean_of(cls_terms);

  // Reconstruction always uses the unmixed latents.
  std::vector<ad::Var> rec_terms;
  for (const auto& m : mods) {
    ad::Var rec_hat = mixed ? nn::decode(p, m, enc.general.at(m), enc.specific.at(m)) : x_hat.at(m);
    rec_terms.push_back(loss::recon(tape.constant(raw.at(m)), rec_hat));
  }
  ad::Var l_rec = mean_of(rec_terms);

  std::optional<ad::Var> l_scl;
  if (config.alignment != Alignment::none) {
    std::vector<ad::Var> views;
    std::vector<int> groups;
    for (const auto& m : mods) {
      views.push_back(enc.general.at(m));
      for (Eigen::Index i = 0; i < n; ++i) {
        groups.push_back(config.alignment == Alignment::scl ? labels[static_cast<std::size_t>(i)]
                                                            : static_cast<int>(i));
      }
    }
    ad::Var emb = ad::concat_rows(views);
    l_scl = config.alignment == Alignment::scl ? loss::supcon(emb, groups, config.temperature)
                                               : loss::unsup_contrastive(emb, groups, config.temperature);
  }

  std::optional<ad::Var> l_club;
  if (config.decoupling != Decoupling::none) {
    std::vector<ad::Var> terms;
    for (const auto& m : mods) {
      if (config.decoupling == Decoupling::cid) {
        auto [mu, logvar] = nn::club_forward(p, m, enc.general.at(m));
        terms.push_back(loss::club_estimate(mu, logvar, enc.specific.at(m)));
      } else {
        terms.push_back(loss::mse_decoupling(enc.general.at(m), enc.specific.at(m), config.mid_margin));
      }
    }
    l_club = mean_of(terms);
  }

  std::optional<ad::Var> l_jig;
  if (config.method == Method::ur_jigen) {
    std::vector<JigsawDraw> draws;
    std::vector<int> perm_labels;
    for (Eigen::Index i = 0; i < n; ++i) {
      draws.push_back(draw_jigsaw(static_cast<int>(mods.size()), codebook, state.rng));
      perm_labels.push_back(draws.back().perm_index);
    }
    std::vector<ad::Var> sources;
    for (const auto& m : mods) sources.push_back(enc.general.at(m));
    ad::Var composed = ad::gather_blocks(sources, jigsaw_block_table(draws, codebook),
                                         config.dims.z_dim / codebook.segments());
    l_jig = jigen_loss(nn::jigsaw_logits(p, "shared", composed), perm_labels);
  } else if (config.method == Method::jigen) {
    std::uniform_int_distribution<int> pick(0, codebook.size() - 1);
    std::vector<ad::Var> terms;
    for (const auto& m : mods) {
      const Eigen::MatrixXd& x = raw.at(m);
      Eigen::MatrixXd shuffled(x.rows(), x.cols());
      std::vector<int> perm_labels;
      for (Eigen::Index i = 0; i < n; ++i) {
        const int o = pick(state.rng);
        perm_labels.push_back(o);
        shuffled.row(i) = jigen_shuffle(x.row(i).transpose(), codebook, o).transpose();
      }
      ad::Var z = nn::encode_general(p, m, tape.constant(std::move(shuffled)));
      terms.push_back(jigen_loss(nn::jigsaw_logits(p, m, z), perm_labels));
    }
    l_jig = sum_of(terms);
  }

  LossBreakdown out;
  out.classification = l_cls.scalar();
  out.reconstruction = l_rec.scalar();
  if (l_scl) out.contrastive = l_scl->scalar();
  if (l_club) out.mutual_info = l_club->scalar();
  if (l_jig) out.jigsaw = l_jig->scalar();
  out = total_loss(out, config.weights);

  if (!update) return out;

  const LossWeights& w = config.weights;
  std::vector<ad::Var> weighted;
  auto add_term = [&](const std::optional<ad::Var>& term, double weight) {
    if (term && weight != 0.0) weighted.push_back(ad::scale(*term, weight));
  };
  add_term(l_cls, w.classification);
  add_term(l_scl, w.contrastive);
  add_term(l_club, w.mutual_info);
  add_term(l_rec, w.reconstruction);
  add_term(l_jig, w.jigsaw);
  if (!weighted.empty()) {
    ad::Var total = sum_of(weighted);
    if (total.requires_grad()) {
      tape.backward(total);
      optimizer_step(state.params, state.main_opt, p.gradients(), config.optimizer);
    }
  }
  ++state.step;
  return out;
}

Dataset gather(const Dataset& data, const std::vector<std::size_t>& index) {
  Dataset out;
  out.reserve(index.size());
  for (auto i : index) out.push_back(data[i]);
  return out;
}

nlohmann::json opt_to_json(const OptimizerState& s) {
  return {{"steps", s.steps}, {"first", matrices_to_json(s.first)}, {"second", matrices_to_json(s.second)}};
}

OptimizerState opt_from_json(const nlohmann::json& j) {
  OptimizerState s;
  s.steps = j.at("steps").get<long>();
  s.first = matrices_from_json(j.at("first"));
  s.second = matrices_from_json(j.at("second"));
  return s;
}

}  // namespace

bool TrainState::operator==(const TrainState& o) const {
  if (history.size() != o.history.size()) return false;
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (history[i].as_map() != o.history[i].as_map()) return false;
  }
  return params == o.params && main_opt == o.main_opt && qnet_opt == o.qnet_opt && epoch == o.epoch &&
         step == o.step && rng == o.rng;
}

TrainState init_state(const ExperimentConfig& config) {
  TrainState s;
  s.params = init_parameters(config.model_dims(), config.seed);
  s.rng.seed(mix_seed(mix_seed(config.seed, kStepStream), config.mix.partner_seed));
  return s;
}

nlohmann::json state_to_json(const TrainState& state) {
  std::ostringstream rng;
  rng << state.rng;
  nlohmann::json history = nlohmann::json::array();
  for (const auto& h : state.history) history.push_back(h);
  return {{"format", "urdg-train-state"},
          {"version", 1},
          {"parameters", parameters_to_json(state.params)},
          {"main_opt", opt_to_json(state.main_opt)},
          {"qnet_opt", opt_to_json(state.qnet_opt)},
          {"epoch", state.epoch},
          {"step", state.step},
          {"rng", rng.str()},
          {"history", history}};
}

TrainState state_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "urdg-train-state") throw FormatError(0, "not a urdg training checkpoint");
  TrainState s;
  s.params = parameters_from_json(j.at("parameters"));
  s.main_opt = opt_from_json(j.at("main_opt"));
  s.qnet_opt = opt_from_json(j.at("qnet_opt"));
  s.epoch = j.at("epoch").get<int>();
  s.step = j.at("step").get<long>();
  std::istringstream rng(j.at("rng").get<std::string>());
  rng >> s.rng;
  if (!rng) throw FormatError(0, "corrupt RNG state in checkpoint");
  for (const auto& h : j.at("history")) s.history.push_back(h.get<LossBreakdown>());
  return s;
}

void save_state(const TrainState& state, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << state_to_json(state).dump() << '\n';
}

TrainState load_state(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  try {
    return state_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(0, e.what());
  }
}

void optimizer_step(Parameters& params, OptimizerState& slots, const std::map<std::string, Eigen::MatrixXd>& grads,
                    const OptimizerSpec& spec) {
  ++slots.steps;
  const double t = static_cast<double>(slots.steps);
  for (const auto& [name, grad] : grads) {
    Eigen::MatrixXd& w = params.weights.at(name);
    Eigen::MatrixXd g = grad;
    if (spec.weight_decay != 0.0) g += spec.weight_decay * w;
    auto [it, fresh] = slots.first.try_emplace(name, Eigen::MatrixXd::Zero(w.rows(), w.cols()));
    Eigen::MatrixXd& m1 = it->second;
    if (spec.kind == OptimizerKind::sgd_momentum) {
      m1 = fresh ? g : Eigen::MatrixXd(spec.momentum * m1 + g);
      w -= spec.lr * m1;
    } else {
      Eigen::MatrixXd& m2 = slots.second.try_emplace(name, Eigen::MatrixXd::Zero(w.rows(), w.cols())).first->second;
      m1 = spec.beta1 * m1 + (1.0 - spec.beta1) * g;
      m2 = spec.beta2 * m2 + (1.0 - spec.beta2) * g.cwiseProduct(g);
      const double c1 = 1.0 - std::pow(spec.beta1, t);
      const double c2 = 1.0 - std::pow(spec.beta2, t);
      w.array() -= spec.lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + 1e-8);
    }
  }
}

PermutationCodebook config_codebook(const ExperimentConfig& config) {
  if (!uses_codebook(config.method)) {
    std::vector<int> identity(static_cast<std::size_t>(config.jigsaw.segments));
    for (std::size_t i = 0; i < identity.size(); ++i) identity[i] = static_cast<int>(i);
    return PermutationCodebook(config.jigsaw.segments, {identity});
  }
  return build_codebook(config.jigsaw.segments, config.jigsaw.permutations, config.seed);
}

LossBreakdown train_step(TrainState& state, const Dataset& batch, const ExperimentConfig& config,
                         const PermutationCodebook& codebook) {
  return run_step(state, batch, config, codebook, true);
}

LossBreakdown train_step(TrainState& state, const Dataset& batch, const ExperimentConfig& config) {
  return train_step(state, batch, config, config_codebook(config));
}

LossBreakdown evaluate_losses(const TrainState& state, const Dataset& batch, const ExperimentConfig& config) {
  TrainState scratch = state;
  return run_step(scratch, batch, config, config_codebook(config), false);
}

void train_epochs(TrainState& state, const Dataset& train, const ExperimentConfig& config,
                  std::optional<int> until_epoch, const EpochCallback& on_epoch) {
  const int end = until_epoch.value_or(config.epochs);
  if (state.epoch >= end) return;
  const PermutationCodebook codebook = config_codebook(config);
  const auto bs = static_cast<std::size_t>(config.batch_size);
  while (state.epoch < end) {
    const auto batches =
        make_batches(train.size(), bs, mix_seed(mix_seed(config.seed, kBatchStream), state.epoch), true);
    if (batches.empty()) throw ValidationError("train", "training set yields no batch of size >= 2");
    std::map<std::string, double> sums;
    for (const auto& index : batches) {
      const LossBreakdown l = train_step(state, gather(train, index), config, codebook);
      for (const auto& [k, v] : l.as_map()) sums[k] += v;
    }
    const double count = static_cast<double>(batches.size());
    LossBreakdown mean;
    mean.classification = sums["cls"] / count;
    mean.contrastive = sums["scl"] / count;
    mean.mutual_info = sums["club"] / count;
    mean.reconstruction = sums["rec"] / count;
    mean.jigsaw = sums["jig"] / count;
    mean.total = sums["total"] / count;
    state.history.push_back(mean);
    ++state.epoch;
    if (on_epoch) on_epoch(state.epoch - 1, mean);
  }
}

TrainState fit(const ExperimentConfig& config, const Dataset& train, const EpochCallback& on_epoch) {
  config.validate(false);
  TrainState state = init_state(config);
  train_epochs(state, train, config, std::nullopt, on_epoch);
  return state;
}

DatasetSplit make_split(const ExperimentConfig& config, const Dataset& data) {
  return config.protocol == Protocol::multi_source ? split_multi_source(data, config.target_or_source_domain)
                                                   : split_single_source(data, config.target_or_source_domain);
}

TrainState fit(const ExperimentConfig& config, const EpochCallback& on_epoch) {
  config.validate(false);
  return fit(config, make_split(config, generate(config.generator)).train, on_epoch);
}

MetricsReport build_report(const ExperimentConfig& config, const TrainState& state, const DatasetSplit& split,
                           const Dataset& data) {
  const InferenceSpec spec = inference_spec(config);
  const auto mods = config.modalities();
  std::vector<std::vector<std::string>> subsets;
  for (const auto& m : mods) subsets.push_back({m});
  if (mods.size() >= 2) subsets.push_back(mods);

  MetricsReport r;
  r.config_digest = config_digest(config);
  r.method = to_string(config.method);
  auto fill = [&](const std::string& split_name, const Dataset& set) {
    if (set.empty()) return;
    for (const auto& s : subsets) r.accuracy[split_name][subset_key(s)] = evaluate(state.params, set, s, spec);
  };
  fill("train", split.train);
  fill("test", split.test);
  if (split.protocol_tag == Protocol::single_source) {
    for (int d : split.held_out_domains) {
      Dataset part;
      for (const auto& s : split.test) {
        if (s.domain_label == d) part.push_back(s);
      }
      fill("test/domain" + std::to_string(d), part);
    }
  }
  r.probes = probe_disentanglement(state.params, data, spec, config.seed);
  if (mods.size() >= 2) r.alignment = alignment_metrics(state.params, split.test, spec);
  r.loss_history = state.history;
  return r;
}

ExperimentResult run_experiment_full(const ExperimentConfig& config, const EpochCallback& on_epoch) {
  config.validate(false);
  ExperimentResult out;
  out.data = generate(config.generator);
  out.split = make_split(config, out.data);
  out.state = fit(config, out.split.train, on_epoch);
  out.report = build_report(config, out.state, out.split, out.data);
  return out;
}

MetricsReport run_experiment(const ExperimentConfig& config) { return run_experiment_full(config).report; }

AblationAxes parse_axes(const std::string& spec, const ExperimentConfig& base) {
  AblationAxes axes;
  std::stringstream ss(spec);
  std::string token;
  while (std::getline(ss, token, ',')) {
    token.erase(0, token.find_first_not_of(" \t"));
    token.erase(token.find_last_not_of(" \t") + 1);
    if (token.empty()) continue;
    if (token == "alignment") {
      axes.alignment = true;
    } else if (token == "decoupling") {
      axes.decoupling = true;
    } else if (token == "mix.mode") {
      axes.mix_mode = true;
    } else if (token.rfind("jigsaw.P", 0) == 0) {
      const std::string rest = token.substr(8);
      if (rest.empty()) {
        axes.jigsaw_p = base.jigsaw.segments == 4 ? std::vector<int>{2, 6, 12, 24}
                                                  : std::vector<int>{128, 256, 384, 512};
      } else if (rest.front() == '=') {
        std::stringstream vs(rest.substr(1));
        std::string v;
        while (std::getline(vs, v, ':')) {
          try {
            std::size_t used = 0;
            const int p = std::stoi(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            axes.jigsaw_p.push_back(p);
          } catch (const std::exception&) {
            throw ValidationError("axes", "bad jigsaw.P value '" + v + "'");
          }
        }
        if (axes.jigsaw_p.empty()) throw ValidationError("axes", "jigsaw.P= needs at least one value");
      } else {
        throw ValidationError("axes", "unknown axis '" + token + "'");
      }
    } else {
      throw ValidationError("axes", "unknown axis '" + token + "'");
    }
  }
  return axes;
}

std::vector<AblationCell> ablation_cells(const ExperimentConfig& base, const AblationAxes& axes) {
  using AD = std::pair<Alignment, Decoupling>;
  std::vector<AD> ad_values;
  if (axes.alignment && axes.decoupling) {
    ad_values = {{Alignment::none, Decoupling::none}, {Alignment::ucl, Decoupling::none},
                 {Alignment::scl, Decoupling::none},  {Alignment::ucl, Decoupling::mid},
                 {Alignment::scl, Decoupling::mid},   {Alignment::ucl, Decoupling::cid},
                 {Alignment::scl, Decoupling::cid}};
  } else if (axes.alignment) {
    for (auto a : {Alignment::none, Alignment::ucl, Alignment::scl}) ad_values.emplace_back(a, base.decoupling);
  } else if (axes.decoupling) {
    for (auto d : {Decoupling::none, Decoupling::mid, Decoupling::cid}) ad_values.emplace_back(base.alignment, d);
  } else {
    ad_values.emplace_back(base.alignment, base.decoupling);
  }
  std::vector<std::optional<MixMode>> modes{std::nullopt};
  if (axes.mix_mode) modes = {MixMode::fixed, MixMode::rand};
  std::vector<std::optional<int>> ps{std::nullopt};
  if (!axes.jigsaw_p.empty()) {
    ps.clear();
    for (int p : axes.jigsaw_p) ps.emplace_back(p);
  }

  std::vector<AblationCell> cells;
  for (const auto& [a, d] : ad_values) {
    for (const auto& mode : modes) {
      for (const auto& p : ps) {
        AblationCell cell;
        cell.config = base;
        cell.config.alignment = a;
        cell.config.decoupling = d;
        if (axes.alignment) cell.axis_values["alignment"] = to_string(a);
        if (axes.decoupling) cell.axis_values["decoupling"] = to_string(d);
        if (mode) {
          cell.config.mix.mode = *mode;
          cell.axis_values["mix.mode"] = to_string(*mode);
        }
        if (p) {
          cell.config.jigsaw.permutations = *p;
          cell.axis_values["jigsaw.P"] = std::to_string(*p);
        }
        cell.config.validate(false);
        cells.push_back(std::move(cell));
      }
    }
  }
  return cells;
}

std::vector<AblationRow> run_ablation_suite(const ExperimentConfig& base, const AblationAxes& axes,
                                            const std::function<void(const AblationRow&)>& on_row) {
  std::vector<AblationRow> rows;
  for (auto& cell : ablation_cells(base, axes)) {
    AblationRow row{cell, run_experiment(cell.config)};
    if (on_row) on_row(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows, const AblationAxes& axes) {
  std::vector<std::string> axis_cols;
  if (axes.alignment) axis_cols.emplace_back("alignment");
  if (axes.decoupling) axis_cols.emplace_back("decoupling");
  if (axes.mix_mode) axis_cols.emplace_back("mix.mode");
  if (!axes.jigsaw_p.empty()) axis_cols.emplace_back("jigsaw.P");

  std::vector<std::pair<std::string, std::string>> acc_cols;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& row : rows) {
    for (const auto& [split, subsets] : row.report.accuracy) {
      if (split == "train") continue;
      for (const auto& [subset, _] : subsets) {
        if (seen.emplace(split, subset).second) acc_cols.emplace_back(split, subset);
      }
    }
  }

  std::ostringstream out;
  out.precision(17);
  std::string sep;
  for (const auto& c : axis_cols) {
    out << sep << c;
    sep = ",";
  }
  out << sep << "config_digest";
  for (const auto& [split, subset] : acc_cols) out << ',' << split << ':' << subset;
  out << '\n';
  for (const auto& row : rows) {
    sep.clear();
    for (const auto& c : axis_cols) {
      out << sep << row.cell.axis_values.at(c);
      sep = ",";
    }
    out << sep << row.report.config_digest;
    for (const auto& [split, subset] : acc_cols) {
      out << ',';
      auto s = row.report.accuracy.find(split);
      if (s != row.report.accuracy.end()) {
        auto v = s->second.find(subset);
        if (v != s->second.end()) out << v->second;
      }
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace urdg
