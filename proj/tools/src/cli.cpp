#include "urdg_cli/cli.hpp"

#include "urdg/config.hpp"
#include "urdg/digest.hpp"
#include "urdg/error.hpp"
#include "urdg/evalkit.hpp"
#include "urdg/synthbench.hpp"
#include "urdg/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#ifndef URDG_VERSION
#define URDG_VERSION "0.0.0"
#endif

namespace urdg::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(path.string(), "cannot open file");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("write to '" + path.string() + "' failed");
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw FormatError(0, path.string() + ": " + e.what());
  }
}

void echo(std::ostream& out, const std::string& command, const json& resolved) {
  out << "# urdg " << command << " resolved configuration\n" << resolved.dump(2) << '\n';
}

std::string history_csv(const std::vector<LossBreakdown>& history) {
  std::ostringstream o;
  o << std::setprecision(17) << "epoch,component,value\n";
  for (std::size_t e = 0; e < history.size(); ++e) {
    for (const auto& [name, value] : history[e].as_map()) o << e << ',' << name << ',' << value << '\n';
  }
  return o.str();
}

int cmd_generate(const fs::path& spec_path, const fs::path& out_path, std::ostream& out) {
  GeneratorSpec spec;
  try {
    spec = read_json(spec_path).get<GeneratorSpec>();
  } catch (const json::exception& e) {
    throw ValidationError("spec", e.what());
  }
  spec.validate();
  echo(out, "generate", spec);
  const Dataset data = generate(spec);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  save_records(data, out_path);
  fs::path sidecar = out_path;
  sidecar += ".spec.json";
  write_file(sidecar, json(spec).dump(2) + "\n");
  out << "wrote " << data.size() << " records to " << out_path.string() << '\n';
  return kExitOk;
}

int cmd_train(const fs::path& config_path, const fs::path& out_dir, std::ostream& out) {
  const ExperimentConfig config = load_config(config_path);
  echo(out, "train", config);
  const std::string digest = config_digest(config);

  const auto started = std::chrono::steady_clock::now();
  ExperimentResult result = run_experiment_full(config, [&](int epoch, const LossBreakdown& b) {
    out << "epoch " << epoch + 1 << '/' << config.epochs << " total " << b.total << '\n';
  });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  fs::create_directories(out_dir);
  const fs::path run = fresh_run_dir(out_dir, digest.substr(0, 16));
  fs::create_directory(run);
  write_file(run / artifact::kConfig, json(config).dump(2) + "\n");
  save_state(result.state, run / artifact::kCheckpoint);
  write_file(run / artifact::kHistory, history_csv(result.report.loss_history));
  write_file(run / artifact::kReport, json(result.report).dump(2) + "\n");
  export_embeddings(result.state.params, result.data, run / artifact::kEmbeddings, inference_spec(config));

  const json manifest{{"run_id", run.filename().string()},
                      {"config_digest", digest},
                      {"seedless_digest", seedless_digest(config)},
                      {"config", config},
                      {"artifacts",
                       {{"config", artifact::kConfig},
                        {"checkpoint", artifact::kCheckpoint},
                        {"history", artifact::kHistory},
                        {"report", artifact::kReport},
                        {"embeddings", artifact::kEmbeddings}}},
                      {"duration_seconds", seconds},
                      {"tool_version", URDG_VERSION}};
  write_file(run / artifact::kManifest, manifest.dump(2) + "\n");

  for (const auto& [split, subsets] : result.report.accuracy) {
    for (const auto& [subset, acc] : subsets) out << split << ' ' << subset << ' ' << acc << '\n';
  }
  out << "run directory " << run.string() << '\n';
  return kExitOk;
}

int cmd_ablate(const fs::path& config_path, const std::string& axes_spec, const fs::path& out_dir,
               std::ostream& out) {
  const ExperimentConfig base = load_config(config_path, false);
  const AblationAxes axes = parse_axes(axes_spec, base);
  echo(out, "ablate", json{{"config", base}, {"axes", axes_spec}});

  std::size_t done = 0;
  const auto rows = run_ablation_suite(base, axes, [&](const AblationRow& row) {
    out << "cell " << ++done;
    for (const auto& [axis, value] : row.cell.axis_values) out << ' ' << axis << '=' << value;
    out << '\n';
  });

  fs::create_directories(out_dir);
  write_file(out_dir / "ablation.csv", ablation_csv(rows, axes));
  json cells = json::array();
  for (const auto& row : rows) {
    cells.push_back({{"axes", row.cell.axis_values}, {"config", row.cell.config}, {"report", row.report}});
  }
  write_file(out_dir / "cells.json", cells.dump(2) + "\n");
  out << "wrote " << rows.size() << " rows to " << (out_dir / "ablation.csv").string() << '\n';
  return kExitOk;
}

struct RunRecord {
  std::string group;
  std::string method;
  std::uint64_t seed = 0;
  std::map<std::pair<std::string, std::string>, double> metrics;  // (split, subset) -> value
};

RunRecord load_run(const fs::path& dir) {
  const fs::path manifest_path = dir / artifact::kManifest;
  if (!fs::is_regular_file(manifest_path)) throw ValidationError(dir.string(), "no manifest.json in run directory");
  const json manifest = read_json(manifest_path);
  RunRecord r;
  ExperimentConfig config;
  MetricsReport report;
  try {
    config = manifest.at("config").get<ExperimentConfig>();
    report = read_json(dir / manifest.at("artifacts").at("report").get<std::string>()).get<MetricsReport>();
  } catch (const json::exception& e) {
    throw ValidationError(dir.string(), e.what());
  }
  r.group = seedless_digest(config);
  r.method = report.method;
  r.seed = config.seed;
  for (const auto& [split, subsets] : report.accuracy) {
    for (const auto& [subset, acc] : subsets) r.metrics[{split, subset}] = acc;
  }
  if (report.probes) {
    const auto& p = *report.probes;
    r.metrics[{"probe", "class_on_z"}] = p.class_on_z;
    r.metrics[{"probe", "class_on_zbar"}] = p.class_on_zbar;
    r.metrics[{"probe", "domain_on_z"}] = p.domain_on_z;
    r.metrics[{"probe", "domain_on_zbar"}] = p.domain_on_zbar;
  }
  if (report.alignment) {
    r.metrics[{"alignment", "paired"}] = report.alignment->paired_cosine_mean;
    r.metrics[{"alignment", "unpaired"}] = report.alignment->unpaired_cosine_mean;
  }
  return r;
}

int cmd_report(const std::vector<std::string>& run_dirs, const fs::path& out_path, std::ostream& out) {
  echo(out, "report", json{{"runs", run_dirs}, {"out", out_path.string()}});
  std::vector<RunRecord> runs;
  for (const auto& d : run_dirs) runs.push_back(load_run(d));

  // (method, subset, split, group) -> seed -> values; repeated seeds average.
  using Key = std::tuple<std::string, std::string, std::string, std::string>;
  std::map<Key, std::map<std::uint64_t, std::vector<double>>> cells;
  std::set<std::uint64_t> seeds;
  for (const auto& r : runs) {
    seeds.insert(r.seed);
    for (const auto& [key, value] : r.metrics) cells[{r.method, key.second, key.first, r.group}][r.seed].push_back(value);
  }

  json rows = json::array();
  for (const auto& [key, per_seed] : cells) {
    const auto& [method, subset, split, group] = key;
    json row{{"method", method}, {"subset", subset}, {"split", split}, {"group", group}};
    json seed_values = json::object();
    double sum = 0.0;
    for (const auto& [seed, values] : per_seed) {
      double v = 0.0;
      for (double x : values) v += x;
      v /= static_cast<double>(values.size());
      seed_values[std::to_string(seed)] = v;
      sum += v;
    }
    row["n_seeds"] = per_seed.size();
    row["mean"] = sum / static_cast<double>(per_seed.size());
    row["seeds"] = seed_values;
    rows.push_back(std::move(row));
  }

  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  if (out_path.extension() == ".json") {
    write_file(out_path, rows.dump(2) + "\n");
  } else {
    std::ostringstream o;
    o << std::setprecision(17) << "method,subset,split,group,n_seeds,mean";
    for (auto s : seeds) o << ",seed_" << s;
    o << '\n';
    for (const auto& row : rows) {
      o << row["method"].get<std::string>() << ',' << row["subset"].get<std::string>() << ','
        << row["split"].get<std::string>() << ',' << row["group"].get<std::string>() << ','
        << row["n_seeds"].get<std::size_t>() << ',' << row["mean"].get<double>();
      for (auto s : seeds) {
        o << ',';
        const auto it = row["seeds"].find(std::to_string(s));
        if (it != row["seeds"].end()) o << it->get<double>();
      }
      o << '\n';
    }
    write_file(out_path, o.str());
  }
  out << "aggregated " << runs.size() << " runs into " << rows.size() << " rows\n";
  return kExitOk;
}

int cmd_plot(const fs::path& run, const std::string& kind, const fs::path& out_path, std::ostream& out) {
  echo(out, "plot", json{{"run", run.string()}, {"kind", kind}, {"out", out_path.string()}});
  const fs::path source = run / (kind == "losses" ? artifact::kHistory : artifact::kEmbeddings);
  if (!fs::is_regular_file(source)) throw ValidationError("run", "missing artifact " + source.string());
  const std::string csv = read_file(source);
  const std::string svg = kind == "losses" ? render_loss_svg(csv) : render_embedding_svg(csv);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  write_file(out_path, svg);
  out << "wrote " << out_path.string() << '\n';
  return kExitOk;
}

}  // namespace

fs::path fresh_run_dir(const fs::path& parent, const std::string& stem) {
  fs::path candidate = parent / stem;
  for (int i = 1; fs::exists(candidate); ++i) candidate = parent / (stem + "-" + std::to_string(i));
  return candidate;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Unified-representation domain generalization on synthetic multimodal data", "urdg"};
  app.set_version_flag("--version", URDG_VERSION);
  app.require_subcommand(1);

  std::string spec, config, out_path, axes, run, kind;
  std::vector<std::string> runs;

  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset as JSON Lines records");
  gen->add_option("--spec", spec, "Generator spec JSON")->required();
  gen->add_option("--out", out_path, "Output records file")->required();

  auto* train = app.add_subcommand("train", "Train one configuration and write a run directory");
  train->add_option("--config", config, "Experiment config JSON")->required();
  train->add_option("--out", out_path, "Parent directory for run directories")->required();

  auto* ablate = app.add_subcommand("ablate", "Sweep ablation axes and write a results table");
  ablate->add_option("--config", config, "Base experiment config JSON")->required();
  ablate->add_option("--axes", axes, "Comma-separated axes: alignment, decoupling, mix.mode, jigsaw.P[=a:b]")
      ->required();
  ablate->add_option("--out", out_path, "Output directory")->required();

  auto* report = app.add_subcommand("report", "Aggregate run directories into seed-wise means");
  report->add_option("--runs", runs, "Run directories")->required();
  report->add_option("--out", out_path, "Output .csv or .json file")->required();

  auto* plot = app.add_subcommand("plot", "Render a run artifact as SVG");
  plot->add_option("--run", run, "Run directory")->required();
  plot->add_option("--kind", kind, "losses or embedding")->required()->check(CLI::IsMember({"losses", "embedding"}));
  plot->add_option("--out", out_path, "Output SVG file")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) return cmd_generate(spec, out_path, out);
    if (*train) return cmd_train(config, out_path, out);
    if (*ablate) return cmd_ablate(config, axes, out_path, out);
    if (*report) return cmd_report(runs, out_path, out);
    if (*plot) return cmd_plot(run, kind, out_path, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "numerical abort: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace urdg::cli
