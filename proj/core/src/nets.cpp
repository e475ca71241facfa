#include "urdg/nets.hpp"

#include "urdg/error.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <set>

namespace urdg {

namespace {

constexpr double kLogVarMin = -8.0;
constexpr double kLogVarMax = 8.0;

void require(bool ok, const std::string& field, const std::string& message) {
  if (!ok) throw ValidationError(field, message);
}

/// Per-row standardization over the columns of `x` (biased variance).
ad::Var normalize_rows(const ad::Var& x, double eps) {
  const double n = static_cast<double>(x.cols());
  ad::Var mean = scale(row_sums(x), 1.0 / n);
  ad::Var centered = add_col(x, scale(mean, -1.0));
  ad::Var var = scale(row_sums(mul(centered, centered)), 1.0 / n);
  return mul_col(centered, pow(add_scalar(var, eps), -0.5));
}

ad::Var mlp2(BoundParams& p, const std::string& prefix, const ad::Var& x) {
  ad::Var h = relu(affine(x, p(prefix + "/w1"), p(prefix + "/b1")));
  return affine(h, p(prefix + "/w2"), p(prefix + "/b2"));
}

void check_cols(const ad::Var& x, Eigen::Index expected, const std::string& what) {
  if (x.cols() != expected) {
    throw ValidationError(what, "expected width " + std::to_string(expected) + ", got " + std::to_string(x.cols()));
  }
}

Eigen::MatrixXd row(const Eigen::VectorXd& v) { return v.transpose(); }

}  // namespace

void ModelDims::validate() const {
  require(!modalities.empty(), "dims.modalities", "at least one modality is required");
  std::set<std::string> seen;
  for (const auto& m : modalities) {
    require(m.dim >= 2, "dims.modalities." + m.name, "raw dim must be >= 2");
    require(seen.insert(m.name).second, "dims.modalities." + m.name, "duplicate modality");
    require(m.name != "fusion" && m.name != "shared", "dims.modalities." + m.name, "reserved modality name");
  }
  require(z_dim >= 2 && z_dim % 2 == 0, "dims.z_dim", "must be even and >= 2");
  require(hidden_dim >= 2, "dims.hidden_dim", "must be >= 2");
  require(num_classes >= 2, "dims.num_classes", "must be >= 2");
  require(num_permutations >= 1, "dims.num_permutations", "must be >= 1");
}

int ModelDims::raw_dim(const std::string& modality) const {
  for (const auto& m : modalities) {
    if (m.name == modality) return m.dim;
  }
  throw ValidationError("modality", "unknown modality '" + modality + "'");
}

int ModelDims::fusion_dim() const {
  int total = 0;
  for (const auto& m : modalities) total += m.dim;
  return total;
}

std::vector<std::string> ModelDims::modality_names() const {
  std::vector<std::string> out;
  for (const auto& m : modalities) out.push_back(m.name);
  return out;
}

bool ModelDims::has_modality(const std::string& modality) const {
  for (const auto& m : modalities) {
    if (m.name == modality) return true;
  }
  return false;
}

void to_json(nlohmann::json& j, const ModelDims& dims) {
  nlohmann::json mods = nlohmann::json::array();
  for (const auto& m : dims.modalities) mods.push_back({{"name", m.name}, {"dim", m.dim}});
  j = nlohmann::json{{"modalities", mods},
                     {"z_dim", dims.z_dim},
                     {"hidden_dim", dims.hidden_dim},
                     {"num_classes", dims.num_classes},
                     {"num_permutations", dims.num_permutations}};
}

void from_json(const nlohmann::json& j, ModelDims& dims) {
  dims.modalities.clear();
  for (const auto& m : j.at("modalities")) dims.modalities.push_back({m.at("name"), m.at("dim")});
  dims.z_dim = j.at("z_dim");
  dims.hidden_dim = j.at("hidden_dim");
  dims.num_classes = j.at("num_classes");
  dims.num_permutations = j.at("num_permutations");
}

const Eigen::MatrixXd& Parameters::weight(const std::string& name) const {
  auto it = weights.find(name);
  if (it == weights.end()) throw ValidationError("parameter", "unknown parameter '" + name + "'");
  return it->second;
}

bool is_club_weight(const std::string& name) { return name.starts_with("club/"); }

Parameters init_parameters(const ModelDims& dims, std::uint64_t seed) {
  dims.validate();
  Parameters p;
  p.dims = dims;
  std::mt19937_64 rng(seed);

  auto linear = [&](const std::string& prefix, const std::string& suffix, int in, int out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Eigen::MatrixXd w(in, out);
    for (int c = 0; c < out; ++c) {
      for (int r = 0; r < in; ++r) w(r, c) = u(rng);
    }
    p.weights[prefix + "/w" + suffix] = std::move(w);
    p.weights[prefix + "/b" + suffix] = Eigen::MatrixXd::Zero(1, out);
  };
  auto mlp = [&](const std::string& prefix, int in, int out) {
    linear(prefix, "1", in, dims.hidden_dim);
    linear(prefix, "2", dims.hidden_dim, out);
  };
  auto ibn = [&](const std::string& prefix, int width) {
    p.weights[prefix + "/gamma"] = Eigen::MatrixXd::Ones(1, width);
    p.weights[prefix + "/beta"] = Eigen::MatrixXd::Zero(1, width);
    p.buffers[prefix + "/running_mean"] = Eigen::MatrixXd::Zero(1, width / 2);
    p.buffers[prefix + "/running_var"] = Eigen::MatrixXd::Ones(1, width / 2);
  };

  // Creation order fixes the random stream; keep it stable.
  for (const auto& m : dims.modalities) {
    mlp("general/" + m.name, m.dim, dims.z_dim);
    mlp("specific/" + m.name, m.dim, dims.z_dim);
    mlp("decoder/" + m.name, 2 * dims.z_dim, m.dim);
    linear("head/" + m.name, "", m.dim, dims.num_classes);
    linear("jigsaw/" + m.name, "", dims.z_dim, dims.num_permutations);
    mlp("club/" + m.name + "/mu", dims.z_dim, dims.z_dim);
    mlp("club/" + m.name + "/logvar", dims.z_dim, dims.z_dim);
    ibn(nn::ibn_prefix(IbnSite::unified, m.name), dims.z_dim);
    if (m.dim % 2 == 0) ibn(nn::ibn_prefix(IbnSite::raw, m.name), m.dim);
  }
  linear("head/fusion", "", dims.fusion_dim(), dims.num_classes);
  linear("jigsaw/shared", "", dims.z_dim, dims.num_permutations);
  return p;
}

nlohmann::json matrices_to_json(const std::map<std::string, Eigen::MatrixXd>& ms) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [name, m] : ms) {
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    }
    out[name] = {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
  }
  return out;
}

std::map<std::string, Eigen::MatrixXd> matrices_from_json(const nlohmann::json& j) {
  std::map<std::string, Eigen::MatrixXd> out;
  for (const auto& [name, entry] : j.items()) {
    const auto rows = entry.at("rows").get<Eigen::Index>();
    const auto cols = entry.at("cols").get<Eigen::Index>();
    const auto& data = entry.at("data");
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
      throw FormatError(0, "checkpoint entry '" + name + "' has " + std::to_string(data.size()) +
                               " values for shape " + std::to_string(rows) + "x" + std::to_string(cols));
    }
    Eigen::MatrixXd m(rows, cols);
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[k++].get<double>();
    }
    out.emplace(name, std::move(m));
  }
  return out;
}

nlohmann::json parameters_to_json(const Parameters& params) {
  return {{"format", "urdg-parameters"},
          {"version", 1},
          {"dims", params.dims},
          {"weights", matrices_to_json(params.weights)},
          {"buffers", matrices_to_json(params.buffers)}};
}

Parameters parameters_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "urdg-parameters") throw FormatError(0, "not a urdg parameter checkpoint");
  Parameters p;
  p.dims = j.at("dims").get<ModelDims>();
  p.weights = matrices_from_json(j.at("weights"));
  p.buffers = matrices_from_json(j.at("buffers"));
  return p;
}

void save_parameters(const Parameters& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << parameters_to_json(params).dump() << '\n';
}

Parameters load_parameters(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  try {
    return parameters_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(0, e.what());
  }
}

BoundParams::BoundParams(ad::Tape& tape, const Parameters& params, std::function<bool(const std::string&)> trainable)
    : tape_(tape), params_(params), trainable_(std::move(trainable)) {}

ad::Var BoundParams::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const Eigen::MatrixXd& value = params_.weight(name);
  ad::Var v = trainable_ && trainable_(name) ? tape_.leaf(value) : tape_.constant(value);
  bound_.emplace(name, v);
  return v;
}

std::map<std::string, Eigen::MatrixXd> BoundParams::gradients() const {
  std::map<std::string, Eigen::MatrixXd> out;
  for (const auto& [name, v] : bound_) {
    if (!v.requires_grad()) continue;
    out[name] = v.grad().size() == 0 ? Eigen::MatrixXd::Zero(v.rows(), v.cols()) : v.grad();
  }
  return out;
}

namespace nn {

std::string ibn_prefix(IbnSite site, const std::string& modality) {
  return (site == IbnSite::unified ? "ibn_ur/" : "ibn_raw/") + modality;
}

ad::Var encode_general(BoundParams& p, const std::string& modality, const ad::Var& x) {
  check_cols(x, p.dims().raw_dim(modality), "x");
  return mlp2(p, "general/" + modality, x);
}

ad::Var encode_specific(BoundParams& p, const std::string& modality, const ad::Var& x) {
  check_cols(x, p.dims().raw_dim(modality), "x");
  return mlp2(p, "specific/" + modality, x);
}

ad::Var decode(BoundParams& p, const std::string& modality, const ad::Var& z, const ad::Var& zbar) {
  p.dims().raw_dim(modality);
  check_cols(z, p.dims().z_dim, "z");
  check_cols(zbar, p.dims().z_dim, "zbar");
  return mlp2(p, "decoder/" + modality, ad::concat_cols({z, zbar}));
}

ad::Var classify(BoundParams& p, const std::string& head, const ad::Var& features) {
  if (head == "fusion") {
    check_cols(features, p.dims().fusion_dim(), "features");
  } else if (p.dims().has_modality(head)) {
    check_cols(features, p.dims().raw_dim(head), "features");
  } else {
    throw ValidationError("head", "unknown classifier head '" + head + "'");
  }
  return affine(features, p("head/" + head + "/w"), p("head/" + head + "/b"));
}

std::pair<ad::Var, ad::Var> club_forward(BoundParams& p, const std::string& modality, const ad::Var& z) {
  p.dims().raw_dim(modality);
  check_cols(z, p.dims().z_dim, "z");
  ad::Var mu = mlp2(p, "club/" + modality + "/mu", z);
  ad::Var logvar = clamp(mlp2(p, "club/" + modality + "/logvar", z), kLogVarMin, kLogVarMax);
  return {mu, logvar};
}

ad::Var jigsaw_logits(BoundParams& p, const std::string& head, const ad::Var& features) {
  if (head != "shared" && !p.dims().has_modality(head)) {
    throw ValidationError("head", "unknown jigsaw head '" + head + "'");
  }
  check_cols(features, p.dims().z_dim, "features");
  return affine(features, p("jigsaw/" + head + "/w"), p("jigsaw/" + head + "/b"));
}

ad::Var ibn(BoundParams& p, IbnSite site, const std::string& modality, const ad::Var& v, BatchContext& ctx) {
  const std::string prefix = ibn_prefix(site, modality);
  const Eigen::Index width = v.cols();
  if (width < 2 || width % 2 != 0) throw ValidationError("ibn", "input width must be even, got " + std::to_string(width));
  const Eigen::Index half = width / 2;
  ad::Var gamma = p(prefix + "/gamma");
  ad::Var beta = p(prefix + "/beta");
  if (gamma.cols() != width) throw ValidationError("ibn", "affine width mismatch for " + prefix);

  ad::Var front = normalize_rows(slice_cols(v, 0, half), ctx.eps);
  ad::Var back = slice_cols(v, half, half);
  ad::Var back_norm;
  if (ctx.training) {
    if (v.rows() < 2) throw ValidationError("batch", "IBN in training mode needs at least 2 samples");
    back_norm = transpose(normalize_rows(transpose(back), ctx.eps));
    if (ctx.running_stats != nullptr) {
      const Eigen::MatrixXd& b = back.value();
      const Eigen::RowVectorXd mu = b.colwise().mean();
      const Eigen::RowVectorXd var = (b.rowwise() - mu).array().square().colwise().mean();
      auto& rm = ctx.running_stats->at(prefix + "/running_mean");
      auto& rv = ctx.running_stats->at(prefix + "/running_var");
      rm = ctx.momentum * rm + (1.0 - ctx.momentum) * mu;
      rv = ctx.momentum * rv + (1.0 - ctx.momentum) * var;
    }
  } else {
    if (ctx.running_stats == nullptr) throw ValidationError("ibn", "eval mode needs running statistics");
    const auto& stats = *ctx.running_stats;
    const Eigen::MatrixXd& rm = stats.at(prefix + "/running_mean");
    const Eigen::MatrixXd& rv = stats.at(prefix + "/running_var");
    ad::Tape& t = p.tape();
    ad::Var shift = t.constant(-rm);
    ad::Var inv = t.constant((rv.array() + ctx.eps).rsqrt().matrix());
    back_norm = mul_row(add_row(back, shift), inv);
  }
  ad::Var normed = add_row(mul_row(ad::concat_cols({front, back_norm}), gamma), beta);
  return add(normed, v);
}

}  // namespace nn

namespace {

template <typename Fn>
Eigen::MatrixXd eval_const(const Parameters& params, Fn&& fn) {
  ad::Tape tape;
  BoundParams p(tape, params, nullptr);
  return fn(tape, p).value();
}

}  // namespace

Eigen::VectorXd encode_general(const Parameters& params, const std::string& modality, const Eigen::VectorXd& x) {
  return eval_const(params, [&](ad::Tape& t, BoundParams& p) {
           return nn::encode_general(p, modality, t.constant(row(x)));
         }).transpose();
}

Eigen::VectorXd encode_specific(const Parameters& params, const std::string& modality, const Eigen::VectorXd& x) {
  return eval_const(params, [&](ad::Tape& t, BoundParams& p) {
           return nn::encode_specific(p, modality, t.constant(row(x)));
         }).transpose();
}

Eigen::VectorXd decode(const Parameters& params, const std::string& modality, const Eigen::VectorXd& z,
                       const Eigen::VectorXd& zbar) {
  return eval_const(params, [&](ad::Tape& t, BoundParams& p) {
           return nn::decode(p, modality, t.constant(row(z)), t.constant(row(zbar)));
         }).transpose();
}

Eigen::VectorXd classify(const Parameters& params, const std::string& head, const Eigen::VectorXd& features) {
  return eval_const(params, [&](ad::Tape& t, BoundParams& p) {
           return nn::classify(p, head, t.constant(row(features)));
         }).transpose();
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> club_net_forward(const Parameters& params, const std::string& modality,
                                                             const Eigen::VectorXd& z) {
  ad::Tape tape;
  BoundParams p(tape, params, nullptr);
  auto [mu, logvar] = nn::club_forward(p, modality, tape.constant(row(z)));
  return {mu.value().transpose(), logvar.value().transpose()};
}

Eigen::MatrixXd ibn_layer(const Parameters& params, IbnSite site, const std::string& modality, const Eigen::MatrixXd& v,
                          BatchContext ctx) {
  std::map<std::string, Eigen::MatrixXd> stats = params.buffers;
  if (ctx.running_stats == nullptr) ctx.running_stats = &stats;
  ad::Tape tape;
  BoundParams p(tape, params, nullptr);
  return nn::ibn(p, site, modality, tape.constant(v), ctx).value();
}

}  // namespace urdg
