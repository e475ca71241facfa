#include "gradcheck.hpp"

#include "urdg/dgops.hpp"
#include "urdg/losses.hpp"
#include "urdg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace urdg::testing {

using Matrix = Eigen::MatrixXd;

namespace {

double rel_error(const Matrix& analytic, const Matrix& numeric) {
  const double denom = std::max({analytic.norm(), numeric.norm(), 1e-6});
  return (analytic - numeric).norm() / denom;
}

double evaluate(const Parameters& params, const std::vector<Matrix>& inputs, const Objective& f) {
  ad::Tape tape;
  BoundParams bound(tape, params, [](const std::string&) { return false; });
  std::vector<ad::Var> vars;
  for (const auto& x : inputs) vars.push_back(tape.constant(x));
  return f(bound, vars).scalar();
}

Matrix random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = n(rng);
  return m;
}

/// Entries with magnitude in [0.2, 1.5], random sign: away from kinks at 0.
Matrix off_zero(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::uniform_real_distribution<double> mag(0.2, 1.5);
  std::bernoulli_distribution sign(0.5);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = sign(rng) ? mag(rng) : -mag(rng);
  return m;
}

Matrix positive(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::uniform_real_distribution<double> u(0.3, 2.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = u(rng);
  return m;
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

/// Projects an arbitrary-shaped output onto a fixed random direction.
ad::Var project(const ad::Var& out, const Matrix& direction) {
  return ad::sum(ad::mul(out, out.tape()->constant(direction)));
}

using Unary = std::function<ad::Var(const ad::Var&)>;

/// Gradient check of `op` on one random input, reduced by a random projection.
double check_unary(std::mt19937_64& rng, const Matrix& x, const Unary& op) {
  ad::Tape probe;
  const auto shape = op(probe.constant(x));
  const Matrix dir = random_matrix(rng, shape.rows(), shape.cols());
  return gradcheck({}, {x}, [&](BoundParams&, const std::vector<ad::Var>& v) { return project(op(v[0]), dir); });
}

double check_binary(std::mt19937_64& rng, const Matrix& a, const Matrix& b,
                    const std::function<ad::Var(const ad::Var&, const ad::Var&)>& op) {
  ad::Tape probe;
  const auto shape = op(probe.constant(a), probe.constant(b));
  const Matrix dir = random_matrix(rng, shape.rows(), shape.cols());
  return gradcheck({}, {a, b}, [&](BoundParams&, const std::vector<ad::Var>& v) { return project(op(v[0], v[1]), dir); });
}

ModelDims small_dims() {
  ModelDims d;
  d.modalities = {{"A", 6}, {"B", 4}};
  d.z_dim = 4;
  d.hidden_dim = 5;
  d.num_classes = 3;
  d.num_permutations = 4;
  return d;
}

/// Small model with every weight (biases and affine terms included) randomized.
Parameters random_params(std::mt19937_64& rng) {
  Parameters p = init_parameters(small_dims(), rng());
  for (auto& [name, w] : p.weights) w += random_matrix(rng, w.rows(), w.cols(), 0.3);
  return p;
}

double check_net(std::mt19937_64& rng, Eigen::Index out_rows, Eigen::Index out_cols,
                 const std::vector<Matrix>& inputs,
                 const std::function<ad::Var(BoundParams&, const std::vector<ad::Var>&)>& op) {
  const Parameters params = random_params(rng);
  const Matrix dir = random_matrix(rng, out_rows, out_cols);
  return gradcheck(params, inputs,
                   [&](BoundParams& p, const std::vector<ad::Var>& v) { return project(op(p, v), dir); });
}

std::vector<int> random_labels(std::mt19937_64& rng, int n, int k) {
  std::vector<int> y(static_cast<std::size_t>(n));
  for (auto& v : y) v = uniform_int(rng, 0, k - 1);
  return y;
}

Matrix random_simplex_rows(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  Matrix m = positive(rng, rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) m.row(i) /= m.row(i).sum();
  return m;
}

}  // namespace

double gradcheck(const Parameters& params, const std::vector<Matrix>& inputs, const Objective& f, double step) {
  ad::Tape tape;
  BoundParams bound(tape, params, [](const std::string&) { return true; });
  std::vector<ad::Var> leaves;
  for (const auto& x : inputs) leaves.push_back(tape.leaf(x));
  tape.backward(f(bound, leaves));
  const auto param_grads = bound.gradients();

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Matrix analytic = leaves[k].grad();
    if (analytic.size() == 0) analytic = Matrix::Zero(inputs[k].rows(), inputs[k].cols());
    Matrix numeric(inputs[k].rows(), inputs[k].cols());
    std::vector<Matrix> xs = inputs;
    for (Eigen::Index i = 0; i < numeric.size(); ++i) {
      const double orig = xs[k](i);
      xs[k](i) = orig + step;
      const double up = evaluate(params, xs, f);
      xs[k](i) = orig - step;
      const double down = evaluate(params, xs, f);
      xs[k](i) = orig;
      numeric(i) = (up - down) / (2.0 * step);
    }
    worst = std::max(worst, rel_error(analytic, numeric));
  }
  for (const auto& [name, analytic] : param_grads) {
    Parameters p = params;
    Matrix& w = p.weights.at(name);
    Matrix numeric(w.rows(), w.cols());
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double orig = w(i);
      w(i) = orig + step;
      const double up = evaluate(p, inputs, f);
      w(i) = orig - step;
      const double down = evaluate(p, inputs, f);
      w(i) = orig;
      numeric(i) = (up - down) / (2.0 * step);
    }
    worst = std::max(worst, rel_error(analytic, numeric));
  }
  return worst;
}

std::vector<OpCheck> gradient_suite() {
  using V = ad::Var;
  std::vector<OpCheck> s;
  auto dims = [](std::mt19937_64& rng) { return std::pair{uniform_int(rng, 2, 6), uniform_int(rng, 1, 8)}; };

  // Autodiff primitives.
  s.push_back({"matmul", [=](std::mt19937_64& rng) {
                 const int n = uniform_int(rng, 1, 6), k = uniform_int(rng, 1, 8), m = uniform_int(rng, 1, 8);
                 return check_binary(rng, random_matrix(rng, n, k), random_matrix(rng, k, m), ad::matmul);
               }});
  s.push_back({"transpose", [=](std::mt19937_64& rng) {
                 auto [r, c] = dims(rng);
                 return check_unary(rng, random_matrix(rng, r, c), ad::transpose);
               }});
  for (auto [name, op] : std::vector<std::pair<const char*, V (*)(const V&, const V&)>>{
           {"add", ad::add}, {"sub", ad::sub}, {"mul", ad::mul}}) {
    s.push_back({name, [=](std::mt19937_64& rng) {
                   auto [r, c] = dims(rng);
                   return check_binary(rng, random_matrix(rng, r, c), random_matrix(rng, r, c), op);
                 }});
  }
  s.push_back({"scale", [=](std::mt19937_64& rng) {
                 auto [r, c] = dims(rng);
                 const double k = std::normal_distribution<double>(0.0, 2.0)(rng);
                 return check_unary(rng, random_matrix(rng, r, c), [k](const V& a) { return ad::scale(a, k); });
               }});
  s.push_back({"add_scalar", [=](std::mt19937_64& rng) {
                 auto [r, c] = dims(rng);
                 return check_unary(rng, random_matrix(rng, r, c), [](const V& a) { return ad::add_scalar(a, 0.7); });
               }});
  s.push_back({"relu", [=](std::mt19937_64& rng) {
                 auto [r, c] = dims(rng);
                 return check_unary(rng, off_zero(rng, r, c), ad::relu);
               }});
  s.push_back({"exp", [=](std::mt19937_64& rng) {
                 auto [r, c] = dims(rng);
                 return check_unary(rng, random_matrix(rng, r, c), ad::exp);
               }});
  s.push_back({"log", [=](std::mt19937_64& rng) {
                 auto [r, c] = dims(rng);
                 return check_unary(rng, positive(rng, r, c), ad::log);
               }});
  s.push_back({"pow", [=](std::mt19937_64& rng) {
                 auto [r, c] = dims(rng);
                 return check_unary(rng, positive(rng, r, c), [](const V& a) { return ad::pow(a, 1.7); });
               }});
  s.push_back({"clamp", [=](std::mt19937_64& rng) {
                 auto [r, c] = dims(rng);
                 // Bounds at +-1.75 keep every entry clear of the kinks.
                 Matrix x = off_zero(rng, r, c) * 1.5;
                 for (Eigen::Index i = 0; i < x.size(); ++i) {
                   if (std::abs(std::abs(x(i)) - 1.75) < 0.05) x(i) *= 0.8;
                 }
                 return check_unary(rng, x, [](const V& a) { return ad::clamp(a, -1.75, 1.75); });
               }});
  s.push_back({"add_row", [=](std::mt19937_64& rng) {
                 auto [r, c] = dims(rng);
                 return check_binary(rng, random_matrix(rng, r, c), random_matrix(rng, 1, c), ad::add_row);
               }});
  s.push_back({"mul_row", [=](std::mt19937_64& rng) {
                 auto [r, c] = dims(rng);
                 return check_binary(rng, random_matrix(rng, r, c), random_matrix(rng, 1, c), ad::mul_row);
               }});
  s.push_back({"add_col", [=](std::mt19937_64& rng) {
                 auto [r, c] = dims(rng);
                 return check_binary(rng, random_matrix(rng, r, c), random_matrix(rng, r, 1), ad::add_col);
               }});
  s.push_back({"mul_col", [=](std::mt19937_64& rng) {
                 auto [r, c] = dims(rng);
                 return check_binary(rng, random_matrix(rng, r, c), random_matrix(rng, r, 1), ad::mul_col);
               }});
  for (auto [name, op] : std::vector<std::pair<const char*, V (*)(const V&)>>{
           {"sum", ad::sum}, {"mean", ad::mean}, {"row_sums", ad::row_sums}, {"col_sums", ad::col_sums},
           {"log_softmax_rows", ad::log_softmax_rows}}) {
    s.push_back({name, [=](std::mt19937_64& rng) {
                   auto [r, c] = dims(rng);
                   return check_unary(rng, random_matrix(rng, r, c, 2.0), op);
                 }});
  }
  s.push_back({"concat_cols", [=](std::mt19937_64& rng) {
                 const int r = uniform_int(rng, 1, 6);
                 return check_binary(rng, random_matrix(rng, r, uniform_int(rng, 1, 4)),
                                     random_matrix(rng, r, uniform_int(rng, 1, 4)),
                                     [](const V& a, const V& b) { return ad::concat_cols({a, b}); });
               }});
  s.push_back({"concat_rows", [=](std::mt19937_64& rng) {
                 const int c = uniform_int(rng, 1, 8);
                 return check_binary(rng, random_matrix(rng, uniform_int(rng, 1, 4), c),
                                     random_matrix(rng, uniform_int(rng, 1, 4), c),
                                     [](const V& a, const V& b) { return ad::concat_rows({a, b}); });
               }});
  s.push_back({"slice_cols", [=](std::mt19937_64& rng) {
                 const int r = uniform_int(rng, 1, 6), c = uniform_int(rng, 2, 8);
                 const int start = uniform_int(rng, 0, c - 1), count = uniform_int(rng, 1, c - start);
                 return check_unary(rng, random_matrix(rng, r, c),
                                    [=](const V& a) { return ad::slice_cols(a, start, count); });
               }});
  s.push_back({"gather_rows", [=](std::mt19937_64& rng) {
                 auto [r, c] = dims(rng);
                 std::vector<Eigen::Index> idx(static_cast<std::size_t>(uniform_int(rng, 1, 8)));
                 for (auto& i : idx) i = uniform_int(rng, 0, r - 1);
                 return check_unary(rng, random_matrix(rng, r, c), [idx](const V& a) { return ad::gather_rows(a, idx); });
               }});
  s.push_back({"gather_blocks", [=](std::mt19937_64& rng) {
                 const int r = uniform_int(rng, 1, 5), blocks = uniform_int(rng, 2, 4), len = uniform_int(rng, 1, 2);
                 std::vector<std::vector<ad::BlockRef>> table(static_cast<std::size_t>(r));
                 for (auto& row : table) {
                   for (int k = 0; k < blocks; ++k) row.push_back({uniform_int(rng, 0, 1), uniform_int(rng, 0, blocks - 1)});
                 }
                 return check_binary(rng, random_matrix(rng, r, blocks * len), random_matrix(rng, r, blocks * len),
                                     [=](const V& a, const V& b) { return ad::gather_blocks({a, b}, table, len); });
               }});
  s.push_back({"masked_log_softmax_rows", [=](std::mt19937_64& rng) {
                 auto [r, c] = dims(rng);
                 Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> mask(r, c);
                 std::bernoulli_distribution coin(0.6);
                 for (int i = 0; i < r; ++i) {
                   for (int j = 0; j < c; ++j) mask(i, j) = coin(rng);
                   mask(i, uniform_int(rng, 0, c - 1)) = true;
                 }
                 return check_unary(rng, random_matrix(rng, r, c, 2.0),
                                    [mask](const V& a) { return ad::masked_log_softmax_rows(a, mask); });
               }});
  s.push_back({"l2_normalize_rows", [=](std::mt19937_64& rng) {
                 auto [r, c] = dims(rng);
                 return check_unary(rng, random_matrix(rng, r, c), [](const V& a) { return ad::l2_normalize_rows(a); });
               }});
  s.push_back({"affine", [=](std::mt19937_64& rng) {
                 const int n = uniform_int(rng, 1, 6), k = uniform_int(rng, 1, 8), m = uniform_int(rng, 1, 8);
                 const Matrix x = random_matrix(rng, n, k), w = random_matrix(rng, k, m), b = random_matrix(rng, 1, m);
                 const Matrix dir = random_matrix(rng, n, m);
                 return gradcheck({}, {x, w, b}, [&](BoundParams&, const std::vector<V>& v) {
                   return project(ad::affine(v[0], v[1], v[2]), dir);
                 });
               }});

  // Network components (inputs and every parameter they touch).
  s.push_back({"encode_general", [=](std::mt19937_64& rng) {
                 const int n = uniform_int(rng, 1, 5);
                 return check_net(rng, n, 4, {random_matrix(rng, n, 6)},
                                  [](BoundParams& p, const std::vector<V>& v) { return nn::encode_general(p, "A", v[0]); });
               }});
  s.push_back({"encode_specific", [=](std::mt19937_64& rng) {
                 const int n = uniform_int(rng, 1, 5);
                 return check_net(rng, n, 4, {random_matrix(rng, n, 4)},
                                  [](BoundParams& p, const std::vector<V>& v) { return nn::encode_specific(p, "B", v[0]); });
               }});
  s.push_back({"decode", [=](std::mt19937_64& rng) {
                 const int n = uniform_int(rng, 1, 5);
                 return check_net(rng, n, 6, {random_matrix(rng, n, 4), random_matrix(rng, n, 4)},
                                  [](BoundParams& p, const std::vector<V>& v) { return nn::decode(p, "A", v[0], v[1]); });
               }});
  s.push_back({"classify", [=](std::mt19937_64& rng) {
                 const int n = uniform_int(rng, 1, 5);
                 const bool fusion = uniform_int(rng, 0, 1) == 1;
                 return check_net(rng, n, 3, {random_matrix(rng, n, fusion ? 10 : 4)},
                                  [fusion](BoundParams& p, const std::vector<V>& v) {
                                    return nn::classify(p, fusion ? "fusion" : "B", v[0]);
                                  });
               }});
  s.push_back({"club_forward", [=](std::mt19937_64& rng) {
                 const int n = uniform_int(rng, 1, 5);
                 const Parameters params = random_params(rng);
                 const Matrix d1 = random_matrix(rng, n, 4), d2 = random_matrix(rng, n, 4);
                 return gradcheck(params, {random_matrix(rng, n, 4)}, [&](BoundParams& p, const std::vector<V>& v) {
                   auto [mu, logvar] = nn::club_forward(p, "A", v[0]);
                   return ad::add(project(mu, d1), project(logvar, d2));
                 });
               }});
  s.push_back({"jigsaw_logits", [=](std::mt19937_64& rng) {
                 const int n = uniform_int(rng, 1, 5);
                 const bool shared = uniform_int(rng, 0, 1) == 1;
                 return check_net(rng, n, 4, {random_matrix(rng, n, 4)}, [shared](BoundParams& p, const std::vector<V>& v) {
                   return nn::jigsaw_logits(p, shared ? "shared" : "A", v[0]);
                 });
               }});
  s.push_back({"ibn_train", [=](std::mt19937_64& rng) {
                 const int n = uniform_int(rng, 2, 6);
                 const bool raw = uniform_int(rng, 0, 1) == 1;
                 const int width = raw ? 6 : 4;
                 return check_net(rng, n, width, {random_matrix(rng, n, width)},
                                  [raw](BoundParams& p, const std::vector<V>& v) {
                                    BatchContext ctx;
                                    return nn::ibn(p, raw ? IbnSite::raw : IbnSite::unified, "A", v[0], ctx);
                                  });
               }});
  s.push_back({"ibn_eval", [=](std::mt19937_64& rng) {
                 const int n = uniform_int(rng, 1, 6);
                 Parameters params = random_params(rng);
                 auto stats = params.buffers;
                 stats.at("ibn_ur/A/running_mean") = random_matrix(rng, 1, 2);
                 stats.at("ibn_ur/A/running_var") = positive(rng, 1, 2);
                 const Matrix dir = random_matrix(rng, n, 4);
                 return gradcheck(params, {random_matrix(rng, n, 4)}, [&](BoundParams& p, const std::vector<V>& v) {
                   BatchContext ctx;
                   ctx.training = false;
                   ctx.running_stats = &stats;
                   return project(nn::ibn(p, IbnSite::unified, "A", v[0], ctx), dir);
                 });
               }});

  // Losses.
  s.push_back({"supcon", [=](std::mt19937_64& rng) {
                 const int n = uniform_int(rng, 3, 8), d = uniform_int(rng, 2, 6);
                 auto labels = random_labels(rng, n, 3);
                 labels[1] = labels[0];
                 const double tau = std::uniform_real_distribution<double>(0.2, 1.0)(rng);
                 return gradcheck({}, {random_matrix(rng, n, d)}, [&](BoundParams&, const std::vector<V>& v) {
                   return loss::supcon(v[0], labels, tau);
                 });
               }});
  s.push_back({"unsup_contrastive", [=](std::mt19937_64& rng) {
                 const int samples = uniform_int(rng, 2, 4), d = uniform_int(rng, 2, 6);
                 std::vector<int> index;
                 for (int m = 0; m < 2; ++m) {
                   for (int i = 0; i < samples; ++i) index.push_back(i);
                 }
                 return gradcheck({}, {random_matrix(rng, 2 * samples, d)}, [&](BoundParams&, const std::vector<V>& v) {
                   return loss::unsup_contrastive(v[0], index, 0.5);
                 });
               }});
  s.push_back({"gaussian_log_density_matrix", [=](std::mt19937_64& rng) {
                 const int n = uniform_int(rng, 1, 5), d = uniform_int(rng, 1, 6);
                 const Matrix dir = random_matrix(rng, n, n);
                 return gradcheck({}, {random_matrix(rng, n, d), random_matrix(rng, n, d, 0.5), random_matrix(rng, n, d)},
                                  [&](BoundParams&, const std::vector<V>& v) {
                                    return project(loss::gaussian_log_density_matrix(v[0], v[1], v[2]), dir);
                                  });
               }});
  s.push_back({"club_nll", [=](std::mt19937_64& rng) {
                 const int n = uniform_int(rng, 1, 5), d = uniform_int(rng, 1, 6);
                 return gradcheck({}, {random_matrix(rng, n, d), random_matrix(rng, n, d, 0.5), random_matrix(rng, n, d)},
                                  [](BoundParams&, const std::vector<V>& v) { return loss::club_nll(v[0], v[1], v[2]); });
               }});
  s.push_back({"club_estimate", [=](std::mt19937_64& rng) {
                 const int n = uniform_int(rng, 2, 5), d = uniform_int(rng, 1, 6);
                 return gradcheck({}, {random_matrix(rng, n, d), random_matrix(rng, n, d, 0.5), random_matrix(rng, n, d)},
                                  [](BoundParams&, const std::vector<V>& v) {
                                    return loss::club_estimate(v[0], v[1], v[2]);
                                  });
               }});
  s.push_back({"recon", [=](std::mt19937_64& rng) {
                 auto [r, c] = dims(rng);
                 return check_binary(rng, random_matrix(rng, r, c), random_matrix(rng, r, c),
                                     [](const V& a, const V& b) { return loss::recon(a, b); });
               }});
  s.push_back({"soft_cross_entropy", [=](std::mt19937_64& rng) {
                 const int n = uniform_int(rng, 1, 5), k = uniform_int(rng, 2, 6);
                 const Matrix y = random_simplex_rows(rng, n, k);
                 return gradcheck({}, {random_matrix(rng, n, k, 2.0)}, [&](BoundParams&, const std::vector<V>& v) {
                   return loss::soft_cross_entropy(v[0], y);
                 });
               }});
  s.push_back({"mse_decoupling", [=](std::mt19937_64& rng) {
                 const int n = uniform_int(rng, 1, 5), d = uniform_int(rng, 1, 6);
                 // Margin above any attainable distance keeps the hinge active.
                 return gradcheck({}, {random_matrix(rng, n, d, 0.3), random_matrix(rng, n, d, 0.3)},
                                  [](BoundParams&, const std::vector<V>& v) {
                                    return loss::mse_decoupling(v[0], v[1], 50.0);
                                  });
               }});
  s.push_back({"jigen_loss", [=](std::mt19937_64& rng) {
                 const int n = uniform_int(rng, 1, 5), p = uniform_int(rng, 2, 6);
                 const auto labels = random_labels(rng, n, p);
                 return gradcheck({}, {random_matrix(rng, n, p, 2.0)},
                                  [&](BoundParams&, const std::vector<V>& v) { return jigen_loss(v[0], labels); });
               }});
  s.push_back({"mix_rows", [=](std::mt19937_64& rng) {
                 auto [r, c] = dims(rng);
                 MixSpec spec;
                 const MixPlan plan = plan_mixup(static_cast<std::size_t>(r), spec, rng);
                 return check_unary(rng, random_matrix(rng, r, c), [plan](const V& a) { return mix_rows(a, plan); });
               }});
  return s;
}

ClubOracleResult club_gaussian_oracle(double rho, int z_dim, int samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double noise = std::sqrt(1.0 - rho * rho);
  auto draw = [&](int n) {
    Matrix z(n, z_dim), zbar(n, z_dim);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < z_dim; ++j) {
        z(i, j) = normal(rng);
        zbar(i, j) = rho * z(i, j) + noise * normal(rng);
      }
    }
    return std::pair{z, zbar};
  };

  ModelDims dims;
  dims.modalities = {{"A", 2}};
  dims.z_dim = z_dim;
  dims.hidden_dim = 32;
  dims.num_classes = 2;
  dims.num_permutations = 1;
  Parameters params = init_parameters(dims, seed);

  const auto [z, zbar] = draw(samples);
  OptimizerSpec opt;
  opt.kind = OptimizerKind::adam;
  opt.lr = 3e-3;
  opt.weight_decay = 0.0;
  OptimizerState state;
  constexpr int kBatch = 256;
  constexpr int kEpochs = 12;
  for (int epoch = 0; epoch < kEpochs; ++epoch) {
    for (const auto& batch : make_batches(static_cast<std::size_t>(samples), kBatch, seed + epoch, true)) {
      std::vector<Eigen::Index> idx(batch.begin(), batch.end());
      ad::Tape tape;
      BoundParams bound(tape, params, is_club_weight);
      auto [mu, logvar] = nn::club_forward(bound, "A", tape.constant(z(idx, Eigen::all)));
      tape.backward(loss::club_nll(mu, logvar, tape.constant(zbar(idx, Eigen::all))));
      optimizer_step(params, state, bound.gradients(), opt);
    }
  }

  // Held-out estimate, averaged over batches.
  constexpr int kEvalBatches = 20;
  constexpr int kEvalSize = 500;
  double total = 0.0;
  for (int b = 0; b < kEvalBatches; ++b) {
    const auto [ze, zbe] = draw(kEvalSize);
    ad::Tape tape;
    BoundParams bound(tape, params, [](const std::string&) { return false; });
    auto [mu, logvar] = nn::club_forward(bound, "A", tape.constant(ze));
    total += loss::club_estimate(mu, logvar, tape.constant(zbe)).scalar();
  }
  return {total / kEvalBatches, -0.5 * z_dim * std::log(1.0 - rho * rho)};
}

}  // namespace urdg::testing
