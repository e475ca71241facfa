#include "urdg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace urdg::ad {

namespace {

void require_same_tape(const Var& a, const Var& b) {
  if (!a.valid() || a.tape() != b.tape()) {
    throw std::invalid_argument("autodiff: operands live on different tapes");
  }
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  require_same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string("autodiff: shape mismatch in ") + op + " (" +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()) + "x" + std::to_string(b.cols()) + ")");
  }
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(id_); }
const Matrix& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw std::logic_error("autodiff: scalar() on a non-1x1 node");
  return v(0, 0);
}

Var Tape::leaf(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), true, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), false, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, const std::vector<Var>& parents, Backward fn) {
  bool needs = false;
  for (const Var& p : parents) {
    if (p.tape() != this) throw std::invalid_argument("autodiff: parent recorded on another tape");
    needs = needs || nodes_[p.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Matrix(), needs, needs ? std::move(fn) : nullptr});
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(const Var& v, const Matrix& g) {
  Node& n = nodes_[v.id()];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(const Var& output) {
  if (output.tape() != this) throw std::invalid_argument("autodiff: output on another tape");
  if (output.value().size() != 1) throw std::invalid_argument("autodiff: backward() needs a 1x1 output");
  for (Node& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[output.id()].requires_grad) return;
  nodes_[output.id()].grad = Matrix::Ones(1, 1);
  for (std::size_t i = output.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.size() == 0) continue;
    // The closure may not append nodes, so the reference stays valid.
    n.backward(*this, n.grad);
  }
}

Var matmul(const Var& a, const Var& b) {
  require_same_tape(a, b);
  if (a.cols() != b.rows()) throw std::invalid_argument("autodiff: matmul inner dimension mismatch");
  return a.tape()->record(a.value() * b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) t.accumulate(b, a.value().transpose() * g);
  });
}

Var transpose(const Var& a) {
  return a.tape()->record(a.value().transpose(), {a},
                          [a](Tape& t, const Matrix& g) { t.accumulate(a, g.transpose()); });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  return a.tape()->record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  return a.tape()->record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  return a.tape()->record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a, g.cwiseProduct(b.value()));
    if (b.requires_grad()) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var scale(const Var& a, double c) {
  return a.tape()->record(a.value() * c, {a}, [a, c](Tape& t, const Matrix& g) { t.accumulate(a, g * c); });
}

Var add_scalar(const Var& a, double c) {
  return a.tape()->record(a.value().array() + c, {a}, [a](Tape& t, const Matrix& g) { t.accumulate(a, g); });
}

Var relu(const Var& a) {
  return a.tape()->record(a.value().cwiseMax(0.0), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, (a.value().array() > 0.0).select(g, 0.0));
  });
}

Var exp(const Var& a) {
  Matrix out = a.value().array().exp();
  Matrix saved = out;
  return a.tape()->record(std::move(out), {a}, [a, saved](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(saved));
  });
}

Var log(const Var& a) {
  return a.tape()->record(a.value().array().log(), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseQuotient(a.value()));
  });
}

Var pow(const Var& a, double p) {
  return a.tape()->record(a.value().array().pow(p), {a}, [a, p](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix(g.array() * p * a.value().array().pow(p - 1.0)));
  });
}

Var clamp(const Var& a, double lo, double hi) {
  return a.tape()->record(a.value().cwiseMax(lo).cwiseMin(hi), {a}, [a, lo, hi](Tape& t, const Matrix& g) {
    const auto& v = a.value().array();
    t.accumulate(a, ((v >= lo) && (v <= hi)).select(g, 0.0));
  });
}

Var add_row(const Var& a, const Var& row) {
  require_same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("autodiff: add_row shape mismatch");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return a.tape()->record(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (row.requires_grad()) t.accumulate(row, g.colwise().sum());
  });
}

Var mul_row(const Var& a, const Var& row) {
  require_same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("autodiff: mul_row shape mismatch");
  Matrix out = a.value().array().rowwise() * row.value().row(0).array();
  return a.tape()->record(std::move(out), {a, row}, [a, row](Tape& t, const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a, Matrix(g.array().rowwise() * row.value().row(0).array()));
    if (row.requires_grad()) t.accumulate(row, g.cwiseProduct(a.value()).colwise().sum());
  });
}

Var add_col(const Var& a, const Var& col) {
  require_same_tape(a, col);
  if (col.cols() != 1 || col.rows() != a.rows()) throw std::invalid_argument("autodiff: add_col shape mismatch");
  Matrix out = a.value().colwise() + col.value().col(0);
  return a.tape()->record(std::move(out), {a, col}, [a, col](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (col.requires_grad()) t.accumulate(col, g.rowwise().sum());
  });
}

Var mul_col(const Var& a, const Var& col) {
  require_same_tape(a, col);
  if (col.cols() != 1 || col.rows() != a.rows()) throw std::invalid_argument("autodiff: mul_col shape mismatch");
  Matrix out = a.value().array().colwise() * col.value().col(0).array();
  return a.tape()->record(std::move(out), {a, col}, [a, col](Tape& t, const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a, Matrix(g.array().colwise() * col.value().col(0).array()));
    if (col.requires_grad()) t.accumulate(col, g.cwiseProduct(a.value()).rowwise().sum());
  });
}

Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape()->record(std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw std::invalid_argument("autodiff: mean of an empty matrix");
  Matrix out(1, 1);
  out(0, 0) = a.value().sum() / n;
  return a.tape()->record(std::move(out), {a}, [a, n](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0) / n));
  });
}

Var row_sums(const Var& a) {
  return a.tape()->record(a.value().rowwise().sum(), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.col(0).replicate(1, a.cols()));
  });
}

Var col_sums(const Var& a) {
  return a.tape()->record(a.value().colwise().sum(), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.row(0).replicate(a.rows(), 1));
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("autodiff: concat_cols of nothing");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    require_same_tape(parts.front(), p);
    if (p.rows() != rows) throw std::invalid_argument("autodiff: concat_cols row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return parts.front().tape()->record(std::move(out), parts, [parts](Tape& t, const Matrix& g) {
    Eigen::Index off = 0;
    for (const Var& p : parts) {
      if (p.requires_grad()) t.accumulate(p, g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("autodiff: concat_rows of nothing");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    require_same_tape(parts.front(), p);
    if (p.cols() != cols) throw std::invalid_argument("autodiff: concat_rows column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return parts.front().tape()->record(std::move(out), parts, [parts](Tape& t, const Matrix& g) {
    Eigen::Index off = 0;
    for (const Var& p : parts) {
      if (p.requires_grad()) t.accumulate(p, g.middleRows(off, p.rows()));
      off += p.rows();
    }
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw std::invalid_argument("autodiff: slice_cols out of range");
  return a.tape()->record(a.value().middleCols(start, count), {a}, [a, start, count](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(a.rows(), a.cols());
    full.middleCols(start, count) = g;
    t.accumulate(a, full);
  });
}

Var gather_rows(const Var& a, const std::vector<Eigen::Index>& index) {
  Matrix out(static_cast<Eigen::Index>(index.size()), a.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= a.rows()) throw std::invalid_argument("autodiff: gather_rows index out of range");
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(index[i]);
  }
  return a.tape()->record(std::move(out), {a}, [a, index](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t i = 0; i < index.size(); ++i) full.row(index[i]) += g.row(static_cast<Eigen::Index>(i));
    t.accumulate(a, full);
  });
}

Var detach(const Var& a) { return a.tape()->constant(a.value()); }

Var gather_blocks(const std::vector<Var>& sources, const std::vector<std::vector<BlockRef>>& table,
                  Eigen::Index block_len) {
  if (sources.empty()) throw std::invalid_argument("autodiff: gather_blocks needs sources");
  const Eigen::Index rows = static_cast<Eigen::Index>(table.size());
  const std::size_t slots = table.empty() ? 0 : table.front().size();
  for (const Var& s : sources) {
    require_same_tape(sources.front(), s);
    if (s.rows() != rows) throw std::invalid_argument("autodiff: gather_blocks row count mismatch");
  }
  Matrix out(rows, static_cast<Eigen::Index>(slots) * block_len);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = table[static_cast<std::size_t>(i)];
    if (row.size() != slots) throw std::invalid_argument("autodiff: gather_blocks ragged table");
    for (std::size_t k = 0; k < slots; ++k) {
      const BlockRef ref = row[k];
      if (ref.source < 0 || static_cast<std::size_t>(ref.source) >= sources.size()) {
        throw std::invalid_argument("autodiff: gather_blocks source out of range");
      }
      const Var& src = sources[static_cast<std::size_t>(ref.source)];
      if (ref.block < 0 || (ref.block + 1) * block_len > src.cols()) {
        throw std::invalid_argument("autodiff: gather_blocks block out of range");
      }
      out.block(i, static_cast<Eigen::Index>(k) * block_len, 1, block_len) =
          src.value().block(i, ref.block * block_len, 1, block_len);
    }
  }
  return sources.front().tape()->record(
      std::move(out), sources, [sources, table, block_len](Tape& t, const Matrix& g) {
        std::vector<Matrix> grads;
        grads.reserve(sources.size());
        for (const Var& s : sources) grads.push_back(Matrix::Zero(s.rows(), s.cols()));
        for (std::size_t i = 0; i < table.size(); ++i) {
          for (std::size_t k = 0; k < table[i].size(); ++k) {
            const BlockRef ref = table[i][k];
            grads[static_cast<std::size_t>(ref.source)].block(static_cast<Eigen::Index>(i), ref.block * block_len, 1,
                                                              block_len) +=
                g.block(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k) * block_len, 1, block_len);
          }
        }
        for (std::size_t s = 0; s < sources.size(); ++s) t.accumulate(sources[s], grads[s]);
      });
}

Var log_softmax_rows(const Var& a) {
  const Matrix& v = a.value();
  Matrix out(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    const double m = v.row(i).maxCoeff();
    const double lse = m + std::log((v.row(i).array() - m).exp().sum());
    out.row(i) = v.row(i).array() - lse;
  }
  Matrix probs = out.array().exp();
  return a.tape()->record(std::move(out), {a}, [a, probs](Tape& t, const Matrix& g) {
    // d/da_j = g_j - softmax_j * sum_k g_k
    Matrix d = g - (probs.array().colwise() * g.rowwise().sum().array()).matrix();
    t.accumulate(a, d);
  });
}

Var masked_log_softmax_rows(const Var& a, const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& mask) {
  const Matrix& v = a.value();
  if (mask.rows() != v.rows() || mask.cols() != v.cols()) {
    throw std::invalid_argument("autodiff: masked_log_softmax_rows mask shape mismatch");
  }
  Matrix out = Matrix::Zero(v.rows(), v.cols());
  Matrix probs = Matrix::Zero(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
      if (mask(i, j)) m = std::max(m, v(i, j));
    }
    if (!std::isfinite(m)) throw std::invalid_argument("autodiff: masked_log_softmax_rows row with no entries");
    double s = 0.0;
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
      if (mask(i, j)) s += std::exp(v(i, j) - m);
    }
    const double lse = m + std::log(s);
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
      if (mask(i, j)) {
        out(i, j) = v(i, j) - lse;
        probs(i, j) = std::exp(out(i, j));
      }
    }
  }
  return a.tape()->record(std::move(out), {a}, [a, probs, mask](Tape& t, const Matrix& g) {
    Matrix gm = mask.select(g, 0.0);
    Matrix d = gm - (probs.array().colwise() * gm.rowwise().sum().array()).matrix();
    t.accumulate(a, d);
  });
}

Var l2_normalize_rows(const Var& a, double eps) {
  Var sq = row_sums(mul(a, a));
  Var inv = pow(add_scalar(sq, eps), -0.5);
  return mul_col(a, inv);
}

Var affine(const Var& x, const Var& weight, const Var& bias) { return add_row(matmul(x, weight), bias); }

}  // namespace urdg::ad
