#include "costroute/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

namespace costroute {

namespace {

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;
using Eigen::Index;

Index idx(std::size_t v) { return static_cast<Index>(v); }

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

void fill_glorot(Vector& p, std::size_t offset, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (std::size_t i = 0; i < fan_in * fan_out; ++i) p[idx(offset + i)] = dist(rng);
}

void check_cols(const Matrix& m, std::size_t expected, const char* what) {
  if (static_cast<std::size_t>(m.cols()) != expected) {
    throw std::invalid_argument(fmt::format("{} has {} columns, expected {}", what, m.cols(), expected));
  }
}

}  // namespace

double apply_head(Head head, double raw) {
  switch (head) {
    case Head::identity: return raw;
    case Head::logistic: return logistic(raw);
    case Head::softplus: return softplus(raw);
  }
  return raw;
}

double head_derivative(Head head, double raw) {
  switch (head) {
    case Head::identity: return 1.0;
    case Head::logistic: {
      const double s = logistic(raw);
      return s * (1.0 - s);
    }
    case Head::softplus: return logistic(raw);
  }
  return 1.0;
}

double inverse_head(Head head, double value) {
  switch (head) {
    case Head::identity: return value;
    case Head::logistic: {
      const double v = std::clamp(value, 1e-6, 1.0 - 1e-6);
      return std::log(v / (1.0 - v));
    }
    case Head::softplus: {
      const double v = std::max(value, 1e-12);
      // log(exp(v) - 1), stable for small and large v
      return v > 30.0 ? v : std::log(std::expm1(v));
    }
  }
  return value;
}

Matrix apply_head(Head head, const Matrix& raw) {
  if (head == Head::identity) return raw;
  return raw.unaryExpr([head](double r) { return apply_head(head, r); });
}

double Network::loss_and_gradient(const Vector& params, const Matrix& queries, const Matrix& reps,
                                  const Matrix& targets, Vector& grad) const {
  std::vector<Matrix> tape;
  const Matrix raw = forward_tape(params, queries, reps, tape);
  if (raw.rows() != targets.rows() || raw.cols() != targets.cols()) {
    throw std::invalid_argument(fmt::format("prediction shape {}x{} does not match targets {}x{}", raw.rows(),
                                            raw.cols(), targets.rows(), targets.cols()));
  }
  const Matrix pred = apply_head(head(), raw);
  const Matrix diff = pred - targets;
  const double count = static_cast<double>(diff.size());
  Matrix d_raw(raw.rows(), raw.cols());
  for (Index i = 0; i < raw.rows(); ++i) {
    for (Index j = 0; j < raw.cols(); ++j) {
      d_raw(i, j) = 2.0 * diff(i, j) / count * head_derivative(head(), raw(i, j));
    }
  }
  grad.setZero(idx(num_params()));
  backward_tape(params, queries, reps, tape, d_raw, grad);
  return diff.squaredNorm() / count;
}

double Network::loss(const Vector& params, const Matrix& queries, const Matrix& reps, const Matrix& targets) const {
  const Matrix diff = forward(params, queries, reps) - targets;
  return diff.squaredNorm() / static_cast<double>(diff.size());
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - mx).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

// --- MLP ---------------------------------------------------------------------

MlpNetwork::MlpNetwork(std::size_t input_dim, std::vector<std::size_t> hidden, std::size_t output_dim, Head head)
    : head_(head) {
  dims_.push_back(input_dim);
  dims_.insert(dims_.end(), hidden.begin(), hidden.end());
  dims_.push_back(output_dim);
  for (auto d : dims_) {
    if (d == 0) throw std::invalid_argument("layer widths must be positive");
  }
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    offsets_.push_back(num_params_);
    num_params_ += dims_[l] * dims_[l + 1] + dims_[l + 1];
  }
}

Vector MlpNetwork::initial_params(std::mt19937_64& rng) const {
  Vector p = Vector::Zero(idx(num_params_));
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) fill_glorot(p, offsets_[l], dims_[l], dims_[l + 1], rng);
  return p;
}

void MlpNetwork::set_output_bias(Vector& params, double raw) const {
  const auto l = dims_.size() - 2;
  const auto b = offsets_[l] + dims_[l] * dims_[l + 1];
  params.segment(idx(b), idx(dims_.back())).setConstant(raw);
}

Matrix MlpNetwork::run(const Vector& params, const Matrix& input, std::vector<Matrix>* activations) const {
  check_cols(input, dims_.front(), "MLP input");
  Matrix a = input;
  if (activations) {
    activations->clear();
    activations->push_back(a);
  }
  const auto layers = dims_.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    ConstMap w(params.data() + offsets_[l], idx(dims_[l]), idx(dims_[l + 1]));
    Eigen::Map<const Eigen::RowVectorXd> b(params.data() + offsets_[l] + dims_[l] * dims_[l + 1], idx(dims_[l + 1]));
    Matrix z = a * w;
    z.rowwise() += b;
    if (l + 1 < layers) {
      a = z.cwiseMax(0.0);
      if (activations) activations->push_back(a);
    } else {
      a = std::move(z);
    }
  }
  return a;
}

void MlpNetwork::run_backward(const Vector& params, const std::vector<Matrix>& activations, Matrix d_out,
                              Vector& grad) const {
  const auto layers = dims_.size() - 1;
  for (std::size_t l = layers; l-- > 0;) {
    const Matrix& a = activations[l];
    MutMap dw(grad.data() + offsets_[l], idx(dims_[l]), idx(dims_[l + 1]));
    Eigen::Map<Eigen::RowVectorXd> db(grad.data() + offsets_[l] + dims_[l] * dims_[l + 1], idx(dims_[l + 1]));
    dw.noalias() += a.transpose() * d_out;
    db += d_out.colwise().sum();
    if (l == 0) break;
    ConstMap w(params.data() + offsets_[l], idx(dims_[l]), idx(dims_[l + 1]));
    Matrix d_prev = d_out * w.transpose();
    d_out = (a.array() > 0.0).select(d_prev, 0.0);
  }
}

Matrix MlpNetwork::forward_raw(const Vector& params, const Matrix& queries, const Matrix&) const {
  return run(params, queries, nullptr);
}

void MlpNetwork::backward(const Vector& params, const Matrix& queries, const Matrix&, const Matrix& d_raw,
                          Vector& grad) const {
  std::vector<Matrix> acts;
  run(params, queries, &acts);
  run_backward(params, acts, d_raw, grad);
}

Matrix MlpNetwork::forward_tape(const Vector& params, const Matrix& queries, const Matrix&,
                                std::vector<Matrix>& tape) const {
  return run(params, queries, &tape);
}

void MlpNetwork::backward_tape(const Vector& params, const Matrix&, const Matrix&, const std::vector<Matrix>& tape,
                               const Matrix& d_raw, Vector& grad) const {
  run_backward(params, tape, d_raw, grad);
}

// --- pairwise MLP ------------------------------------------------------------

PairMlpNetwork::PairMlpNetwork(std::size_t query_dim, std::size_t rep_dim, std::vector<std::size_t> hidden, Head head)
    : query_dim_(query_dim), rep_dim_(rep_dim), mlp_(query_dim + rep_dim, std::move(hidden), 1, head) {}

Matrix PairMlpNetwork::pair_inputs(const Matrix& queries, const Matrix& reps) const {
  check_cols(queries, query_dim_, "query batch");
  check_cols(reps, rep_dim_, "representation matrix");
  const Index b = queries.rows();
  const Index k = reps.rows();
  Matrix x(b * k, idx(query_dim_ + rep_dim_));
  for (Index i = 0; i < b; ++i) {
    for (Index m = 0; m < k; ++m) {
      x.row(i * k + m).head(idx(query_dim_)) = queries.row(i);
      x.row(i * k + m).tail(idx(rep_dim_)) = reps.row(m);
    }
  }
  return x;
}

Matrix PairMlpNetwork::forward_raw(const Vector& params, const Matrix& queries, const Matrix& reps) const {
  const Matrix out = mlp_.run(params, pair_inputs(queries, reps), nullptr);
  return ConstMap(out.data(), queries.rows(), reps.rows());
}

void PairMlpNetwork::backward(const Vector& params, const Matrix& queries, const Matrix& reps, const Matrix& d_raw,
                              Vector& grad) const {
  std::vector<Matrix> acts;
  mlp_.run(params, pair_inputs(queries, reps), &acts);
  Matrix d_out = ConstMap(d_raw.data(), d_raw.size(), 1);
  mlp_.run_backward(params, acts, std::move(d_out), grad);
}

Matrix PairMlpNetwork::forward_tape(const Vector& params, const Matrix& queries, const Matrix& reps,
                                    std::vector<Matrix>& tape) const {
  const Matrix out = mlp_.run(params, pair_inputs(queries, reps), &tape);
  return ConstMap(out.data(), queries.rows(), reps.rows());
}

void PairMlpNetwork::backward_tape(const Vector& params, const Matrix&, const Matrix&, const std::vector<Matrix>& tape,
                                   const Matrix& d_raw, Vector& grad) const {
  mlp_.run_backward(params, tape, ConstMap(d_raw.data(), d_raw.size(), 1), grad);
}

// --- attention ---------------------------------------------------------------

AttentionNetwork::AttentionNetwork(std::size_t query_dim, std::size_t rep_dim, std::size_t internal_dim, Head head)
    : query_dim_(query_dim),
      rep_dim_(rep_dim),
      dim_(internal_dim),
      num_params_((query_dim + 2 * rep_dim + 1) * internal_dim + 1),
      head_(head) {
  if (query_dim == 0 || rep_dim == 0 || internal_dim == 0) {
    throw std::invalid_argument("attention dimensions must be positive");
  }
}

Vector AttentionNetwork::initial_params(std::mt19937_64& rng) const {
  Vector p = Vector::Zero(idx(num_params_));
  std::size_t off = 0;
  fill_glorot(p, off, query_dim_, dim_, rng);
  off += query_dim_ * dim_;
  fill_glorot(p, off, rep_dim_, dim_, rng);
  off += rep_dim_ * dim_;
  fill_glorot(p, off, rep_dim_, dim_, rng);
  off += rep_dim_ * dim_;
  fill_glorot(p, off, dim_, 1, rng);
  return p;
}

namespace {

// Models are processed in lexicographic order of their representation rows, so
// every reduction over the model axis sums in the same order however the
// caller lists the models; permuting the reps then permutes the outputs
// bit for bit. Equal rows contribute equal terms, so their order is moot.
std::vector<Index> canonical_order(const Matrix& reps) {
  std::vector<Index> order(static_cast<std::size_t>(reps.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  std::ranges::stable_sort(order, [&](Index l, Index r) {
    for (Index c = 0; c < reps.cols(); ++c) {
      if (reps(l, c) != reps(r, c)) return reps(l, c) < reps(r, c);
    }
    return false;
  });
  return order;
}

Matrix take_rows(const Matrix& m, const std::vector<Index>& order) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t j = 0; j < order.size(); ++j) out.row(static_cast<Index>(j)) = m.row(order[j]);
  return out;
}

}  // namespace

AttentionNetwork::Activations AttentionNetwork::forward_cached(const Vector& params, const Matrix& queries,
                                                               const Matrix& reps) const {
  check_cols(queries, query_dim_, "query batch");
  check_cols(reps, rep_dim_, "representation matrix");
  if (reps.rows() == 0) throw std::invalid_argument("attention needs at least one model representation");
  if (static_cast<std::size_t>(params.size()) != num_params_) {
    throw std::invalid_argument(fmt::format("attention expects {} parameters, got {}", num_params_, params.size()));
  }
  const double* p = params.data();
  ConstMap wq(p, idx(query_dim_), idx(dim_));
  ConstMap wk(p + query_dim_ * dim_, idx(rep_dim_), idx(dim_));
  ConstMap wv(p + (query_dim_ + rep_dim_) * dim_, idx(rep_dim_), idx(dim_));
  Eigen::Map<const Eigen::RowVectorXd> w(p + (query_dim_ + 2 * rep_dim_) * dim_, idx(dim_));
  const double bias = p[num_params_ - 1];
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim_));

  Activations a;
  a.order = canonical_order(reps);
  const Matrix sorted = take_rows(reps, a.order);
  a.q = queries * wq;
  a.k = sorted * wk;
  a.v = sorted * wv;
  a.weights = softmax_rows((a.q * a.k.transpose()) * scale);
  a.context = a.weights * a.v;
  const Matrix raw = (a.context.array().rowwise() * w.array()).matrix() * a.v.transpose();
  a.raw.resize(raw.rows(), raw.cols());
  for (std::size_t j = 0; j < a.order.size(); ++j) a.raw.col(a.order[j]) = raw.col(static_cast<Index>(j));
  a.raw.array() += bias;
  return a;
}

Matrix AttentionNetwork::forward_raw(const Vector& params, const Matrix& queries, const Matrix& reps) const {
  return forward_cached(params, queries, reps).raw;
}

void AttentionNetwork::backward(const Vector& params, const Matrix& queries, const Matrix& reps, const Matrix& d_raw,
                                Vector& grad) const {
  backward_cached(params, queries, reps, forward_cached(params, queries, reps), d_raw, grad);
}

Matrix AttentionNetwork::forward_tape(const Vector& params, const Matrix& queries, const Matrix& reps,
                                      std::vector<Matrix>& tape) const {
  Activations a = forward_cached(params, queries, reps);
  tape = {std::move(a.q), std::move(a.k), std::move(a.v), std::move(a.weights), std::move(a.context)};
  return std::move(a.raw);
}

void AttentionNetwork::backward_tape(const Vector& params, const Matrix& queries, const Matrix& reps,
                                     const std::vector<Matrix>& tape, const Matrix& d_raw, Vector& grad) const {
  const Activations a{tape.at(0), tape.at(1), tape.at(2), tape.at(3), tape.at(4), Matrix{}, canonical_order(reps)};
  backward_cached(params, queries, reps, a, d_raw, grad);
}

void AttentionNetwork::backward_cached(const Vector& params, const Matrix& queries, const Matrix& reps,
                                       const Activations& a, const Matrix& d_raw, Vector& grad) const {
  const double* p = params.data();
  Eigen::Map<const Eigen::RowVectorXd> w(p + (query_dim_ + 2 * rep_dim_) * dim_, idx(dim_));
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim_));

  double* g = grad.data();
  MutMap g_wq(g, idx(query_dim_), idx(dim_));
  MutMap g_wk(g + query_dim_ * dim_, idx(rep_dim_), idx(dim_));
  MutMap g_wv(g + (query_dim_ + rep_dim_) * dim_, idx(rep_dim_), idx(dim_));
  Eigen::Map<Eigen::RowVectorXd> g_w(g + (query_dim_ + 2 * rep_dim_) * dim_, idx(dim_));

  // Work in the canonical model order of the forward pass.
  Matrix d_raw_sorted(d_raw.rows(), d_raw.cols());
  for (std::size_t j = 0; j < a.order.size(); ++j) d_raw_sorted.col(static_cast<Index>(j)) = d_raw.col(a.order[j]);
  const Matrix sorted = take_rows(reps, a.order);

  // raw = (context * diag(w)) V^T + b
  g[num_params_ - 1] += d_raw.sum();
  const Matrix g_v_rows = d_raw_sorted * a.v;  // B x d, sum_i G_bi V_i
  g_w += (a.context.array() * g_v_rows.array()).colwise().sum().matrix();
  const Matrix d_context = (g_v_rows.array().rowwise() * w.array()).matrix();
  Matrix d_v = (d_raw_sorted.transpose() * a.context).array().rowwise() * w.array();

  // context = weights V
  const Matrix d_weights = d_context * a.v.transpose();
  d_v.noalias() += a.weights.transpose() * d_context;

  // softmax
  Matrix d_logits = a.weights.array() * (d_weights.array().colwise() -
                                         (d_weights.array() * a.weights.array()).rowwise().sum());
  d_logits *= scale;

  // logits = Q K^T
  const Matrix d_q = d_logits * a.k;
  const Matrix d_k = d_logits.transpose() * a.q;

  g_wq.noalias() += queries.transpose() * d_q;
  g_wk.noalias() += sorted.transpose() * d_k;
  g_wv.noalias() += sorted.transpose() * d_v;
}

}  // namespace costroute
