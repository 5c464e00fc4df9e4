#pragma once

#include <cstddef>
#include <memory>
#include <random>
#include <vector>

#include "costroute/dataset.hpp"

namespace costroute {

// Output squashing. Quality predictions go through the logistic head so they
// stay in (0,1); cost predictions through softplus so they stay >= 0.
enum class Head { identity, logistic, softplus };

double apply_head(Head head, double raw);
double head_derivative(Head head, double raw);
double inverse_head(Head head, double value);
Matrix apply_head(Head head, const Matrix& raw);

// Shape description of a differentiable predictor. Parameters live outside the
// network in one flat vector so optimizers, snapshots and gradient checks can
// treat every architecture the same way.
//
// `queries` is B x query_dim; `reps` is K x rep_dim (ignored by networks that
// do not consume model representations). Outputs are B x K.
class Network {
 public:
  virtual ~Network() = default;

  [[nodiscard]] virtual std::size_t num_params() const = 0;
  [[nodiscard]] virtual Head head() const = 0;
  [[nodiscard]] virtual Vector initial_params(std::mt19937_64& rng) const = 0;
  // Sets the bias feeding the output head(s) to `raw`.
  virtual void set_output_bias(Vector& params, double raw) const = 0;

  [[nodiscard]] virtual Matrix forward_raw(const Vector& params, const Matrix& queries, const Matrix& reps) const = 0;
  // Accumulates dL/dparams into `grad` (which must be sized num_params()) given
  // dL/draw for the same batch.
  virtual void backward(const Vector& params, const Matrix& queries, const Matrix& reps, const Matrix& d_raw,
                        Vector& grad) const = 0;

  [[nodiscard]] Matrix forward(const Vector& params, const Matrix& queries, const Matrix& reps) const {
    return apply_head(head(), forward_raw(params, queries, reps));
  }

  // Training path: forward_tape records whatever backward_tape needs so a
  // gradient step runs the forward pass once. The defaults recompute.
  virtual Matrix forward_tape(const Vector& params, const Matrix& queries, const Matrix& reps,
                              std::vector<Matrix>& tape) const {
    tape.clear();
    return forward_raw(params, queries, reps);
  }
  virtual void backward_tape(const Vector& params, const Matrix& queries, const Matrix& reps,
                             const std::vector<Matrix>& /*tape*/, const Matrix& d_raw, Vector& grad) const {
    backward(params, queries, reps, d_raw, grad);
  }

  // Mean squared error over every (query, model) entry; fills `grad`.
  double loss_and_gradient(const Vector& params, const Matrix& queries, const Matrix& reps, const Matrix& targets,
                           Vector& grad) const;
  [[nodiscard]] double loss(const Vector& params, const Matrix& queries, const Matrix& reps,
                            const Matrix& targets) const;
};

// Fully connected stack with ReLU hidden layers. An empty `hidden` list gives
// a plain affine map.
class MlpNetwork final : public Network {
 public:
  MlpNetwork(std::size_t input_dim, std::vector<std::size_t> hidden, std::size_t output_dim, Head head);

  [[nodiscard]] std::size_t num_params() const override { return num_params_; }
  [[nodiscard]] Head head() const override { return head_; }
  [[nodiscard]] Vector initial_params(std::mt19937_64& rng) const override;
  void set_output_bias(Vector& params, double raw) const override;
  [[nodiscard]] Matrix forward_raw(const Vector& params, const Matrix& queries, const Matrix& reps) const override;
  void backward(const Vector& params, const Matrix& queries, const Matrix& reps, const Matrix& d_raw,
                Vector& grad) const override;
  Matrix forward_tape(const Vector& params, const Matrix& queries, const Matrix& reps,
                      std::vector<Matrix>& tape) const override;
  void backward_tape(const Vector& params, const Matrix& queries, const Matrix& reps, const std::vector<Matrix>& tape,
                     const Matrix& d_raw, Vector& grad) const override;

  [[nodiscard]] const std::vector<std::size_t>& dims() const noexcept { return dims_; }

  // Building blocks reused by PairMlpNetwork.
  Matrix run(const Vector& params, const Matrix& input, std::vector<Matrix>* activations) const;
  void run_backward(const Vector& params, const std::vector<Matrix>& activations, Matrix d_out, Vector& grad) const;

 private:
  std::vector<std::size_t> dims_;     // input, hidden..., output
  std::vector<std::size_t> offsets_;  // start of W_l; b_l follows W_l
  std::size_t num_params_ = 0;
  Head head_;
};

// Scores every (query, model) pair by feeding [query ; representation] through
// a shared MLP with one output. Adding a model only needs its representation.
class PairMlpNetwork final : public Network {
 public:
  PairMlpNetwork(std::size_t query_dim, std::size_t rep_dim, std::vector<std::size_t> hidden, Head head);

  [[nodiscard]] std::size_t num_params() const override { return mlp_.num_params(); }
  [[nodiscard]] Head head() const override { return mlp_.head(); }
  [[nodiscard]] Vector initial_params(std::mt19937_64& rng) const override { return mlp_.initial_params(rng); }
  void set_output_bias(Vector& params, double raw) const override { mlp_.set_output_bias(params, raw); }
  [[nodiscard]] Matrix forward_raw(const Vector& params, const Matrix& queries, const Matrix& reps) const override;
  void backward(const Vector& params, const Matrix& queries, const Matrix& reps, const Matrix& d_raw,
                Vector& grad) const override;
  Matrix forward_tape(const Vector& params, const Matrix& queries, const Matrix& reps,
                      std::vector<Matrix>& tape) const override;
  void backward_tape(const Vector& params, const Matrix& queries, const Matrix& reps, const std::vector<Matrix>& tape,
                     const Matrix& d_raw, Vector& grad) const override;

  [[nodiscard]] Matrix pair_inputs(const Matrix& queries, const Matrix& reps) const;

 private:
  std::size_t query_dim_;
  std::size_t rep_dim_;
  MlpNetwork mlp_;
};

// Single-head cross-attention: queries attend over model representations.
//
//   Q = x Wq,  K_i = I_i Wk,  V_i = I_i Wv
//   alpha = softmax(Q K^T / sqrt(d)),  c = sum_i alpha_i V_i
//   raw_i = w . (c * V_i) + b
//
// Parameter layout: Wq (query_dim x d), Wk (rep_dim x d), Wv (rep_dim x d),
// w (d), b (1), all row-major.
class AttentionNetwork final : public Network {
 public:
  AttentionNetwork(std::size_t query_dim, std::size_t rep_dim, std::size_t internal_dim, Head head);

  [[nodiscard]] std::size_t num_params() const override { return num_params_; }
  [[nodiscard]] Head head() const override { return head_; }
  [[nodiscard]] Vector initial_params(std::mt19937_64& rng) const override;
  void set_output_bias(Vector& params, double raw) const override { params[static_cast<Eigen::Index>(num_params_ - 1)] = raw; }
  [[nodiscard]] Matrix forward_raw(const Vector& params, const Matrix& queries, const Matrix& reps) const override;
  void backward(const Vector& params, const Matrix& queries, const Matrix& reps, const Matrix& d_raw,
                Vector& grad) const override;
  Matrix forward_tape(const Vector& params, const Matrix& queries, const Matrix& reps,
                      std::vector<Matrix>& tape) const override;
  void backward_tape(const Vector& params, const Matrix& queries, const Matrix& reps, const std::vector<Matrix>& tape,
                     const Matrix& d_raw, Vector& grad) const override;

  // Model-indexed activations follow `order` (lexicographic order of the
  // representation rows); `raw` follows the caller's model order.
  struct Activations {
    Matrix q;        // B x d
    Matrix k;        // K x d
    Matrix v;        // K x d
    Matrix weights;  // B x K, softmax rows
    Matrix context;  // B x d
    Matrix raw;      // B x K
    std::vector<Eigen::Index> order;  // canonical position -> caller's row
  };
  [[nodiscard]] Activations forward_cached(const Vector& params, const Matrix& queries, const Matrix& reps) const;
  void backward_cached(const Vector& params, const Matrix& queries, const Matrix& reps, const Activations& a,
                       const Matrix& d_raw, Vector& grad) const;

  [[nodiscard]] std::size_t query_dim() const noexcept { return query_dim_; }
  [[nodiscard]] std::size_t rep_dim() const noexcept { return rep_dim_; }
  [[nodiscard]] std::size_t internal_dim() const noexcept { return dim_; }

 private:
  std::size_t query_dim_;
  std::size_t rep_dim_;
  std::size_t dim_;
  std::size_t num_params_;
  Head head_;
};

// Row-wise softmax, shifted by the row max.
Matrix softmax_rows(const Matrix& logits);

}  // namespace costroute
