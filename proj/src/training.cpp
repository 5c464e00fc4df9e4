#include "costroute/training.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

#include <fmt/format.h>

namespace costroute {

double cosine_learning_rate(double eta_max, std::size_t epoch, std::size_t total_epochs, double eta_min) {
  if (total_epochs == 0) return eta_max;
  const double ratio = static_cast<double>(epoch) / static_cast<double>(total_epochs);
  return eta_min + 0.5 * (eta_max - eta_min) * (1.0 + std::cos(std::numbers::pi * ratio));
}

AdamW::AdamW(std::size_t num_params, double beta1, double beta2, double epsilon)
    : beta1_(beta1),
      beta2_(beta2),
      epsilon_(epsilon),
      m_(Vector::Zero(static_cast<Eigen::Index>(num_params))),
      v_(Vector::Zero(static_cast<Eigen::Index>(num_params))) {}

void AdamW::step(Vector& params, const Vector& grad, double learning_rate, double weight_decay) {
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  if (weight_decay != 0.0) params *= 1.0 - learning_rate * weight_decay;
  params.array() -= learning_rate * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + epsilon_);
}

namespace {

Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& order, std::size_t begin, std::size_t end) {
  Matrix out(static_cast<Eigen::Index>(end - begin), m.cols());
  for (std::size_t i = begin; i < end; ++i) {
    out.row(static_cast<Eigen::Index>(i - begin)) = m.row(static_cast<Eigen::Index>(order[i]));
  }
  return out;
}

}  // namespace

TrainingHistory fit_network(const Network& net, Vector& params, const Matrix& train_x, const Matrix& train_y,
                            const Matrix& val_x, const Matrix& val_y, const Matrix& reps, const TrainOptions& opts) {
  if (train_x.rows() == 0) throw TrainingError("empty training set");
  if (train_x.rows() != train_y.rows()) throw TrainingError("training inputs and targets differ in length");
  if (opts.batch_size == 0 || opts.epochs == 0) throw TrainingError("batch size and epochs must be positive");

  const auto n = static_cast<std::size_t>(train_x.rows());
  const bool has_val = val_x.rows() > 0;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(opts.seed);

  AdamW adam(net.num_params());
  Vector grad(params.size());
  Vector best = params;
  TrainingHistory hist;
  hist.best_val_loss = std::numeric_limits<double>::infinity();

  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    const double lr = cosine_learning_rate(opts.learning_rate, epoch, opts.epochs);
    std::shuffle(order.begin(), order.end(), rng);
    double weighted = 0.0;
    for (std::size_t start = 0; start < n; start += opts.batch_size) {
      const auto end = std::min(n, start + opts.batch_size);
      const Matrix bx = gather_rows(train_x, order, start, end);
      const Matrix by = gather_rows(train_y, order, start, end);
      const double loss = net.loss_and_gradient(params, bx, reps, by, grad);
      if (!std::isfinite(loss) || !grad.allFinite()) {
        throw TrainingError(fmt::format("training diverged at epoch {}", epoch));
      }
      adam.step(params, grad, lr, opts.weight_decay);
      weighted += loss * static_cast<double>(end - start);
    }
    hist.learning_rate.push_back(lr);
    hist.train_loss.push_back(weighted / static_cast<double>(n));

    const double monitored = has_val ? net.loss(params, val_x, reps, val_y) : net.loss(params, train_x, reps, train_y);
    if (!std::isfinite(monitored)) throw TrainingError(fmt::format("training diverged at epoch {}", epoch));
    if (has_val) hist.val_loss.push_back(monitored);
    if (monitored < hist.best_val_loss) {
      hist.best_val_loss = monitored;
      hist.best_epoch = epoch;
      best = params;
    }
  }
  params = std::move(best);
  return hist;
}

}  // namespace costroute
