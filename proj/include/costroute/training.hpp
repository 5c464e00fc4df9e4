#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "costroute/nn.hpp"

namespace costroute {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// eta_min + (eta_max - eta_min) * (1 + cos(pi * epoch / total)) / 2
double cosine_learning_rate(double eta_max, std::size_t epoch, std::size_t total_epochs, double eta_min = 0.0);

// Adam with decoupled weight decay.
class AdamW {
 public:
  explicit AdamW(std::size_t num_params, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

  void step(Vector& params, const Vector& grad, double learning_rate, double weight_decay);
  [[nodiscard]] std::size_t steps() const noexcept { return t_; }

 private:
  double beta1_;
  double beta2_;
  double epsilon_;
  std::size_t t_ = 0;
  Vector m_;
  Vector v_;
};

struct TrainOptions {
  double learning_rate = 1e-3;
  std::size_t batch_size = 1024;
  double weight_decay = 1e-5;
  std::size_t epochs = 1000;
  std::uint64_t seed = 0;
};

struct TrainingHistory {
  std::vector<double> train_loss;  // mean batch MSE per epoch
  std::vector<double> val_loss;    // full validation MSE after each epoch
  std::vector<double> learning_rate;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
};

// Mini-batch MSE training. Keeps the parameters with the lowest validation
// MSE (training MSE when the validation set is empty). Bitwise deterministic
// for a given seed.
TrainingHistory fit_network(const Network& net, Vector& params, const Matrix& train_x, const Matrix& train_y,
                            const Matrix& val_x, const Matrix& val_y, const Matrix& reps, const TrainOptions& opts);

}  // namespace costroute
