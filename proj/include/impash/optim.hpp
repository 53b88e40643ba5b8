#pragma once

#include <map>
#include <string>
#include <vector>

#include "impash/nn.hpp"

namespace impash {

// SGD with heavy-ball momentum and L2 weight decay:
//   v <- mu * v + (g + wd * w);  w <- w - lr * v
class Sgd {
 public:
  Sgd() = default;
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(std::vector<nn::Param*> params, double lr);

  // Velocity buffers keyed by parameter name, for checkpointing.
  std::map<std::string, std::vector<double>>& velocity() { return velocity_; }
  const std::map<std::string, std::vector<double>>& velocity() const { return velocity_; }

 private:
  double momentum_ = 0.9;
  double weight_decay_ = 0.0;
  std::map<std::string, std::vector<double>> velocity_;
};

}  // namespace impash
