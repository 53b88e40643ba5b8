#include "impash/optim.hpp"

#include <stdexcept>

namespace impash {

void Sgd::step(std::vector<nn::Param*> params, double lr) {
  for (nn::Param* p : params) {
    auto [it, inserted] = velocity_.try_emplace(p->name, p->value.size(), 0.0);
    std::vector<double>& v = it->second;
    if (v.size() != p->value.size()) throw std::logic_error("sgd: velocity size mismatch for " + p->name);
    double* w = p->value.data.data();
    const double* g = p->grad.data.data();
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = momentum_ * v[i] + (g[i] + weight_decay_ * w[i]);
      w[i] -= lr * v[i];
    }
  }
}

}  // namespace impash
