#pragma once

#include <cmath>

#include "segnas/params.hpp"

namespace segnas {

/// SGD with classical momentum: v <- mu * v + g, p <- p - lr * v.
template <typename Scalar>
struct SgdMomentum {
  Scalar lr;
  Scalar momentum = Scalar(0.9);

  void step(ParamStore<Scalar>& store) {
    for (auto& p : store) {
      if (!p.trainable) continue;
      p.opt_m = momentum * p.opt_m + p.grad;
      p.value -= lr * p.opt_m;
    }
  }
};

/// Adam with bias correction.
template <typename Scalar>
struct Adam {
  Scalar lr;
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.99);
  Scalar eps = Scalar(1e-3);
  long t = 0;

  void step(ParamStore<Scalar>& store) {
    ++t;
    const Scalar bc1 = Scalar(1) - std::pow(beta1, static_cast<Scalar>(t));
    const Scalar bc2 = Scalar(1) - std::pow(beta2, static_cast<Scalar>(t));
    for (auto& p : store) {
      if (!p.trainable) continue;
      p.opt_m = beta1 * p.opt_m + (Scalar(1) - beta1) * p.grad;
      p.opt_v = beta2 * p.opt_v + (Scalar(1) - beta2) * p.grad.square();
      p.value -= lr * (p.opt_m / bc1) / ((p.opt_v / bc2).sqrt() + eps);
    }
  }
};

}  // namespace segnas
