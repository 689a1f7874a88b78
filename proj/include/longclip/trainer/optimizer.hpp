#pragma once

#include <cmath>
#include <string>

#include "longclip/encoders/params.hpp"
#include "longclip/numerics/tape.hpp"

namespace longclip::trainer {

using encoders::Params;
using numerics::DenseArray;
using numerics::Gradients;

template <typename T>
double global_norm(const Gradients<T>& grads) {
  double ss = 0;
  for (const auto& [name, g] : grads) {
    for (T v : g.data()) {
      if (!std::isfinite(static_cast<double>(v))) throw NumericError(name, "non-finite gradient");
      ss += static_cast<double>(v) * static_cast<double>(v);
    }
  }
  return std::sqrt(ss);
}

// Rescales all gradients together so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
template <typename T>
double clip_gradients(Gradients<T>& grads, double max_norm) {
  if (!(max_norm > 0)) throw UsageError("clip_gradients: max_norm must be > 0");
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& [name, g] : grads)
      for (T& v : g.data()) v = static_cast<T>(static_cast<double>(v) * factor);
  }
  return norm;
}

// Adam with decoupled weight decay. Decay applies to matrices only; biases, gains
// and the temperature are left undecayed.
template <typename T>
class AdamW {
 public:
  AdamW(double beta1, double beta2, double eps, double weight_decay)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  static bool decays(const DenseArray<T>& param) { return param.rank() >= 2; }

  void step(Params<T>& params, const Gradients<T>& grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& [name, g] : grads) {
      auto it = params.find(name);
      if (it == params.end()) continue;
      DenseArray<T>& p = it->second;
      auto [mit, fresh] = m_.try_emplace(name, p.shape());
      auto& m = mit->second;
      auto& v = v_.try_emplace(name, p.shape()).first->second;
      const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
      const T step_size = static_cast<T>(lr / c1);
      const T inv_c2 = static_cast<T>(1.0 / c2);
      const T eps = static_cast<T>(eps_);
      const T decay = decays(p) ? static_cast<T>(lr * weight_decay_) : T{0};
      T* pv = p.data().data();
      T* mv = m.data().data();
      T* vv = v.data().data();
      const T* gv = g.data().data();
      for (std::size_t k = 0; k < p.size(); ++k) {
        mv[k] = b1 * mv[k] + (T{1} - b1) * gv[k];
        vv[k] = b2 * vv[k] + (T{1} - b2) * gv[k] * gv[k];
        pv[k] -= decay * pv[k];
        pv[k] -= step_size * mv[k] / (std::sqrt(vv[k] * inv_c2) + eps);
      }
    }
  }

  std::size_t steps() const noexcept { return t_; }
  const Params<T>& first_moments() const noexcept { return m_; }
  const Params<T>& second_moments() const noexcept { return v_; }

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  std::size_t t_ = 0;
  Params<T> m_, v_;
};

}  // namespace longclip::trainer
