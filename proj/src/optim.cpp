#include "hyperinv/optim.hpp"

#include <cmath>

#include "hyperinv/error.hpp"

namespace hyperinv {

void Adam::step(NamedTensors& params, const NamedTensors& grads) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw Error("adam: gradient for unknown parameter " + name);
    if (it->second.shape() != g.shape()) throw ShapeError("adam: " + name, it->second.shape(), g.shape());
    if (!g.all_finite()) throw Error("adam: non-finite gradient for parameter " + name);
  }
  ++step_;
  const double t = static_cast<double>(step_);
  const double c1 = 1.0 - std::pow(cfg_.beta1, t);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t);
  for (const auto& [name, g] : grads) {
    Tensor& p = params.at(name);
    auto [mi, m_new] = m_.try_emplace(name, g.shape());
    auto [vi, v_new] = v_.try_emplace(name, g.shape());
    double* m = mi->second.ptr();
    double* v = vi->second.ptr();
    double* pp = p.ptr();
    const double* gg = g.ptr();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gg[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gg[i] * gg[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      pp[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void Adam::save_into(NamedTensors& out, const std::string& prefix) const {
  for (const auto& [name, t] : m_) out[prefix + "m." + name] = t;
  for (const auto& [name, t] : v_) out[prefix + "v." + name] = t;
  out[prefix + "step"] = Tensor::scalar(static_cast<double>(step_));
}

void Adam::load_from(const NamedTensors& in, const std::string& prefix) {
  m_.clear();
  v_.clear();
  step_ = 0;
  const std::string pm = prefix + "m.", pv = prefix + "v.";
  for (auto it = in.lower_bound(prefix); it != in.end() && it->first.starts_with(prefix); ++it) {
    if (it->first.starts_with(pm))
      m_[it->first.substr(pm.size())] = it->second;
    else if (it->first.starts_with(pv))
      v_[it->first.substr(pv.size())] = it->second;
    else if (it->first == prefix + "step")
      step_ = static_cast<std::uint64_t>(it->second.item());
  }
}

}  // namespace hyperinv
