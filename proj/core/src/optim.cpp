#include "uat/optim.hpp"

#include <cmath>

namespace uat {

AdamW::AdamW(std::vector<Tensor<float>> params, AdamWOptions options)
    : params_(std::move(params)), opt_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0f);
    v_.emplace_back(p.numel(), 0.0f);
  }
}

double AdamW::step() {
  double norm_sq = 0;
  for (const auto& p : params_) {
    if (!p.has_grad()) continue;
    for (float g : p.grad()) norm_sq += double(g) * g;
  }
  const double norm = std::sqrt(norm_sq);
  const double clip = (opt_.clip_norm > 0 && norm > opt_.clip_norm) ? opt_.clip_norm / norm : 1.0;

  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, double(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    auto data = p.mutable_data();
    auto grad = p.grad();
    const bool decay = p.dim() >= 2 && opt_.weight_decay > 0;
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = double(grad[j]) * clip;
      m_[i][j] = float(opt_.beta1 * m_[i][j] + (1 - opt_.beta1) * g);
      v_[i][j] = float(opt_.beta2 * v_[i][j] + (1 - opt_.beta2) * g * g);
      const double mhat = m_[i][j] / bc1;
      const double vhat = v_[i][j] / bc2;
      double w = data[j];
      if (decay) w -= opt_.learning_rate * opt_.weight_decay * w;
      w -= opt_.learning_rate * mhat / (std::sqrt(vhat) + opt_.epsilon);
      data[j] = float(w);
    }
  }
  return norm;
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace uat
