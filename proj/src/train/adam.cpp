#include "timt/train/adam.hpp"

#include <cmath>

namespace timt::train {

AdamOptimizer::AdamOptimizer(std::vector<nn::Param*> params, double lr,
                             double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  require(lr_ > 0.0, "learning rate must be positive");
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (nn::Param* p : params_) {
    m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

void AdamOptimizer::step(double clip_norm) {
  double sq_sum = 0.0;
  for (nn::Param* p : params_) {
    if (p->grad.size() != 0) sq_sum += p->grad.squaredNorm();
  }
  const double norm = std::sqrt(sq_sum);
  const double scale = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;

  t_ += 1;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    nn::Param* p = params_[i];
    if (p->grad.size() == 0) p->grad = Mat::Zero(p->value.rows(), p->value.cols());
    Mat g = p->grad * scale;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    const Mat mhat = m_[i] / bc1;
    const Mat vhat = v_[i] / bc2;
    p->value.array() -= lr_ * mhat.array() / (vhat.array().sqrt() + eps_);
    p->zero_grad();
  }
}

}  // namespace timt::train
