#pragma once

#include <vector>

#include "segnas/nn.hpp"

namespace segnas {

template <typename Scalar>
struct LossSpec {
  Scalar kd_coeff = Scalar(0.3);
  std::vector<Scalar> aux_coeffs;  // one per auxiliary output
};

template <typename Scalar>
struct LossResult {
  Scalar total = 0;
  Scalar ce_main = 0;
  Scalar kd = 0;
  std::vector<Scalar> ce_aux;
  Tensor<Scalar> dmain;               // at the main logits' native resolution
  std::vector<Tensor<Scalar>> daux;   // ditto per aux head
};

/// Cross-entropy on all heads plus the optional l2 distillation term.
/// Logits are bilinearly upsampled to the mask size before every term;
/// teacher logits are expected at mask resolution already.
template <typename Scalar>
LossResult<Scalar> segmentation_loss(const Tensor<Scalar>& main_logits,
                                     const std::vector<Tensor<Scalar>>& aux_logits,
                                     const Mask& target,
                                     const Tensor<Scalar>* teacher_logits,
                                     const LossSpec<Scalar>& spec) {
  if (!aux_logits.empty() && spec.aux_coeffs.size() != aux_logits.size())
    throw std::invalid_argument("need one aux coefficient per aux output");

  LossResult<Scalar> res;
  Tensor<Scalar> up = bilinear_resize_forward(main_logits, target.h, target.w);
  auto ce = softmax_cross_entropy(up, target);
  res.ce_main = ce.loss;
  res.total = ce.loss;
  Tensor<Scalar> dup = std::move(ce.dlogits);

  if (teacher_logits && spec.kd_coeff > Scalar(0)) {
    auto kd = mse(up, *teacher_logits);
    res.kd = kd.loss;
    res.total += spec.kd_coeff * kd.loss;
    dup.data += spec.kd_coeff * kd.da.data;
  }
  res.dmain = bilinear_resize_backward(dup, main_logits.h, main_logits.w);

  for (std::size_t k = 0; k < aux_logits.size(); ++k) {
    const Scalar coeff = spec.aux_coeffs[k];
    Tensor<Scalar> aup =
        bilinear_resize_forward(aux_logits[k], target.h, target.w);
    auto ace = softmax_cross_entropy(aup, target);
    res.ce_aux.push_back(ace.loss);
    res.total += coeff * ace.loss;
    ace.dlogits.data *= coeff;
    res.daux.push_back(bilinear_resize_backward(ace.dlogits, aux_logits[k].h,
                                                aux_logits[k].w));
  }
  return res;
}

}  // namespace segnas
