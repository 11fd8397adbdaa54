#pragma once

#include "nucleo/tensor.hpp"

namespace nucleo {

// Mean over the batch of -log(prob of true class), probabilities clamped at
// 1e-12. `probs` is N x C and must already sum to 1 per row.
Tensor cross_entropy(const Tensor& probs, const std::vector<std::size_t>& labels);

// Hard Dice between two binary masks: 2|GT n SR| / (|GT| + |SR|); both empty
// counts as 1. Plain metric, no gradient.
double dice_coefficient(const std::vector<std::uint8_t>& sr, const std::vector<std::uint8_t>& gt);

// 1 - (2 sum(p g) + eps) / (sum p + sum g + eps), eps = 1e-6.
Tensor soft_dice_loss(const Tensor& pred_probs, const Tensor& gt);

// Mean of squared element differences.
Tensor mse_loss(const Tensor& y_hat, const Tensor& y);

}  // namespace nucleo
