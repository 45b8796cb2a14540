#pragma once

#include "hvox/tensor.hpp"

namespace hvox {

template <typename T>
struct LossWeights {
    T lambda_identity = 1;
    T lambda_style = 1;
};

// All logistic-loss forms are computed through softplus identities
// (-log sigmoid(x) = softplus(-x)) so they stay finite for extreme logits.

/// Discriminator real/fake loss: -mean log s(lr) - mean log(1 - s(lf)).
template <typename T>
Tensor<T> gan_loss_d(const Tensor<T>& logit_real, const Tensor<T>& logit_fake);

/// Non-saturating generator loss: -mean log s(lf).
template <typename T>
Tensor<T> gan_loss_g(const Tensor<T>& logit_fake);

/// Mean over the batch of ||z - z_hat||^2.
template <typename T>
Tensor<T> identity_loss(const Tensor<T>& z, const Tensor<T>& z_hat);

template <typename T>
struct StyleLoss {
    Tensor<T> total;
    std::vector<Tensor<T>> per_level;
};

/// Generator-side style loss: sum over levels of -mean log s(logit_l).
template <typename T>
StyleLoss<T> style_loss_g(const std::vector<Tensor<T>>& style_logits_fake);

/// Discriminator-side mirror: sum over levels of gan_loss_d per level.
template <typename T>
Tensor<T> style_loss_d(const std::vector<Tensor<T>>& style_logits_real,
                       const std::vector<Tensor<T>>& style_logits_fake);

/// gan + lambda_i * identity + lambda_s * style.
template <typename T>
Tensor<T> total_loss_g(const Tensor<T>& gan, const Tensor<T>& identity, const Tensor<T>& style,
                       const LossWeights<T>& weights);

// ---------------------------------------------------------------------------

struct LossReport {
    double g_total = 0;
    double g_gan = 0;
    double g_identity = 0;
    double g_style = 0;
    double d_total = 0;
    std::vector<double> g_style_levels;

    /// "step,g_total,g_gan,g_identity,g_style,d_total,g_style_l1,..."
    static std::string csv_header(int levels);
    std::string csv_row(int64_t step) const;
};

}  // namespace hvox
