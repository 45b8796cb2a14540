#include "hvox/losses.hpp"

namespace hvox {

template <typename T>
Tensor<T> gan_loss_d(const Tensor<T>& logit_real, const Tensor<T>& logit_fake) {
    Tensor<T> real_term = mean_all(softplus(mul_scalar(logit_real, T(-1))));
    Tensor<T> fake_term = mean_all(softplus(logit_fake));
    return add(real_term, fake_term);
}

template <typename T>
Tensor<T> gan_loss_g(const Tensor<T>& logit_fake) {
    return mean_all(softplus(mul_scalar(logit_fake, T(-1))));
}

template <typename T>
Tensor<T> identity_loss(const Tensor<T>& z, const Tensor<T>& z_hat) {
    if (z.shape() != z_hat.shape())
        throw ShapeError(strf("identity_loss: z %s vs reconstruction %s",
                              shape_str(z.shape()).c_str(), shape_str(z_hat.shape()).c_str()));
    if (z.rank() != 2)
        throw ShapeError(strf("identity_loss: expected [N,d], got %s",
                              shape_str(z.shape()).c_str()));
    Tensor<T> diff = sub(z, z_hat);
    return mul_scalar(sum_all(mul(diff, diff)), T(1) / static_cast<T>(z.dim(0)));
}

template <typename T>
StyleLoss<T> style_loss_g(const std::vector<Tensor<T>>& style_logits_fake) {
    if (style_logits_fake.empty()) throw ValueError("style_loss_g: no levels");
    StyleLoss<T> out;
    for (const auto& logit : style_logits_fake) {
        Tensor<T> term = gan_loss_g(logit);
        out.per_level.push_back(term);
        out.total = out.total.defined() ? add(out.total, term) : term;
    }
    return out;
}

template <typename T>
Tensor<T> style_loss_d(const std::vector<Tensor<T>>& style_logits_real,
                       const std::vector<Tensor<T>>& style_logits_fake) {
    if (style_logits_real.size() != style_logits_fake.size() || style_logits_real.empty())
        throw ValueError(strf("style_loss_d: %zu real levels vs %zu fake levels",
                              style_logits_real.size(), style_logits_fake.size()));
    Tensor<T> total;
    for (size_t l = 0; l < style_logits_real.size(); ++l) {
        Tensor<T> term = gan_loss_d(style_logits_real[l], style_logits_fake[l]);
        total = total.defined() ? add(total, term) : term;
    }
    return total;
}

template <typename T>
Tensor<T> total_loss_g(const Tensor<T>& gan, const Tensor<T>& identity, const Tensor<T>& style,
                       const LossWeights<T>& weights) {
    Tensor<T> total = gan;
    total = add(total, mul_scalar(identity, weights.lambda_identity));
    total = add(total, mul_scalar(style, weights.lambda_style));
    return total;
}

std::string LossReport::csv_header(int levels) {
    std::string h = "step,g_total,g_gan,g_identity,g_style,d_total";
    for (int l = 1; l <= levels; ++l) h += strf(",g_style_l%d", l);
    return h;
}

std::string LossReport::csv_row(int64_t step) const {
    std::string row = strf("%lld,%.9g,%.9g,%.9g,%.9g,%.9g", static_cast<long long>(step), g_total,
                           g_gan, g_identity, g_style, d_total);
    for (double v : g_style_levels) row += strf(",%.9g", v);
    return row;
}

#define HVOX_INSTANTIATE_LOSSES(T)                                                          \
    template Tensor<T> gan_loss_d<T>(const Tensor<T>&, const Tensor<T>&);                   \
    template Tensor<T> gan_loss_g<T>(const Tensor<T>&);                                     \
    template Tensor<T> identity_loss<T>(const Tensor<T>&, const Tensor<T>&);                \
    template StyleLoss<T> style_loss_g<T>(const std::vector<Tensor<T>>&);                   \
    template Tensor<T> style_loss_d<T>(const std::vector<Tensor<T>>&, const std::vector<Tensor<T>>&); \
    template Tensor<T> total_loss_g<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                       const LossWeights<T>&);

HVOX_INSTANTIATE_LOSSES(float)
HVOX_INSTANTIATE_LOSSES(double)

}  // namespace hvox
