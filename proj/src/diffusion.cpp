#include "dfip/diffusion.hpp"

#include <cmath>
#include <string>

#include "dfip/error.hpp"
#include "dfip/ops.hpp"
#include "dfip/rng.hpp"

namespace dfip {
namespace {

void require_slices(const Tensor& t, const char* what) {
    if (t.rank() != 4 || t.dim(1) != 1)
        throw ShapeError(std::string(what) + " must be [N,1,S,S], got " + shape_str(t.shape()));
}

bool mask_nonempty(const Tensor& m, std::int64_t item) {
    const std::int64_t per = static_cast<std::int64_t>(m.numel()) / m.dim(0);
    for (std::int64_t i = 0; i < per; ++i)
        if (m[static_cast<std::size_t>(item * per + i)] != 0.0f) return true;
    return false;
}

// Applies the denoising update to x_t in place given the predicted noise.
void denoise_update(Tensor& x, const Tensor& eps_hat, int t, const Tensor* z, const NoiseSchedule& schedule) {
    schedule.check_step(t);
    const double a = schedule.alpha(t);
    const double inv_sqrt_a = 1.0 / std::sqrt(a);
    const double coef = (1.0 - a) / std::sqrt(1.0 - schedule.alpha_bar(t));
    const double sig = schedule.sigma(t);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        double v = inv_sqrt_a * (x[i] - coef * eps_hat[i]);
        if (z && t > 1) v += sig * (*z)[i];
        x[i] = static_cast<float>(v);
    }
}

Tensor predict(NoisePredictor& model, const Tensor& input, int t) {
    std::vector<std::int64_t> steps(static_cast<std::size_t>(input.dim(0)), t);
    return model.predict(Var::constant(input), steps, nullptr).value();
}

} // namespace

void ConditionedBatch::validate() const {
    require_slices(x0, "x0");
    require_same_shape(x0, b, "baseline");
    require_same_shape(x0, m, "mask");
    for (std::size_t i = 0; i < m.numel(); ++i) {
        if (m[i] != 0.0f && m[i] != 1.0f) throw DomainError("mask value not in {0,1} at flat index " + std::to_string(i));
        if (b[i] != x0[i] * (1.0f - m[i]))
            throw DomainError("baseline differs from x0 * (1 - m) at flat index " + std::to_string(i));
    }
    for (std::int64_t n = 0; n < x0.dim(0); ++n)
        if (!mask_nonempty(m, n)) throw DomainError("slice " + std::to_string(n) + " has an all-zero mask");
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& schedule) {
    require_same_shape(x0, eps, "q_sample noise");
    const double ab = schedule.alpha_bar(t);
    const double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
    Tensor out(x0.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = static_cast<float>(sa * x0[i] + sn * eps[i]);
    return out;
}

Tensor q_sample(const Tensor& x0, std::span<const std::int64_t> t, const Tensor& eps, const NoiseSchedule& schedule) {
    require_same_shape(x0, eps, "q_sample noise");
    if (x0.rank() == 0 || static_cast<std::int64_t>(t.size()) != x0.dim(0))
        throw ShapeError("q_sample: need one time step per item");
    const std::size_t per = x0.numel() / t.size();
    Tensor out(x0.shape());
    for (std::size_t n = 0; n < t.size(); ++n) {
        const double ab = schedule.alpha_bar(static_cast<int>(t[n]));
        const double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
        for (std::size_t i = n * per; i < (n + 1) * per; ++i) out[i] = static_cast<float>(sa * x0[i] + sn * eps[i]);
    }
    return out;
}

Tensor concat_condition(const Tensor& x_t, const Tensor& b, const Tensor& m) {
    require_slices(x_t, "x_t");
    require_same_shape(x_t, b, "baseline");
    require_same_shape(x_t, m, "mask");
    const std::int64_t n = x_t.dim(0), hw = x_t.dim(2) * x_t.dim(3);
    Tensor out(Shape{n, 3, x_t.dim(2), x_t.dim(3)});
    for (std::int64_t i = 0; i < n; ++i) {
        std::copy_n(x_t.data() + i * hw, hw, out.data() + (i * 3 + 0) * hw);
        std::copy_n(b.data() + i * hw, hw, out.data() + (i * 3 + 1) * hw);
        std::copy_n(m.data() + i * hw, hw, out.data() + (i * 3 + 2) * hw);
    }
    return out;
}

Var training_loss(NoisePredictor& model, const ConditionedBatch& batch, std::span<const std::int64_t> t,
                  const Tensor& eps, const NoiseSchedule& schedule, Tape* tape) {
    require_slices(batch.x0, "x0");
    require_same_shape(batch.x0, eps, "loss noise");
    const Tensor input = concat_condition(q_sample(batch.x0, t, eps, schedule), batch.b, batch.m);
    Var x = tape ? tape->input(input) : Var::constant(input);
    Var target = tape ? tape->input(eps) : Var::constant(eps);
    Var pred = model.predict(x, t, tape);
    require_same_shape(pred.value(), eps, "model output");
    Var diff = sub(target, pred);
    return mean(mul(diff, diff));
}

Tensor reverse_step(NoisePredictor& model, const Tensor& x_t, const Tensor& b, const Tensor& m, int t,
                    const Tensor& z, const NoiseSchedule& schedule) {
    schedule.check_step(t);
    require_same_shape(x_t, z, "reverse_step noise");
    Tensor eps_hat = predict(model, concat_condition(x_t, b, m), t);
    require_same_shape(eps_hat, x_t, "model output");
    Tensor out = x_t;
    denoise_update(out, eps_hat, t, &z, schedule);
    return out;
}

Tensor sample_slices(NoisePredictor& model, const Tensor& b, const Tensor& m, const NoiseSchedule& schedule,
                     std::vector<Rng>& generators, const SampleOptions& options) {
    require_slices(b, "baseline");
    require_same_shape(b, m, "mask");
    const std::int64_t n = b.dim(0);
    if (static_cast<std::int64_t>(generators.size()) != n) throw ShapeError("sample_slices: one generator per slice");
    for (std::int64_t i = 0; i < n; ++i)
        if (!mask_nonempty(m, i)) throw DomainError("cannot sample slice " + std::to_string(i) + ": mask is all zero");

    const std::size_t per = b.numel() / static_cast<std::size_t>(n);
    auto draw = [&](Tensor& dst) {
        for (std::int64_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < per; ++k)
                dst[static_cast<std::size_t>(i) * per + k] = static_cast<float>(generators[static_cast<std::size_t>(i)].normal());
    };
    Tensor x(b.shape());
    draw(x);
    Tensor z(b.shape());
    for (int t = schedule.steps(); t >= 1; --t) {
        if (t > 1) draw(z);
        Tensor eps_hat = predict(model, concat_condition(x, b, m), t);
        denoise_update(x, eps_hat, t, t > 1 ? &z : nullptr, schedule);
    }
    if (options.composite)
        for (std::size_t i = 0; i < x.numel(); ++i) x[i] = m[i] * x[i] + (1.0f - m[i]) * b[i];
    return x;
}

Tensor sample_slice(NoisePredictor& model, const Tensor& b, const Tensor& m, const NoiseSchedule& schedule,
                    std::uint64_t seed, const SampleOptions& options) {
    require_slices(b, "baseline");
    if (b.dim(0) != 1) throw ShapeError("sample_slice expects a single [1,1,S,S] slice");
    std::vector<Rng> gens{Rng(seed)};
    return sample_slices(model, b, m, schedule, gens, options);
}

Tensor generate_unconditional(NoisePredictor& model, const Shape& shape, const NoiseSchedule& schedule,
                              std::uint64_t seed) {
    Rng rng(seed);
    Tensor x = rng.normal_like(shape);
    Tensor z(shape);
    for (int t = schedule.steps(); t >= 1; --t) {
        if (t > 1) rng.fill_normal(z);
        Tensor eps_hat = predict(model, x, t);
        require_same_shape(eps_hat, x, "model output");
        denoise_update(x, eps_hat, t, t > 1 ? &z : nullptr, schedule);
    }
    return x;
}

} // namespace dfip
