#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "dfip/autograd.hpp"
#include "dfip/ops.hpp"
#include "dfip/rng.hpp"
#include "dfip/tensor.hpp"

namespace dfip::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<float>(scale * rng.normal());
    return t;
}

inline Tensor uniform_tensor(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<float>(lo + (hi - lo) * rng.uniform());
    return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

struct GradCheck {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

/// Finite differences against tape gradients for every entry of `params`
/// (or the listed entries). `forward` builds any output y from the bound
/// parameters; the checked objective is sum(y * r) for a fixed random r,
/// evaluated in 64-bit for the difference quotients. The numeric derivative
/// is the Richardson combination (4 D(h) - D(2h)) / 3 of central differences,
/// accurate to O(h^4), so h can be large enough to keep float32 rounding of
/// the forward pass small without strongly curved entries paying for it.
/// Relative error is |a - n| / max(|a|, |n|, floor, 0.02 * max_k |a_k|), the
/// last term taken over the whole gradient: float32 forward passes leave ~1e-3
/// absolute noise in a step-1e-3 quotient, which would otherwise dominate
/// entries whose gradient is zero (e.g. biases cancelled by a group norm).
inline GradCheck check_gradients(std::vector<Parameter>& params,
                                 const std::function<Var(Tape&, std::vector<Var>&)>& forward, double h = 3e-3,
                                 double floor = 1e-2,
                                 const std::vector<std::pair<std::size_t, std::size_t>>* subset = nullptr,
                                 std::uint64_t projection_seed = 99) {
    Tensor r;
    auto evaluate = [&](Tape& tape) {
        std::vector<Var> vars;
        for (auto& p : params) vars.push_back(tape.bind(p));
        Var y = forward(tape, vars);
        if (r.empty()) {
            Rng rng(projection_seed);
            r = random_tensor(y.shape(), rng);
        }
        return y;
    };
    auto objective = [&] {
        Tape tape;
        const Tensor y = evaluate(tape).value();
        double s = 0.0;
        for (std::size_t i = 0; i < y.numel(); ++i) s += double(y[i]) * double(r[i]);
        return s;
    };
    for (auto& p : params) p.zero_grad();
    {
        Tape tape;
        Var y = evaluate(tape);
        Var l = sum(mul(y, tape.input(r)));
        tape.backward(l);
    }
    double scale = 0.0;
    for (auto& p : params)
        for (float g : p.gradient.values()) scale = std::max(scale, 0.02 * std::abs(double(g)));
    GradCheck out;
    auto check_one = [&](std::size_t pi, std::size_t i) {
        Parameter& p = params[pi];
        const float orig = p.value[i];
        auto central = [&](double step) {
            const float hi = static_cast<float>(orig + step);
            const float lo = static_cast<float>(orig - step);
            p.value[i] = hi;
            const double up = objective();
            p.value[i] = lo;
            const double down = objective();
            p.value[i] = orig;
            return (up - down) / (double(hi) - double(lo));
        };
        const double numeric = (4.0 * central(h) - central(2.0 * h)) / 3.0;
        const double analytic = p.gradient[i];
        const double denom = std::max({std::abs(numeric), std::abs(analytic), floor, scale});
        out.max_rel_error = std::max(out.max_rel_error, std::abs(numeric - analytic) / denom);
        ++out.checked;
    };
    if (subset) {
        for (auto [pi, i] : *subset) check_one(pi, i);
    } else {
        for (std::size_t pi = 0; pi < params.size(); ++pi)
            for (std::size_t i = 0; i < params[pi].value.numel(); ++i) check_one(pi, i);
    }
    return out;
}

} // namespace dfip::testing
