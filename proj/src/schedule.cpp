#include "dfip/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dfip/error.hpp"

namespace dfip {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw ConfigError("schedule: T must be >= 1, got " + std::to_string(steps));
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw ConfigError("schedule: need 0 < beta_start <= beta_end < 1, got (" + std::to_string(beta_start) +
                          ", " + std::to_string(beta_end) + ")");
    NoiseSchedule s;
    s.steps_ = steps;
    s.beta_start_ = beta_start;
    s.beta_end_ = beta_end;
    const auto n = static_cast<std::size_t>(steps);
    s.beta_.resize(n);
    s.alpha_.resize(n);
    s.alpha_bar_.resize(n);
    s.sigma_.resize(n);
    double prod = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
        double b = beta_start + (beta_end - beta_start) * frac;
        if (i + 1 == n) b = beta_end;
        s.beta_[i] = b;
        s.alpha_[i] = 1.0 - b;
        prod *= s.alpha_[i];
        s.alpha_bar_[i] = prod;
        s.sigma_[i] = std::sqrt(b);
    }
    return s;
}

double NoiseSchedule::default_beta_start(int steps) { return std::min(1e-4 * 1000.0 / steps, 0.999); }
double NoiseSchedule::default_beta_end(int steps) { return std::min(0.02 * 1000.0 / steps, 0.999); }

NoiseSchedule NoiseSchedule::linear_default(int steps) {
    if (steps < 1) throw ConfigError("schedule: T must be >= 1, got " + std::to_string(steps));
    return linear(steps, default_beta_start(steps), default_beta_end(steps));
}

void NoiseSchedule::check_step(int t) const {
    if (t < 1 || t > steps_)
        throw DomainError("time step " + std::to_string(t) + " outside [1, " + std::to_string(steps_) + "]");
}

std::size_t NoiseSchedule::index(int t) const {
    check_step(t);
    return static_cast<std::size_t>(t - 1);
}

} // namespace dfip
