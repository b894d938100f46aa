#pragma once

#include <vector>

namespace dfip {

/// Linear-beta diffusion coefficients for t = 1..T.
///
/// Accessors take the 1-based time step; sigma(t)^2 == beta(t).
class NoiseSchedule {
public:
    NoiseSchedule() = default;

    /// beta_1 = beta_start, beta_T = beta_end, linear in between. With T = 1
    /// the single beta is beta_end.
    static NoiseSchedule linear(int steps, double beta_start, double beta_end);

    /// Default endpoints (1e-4, 0.02) rescaled by 1000/T, clamped below 0.999.
    static NoiseSchedule linear_default(int steps);
    static double default_beta_start(int steps);
    static double default_beta_end(int steps);

    int steps() const noexcept { return steps_; }
    double beta_start() const noexcept { return beta_start_; }
    double beta_end() const noexcept { return beta_end_; }

    double beta(int t) const { return beta_[index(t)]; }
    double alpha(int t) const { return alpha_[index(t)]; }
    double alpha_bar(int t) const { return alpha_bar_[index(t)]; }
    double sigma(int t) const { return sigma_[index(t)]; }

    const std::vector<double>& betas() const noexcept { return beta_; }
    const std::vector<double>& alphas() const noexcept { return alpha_; }
    const std::vector<double>& alpha_bars() const noexcept { return alpha_bar_; }
    const std::vector<double>& sigmas() const noexcept { return sigma_; }

    /// Throws DomainError unless 1 <= t <= T.
    void check_step(int t) const;

private:
    std::size_t index(int t) const;

    int steps_ = 0;
    double beta_start_ = 0.0;
    double beta_end_ = 0.0;
    std::vector<double> beta_, alpha_, alpha_bar_, sigma_;
};

} // namespace dfip
