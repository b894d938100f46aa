#include "dfip/trainer.hpp"

#include <chrono>
#include <cmath>

#include "dfip/checkpoint.hpp"
#include "dfip/error.hpp"

namespace dfip {

AdamState AdamState::for_parameters(std::span<const Parameter> params, double lr) {
    AdamState s;
    s.lr = lr;
    for (const auto& p : params) {
        s.first_moment.emplace_back(p.value.shape());
        s.second_moment.emplace_back(p.value.shape());
    }
    return s;
}

void adam_step(std::span<Parameter> params, AdamState& state) {
    if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size())
        throw StateError("adam state does not match the parameter list");
    for (const auto& p : params) {
        if (!p.gradient.all_finite()) throw DomainError("non-finite gradient in parameter " + p.name);
    }
    ++state.step_count;
    const double t = static_cast<double>(state.step_count);
    const float c1 = static_cast<float>(1.0 / (1.0 - std::pow(static_cast<double>(state.beta1), t)));
    const float c2 = static_cast<float>(1.0 / (1.0 - std::pow(static_cast<double>(state.beta2), t)));
    const float b1 = state.beta1, b2 = state.beta2;
    const auto lr = static_cast<float>(state.lr);
    for (std::size_t k = 0; k < params.size(); ++k) {
        Parameter& p = params[k];
        require_same_shape(p.value, state.first_moment[k], "adam moment");
        float* w = p.value.data();
        float* g = p.gradient.data();
        float* m = state.first_moment[k].data();
        float* v = state.second_moment[k].data();
        for (std::size_t i = 0; i < p.value.numel(); ++i) {
            m[i] = b1 * m[i] + (1.0f - b1) * g[i];
            v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
            w[i] -= lr * (m[i] * c1) / (std::sqrt(v[i] * c2) + state.eps);
            g[i] = 0.0f;
        }
    }
}

EmaState EmaState::for_parameters(std::span<const Parameter> params, double rate) {
    if (!(rate > 0.0 && rate < 1.0)) throw ConfigError("EMA rate must lie in (0, 1)");
    EmaState e;
    e.rate = rate;
    for (const auto& p : params) e.shadow.push_back(p.value);
    return e;
}

void ema_update(std::span<const Parameter> params, EmaState& ema) {
    if (ema.shadow.size() != params.size()) throw StateError("EMA shadow does not match the parameter list");
    const double r = ema.rate;
    for (std::size_t k = 0; k < params.size(); ++k) {
        require_same_shape(params[k].value, ema.shadow[k], "EMA shadow");
        float* s = ema.shadow[k].data();
        const float* p = params[k].value.data();
        for (std::size_t i = 0; i < ema.shadow[k].numel(); ++i)
            s[i] = static_cast<float>(r * s[i] + (1.0 - r) * p[i]);
    }
}

SliceDataset::SliceDataset(ConditionedBatch slices) : slices_(std::move(slices)) {
    if (slices_.size() == 0) throw ConfigError("training dataset is empty");
    slices_.validate();
}

ConditionedBatch SliceDataset::gather(std::span<const std::int64_t> indices) const {
    const auto s = slices_.x0.dim(2);
    const std::int64_t per = s * slices_.x0.dim(3);
    const auto n = static_cast<std::int64_t>(indices.size());
    ConditionedBatch out{Tensor(Shape{n, 1, s, slices_.x0.dim(3)}), Tensor(Shape{n, 1, s, slices_.x0.dim(3)}),
                         Tensor(Shape{n, 1, s, slices_.x0.dim(3)})};
    for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t src = indices[static_cast<std::size_t>(i)];
        if (src < 0 || src >= size()) throw DomainError("slice index out of range");
        std::copy_n(slices_.x0.data() + src * per, per, out.x0.data() + i * per);
        std::copy_n(slices_.b.data() + src * per, per, out.b.data() + i * per);
        std::copy_n(slices_.m.data() + src * per, per, out.m.data() + i * per);
    }
    return out;
}

Trainer::Trainer(const UNetConfig& unet, const NoiseSchedule& schedule, const TrainerConfig& config,
                 SliceDataset data)
    : model_(unet, config.seed, schedule.steps()),
      schedule_(schedule),
      config_(config),
      data_(std::move(data)),
      adam_(AdamState::for_parameters(model_.parameters(), config.lr)),
      ema_(EmaState::for_parameters(model_.parameters(), config.ema_rate)),
      rng_(Rng::split(config.seed, 0x7472616e)) {
    if (data_.size() == 0) throw ConfigError("training dataset is empty");
    if (config_.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (data_.slice_size() != unet.image_size)
        throw ConfigError("dataset slices are " + std::to_string(data_.slice_size()) + " px but the model expects " +
                          std::to_string(unet.image_size));
}

Trainer::Trainer(const Checkpoint& ck, SliceDataset data)
    : model_(ck.model(false)),
      schedule_(ck.schedule()),
      config_(ck.trainer),
      data_(std::move(data)),
      rng_(0) {
    if (!ck.has_optimizer_state()) throw StateError("checkpoint carries no optimizer state; cannot resume");
    if (data_.size() == 0) throw ConfigError("training dataset is empty");
    adam_ = AdamState::for_parameters(model_.parameters(), config_.lr);
    adam_.first_moment = ck.adam_m;
    adam_.second_moment = ck.adam_v;
    adam_.step_count = ck.step_count;
    ema_.rate = config_.ema_rate;
    ema_.shadow = ck.ema;
    rng_.restore(ck.rng_state);
}

float Trainer::step() {
    const int b = config_.batch_size;
    std::vector<std::int64_t> idx(static_cast<std::size_t>(b)), t(static_cast<std::size_t>(b));
    for (auto& i : idx) i = rng_.uniform_int(0, data_.size() - 1);
    for (auto& ti : t) ti = rng_.uniform_int(1, schedule_.steps());
    const auto s = data_.slice_size();
    Tensor eps = rng_.normal_like(Shape{b, 1, s, s});
    const ConditionedBatch batch = data_.gather(idx);

    Tape tape;
    Var loss = training_loss(model_, batch, t, eps, schedule_, &tape);
    tape.backward(loss);
    adam_step(model_.parameters(), adam_);
    ema_update(model_.parameters(), ema_);
    return loss.value()[0];
}

void Trainer::run(const Callbacks& cb) {
    const auto start = std::chrono::steady_clock::now();
    std::int64_t last_checkpoint = -1;
    while (step_count() < config_.steps) {
        const float loss = step();
        const std::int64_t k = step_count();
        if (cb.on_log && (k == 1 || (config_.log_every > 0 && k % config_.log_every == 0) || k == config_.steps)) {
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            cb.on_log(k, loss, secs);
        }
        if (cb.on_checkpoint && config_.checkpoint_every > 0 && k % config_.checkpoint_every == 0) {
            cb.on_checkpoint(*this);
            last_checkpoint = k;
        }
    }
    if (cb.on_checkpoint && last_checkpoint != step_count()) cb.on_checkpoint(*this);
}

DenoiserModel Trainer::ema_model() const {
    DenoiserModel m = model_;
    for (std::size_t k = 0; k < m.parameters().size(); ++k) m.parameters()[k].value = ema_.shadow[k];
    return m;
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint ck;
    ck.unet = model_.config();
    ck.steps = schedule_.steps();
    ck.beta_start = schedule_.beta_start();
    ck.beta_end = schedule_.beta_end();
    ck.trainer = config_;
    ck.step_count = adam_.step_count;
    ck.rng_state = rng_.state();
    for (const auto& p : model_.parameters()) {
        ck.names.push_back(p.name);
        ck.params.push_back(p.value);
    }
    ck.ema = ema_.shadow;
    ck.adam_m = adam_.first_moment;
    ck.adam_v = adam_.second_moment;
    return ck;
}

} // namespace dfip
