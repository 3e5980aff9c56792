#pragma once

// AdamW with decoupled weight decay. Moment state is kept in float64
// regardless of the parameter precision; one step() spans all registered
// buffers and advances the shared timestep once.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "embedheight/errors.hpp"

namespace embedheight {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

template <typename T>
class AdamW {
  public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {
        if (!(cfg.lr > 0)) throw ValueError("adamw: lr must be positive");
        if (cfg.beta1 < 0 || cfg.beta1 >= 1 || cfg.beta2 < 0 || cfg.beta2 >= 1)
            throw ValueError("adamw: betas must lie in [0,1)");
    }

    std::size_t register_buffer(std::size_t size) {
        m_.emplace_back(size, 0.0);
        v_.emplace_back(size, 0.0);
        return m_.size() - 1;
    }

    /// Advance the shared timestep; call once per optimizer step, before the
    /// per-buffer update() calls of that step.
    void begin_step() { ++t_; }

    void update(std::size_t slot, std::span<T> theta, std::span<const T> grad) {
        if (slot >= m_.size()) throw ValueError("adamw: unknown slot");
        std::vector<double>& m = m_[slot];
        std::vector<double>& v = v_[slot];
        if (theta.size() != m.size() || grad.size() != m.size())
            throw ValueError("adamw: buffer size mismatch");
        if (t_ == 0) throw ValueError("adamw: update before begin_step");
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < m.size(); ++i) {
            const double g = static_cast<double>(grad[i]);
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            const double th = static_cast<double>(theta[i]);
            theta[i] = static_cast<T>(th - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps) -
                                      cfg_.lr * cfg_.weight_decay * th);
        }
    }

    std::uint64_t step_count() const { return t_; }
    double learning_rate() const { return cfg_.lr; }
    void set_learning_rate(double lr) {
        if (!(lr > 0)) throw ValueError("adamw: lr must be positive");
        cfg_.lr = lr;
    }
    const AdamWConfig& config() const { return cfg_; }
    std::size_t slot_count() const { return m_.size(); }
    std::span<const double> first_moment(std::size_t slot) const { return m_[slot]; }
    std::span<const double> second_moment(std::size_t slot) const { return v_[slot]; }

    /// Restore serialized state; slot sizes must match the registered layout.
    void restore(std::uint64_t t, double lr, std::vector<std::vector<double>> m,
                 std::vector<std::vector<double>> v) {
        if (m.size() != m_.size() || v.size() != v_.size())
            throw ValueError("adamw restore: slot count mismatch");
        for (std::size_t i = 0; i < m.size(); ++i)
            if (m[i].size() != m_[i].size() || v[i].size() != v_[i].size())
                throw ValueError("adamw restore: slot size mismatch");
        t_ = t;
        set_learning_rate(lr);
        m_ = std::move(m);
        v_ = std::move(v);
    }

  private:
    AdamWConfig cfg_;
    std::uint64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace embedheight
