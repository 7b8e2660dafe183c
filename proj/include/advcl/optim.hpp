#ifndef ADVCL_OPTIM_HPP
#define ADVCL_OPTIM_HPP

#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "errors.hpp"
#include "model.hpp"

namespace advcl {

struct SgdConfig {
    Real momentum = 0.9;
    Real weight_decay = 0.0;
};

// SGD with heavy-ball momentum and coupled L2 weight decay. Parameters that
// are frozen or received no gradient in the current step are left untouched.
class Sgd {
public:
    Sgd(std::vector<Parameter*> params, SgdConfig cfg) : params_(std::move(params)), cfg_(cfg)
    {
        for (auto* p : params_) {
            velocity_.emplace(p->name, Tensor::zeros_like(p->value()));
        }
    }

    void step(Real lr)
    {
        for (auto* p : params_) {
            if (p->frozen || !p->has_grad()) {
                continue;
            }
            Tensor& w = p->value();
            const Tensor& g = p->grad();
            Tensor& v = velocity_.at(p->name);
            for (std::size_t i = 0; i < w.numel(); ++i) {
                const Real d = g[i] + cfg_.weight_decay * w[i];
                v[i] = cfg_.momentum * v[i] + d;
                w[i] -= lr * v[i];
            }
        }
    }

    void zero_grad()
    {
        for (auto* p : params_) {
            p->zero_grad();
        }
    }

    [[nodiscard]] std::map<std::string, Tensor> state(const std::string& prefix = "sgd/") const
    {
        std::map<std::string, Tensor> out;
        for (const auto& [name, v] : velocity_) {
            out.emplace(prefix + name, v);
        }
        return out;
    }

    void load_state(const std::map<std::string, Tensor>& state, const std::string& prefix = "sgd/")
    {
        for (auto& [name, v] : velocity_) {
            auto it = state.find(prefix + name);
            if (it == state.end() || !it->second.same_shape(v)) {
                throw ConfigError("optimizer state for '" + name + "' missing or mismatched");
            }
            v = it->second;
        }
    }

private:
    std::vector<Parameter*> params_;
    SgdConfig cfg_;
    std::map<std::string, Tensor> velocity_;
};

// Linear warm-up from start_lr to base_lr over warmup_epochs, then cosine decay
// to zero at total_epochs. `epoch` may be fractional (per-step schedules).
struct WarmupCosineSchedule {
    Real base_lr = 0.5;
    Real start_lr = 0.01;
    Real warmup_epochs = 10;
    Real total_epochs = 1000;

    [[nodiscard]] Real operator()(Real epoch) const
    {
        if (epoch < warmup_epochs) {
            return start_lr + (base_lr - start_lr) * epoch / warmup_epochs;
        }
        const Real span = total_epochs - warmup_epochs;
        if (span <= 0) {
            return base_lr;
        }
        const Real progress = std::min<Real>(1, (epoch - warmup_epochs) / span);
        return base_lr * 0.5 * (1 + std::cos(std::numbers::pi * progress));
    }
};

// Piecewise-constant decay by `gamma` at each milestone epoch.
struct MultiStepSchedule {
    Real base_lr = 0.1;
    std::vector<Real> milestones{15, 20};
    Real gamma = 0.1;

    [[nodiscard]] Real operator()(Real epoch) const
    {
        Real lr = base_lr;
        for (Real m : milestones) {
            if (epoch >= m) {
                lr *= gamma;
            }
        }
        return lr;
    }
};

} // namespace advcl

#endif // ADVCL_OPTIM_HPP
