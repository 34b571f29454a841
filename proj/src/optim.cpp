#include "bedtopo/optim.hpp"

#include <cmath>
#include <map>
#include <string>

#include "bedtopo/error.hpp"

namespace bedtopo::nn {

Adam::Adam(AdamConfig config) : cfg_(config) {
    if (!(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0 && cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0))
        throw std::invalid_argument("Adam betas must lie in [0, 1)");
    if (!(cfg_.epsilon > 0.0)) throw std::invalid_argument("Adam epsilon must be positive");
}

void Adam::step(std::span<Param* const> params, double lr) {
    for (const Param* p : params)
        for (std::size_t i = 0; i < p->grad.size(); ++i)
            if (!std::isfinite(p->grad[i]))
                throw NumericalError("non-finite gradient in parameter '" + p->name + "' at element " +
                                     std::to_string(i));
    if (m_.empty()) {
        for (const Param* p : params) {
            m_.emplace_back(p->size(), 0.0);
            v_.emplace_back(p->size(), 0.0);
        }
    }
    if (m_.size() != params.size()) throw DimensionError("Adam state does not match the parameter list");

    ++t_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Param& p = *params[k];
        auto& m = m_[k];
        auto& v = v_[k];
        if (m.size() != p.size()) throw DimensionError("Adam state size mismatch for '" + p.name + "'");
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double g = p.grad[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            p.value[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
        }
    }
}

std::vector<NamedArray> Adam::to_arrays(std::span<const Param* const> params) const {
    std::vector<NamedArray> out;
    out.push_back({"adam.step", {1}, {static_cast<double>(t_)}});
    if (m_.empty()) return out;
    for (std::size_t k = 0; k < params.size(); ++k) {
        out.push_back({"adam.m." + params[k]->name, params[k]->dims, m_[k]});
        out.push_back({"adam.v." + params[k]->name, params[k]->dims, v_[k]});
    }
    return out;
}

void Adam::from_arrays(std::span<const NamedArray> arrays, std::span<const Param* const> params) {
    std::map<std::string, const NamedArray*> by_name;
    for (const auto& a : arrays) by_name[a.name] = &a;
    auto it = by_name.find("adam.step");
    if (it == by_name.end()) throw FormatError("optimizer state is missing 'adam.step'");
    t_ = static_cast<std::size_t>(it->second->values.at(0));
    m_.clear();
    v_.clear();
    if (t_ == 0) return;
    for (const Param* p : params) {
        auto m = by_name.find("adam.m." + p->name);
        auto v = by_name.find("adam.v." + p->name);
        if (m == by_name.end() || v == by_name.end())
            throw FormatError("optimizer state is missing moments for '" + p->name + "'");
        if (m->second->values.size() != p->size() || v->second->values.size() != p->size())
            throw FormatError("optimizer moments for '" + p->name + "' have the wrong size");
        m_.push_back(m->second->values);
        v_.push_back(v->second->values);
    }
}

double cyclic_lr(std::size_t iteration, double base_lr, double max_lr, std::size_t half_period) {
    if (half_period == 0) return base_lr;
    const std::size_t pos = iteration % (2 * half_period);
    const std::size_t up = pos <= half_period ? pos : 2 * half_period - pos;
    return base_lr + (max_lr - base_lr) * static_cast<double>(up) / static_cast<double>(half_period);
}

}  // namespace bedtopo::nn
