#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "retro/tape.hpp"

namespace retro {

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst_param;
    int worst_index = -1;
    std::size_t checked = 0;
};

// Compares analytic gradients against central differences. `loss_fn` must
// rebuild the same scalar loss on whatever tape it is handed; finite
// differencing re-runs it grad-disabled with one scalar nudged at a time.
// Relative error is |a - n| / max(1, |a|, |n|).
inline GradCheckResult grad_check(ParamStore& store,
                                  const std::function<Tape::Id(Tape&)>& loss_fn,
                                  double step = 1e-5, std::size_t max_per_param = 0) {
    store.zero_grad();
    {
        Tape t(true);
        t.backward(loss_fn(t));
    }
    auto eval = [&]() {
        Tape t(false);
        return t.val(loss_fn(t))(0, 0);
    };
    GradCheckResult res;
    for (int pi = 0; pi < store.count(); ++pi) {
        Param& p = store.at(pi);
        std::size_t n = p.value.size();
        std::size_t limit = max_per_param == 0 ? n : std::min(n, max_per_param);
        for (std::size_t j = 0; j < limit; ++j) {
            double saved = p.value.data()[j];
            p.value.data()[j] = saved + step;
            double up = eval();
            p.value.data()[j] = saved - step;
            double down = eval();
            p.value.data()[j] = saved;
            double numeric = (up - down) / (2.0 * step);
            double analytic = p.grad.data()[j];
            double rel = std::abs(analytic - numeric) /
                         std::max({1.0, std::abs(analytic), std::abs(numeric)});
            ++res.checked;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst_param = p.name;
                res.worst_index = static_cast<int>(j);
            }
        }
    }
    return res;
}

}  // namespace retro
