#pragma once

#include <cmath>
#include <vector>

#include "retro/tape.hpp"

namespace retro {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. One slot pair per parameter, in store order.
class Adam {
  public:
    Adam(ParamStore& store, AdamConfig cfg) : store_(&store), cfg_(cfg) {
        for (int i = 0; i < store.count(); ++i) {
            const Matrix& v = store.at(i).value;
            m_.push_back(Matrix::zeros(v.rows(), v.cols()));
            v_.push_back(Matrix::zeros(v.rows(), v.cols()));
        }
    }

    void step() {
        ++t_;
        double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
        double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
        for (int i = 0; i < store_->count(); ++i) {
            Param& p = store_->at(i);
            double* m = m_[i].data();
            double* v = v_[i].data();
            double* w = p.value.data();
            const double* g = p.grad.data();
            for (std::size_t j = 0; j < p.value.size(); ++j) {
                m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
                v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
                double mhat = m[j] / bc1;
                double vhat = v[j] / bc2;
                w[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

    int steps_taken() const { return t_; }

    void set_lr(double lr) { cfg_.lr = lr; }

  private:
    ParamStore* store_;
    AdamConfig cfg_;
    std::vector<Matrix> m_, v_;
    int t_ = 0;
};

}  // namespace retro
