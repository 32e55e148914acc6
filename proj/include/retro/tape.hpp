#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "retro/matrix.hpp"

namespace retro {

// A named trainable parameter. Gradients accumulate into `grad` when a tape
// that referenced the parameter is walked backward.
struct Param {
    std::string name;
    Matrix value;
    Matrix grad;

    Param(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)) {
        grad = Matrix::zeros(value.rows(), value.cols());
    }
};

// Owns all parameters of a model in registration order. Registration order is
// the canonical flat layout used by the optimizer and by checkpoints.
class ParamStore {
  public:
    Param& add(std::string name, Matrix init) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        index_[name] = static_cast<int>(items_.size());
        items_.push_back(std::make_unique<Param>(std::move(name), std::move(init)));
        return *items_.back();
    }

    Param& add(std::string name, int rows, int cols) {
        return add(std::move(name), Matrix::zeros(rows, cols));
    }

    Param* find(const std::string& name) {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : items_[it->second].get();
    }

    int count() const { return static_cast<int>(items_.size()); }
    Param& at(int i) { return *items_[i]; }
    const Param& at(int i) const { return *items_[i]; }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : items_) n += p->value.size();
        return n;
    }

    void zero_grad() {
        for (auto& p : items_) p->grad.fill(0.0);
    }

    void scale_grad(double s) {
        for (auto& p : items_) {
            for (double& g : p->grad.raw()) g *= s;
        }
    }

  private:
    std::vector<std::unique_ptr<Param>> items_;
    std::unordered_map<std::string, int> index_;
};

// Reverse-mode tape over matrix-valued operations. Forward calls record the
// operation and its inputs; backward() replays the record in reverse and
// accumulates gradients into every Param that participated. Parameters that
// did not participate keep zero gradients.
//
// A tape is confined to a single thread. Construct with grad_enabled=false
// for evaluation: the same forward code runs without recording.
class Tape {
  public:
    using Id = std::int32_t;

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {
        nodes_.reserve(256);
    }

    bool grad_enabled() const { return grad_enabled_; }
    int node_count() const { return static_cast<int>(nodes_.size()); }

    const Matrix& val(Id id) const {
        const Node& n = nodes_[id];
        return n.view ? *n.view : n.own;
    }

    Matrix& grad(Id id) { return nodes_[id].grad; }

    Id constant(Matrix v) {
        Id id = new_node(std::move(v));
        return id;
    }

    // Caller guarantees the matrix outlives the tape (used for cached tables).
    Id constant_ref(const Matrix& v) { return new_view(&v); }

    Id param(Param& p) {
        Id id = new_view(&p.value);
        if (grad_enabled_) {
            Param* pp = &p;
            nodes_[id].back = [id, pp](Tape& t) { add_in_place(pp->grad, t.nodes_[id].grad); };
        }
        return id;
    }

    Id add(Id a, Id b) {
        check_same_shape(a, b, "add");
        Matrix out = val(a);
        add_in_place(out, val(b));
        Id id = new_node(std::move(out));
        if (grad_enabled_) {
            nodes_[id].back = [id, a, b](Tape& t) {
                add_in_place(t.nodes_[a].grad, t.nodes_[id].grad);
                add_in_place(t.nodes_[b].grad, t.nodes_[id].grad);
            };
        }
        return id;
    }

    Id sub(Id a, Id b) {
        check_same_shape(a, b, "sub");
        Matrix out = val(a);
        axpy_in_place(out, -1.0, val(b));
        Id id = new_node(std::move(out));
        if (grad_enabled_) {
            nodes_[id].back = [id, a, b](Tape& t) {
                add_in_place(t.nodes_[a].grad, t.nodes_[id].grad);
                axpy_in_place(t.nodes_[b].grad, -1.0, t.nodes_[id].grad);
            };
        }
        return id;
    }

    Id scale(Id a, double c) {
        Matrix out = val(a);
        for (double& v : out.raw()) v *= c;
        Id id = new_node(std::move(out));
        if (grad_enabled_) {
            nodes_[id].back = [id, a, c](Tape& t) {
                axpy_in_place(t.nodes_[a].grad, c, t.nodes_[id].grad);
            };
        }
        return id;
    }

    Id mul(Id a, Id b) {
        check_same_shape(a, b, "mul");
        Matrix out = val(a);
        const Matrix& vb = val(b);
        for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= vb.data()[i];
        Id id = new_node(std::move(out));
        if (grad_enabled_) {
            nodes_[id].back = [id, a, b](Tape& t) {
                const Matrix& g = t.nodes_[id].grad;
                const Matrix& va = t.val(a);
                const Matrix& vb2 = t.val(b);
                Matrix& ga = t.nodes_[a].grad;
                Matrix& gb = t.nodes_[b].grad;
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga.data()[i] += g.data()[i] * vb2.data()[i];
                    gb.data()[i] += g.data()[i] * va.data()[i];
                }
            };
        }
        return id;
    }

    // Broadcast-add a 1 x cols row vector to every row of m.
    Id add_row(Id m, Id row) {
        const Matrix& vm = val(m);
        const Matrix& vr = val(row);
        if (vr.rows() != 1 || vr.cols() != vm.cols())
            throw ConfigError("add_row: bias shape mismatch");
        Matrix out = vm;
        for (int i = 0; i < out.rows(); ++i)
            for (int j = 0; j < out.cols(); ++j) out(i, j) += vr(0, j);
        Id id = new_node(std::move(out));
        if (grad_enabled_) {
            nodes_[id].back = [id, m, row](Tape& t) {
                const Matrix& g = t.nodes_[id].grad;
                add_in_place(t.nodes_[m].grad, g);
                Matrix& gr = t.nodes_[row].grad;
                for (int i = 0; i < g.rows(); ++i)
                    for (int j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j);
            };
        }
        return id;
    }

    Id matmul(Id a, Id b) {
        const Matrix& va = val(a);
        const Matrix& vb = val(b);
        if (va.cols() != vb.rows()) throw ConfigError("matmul: inner dimension mismatch");
        Id id = new_node(retro::matmul(va, vb));
        if (grad_enabled_) {
            nodes_[id].back = [id, a, b](Tape& t) {
                const Matrix& g = t.nodes_[id].grad;
                matmul_nt_acc(g, t.val(b), t.nodes_[a].grad);  // dA += G B^T
                matmul_tn_acc(t.val(a), g, t.nodes_[b].grad);  // dB += A^T G
            };
        }
        return id;
    }

    // c = a * b^T
    Id matmul_nt(Id a, Id b) {
        const Matrix& va = val(a);
        const Matrix& vb = val(b);
        if (va.cols() != vb.cols()) throw ConfigError("matmul_nt: inner dimension mismatch");
        Id id = new_node(retro::matmul_nt(va, vb));
        if (grad_enabled_) {
            nodes_[id].back = [id, a, b](Tape& t) {
                const Matrix& g = t.nodes_[id].grad;
                matmul_acc(g, t.val(b), t.nodes_[a].grad);     // dA += G B
                matmul_tn_acc(g, t.val(a), t.nodes_[b].grad);  // dB += G^T A
            };
        }
        return id;
    }

    Id relu(Id a) {
        Matrix out = val(a);
        // NaN passes through so numeric faults surface at the stage checks.
        for (double& v : out.raw()) v = (v > 0.0 || std::isnan(v)) ? v : 0.0;
        Id id = new_node(std::move(out));
        if (grad_enabled_) {
            nodes_[id].back = [id, a](Tape& t) {
                const Matrix& g = t.nodes_[id].grad;
                const Matrix& va = t.val(a);
                Matrix& ga = t.nodes_[a].grad;
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (va.data()[i] > 0.0) ga.data()[i] += g.data()[i];
            };
        }
        return id;
    }

    Id tanh_op(Id a) {
        Matrix out = val(a);
        for (double& v : out.raw()) v = std::tanh(v);
        Id id = new_node(std::move(out));
        if (grad_enabled_) {
            nodes_[id].back = [id, a](Tape& t) {
                const Matrix& g = t.nodes_[id].grad;
                const Matrix& y = t.val(id);
                Matrix& ga = t.nodes_[a].grad;
                for (std::size_t i = 0; i < g.size(); ++i)
                    ga.data()[i] += g.data()[i] * (1.0 - y.data()[i] * y.data()[i]);
            };
        }
        return id;
    }

    Id reshape(Id a, int rows, int cols) {
        const Matrix& va = val(a);
        if (static_cast<std::size_t>(rows) * cols != va.size())
            throw ConfigError("reshape: element count mismatch");
        Id id = new_node(va.reshaped(rows, cols));
        if (grad_enabled_) {
            nodes_[id].back = [id, a](Tape& t) {
                const Matrix& g = t.nodes_[id].grad;
                Matrix& ga = t.nodes_[a].grad;
                for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i];
            };
        }
        return id;
    }

    Id concat_cols(Id a, Id b) {
        const Matrix& va = val(a);
        const Matrix& vb = val(b);
        if (va.rows() != vb.rows()) throw ConfigError("concat_cols: row count mismatch");
        Matrix out(va.rows(), va.cols() + vb.cols());
        for (int i = 0; i < va.rows(); ++i) {
            for (int j = 0; j < va.cols(); ++j) out(i, j) = va(i, j);
            for (int j = 0; j < vb.cols(); ++j) out(i, va.cols() + j) = vb(i, j);
        }
        Id id = new_node(std::move(out));
        if (grad_enabled_) {
            int ca = va.cols();
            nodes_[id].back = [id, a, b, ca](Tape& t) {
                const Matrix& g = t.nodes_[id].grad;
                Matrix& ga = t.nodes_[a].grad;
                Matrix& gb = t.nodes_[b].grad;
                for (int i = 0; i < g.rows(); ++i) {
                    for (int j = 0; j < ca; ++j) ga(i, j) += g(i, j);
                    for (int j = ca; j < g.cols(); ++j) gb(i, j - ca) += g(i, j);
                }
            };
        }
        return id;
    }

    // 1 x cols mean over rows.
    Id mean_rows(Id a) {
        const Matrix& va = val(a);
        if (va.rows() == 0) throw ConfigError("mean_rows: empty matrix");
        Matrix out(1, va.cols());
        for (int i = 0; i < va.rows(); ++i)
            for (int j = 0; j < va.cols(); ++j) out(0, j) += va(i, j);
        double inv = 1.0 / va.rows();
        for (double& v : out.raw()) v *= inv;
        Id id = new_node(std::move(out));
        if (grad_enabled_) {
            nodes_[id].back = [id, a, inv](Tape& t) {
                const Matrix& g = t.nodes_[id].grad;
                Matrix& ga = t.nodes_[a].grad;
                for (int i = 0; i < ga.rows(); ++i)
                    for (int j = 0; j < ga.cols(); ++j) ga(i, j) += inv * g(0, j);
            };
        }
        return id;
    }

    Id sum_all(Id a) {
        const Matrix& va = val(a);
        Matrix out(1, 1);
        double s = 0.0;
        for (double v : va.raw()) s += v;
        out(0, 0) = s;
        Id id = new_node(std::move(out));
        if (grad_enabled_) {
            nodes_[id].back = [id, a](Tape& t) {
                double g = t.nodes_[id].grad(0, 0);
                Matrix& ga = t.nodes_[a].grad;
                for (double& v : ga.raw()) v += g;
            };
        }
        return id;
    }

    // Row-wise softmax over the unmasked columns (keys). Masked columns get
    // weight exactly zero; scores are shifted by the row max before exp.
    Id softmax_rows_masked(Id scores, const std::vector<bool>& keep) {
        const Matrix& s = val(scores);
        if (static_cast<int>(keep.size()) != s.cols())
            throw ConfigError("softmax_rows_masked: mask length mismatch");
        bool any = false;
        for (bool k : keep) any = any || k;
        if (!any) throw InputError("softmax over empty context: all keys masked");
        Matrix out(s.rows(), s.cols());
        for (int i = 0; i < s.rows(); ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < s.cols(); ++j)
                if (keep[j]) mx = std::max(mx, s(i, j));
            double z = 0.0;
            for (int j = 0; j < s.cols(); ++j) {
                if (keep[j]) {
                    out(i, j) = std::exp(s(i, j) - mx);
                    z += out(i, j);
                }
            }
            double inv = 1.0 / z;
            for (int j = 0; j < s.cols(); ++j) out(i, j) = keep[j] ? out(i, j) * inv : 0.0;
        }
        Id id = new_node(std::move(out));
        if (grad_enabled_) {
            std::vector<bool> keep_copy = keep;
            nodes_[id].back = [id, scores, keep_copy](Tape& t) {
                const Matrix& g = t.nodes_[id].grad;
                const Matrix& w = t.val(id);
                Matrix& gs = t.nodes_[scores].grad;
                for (int i = 0; i < g.rows(); ++i) {
                    double dot = 0.0;
                    for (int j = 0; j < g.cols(); ++j)
                        if (keep_copy[j]) dot += g(i, j) * w(i, j);
                    for (int j = 0; j < g.cols(); ++j)
                        if (keep_copy[j]) gs(i, j) += w(i, j) * (g(i, j) - dot);
                }
            };
        }
        return id;
    }

    // Cross-entropy of a 1 x K logits row against a one-hot target index.
    Id ce_with_index(Id logits, int target) {
        const Matrix& lv = val(logits);
        if (lv.rows() != 1) throw ConfigError("ce_with_index: logits must be a row");
        if (target < 0 || target >= lv.cols()) throw ConfigError("ce_with_index: index out of range");
        double mx = lv(0, 0);
        for (int j = 1; j < lv.cols(); ++j) mx = std::max(mx, lv(0, j));
        double z = 0.0;
        for (int j = 0; j < lv.cols(); ++j) z += std::exp(lv(0, j) - mx);
        Matrix out(1, 1);
        out(0, 0) = std::log(z) - (lv(0, target) - mx);
        Id id = new_node(std::move(out));
        if (grad_enabled_) {
            nodes_[id].back = [id, logits, target](Tape& t) {
                double g = t.nodes_[id].grad(0, 0);
                const Matrix& l = t.val(logits);
                Matrix& gl = t.nodes_[logits].grad;
                double mx2 = l(0, 0);
                for (int j = 1; j < l.cols(); ++j) mx2 = std::max(mx2, l(0, j));
                double z2 = 0.0;
                for (int j = 0; j < l.cols(); ++j) z2 += std::exp(l(0, j) - mx2);
                for (int j = 0; j < l.cols(); ++j) {
                    double p = std::exp(l(0, j) - mx2) / z2;
                    gl(0, j) += g * (p - (j == target ? 1.0 : 0.0));
                }
            };
        }
        return id;
    }

    // Walk the record backward from a scalar node, seeding its gradient to 1.
    void backward(Id loss) {
        if (!grad_enabled_) throw ConfigError("backward on a grad-disabled tape");
        const Matrix& lv = val(loss);
        if (lv.rows() != 1 || lv.cols() != 1) throw ConfigError("backward: loss must be scalar");
        if (!lv.all_finite()) throw NumericError("backward: non-finite loss");
        nodes_[loss].grad(0, 0) = 1.0;
        for (Id i = static_cast<Id>(nodes_.size()) - 1; i >= 0; --i) {
            if (nodes_[i].back) nodes_[i].back(*this);
        }
    }

  private:
    struct Node {
        Matrix own;
        const Matrix* view = nullptr;  // set for params and constant refs
        Matrix grad;
        std::function<void(Tape&)> back;
    };

    Id new_node(Matrix v) {
        Node n;
        n.own = std::move(v);
        if (grad_enabled_) n.grad = Matrix::zeros(n.own.rows(), n.own.cols());
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size() - 1);
    }

    Id new_view(const Matrix* v) {
        Node n;
        n.view = v;
        if (grad_enabled_) n.grad = Matrix::zeros(v->rows(), v->cols());
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size() - 1);
    }

    void check_same_shape(Id a, Id b, const char* op) const {
        if (!val(a).same_shape(val(b)))
            throw ConfigError(std::string(op) + ": shape mismatch");
    }

    std::vector<Node> nodes_;
    bool grad_enabled_;
};

}  // namespace retro
