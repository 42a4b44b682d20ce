#include "partflow/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace partflow::ad {

namespace {

void ensure_grad(Node& n) {
    if (n.grad.size() != n.value.size()) {
        n.grad = Tensor(n.value.shape());
    }
}

Value make_node(Tensor value, std::vector<Value> parents) {
    auto node = std::make_shared<Node>(std::move(value));
    node->parents = std::move(parents);
    for (const Value& p : node->parents) {
        if (p->needs_grad) {
            node->needs_grad = true;
            break;
        }
    }
    return node;
}

void check_same_shape(const Value& a, const Value& b, const char* op) {
    if (!a->value.same_shape(b->value)) {
        raise(ErrorCode::ShapeError, std::string(op) + " shapes " + a->value.shape_str() + " vs " +
                                         b->value.shape_str());
    }
}

}  // namespace

Value constant(Tensor t) { return std::make_shared<Node>(std::move(t)); }

Value leaf(Tensor t) {
    auto node = std::make_shared<Node>(std::move(t));
    node->needs_grad = true;
    return node;
}

Tensor grad_of(const Value& v) {
    if (v->grad.size() == v->value.size()) return v->grad;
    return Tensor(v->value.shape());
}

void backward(const Value& loss) {
    if (loss->value.size() != 1) {
        raise(ErrorCode::ShapeError, "backward needs a scalar loss, got " + loss->value.shape_str());
    }
    loss->value.check_finite("loss");

    // Iterative post-order DFS; graphs can be thousands of nodes deep.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        if (next_child < node->parents.size()) {
            Node* child = node->parents[next_child].get();
            ++next_child;
            if (child->needs_grad && visited.insert(child).second) {
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    ensure_grad(*loss);
    loss->grad.at(0) = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->needs_grad && node->backprop) node->backprop();
    }
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

Value add(const Value& a, const Value& b) {
    check_same_shape(a, b, "add");
    Tensor out = a->value;
    for (size_t i = 0; i < out.size(); ++i) out.at(i) += b->value.at(i);
    Value node = make_node(std::move(out), {a, b});
    Node* self = node.get();
    node->backprop = [self, a, b]() {
        if (a->needs_grad) {
            ensure_grad(*a);
            for (size_t i = 0; i < self->grad.size(); ++i) a->grad.at(i) += self->grad.at(i);
        }
        if (b->needs_grad) {
            ensure_grad(*b);
            for (size_t i = 0; i < self->grad.size(); ++i) b->grad.at(i) += self->grad.at(i);
        }
    };
    return node;
}

Value sub(const Value& a, const Value& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a->value;
    for (size_t i = 0; i < out.size(); ++i) out.at(i) -= b->value.at(i);
    Value node = make_node(std::move(out), {a, b});
    Node* self = node.get();
    node->backprop = [self, a, b]() {
        if (a->needs_grad) {
            ensure_grad(*a);
            for (size_t i = 0; i < self->grad.size(); ++i) a->grad.at(i) += self->grad.at(i);
        }
        if (b->needs_grad) {
            ensure_grad(*b);
            for (size_t i = 0; i < self->grad.size(); ++i) b->grad.at(i) -= self->grad.at(i);
        }
    };
    return node;
}

Value mul(const Value& a, const Value& b) {
    check_same_shape(a, b, "mul");
    Tensor out = a->value;
    for (size_t i = 0; i < out.size(); ++i) out.at(i) *= b->value.at(i);
    Value node = make_node(std::move(out), {a, b});
    Node* self = node.get();
    node->backprop = [self, a, b]() {
        if (a->needs_grad) {
            ensure_grad(*a);
            for (size_t i = 0; i < self->grad.size(); ++i) {
                a->grad.at(i) += self->grad.at(i) * b->value.at(i);
            }
        }
        if (b->needs_grad) {
            ensure_grad(*b);
            for (size_t i = 0; i < self->grad.size(); ++i) {
                b->grad.at(i) += self->grad.at(i) * a->value.at(i);
            }
        }
    };
    return node;
}

Value scale(const Value& a, double s) {
    Tensor out = a->value;
    for (size_t i = 0; i < out.size(); ++i) out.at(i) *= s;
    Value node = make_node(std::move(out), {a});
    Node* self = node.get();
    node->backprop = [self, a, s]() {
        if (!a->needs_grad) return;
        ensure_grad(*a);
        for (size_t i = 0; i < self->grad.size(); ++i) a->grad.at(i) += s * self->grad.at(i);
    };
    return node;
}

Value relu(const Value& a) {
    Tensor out = a->value;
    for (size_t i = 0; i < out.size(); ++i) out.at(i) = std::max(0.0, out.at(i));
    Value node = make_node(std::move(out), {a});
    Node* self = node.get();
    node->backprop = [self, a]() {
        if (!a->needs_grad) return;
        ensure_grad(*a);
        for (size_t i = 0; i < self->grad.size(); ++i) {
            if (a->value.at(i) > 0.0) a->grad.at(i) += self->grad.at(i);
        }
    };
    return node;
}

Value gelu(const Value& a) {
    // Exact erf form; smooth everywhere, which keeps finite-difference
    // checks tight.
    constexpr double kInvSqrt2 = 0.7071067811865475244;
    constexpr double kInvSqrt2Pi = 0.3989422804014326779;
    Tensor out = a->value;
    for (size_t i = 0; i < out.size(); ++i) {
        const double x = out.at(i);
        out.at(i) = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    Value node = make_node(std::move(out), {a});
    Node* self = node.get();
    node->backprop = [self, a]() {
        if (!a->needs_grad) return;
        ensure_grad(*a);
        for (size_t i = 0; i < self->grad.size(); ++i) {
            const double x = a->value.at(i);
            const double phi = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            a->grad.at(i) += self->grad.at(i) * (cdf + x * phi);
        }
    };
    return node;
}

Value sigmoid(const Value& a) {
    Tensor out = a->value;
    for (size_t i = 0; i < out.size(); ++i) {
        const double x = out.at(i);
        out.at(i) = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    Value node = make_node(std::move(out), {a});
    Node* self = node.get();
    node->backprop = [self, a]() {
        if (!a->needs_grad) return;
        ensure_grad(*a);
        for (size_t i = 0; i < self->grad.size(); ++i) {
            const double y = self->value.at(i);
            a->grad.at(i) += self->grad.at(i) * y * (1.0 - y);
        }
    };
    return node;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

Value matmul(const Value& a, const Value& b) {
    Value node = make_node(partflow::matmul(a->value, b->value), {a, b});
    Node* self = node.get();
    node->backprop = [self, a, b]() {
        if (a->needs_grad) {
            ensure_grad(*a);
            matmul_a_bt_accum(self->grad, b->value, a->grad);  // dA += dC B^T
        }
        if (b->needs_grad) {
            ensure_grad(*b);
            matmul_at_b_accum(a->value, self->grad, b->grad);  // dB += A^T dC
        }
    };
    return node;
}

Value transpose(const Value& a) {
    Value node = make_node(partflow::transpose(a->value), {a});
    Node* self = node.get();
    node->backprop = [self, a]() {
        if (!a->needs_grad) return;
        ensure_grad(*a);
        const Tensor gt = partflow::transpose(self->grad);
        for (size_t i = 0; i < gt.size(); ++i) a->grad.at(i) += gt.at(i);
    };
    return node;
}

// ---------------------------------------------------------------------------
// Broadcasts
// ---------------------------------------------------------------------------

Value add_row(const Value& a, const Value& row) {
    const size_t n = a->value.cols();
    if (row->value.rows() != 1 || row->value.cols() != n) {
        raise(ErrorCode::ShapeError, "add_row bias " + row->value.shape_str());
    }
    Tensor out = a->value;
    for (size_t i = 0; i < out.rows(); ++i) {
        double* r = out.row(i);
        for (size_t j = 0; j < n; ++j) r[j] += row->value.at(j);
    }
    Value node = make_node(std::move(out), {a, row});
    Node* self = node.get();
    node->backprop = [self, a, row]() {
        if (a->needs_grad) {
            ensure_grad(*a);
            for (size_t i = 0; i < self->grad.size(); ++i) a->grad.at(i) += self->grad.at(i);
        }
        if (row->needs_grad) {
            ensure_grad(*row);
            for (size_t i = 0; i < self->grad.rows(); ++i) {
                const double* g = self->grad.row(i);
                for (size_t j = 0; j < self->grad.cols(); ++j) row->grad.at(j) += g[j];
            }
        }
    };
    return node;
}

Value mul_row(const Value& a, const Value& row) {
    const size_t n = a->value.cols();
    if (row->value.rows() != 1 || row->value.cols() != n) {
        raise(ErrorCode::ShapeError, "mul_row gain " + row->value.shape_str());
    }
    Tensor out = a->value;
    for (size_t i = 0; i < out.rows(); ++i) {
        double* r = out.row(i);
        for (size_t j = 0; j < n; ++j) r[j] *= row->value.at(j);
    }
    Value node = make_node(std::move(out), {a, row});
    Node* self = node.get();
    node->backprop = [self, a, row]() {
        const size_t rows = self->grad.rows(), cols = self->grad.cols();
        if (a->needs_grad) {
            ensure_grad(*a);
            for (size_t i = 0; i < rows; ++i) {
                const double* g = self->grad.row(i);
                double* ga = a->grad.row(i);
                for (size_t j = 0; j < cols; ++j) ga[j] += g[j] * row->value.at(j);
            }
        }
        if (row->needs_grad) {
            ensure_grad(*row);
            for (size_t i = 0; i < rows; ++i) {
                const double* g = self->grad.row(i);
                const double* av = a->value.row(i);
                for (size_t j = 0; j < cols; ++j) row->grad.at(j) += g[j] * av[j];
            }
        }
    };
    return node;
}

Value sub_col(const Value& a, const Value& col) {
    const size_t m = a->value.rows();
    if (col->value.rows() != m || col->value.cols() != 1) {
        raise(ErrorCode::ShapeError, "sub_col column " + col->value.shape_str());
    }
    Tensor out = a->value;
    for (size_t i = 0; i < m; ++i) {
        double* r = out.row(i);
        for (size_t j = 0; j < out.cols(); ++j) r[j] -= col->value.at(i);
    }
    Value node = make_node(std::move(out), {a, col});
    Node* self = node.get();
    node->backprop = [self, a, col]() {
        const size_t rows = self->grad.rows(), cols = self->grad.cols();
        if (a->needs_grad) {
            ensure_grad(*a);
            for (size_t i = 0; i < self->grad.size(); ++i) a->grad.at(i) += self->grad.at(i);
        }
        if (col->needs_grad) {
            ensure_grad(*col);
            for (size_t i = 0; i < rows; ++i) {
                const double* g = self->grad.row(i);
                double acc = 0.0;
                for (size_t j = 0; j < cols; ++j) acc += g[j];
                col->grad.at(i) -= acc;
            }
        }
    };
    return node;
}

// ---------------------------------------------------------------------------
// Softmax family and normalization
// ---------------------------------------------------------------------------

Value softmax_rows(const Value& a) {
    Tensor out = a->value;
    softmax_rows_inplace(out);
    Value node = make_node(std::move(out), {a});
    Node* self = node.get();
    node->backprop = [self, a]() {
        if (!a->needs_grad) return;
        ensure_grad(*a);
        const size_t rows = self->grad.rows(), cols = self->grad.cols();
        for (size_t i = 0; i < rows; ++i) {
            const double* y = self->value.row(i);
            const double* g = self->grad.row(i);
            double dot = 0.0;
            for (size_t j = 0; j < cols; ++j) dot += y[j] * g[j];
            double* ga = a->grad.row(i);
            for (size_t j = 0; j < cols; ++j) ga[j] += y[j] * (g[j] - dot);
        }
    };
    return node;
}

Value logsumexp_rows(const Value& a) {
    const size_t m = a->value.rows(), n = a->value.cols();
    Tensor out(m, 1);
    for (size_t i = 0; i < m; ++i) {
        const double* r = a->value.row(i);
        double mx = r[0];
        for (size_t j = 1; j < n; ++j) mx = std::max(mx, r[j]);
        double s = 0.0;
        for (size_t j = 0; j < n; ++j) s += std::exp(r[j] - mx);
        out.at(i, 0) = mx + std::log(s);
    }
    Value node = make_node(std::move(out), {a});
    Node* self = node.get();
    node->backprop = [self, a]() {
        if (!a->needs_grad) return;
        ensure_grad(*a);
        const size_t m = a->value.rows(), n = a->value.cols();
        for (size_t i = 0; i < m; ++i) {
            const double* r = a->value.row(i);
            const double lse = self->value.at(i, 0);
            const double g = self->grad.at(i, 0);
            double* ga = a->grad.row(i);
            for (size_t j = 0; j < n; ++j) ga[j] += g * std::exp(r[j] - lse);
        }
    };
    return node;
}

Value layer_norm_rows(const Value& a, double eps) {
    const size_t m = a->value.rows(), n = a->value.cols();
    Tensor out(m, n);
    Tensor inv_std(m, 1);
    for (size_t i = 0; i < m; ++i) {
        const double* r = a->value.row(i);
        double mu = 0.0;
        for (size_t j = 0; j < n; ++j) mu += r[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (size_t j = 0; j < n; ++j) var += (r[j] - mu) * (r[j] - mu);
        var /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std.at(i, 0) = inv;
        double* o = out.row(i);
        for (size_t j = 0; j < n; ++j) o[j] = (r[j] - mu) * inv;
    }
    Value node = make_node(std::move(out), {a});
    Node* self = node.get();
    node->backprop = [self, a, inv_std]() {
        if (!a->needs_grad) return;
        ensure_grad(*a);
        const size_t m = self->value.rows(), n = self->value.cols();
        for (size_t i = 0; i < m; ++i) {
            const double* y = self->value.row(i);
            const double* g = self->grad.row(i);
            double g_mean = 0.0, gy_mean = 0.0;
            for (size_t j = 0; j < n; ++j) {
                g_mean += g[j];
                gy_mean += g[j] * y[j];
            }
            g_mean /= static_cast<double>(n);
            gy_mean /= static_cast<double>(n);
            const double inv = inv_std.at(i, 0);
            double* ga = a->grad.row(i);
            for (size_t j = 0; j < n; ++j) {
                ga[j] += inv * (g[j] - g_mean - y[j] * gy_mean);
            }
        }
    };
    return node;
}

// ---------------------------------------------------------------------------
// Structure
// ---------------------------------------------------------------------------

Value slice_rows(const Value& a, size_t r0, size_t r1) {
    const size_t n = a->value.cols();
    if (r0 > r1 || r1 > a->value.rows()) {
        raise(ErrorCode::ShapeError, "slice_rows range out of bounds");
    }
    Tensor out(r1 - r0, n);
    for (size_t i = r0; i < r1; ++i) {
        const double* src = a->value.row(i);
        double* dst = out.row(i - r0);
        for (size_t j = 0; j < n; ++j) dst[j] = src[j];
    }
    Value node = make_node(std::move(out), {a});
    Node* self = node.get();
    node->backprop = [self, a, r0]() {
        if (!a->needs_grad) return;
        ensure_grad(*a);
        const size_t n = self->grad.cols();
        for (size_t i = 0; i < self->grad.rows(); ++i) {
            const double* g = self->grad.row(i);
            double* ga = a->grad.row(i + r0);
            for (size_t j = 0; j < n; ++j) ga[j] += g[j];
        }
    };
    return node;
}

Value slice_cols(const Value& a, size_t c0, size_t c1) {
    const size_t m = a->value.rows();
    if (c0 > c1 || c1 > a->value.cols()) {
        raise(ErrorCode::ShapeError, "slice_cols range out of bounds");
    }
    Tensor out(m, c1 - c0);
    for (size_t i = 0; i < m; ++i) {
        const double* src = a->value.row(i);
        double* dst = out.row(i);
        for (size_t j = c0; j < c1; ++j) dst[j - c0] = src[j];
    }
    Value node = make_node(std::move(out), {a});
    Node* self = node.get();
    node->backprop = [self, a, c0]() {
        if (!a->needs_grad) return;
        ensure_grad(*a);
        for (size_t i = 0; i < self->grad.rows(); ++i) {
            const double* g = self->grad.row(i);
            double* ga = a->grad.row(i);
            for (size_t j = 0; j < self->grad.cols(); ++j) ga[j + c0] += g[j];
        }
    };
    return node;
}

Value concat_rows(const std::vector<Value>& parts) {
    if (parts.empty()) raise(ErrorCode::EmptyInput, "concat_rows of nothing");
    const size_t n = parts[0]->value.cols();
    size_t rows = 0;
    for (const Value& p : parts) {
        if (p->value.cols() != n) raise(ErrorCode::ShapeError, "concat_rows column mismatch");
        rows += p->value.rows();
    }
    Tensor out(rows, n);
    size_t r = 0;
    for (const Value& p : parts) {
        for (size_t i = 0; i < p->value.rows(); ++i, ++r) {
            const double* src = p->value.row(i);
            double* dst = out.row(r);
            for (size_t j = 0; j < n; ++j) dst[j] = src[j];
        }
    }
    Value node = make_node(std::move(out), parts);
    Node* self = node.get();
    std::vector<Value> held = parts;
    node->backprop = [self, held]() {
        size_t r = 0;
        const size_t n = self->grad.cols();
        for (const Value& p : held) {
            if (p->needs_grad) {
                ensure_grad(*p);
                for (size_t i = 0; i < p->value.rows(); ++i) {
                    const double* g = self->grad.row(r + i);
                    double* ga = p->grad.row(i);
                    for (size_t j = 0; j < n; ++j) ga[j] += g[j];
                }
            }
            r += p->value.rows();
        }
    };
    return node;
}

Value concat_cols(const std::vector<Value>& parts) {
    if (parts.empty()) raise(ErrorCode::EmptyInput, "concat_cols of nothing");
    const size_t m = parts[0]->value.rows();
    size_t cols = 0;
    for (const Value& p : parts) {
        if (p->value.rows() != m) raise(ErrorCode::ShapeError, "concat_cols row mismatch");
        cols += p->value.cols();
    }
    Tensor out(m, cols);
    size_t c = 0;
    for (const Value& p : parts) {
        const size_t pc = p->value.cols();
        for (size_t i = 0; i < m; ++i) {
            const double* src = p->value.row(i);
            double* dst = out.row(i) + c;
            for (size_t j = 0; j < pc; ++j) dst[j] = src[j];
        }
        c += pc;
    }
    Value node = make_node(std::move(out), parts);
    Node* self = node.get();
    std::vector<Value> held = parts;
    node->backprop = [self, held]() {
        size_t c = 0;
        for (const Value& p : held) {
            const size_t pc = p->value.cols();
            if (p->needs_grad) {
                ensure_grad(*p);
                for (size_t i = 0; i < p->value.rows(); ++i) {
                    const double* g = self->grad.row(i) + c;
                    double* ga = p->grad.row(i);
                    for (size_t j = 0; j < pc; ++j) ga[j] += g[j];
                }
            }
            c += pc;
        }
    };
    return node;
}

Value gather_rows(const Value& table, std::vector<int> indices) {
    const size_t n = table->value.cols();
    const size_t rows = table->value.rows();
    for (int idx : indices) {
        if (idx < 0 || static_cast<size_t>(idx) >= rows) {
            raise(ErrorCode::OutOfBounds, "gather_rows index " + std::to_string(idx));
        }
    }
    Tensor out(indices.size(), n);
    for (size_t i = 0; i < indices.size(); ++i) {
        const double* src = table->value.row(static_cast<size_t>(indices[i]));
        double* dst = out.row(i);
        for (size_t j = 0; j < n; ++j) dst[j] = src[j];
    }
    Value node = make_node(std::move(out), {table});
    Node* self = node.get();
    node->backprop = [self, table, indices = std::move(indices)]() {
        if (!table->needs_grad) return;
        ensure_grad(*table);
        const size_t n = self->grad.cols();
        for (size_t i = 0; i < indices.size(); ++i) {
            const double* g = self->grad.row(i);
            double* gt = table->grad.row(static_cast<size_t>(indices[i]));
            for (size_t j = 0; j < n; ++j) gt[j] += g[j];
        }
    };
    return node;
}

Value group_mean_rows(const Value& a, std::vector<std::vector<int>> groups) {
    const size_t n = a->value.cols();
    const size_t rows = a->value.rows();
    Tensor out(groups.size(), n);
    for (size_t g = 0; g < groups.size(); ++g) {
        if (groups[g].empty()) raise(ErrorCode::EmptyInput, "empty downsample group");
        double* dst = out.row(g);
        for (int idx : groups[g]) {
            if (idx < 0 || static_cast<size_t>(idx) >= rows) {
                raise(ErrorCode::OutOfBounds, "group index " + std::to_string(idx));
            }
            const double* src = a->value.row(static_cast<size_t>(idx));
            for (size_t j = 0; j < n; ++j) dst[j] += src[j];
        }
        const double inv = 1.0 / static_cast<double>(groups[g].size());
        for (size_t j = 0; j < n; ++j) dst[j] *= inv;
    }
    Value node = make_node(std::move(out), {a});
    Node* self = node.get();
    node->backprop = [self, a, groups = std::move(groups)]() {
        if (!a->needs_grad) return;
        ensure_grad(*a);
        const size_t n = self->grad.cols();
        for (size_t g = 0; g < groups.size(); ++g) {
            const double* gr = self->grad.row(g);
            const double inv = 1.0 / static_cast<double>(groups[g].size());
            for (int idx : groups[g]) {
                double* ga = a->grad.row(static_cast<size_t>(idx));
                for (size_t j = 0; j < n; ++j) ga[j] += gr[j] * inv;
            }
        }
    };
    return node;
}

Value pick(const Value& a, std::vector<std::pair<size_t, size_t>> coords) {
    const size_t m = a->value.rows(), n = a->value.cols();
    Tensor out(std::vector<size_t>{coords.size()});
    for (size_t i = 0; i < coords.size(); ++i) {
        const auto& [r, c] = coords[i];
        if (r >= m || c >= n) raise(ErrorCode::OutOfBounds, "pick coordinate out of range");
        out.at(i) = a->value.at(r, c);
    }
    Value node = make_node(std::move(out), {a});
    Node* self = node.get();
    node->backprop = [self, a, coords = std::move(coords)]() {
        if (!a->needs_grad) return;
        ensure_grad(*a);
        for (size_t i = 0; i < coords.size(); ++i) {
            a->grad.at(coords[i].first, coords[i].second) += self->grad.at(i);
        }
    };
    return node;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Value sum(const Value& a) {
    double s = 0.0;
    for (size_t i = 0; i < a->value.size(); ++i) s += a->value.at(i);
    Value node = make_node(Tensor::scalar(s), {a});
    Node* self = node.get();
    node->backprop = [self, a]() {
        if (!a->needs_grad) return;
        ensure_grad(*a);
        const double g = self->grad.at(0);
        for (size_t i = 0; i < a->grad.size(); ++i) a->grad.at(i) += g;
    };
    return node;
}

Value mean(const Value& a) {
    if (a->value.size() == 0) raise(ErrorCode::EmptyInput, "mean of empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a->value.size()));
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

void ParamStore::add(const std::string& name, std::vector<size_t> shape, double bound,
                     uint64_t seed) {
    if (params_.count(name)) raise(ErrorCode::ConfigError, "duplicate parameter " + name);
    Tensor t(shape);
    Rng rng(derive_seed(seed, "param:" + name));
    for (size_t i = 0; i < t.size(); ++i) t.at(i) = rng.uniform(-bound, bound);
    ParamInfo info;
    info.value = std::move(t);
    info.m = Tensor(shape);
    info.v = Tensor(std::move(shape));
    params_.emplace(name, std::move(info));
}

void ParamStore::add_zeros(const std::string& name, std::vector<size_t> shape) {
    if (params_.count(name)) raise(ErrorCode::ConfigError, "duplicate parameter " + name);
    ParamInfo info;
    info.value = Tensor(shape);
    info.m = Tensor(shape);
    info.v = Tensor(std::move(shape));
    params_.emplace(name, std::move(info));
}

ParamInfo& ParamStore::info(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) raise(ErrorCode::ConfigError, "unknown parameter " + name);
    return it->second;
}

const ParamInfo& ParamStore::info(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) raise(ErrorCode::ConfigError, "unknown parameter " + name);
    return it->second;
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [name, info] : params_) out.push_back(name);
    return out;
}

size_t ParamStore::total_values() const {
    size_t n = 0;
    for (const auto& [name, info] : params_) n += info.value.size();
    return n;
}

const Value& Leaves::operator()(const std::string& name) const {
    auto it = values.find(name);
    if (it == values.end()) raise(ErrorCode::ConfigError, "no leaf for parameter " + name);
    return it->second;
}

Leaves make_leaves(const ParamStore& store) {
    Leaves leaves;
    for (const auto& [name, info] : store.raw()) {
        leaves.values.emplace(name, info.trainable ? leaf(info.value) : constant(info.value));
    }
    return leaves;
}

std::map<std::string, Tensor> collect_grads(const ParamStore& store, const Leaves& leaves) {
    std::map<std::string, Tensor> grads;
    for (const auto& [name, info] : store.raw()) {
        if (!info.trainable) continue;
        grads.emplace(name, grad_of(leaves(name)));
    }
    return grads;
}

void adam_step(ParamStore& store, const std::map<std::string, Tensor>& grads, double lr,
               double beta1, double beta2, double eps) {
    store.step_ += 1;
    const double t = static_cast<double>(store.step_);
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    for (auto& [name, info] : store.params_) {
        if (!info.trainable) continue;
        auto it = grads.find(name);
        if (it == grads.end()) continue;
        const Tensor& g = it->second;
        if (!g.same_shape(info.value)) {
            raise(ErrorCode::ShapeError, "gradient shape mismatch for " + name);
        }
        g.check_finite("gradient of " + name);
        for (size_t i = 0; i < g.size(); ++i) {
            const double gi = g.at(i);
            info.m.at(i) = beta1 * info.m.at(i) + (1.0 - beta1) * gi;
            info.v.at(i) = beta2 * info.v.at(i) + (1.0 - beta2) * gi * gi;
            const double mhat = info.m.at(i) / bc1;
            const double vhat = info.v.at(i) / bc2;
            info.value.at(i) -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

GradCheckReport grad_check(const std::function<Value(const Leaves&)>& loss_fn, ParamStore& store,
                           double epsilon, size_t min_coords, uint64_t seed) {
    // Analytic gradients once.
    Leaves leaves = make_leaves(store);
    Value loss = loss_fn(leaves);
    if (!loss->value.all_finite()) raise(ErrorCode::NumericalError, "non-finite loss");
    backward(loss);
    std::map<std::string, Tensor> analytic = collect_grads(store, leaves);

    // All checkable coordinates.
    std::vector<std::pair<std::string, size_t>> coords;
    for (const auto& [name, info] : store.raw()) {
        if (!info.trainable) continue;
        for (size_t i = 0; i < info.value.size(); ++i) coords.emplace_back(name, i);
    }
    if (coords.empty()) raise(ErrorCode::EmptyInput, "no trainable parameters");

    // Subsample without replacement when there are more coordinates than
    // requested; otherwise take all of them.
    Rng rng(derive_seed(seed, "grad_check"));
    std::vector<std::pair<std::string, size_t>> chosen;
    if (coords.size() <= min_coords) {
        chosen = coords;
    } else {
        for (size_t i = coords.size(); i > 1; --i) {
            std::swap(coords[i - 1], coords[rng.uniform_int(0, static_cast<int>(i) - 1)]);
        }
        chosen.assign(coords.begin(), coords.begin() + static_cast<long>(min_coords));
    }

    GradCheckReport report;
    report.coords_checked = chosen.size();
    for (const auto& [name, idx] : chosen) {
        Tensor& value = store.value(name);
        const double original = value.at(idx);

        value.at(idx) = original + epsilon;
        const double f_plus = loss_fn(make_leaves(store))->value.item();
        value.at(idx) = original - epsilon;
        const double f_minus = loss_fn(make_leaves(store))->value.item();
        value.at(idx) = original;

        if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
            raise(ErrorCode::NumericalError, "non-finite loss during finite differences");
        }
        const double fd = (f_plus - f_minus) / (2.0 * epsilon);
        const double an = analytic.at(name).at(idx);
        const double denom = std::max({1e-6, std::abs(fd), std::abs(an)});
        const double rel = std::abs(fd - an) / denom;
        if (rel > report.max_rel_err) {
            report.max_rel_err = rel;
            report.worst_param = name;
            report.worst_index = idx;
        }
    }
    return report;
}

}  // namespace partflow::ad
