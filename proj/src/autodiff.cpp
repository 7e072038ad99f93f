// Copyright (C) 2026 The vtcompress Authors
// SPDX-License-Identifier: Apache-2.0

#include "vtc/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vtc {

const Tensor& Var::value() const {
    return tape->value(*this);
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    if (!value.all_finite()) {
        throw NumericalError("Tape::leaf: non-finite input of shape " + shape_string(value.shape()));
    }
    Node n;
    n.value = std::move(value);
    n.needs_grad = requires_grad;
    m_nodes.push_back(std::move(n));
    return Var{this, m_nodes.size() - 1};
}

Var Tape::record(const char* name, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
    if (!value.all_finite()) {
        throw NumericalError(std::string(name) + ": produced a non-finite value");
    }
    Node n;
    n.value = std::move(value);
    n.inputs.reserve(inputs.size());
    for (const Var& v : inputs) {
        if (v.tape != this || v.id >= m_nodes.size()) {
            throw std::invalid_argument(std::string(name) + ": input belongs to a different tape");
        }
        n.inputs.push_back(v.id);
        n.needs_grad = n.needs_grad || m_nodes[v.id].needs_grad;
    }
    if (n.needs_grad) {
        n.backward = std::move(backward);
    }
    m_nodes.push_back(std::move(n));
    return Var{this, m_nodes.size() - 1};
}

const Tape::Node& Tape::node(Var v) const {
    if (v.tape != this || v.id >= m_nodes.size()) {
        throw std::invalid_argument("Tape: variable does not belong to this tape");
    }
    return m_nodes[v.id];
}

const Tensor& Tape::value(Var v) const {
    return node(v).value;
}

const Tensor& Tape::grad(Var v) const {
    const Node& n = node(v);
    if (!n.needs_grad) {
        throw std::logic_error("Tape::grad: node does not require a gradient");
    }
    if (n.grad.empty() && !n.value.empty()) {
        throw std::logic_error("Tape::grad: backward() has not been run");
    }
    return n.grad;
}

bool Tape::requires_grad(Var v) const {
    return node(v).needs_grad;
}

void Tape::backward(Var loss) {
    const Node& root = node(loss);
    if (root.value.size() != 1) {
        throw std::invalid_argument("Tape::backward: loss must be a scalar, got shape " +
                                    shape_string(root.value.shape()));
    }
    if (m_consumed) {
        throw std::logic_error("Tape::backward: tape already consumed; call clear() first");
    }
    m_consumed = true;
    for (Node& n : m_nodes) {
        if (n.needs_grad) {
            n.grad = Tensor(n.value.shape(), 0.0);
        }
    }
    if (!root.needs_grad) {
        return;
    }
    m_nodes[loss.id].grad[0] = 1.0;

    std::vector<const Tensor*> in_values;
    std::vector<Tensor*> in_grads;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = m_nodes[i];
        if (!n.needs_grad || !n.backward) {
            continue;
        }
        in_values.clear();
        in_grads.clear();
        for (std::size_t id : n.inputs) {
            Node& in = m_nodes[id];
            in_values.push_back(&in.value);
            in_grads.push_back(in.needs_grad ? &in.grad : nullptr);
        }
        n.backward(BackwardArgs{n.value, n.grad, in_values, in_grads});
    }
}

void Tape::clear() {
    m_nodes.clear();
    m_consumed = false;
}

namespace {

void require_matrix(const char* op, const Tensor& t) {
    if (t.rank() != 2) {
        throw std::invalid_argument(std::string(op) + ": expected a matrix, got shape " + shape_string(t.shape()));
    }
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                    shape_string(b.shape()));
    }
}

Tape& tape_of(std::initializer_list<Var> vars) {
    Tape* t = vars.begin()->tape;
    for (const Var& v : vars) {
        if (v.tape != t || t == nullptr) {
            throw std::invalid_argument("operands live on different tapes");
        }
    }
    return *t;
}

}  // namespace

Var matmul(Var a, Var b) {
    Tape& tape = tape_of({a, b});
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require_matrix("matmul", A);
    require_matrix("matmul", B);
    const std::size_t p = A.rows(), q = A.cols(), r = B.cols();
    if (B.rows() != q) {
        throw std::invalid_argument("matmul: inner dimensions differ " + shape_string(A.shape()) + " x " +
                                    shape_string(B.shape()));
    }
    Tensor C = Tensor::matrix(p, r);
    for (std::size_t i = 0; i < p; ++i) {
        double* crow = &C(i, 0);
        for (std::size_t k = 0; k < q; ++k) {
            const double aik = A(i, k);
            if (aik == 0.0) {
                continue;
            }
            const double* brow = B.row(k).data();
            for (std::size_t j = 0; j < r; ++j) {
                crow[j] += aik * brow[j];
            }
        }
    }
    return tape.record("matmul", std::move(C), {a, b}, [p, q, r](const BackwardArgs& g) {
        const Tensor& A = *g.in_values[0];
        const Tensor& B = *g.in_values[1];
        const Tensor& dC = g.out_grad;
        if (Tensor* dA = g.in_grads[0]) {
            for (std::size_t i = 0; i < p; ++i) {
                const double* dcrow = dC.row(i).data();
                for (std::size_t k = 0; k < q; ++k) {
                    const double* brow = B.row(k).data();
                    double acc = 0.0;
                    for (std::size_t j = 0; j < r; ++j) {
                        acc += dcrow[j] * brow[j];
                    }
                    (*dA)(i, k) += acc;
                }
            }
        }
        if (Tensor* dB = g.in_grads[1]) {
            for (std::size_t i = 0; i < p; ++i) {
                const double* dcrow = dC.row(i).data();
                for (std::size_t k = 0; k < q; ++k) {
                    const double aik = A(i, k);
                    if (aik == 0.0) {
                        continue;
                    }
                    double* dbrow = &(*dB)(k, 0);
                    for (std::size_t j = 0; j < r; ++j) {
                        dbrow[j] += aik * dcrow[j];
                    }
                }
            }
        }
    });
}

Var transpose(Var a) {
    Tape& tape = *a.tape;
    const Tensor& A = a.value();
    require_matrix("transpose", A);
    const std::size_t m = A.rows(), n = A.cols();
    Tensor T = Tensor::matrix(n, m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            T(j, i) = A(i, j);
        }
    }
    return tape.record("transpose", std::move(T), {a}, [m, n](const BackwardArgs& g) {
        Tensor& dA = *g.in_grads[0];
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                dA(i, j) += g.out_grad(j, i);
            }
        }
    });
}

namespace {

template <typename Fwd, typename BwdA, typename BwdB>
Var elementwise(const char* name, Var a, Var b, Fwd fwd, BwdA bwd_a, BwdB bwd_b) {
    Tape& tape = tape_of({a, b});
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    require_same_shape(name, A, B);
    Tensor out(A.shape());
    for (std::size_t i = 0; i < A.size(); ++i) {
        out[i] = fwd(A[i], B[i]);
    }
    return tape.record(name, std::move(out), {a, b}, [bwd_a, bwd_b](const BackwardArgs& g) {
        const Tensor& A = *g.in_values[0];
        const Tensor& B = *g.in_values[1];
        if (Tensor* dA = g.in_grads[0]) {
            for (std::size_t i = 0; i < A.size(); ++i) {
                (*dA)[i] += bwd_a(A[i], B[i], g.out_grad[i]);
            }
        }
        if (Tensor* dB = g.in_grads[1]) {
            for (std::size_t i = 0; i < A.size(); ++i) {
                (*dB)[i] += bwd_b(A[i], B[i], g.out_grad[i]);
            }
        }
    });
}

}  // namespace

Var add(Var a, Var b) {
    return elementwise(
        "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double g) { return g; },
        [](double, double, double g) { return g; });
}

Var sub(Var a, Var b) {
    return elementwise(
        "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double g) { return g; },
        [](double, double, double g) { return -g; });
}

Var mul(Var a, Var b) {
    return elementwise(
        "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double g) { return g * y; },
        [](double x, double, double g) { return g * x; });
}

Var scale(Var a, double s) {
    const Tensor& A = a.value();
    Tensor out(A.shape());
    for (std::size_t i = 0; i < A.size(); ++i) {
        out[i] = A[i] * s;
    }
    return a.tape->record("scale", std::move(out), {a}, [s](const BackwardArgs& g) {
        Tensor& dA = *g.in_grads[0];
        for (std::size_t i = 0; i < dA.size(); ++i) {
            dA[i] += s * g.out_grad[i];
        }
    });
}

Var add_scalar(Var a, double s) {
    const Tensor& A = a.value();
    Tensor out(A.shape());
    for (std::size_t i = 0; i < A.size(); ++i) {
        out[i] = A[i] + s;
    }
    return a.tape->record("add_scalar", std::move(out), {a}, [](const BackwardArgs& g) {
        Tensor& dA = *g.in_grads[0];
        for (std::size_t i = 0; i < dA.size(); ++i) {
            dA[i] += g.out_grad[i];
        }
    });
}

Var mul_rowvec(Var a, Var v) {
    Tape& tape = tape_of({a, v});
    const Tensor& A = a.value();
    const Tensor& V = v.value();
    require_matrix("mul_rowvec", A);
    require_matrix("mul_rowvec", V);
    if (V.rows() != 1 || V.cols() != A.cols()) {
        throw std::invalid_argument("mul_rowvec: expected a 1x" + std::to_string(A.cols()) + " vector, got " +
                                    shape_string(V.shape()));
    }
    const std::size_t m = A.rows(), k = A.cols();
    Tensor out = Tensor::matrix(m, k);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            out(i, j) = A(i, j) * V(0, j);
        }
    }
    return tape.record("mul_rowvec", std::move(out), {a, v}, [m, k](const BackwardArgs& g) {
        const Tensor& A = *g.in_values[0];
        const Tensor& V = *g.in_values[1];
        if (Tensor* dA = g.in_grads[0]) {
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < k; ++j) {
                    (*dA)(i, j) += g.out_grad(i, j) * V(0, j);
                }
            }
        }
        if (Tensor* dV = g.in_grads[1]) {
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < k; ++j) {
                    (*dV)(0, j) += g.out_grad(i, j) * A(i, j);
                }
            }
        }
    });
}

Var sum(Var a) {
    const Tensor& A = a.value();
    double total = 0.0;
    for (double x : A.data()) {
        total += x;
    }
    return a.tape->record("sum", Tensor::scalar(total), {a}, [](const BackwardArgs& g) {
        Tensor& dA = *g.in_grads[0];
        const double s = g.out_grad[0];
        for (std::size_t i = 0; i < dA.size(); ++i) {
            dA[i] += s;
        }
    });
}

Var mean(Var a) {
    const std::size_t n = a.value().size();
    if (n == 0) {
        throw std::invalid_argument("mean: empty tensor");
    }
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var row_sum(Var a) {
    const Tensor& A = a.value();
    require_matrix("row_sum", A);
    const std::size_t m = A.rows(), n = A.cols();
    Tensor out = Tensor::matrix(m, 1);
    for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            acc += A(i, j);
        }
        out(i, 0) = acc;
    }
    return a.tape->record("row_sum", std::move(out), {a}, [m, n](const BackwardArgs& g) {
        Tensor& dA = *g.in_grads[0];
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                dA(i, j) += g.out_grad(i, 0);
            }
        }
    });
}

Var col_sum(Var a) {
    const Tensor& A = a.value();
    require_matrix("col_sum", A);
    const std::size_t m = A.rows(), n = A.cols();
    Tensor out = Tensor::matrix(1, n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out(0, j) += A(i, j);
        }
    }
    return a.tape->record("col_sum", std::move(out), {a}, [m, n](const BackwardArgs& g) {
        Tensor& dA = *g.in_grads[0];
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                dA(i, j) += g.out_grad(0, j);
            }
        }
    });
}

Var max_over(Var a, Axis axis) {
    const Tensor& A = a.value();
    require_matrix("max_over", A);
    const std::size_t m = A.rows(), n = A.cols();
    if (m == 0 || n == 0) {
        throw std::invalid_argument("max_over: empty matrix");
    }
    const bool over_rows = axis == Axis::Rows;
    const std::size_t lanes = over_rows ? n : m;
    const std::size_t extent = over_rows ? m : n;
    Tensor out = over_rows ? Tensor::matrix(1, n) : Tensor::matrix(m, 1);
    std::vector<std::size_t> argmax(lanes, 0);
    for (std::size_t lane = 0; lane < lanes; ++lane) {
        double best = over_rows ? A(0, lane) : A(lane, 0);
        for (std::size_t k = 1; k < extent; ++k) {
            const double v = over_rows ? A(k, lane) : A(lane, k);
            if (v > best) {
                best = v;
                argmax[lane] = k;
            }
        }
        out[lane] = best;
    }
    return a.tape->record("max_over", std::move(out), {a},
                          [over_rows, argmax = std::move(argmax)](const BackwardArgs& g) {
                              Tensor& dA = *g.in_grads[0];
                              for (std::size_t lane = 0; lane < argmax.size(); ++lane) {
                                  if (over_rows) {
                                      dA(argmax[lane], lane) += g.out_grad[lane];
                                  } else {
                                      dA(lane, argmax[lane]) += g.out_grad[lane];
                                  }
                              }
                          });
}

Var relu(Var a) {
    const Tensor& A = a.value();
    Tensor out(A.shape());
    for (std::size_t i = 0; i < A.size(); ++i) {
        out[i] = A[i] > 0.0 ? A[i] : 0.0;
    }
    return a.tape->record("relu", std::move(out), {a}, [](const BackwardArgs& g) {
        const Tensor& A = *g.in_values[0];
        Tensor& dA = *g.in_grads[0];
        for (std::size_t i = 0; i < A.size(); ++i) {
            if (A[i] > 0.0) {
                dA[i] += g.out_grad[i];
            }
        }
    });
}

Var log(Var a, double floor) {
    const Tensor& A = a.value();
    Tensor out(A.shape());
    for (std::size_t i = 0; i < A.size(); ++i) {
        const double x = A[i] + floor;
        if (!(x > 0.0)) {
            throw NumericalError("log: argument " + std::to_string(x) + " is not positive");
        }
        out[i] = std::log(x);
    }
    return a.tape->record("log", std::move(out), {a}, [floor](const BackwardArgs& g) {
        const Tensor& A = *g.in_values[0];
        Tensor& dA = *g.in_grads[0];
        for (std::size_t i = 0; i < A.size(); ++i) {
            dA[i] += g.out_grad[i] / (A[i] + floor);
        }
    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) {
        throw std::invalid_argument("concat_rows: no inputs");
    }
    Tape& tape = *parts.front().tape;
    const std::size_t cols = parts.front().value().cols();
    std::size_t rows = 0;
    for (const Var& p : parts) {
        require_matrix("concat_rows", p.value());
        if (p.value().cols() != cols) {
            throw std::invalid_argument("concat_rows: column count mismatch");
        }
        rows += p.value().rows();
    }
    Tensor out = Tensor::matrix(rows, cols);
    std::size_t offset = 0;
    for (const Var& p : parts) {
        const auto src = p.value().data();
        std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset));
        offset += src.size();
    }
    return tape.record("concat_rows", std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                       [](const BackwardArgs& g) {
                           std::size_t offset = 0;
                           for (std::size_t k = 0; k < g.in_values.size(); ++k) {
                               const std::size_t count = g.in_values[k]->size();
                               if (Tensor* d = g.in_grads[k]) {
                                   for (std::size_t i = 0; i < count; ++i) {
                                       (*d)[i] += g.out_grad[offset + i];
                                   }
                               }
                               offset += count;
                           }
                       });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
    const Tensor& A = a.value();
    require_matrix("slice_cols", A);
    if (begin > end || end > A.cols()) {
        throw std::invalid_argument("slice_cols: range out of bounds");
    }
    const std::size_t m = A.rows(), w = end - begin;
    Tensor out = Tensor::matrix(m, w);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            out(i, j) = A(i, begin + j);
        }
    }
    return a.tape->record("slice_cols", std::move(out), {a}, [m, w, begin](const BackwardArgs& g) {
        Tensor& dA = *g.in_grads[0];
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                dA(i, begin + j) += g.out_grad(i, j);
            }
        }
    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) {
        throw std::invalid_argument("concat_cols: no inputs");
    }
    Tape& tape = *parts.front().tape;
    const std::size_t rows = parts.front().value().rows();
    std::size_t cols = 0;
    for (const Var& p : parts) {
        require_matrix("concat_cols", p.value());
        if (p.value().rows() != rows) {
            throw std::invalid_argument("concat_cols: row count mismatch");
        }
        cols += p.value().cols();
    }
    Tensor out = Tensor::matrix(rows, cols);
    std::size_t offset = 0;
    for (const Var& p : parts) {
        const Tensor& P = p.value();
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < P.cols(); ++j) {
                out(i, offset + j) = P(i, j);
            }
        }
        offset += P.cols();
    }
    return tape.record("concat_cols", std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                       [rows](const BackwardArgs& g) {
                           std::size_t offset = 0;
                           for (std::size_t k = 0; k < g.in_values.size(); ++k) {
                               const std::size_t w = g.in_values[k]->cols();
                               if (Tensor* d = g.in_grads[k]) {
                                   for (std::size_t i = 0; i < rows; ++i) {
                                       for (std::size_t j = 0; j < w; ++j) {
                                           (*d)(i, j) += g.out_grad(i, offset + j);
                                       }
                                   }
                               }
                               offset += w;
                           }
                       });
}

Var gather_rows(Var table, std::span<const std::size_t> indices) {
    const Tensor& T = table.value();
    require_matrix("gather_rows", T);
    const std::size_t cols = T.cols();
    Tensor out = Tensor::matrix(indices.size(), cols);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= T.rows()) {
            throw std::invalid_argument("gather_rows: index " + std::to_string(indices[i]) + " out of range " +
                                        std::to_string(T.rows()));
        }
        const auto src = T.row(indices[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    return table.tape->record("gather_rows", std::move(out), {table},
                              [cols, idx = std::move(idx)](const BackwardArgs& g) {
                                  Tensor& dT = *g.in_grads[0];
                                  for (std::size_t i = 0; i < idx.size(); ++i) {
                                      for (std::size_t j = 0; j < cols; ++j) {
                                          dT(idx[i], j) += g.out_grad(i, j);
                                      }
                                  }
                              });
}

Var row_softmax(Var x) {
    const Tensor& X = x.value();
    require_matrix("row_softmax", X);
    const std::size_t m = X.rows(), n = X.cols();
    Tensor out = Tensor::matrix(m, n);
    for (std::size_t i = 0; i < m; ++i) {
        const auto in = X.row(i);
        auto o = out.row(i);
        const double peak = *std::max_element(in.begin(), in.end());
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            o[j] = std::exp(in[j] - peak);
            z += o[j];
        }
        for (std::size_t j = 0; j < n; ++j) {
            o[j] /= z;
        }
    }
    return x.tape->record("row_softmax", std::move(out), {x}, [m, n](const BackwardArgs& g) {
        Tensor& dX = *g.in_grads[0];
        const Tensor& Y = g.out_value;
        for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                dot += g.out_grad(i, j) * Y(i, j);
            }
            for (std::size_t j = 0; j < n; ++j) {
                dX(i, j) += Y(i, j) * (g.out_grad(i, j) - dot);
            }
        }
    });
}

std::size_t effective_kernel(std::size_t n, std::size_t kernel) {
    return std::min(kernel, n);
}

std::vector<std::size_t> pool_window_starts(std::size_t n, std::size_t m, std::size_t kernel) {
    if (m == 0) {
        throw std::invalid_argument("pool windows: m must be positive");
    }
    if (m > n) {
        throw std::invalid_argument("pool windows: m=" + std::to_string(m) + " exceeds n=" + std::to_string(n));
    }
    if (kernel == 0) {
        throw std::invalid_argument("pool windows: kernel must be positive");
    }
    const std::size_t k = effective_kernel(n, kernel);
    std::vector<std::size_t> starts(m);
    for (std::size_t i = 0; i < m; ++i) {
        // round(i * n / m), halves up, without floating-point ties going astray.
        const std::size_t anchor = (2 * i * n + m) / (2 * m);
        starts[i] = std::min(anchor, n - k);
    }
    return starts;
}

Var fractional_avg_pool(Var x, std::size_t m, std::size_t kernel) {
    const Tensor& X = x.value();
    require_matrix("fractional_avg_pool", X);
    const std::size_t n = X.rows(), d = X.cols();
    const auto starts = pool_window_starts(n, m, kernel);
    const std::size_t k = effective_kernel(n, kernel);
    const double inv_k = 1.0 / static_cast<double>(k);
    Tensor out = Tensor::matrix(m, d);
    for (std::size_t i = 0; i < m; ++i) {
        auto o = out.row(i);
        for (std::size_t r = starts[i]; r < starts[i] + k; ++r) {
            const auto in = X.row(r);
            for (std::size_t j = 0; j < d; ++j) {
                o[j] += in[j];
            }
        }
        for (std::size_t j = 0; j < d; ++j) {
            o[j] *= inv_k;
        }
    }
    return x.tape->record("fractional_avg_pool", std::move(out), {x},
                          [starts, k, d, inv_k](const BackwardArgs& g) {
                              Tensor& dX = *g.in_grads[0];
                              for (std::size_t i = 0; i < starts.size(); ++i) {
                                  for (std::size_t r = starts[i]; r < starts[i] + k; ++r) {
                                      for (std::size_t j = 0; j < d; ++j) {
                                          dX(r, j) += g.out_grad(i, j) * inv_k;
                                      }
                                  }
                              }
                          });
}

}  // namespace vtc
