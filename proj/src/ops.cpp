#include "dfip/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dfip/error.hpp"

namespace dfip {
namespace {

using detail::Node;

// C[M,N] = alpha * op(A) * op(B) + beta * C, row-major.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha, const float* a, const float* b,
          float beta, float* c) {
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans, m, n, k,
                alpha, a, trans_a ? m : k, b, trans_b ? k : n, beta, c, n);
}

template <class MakeBackward>
Var finish(Tensor value, std::initializer_list<const Var*> inputs, MakeBackward&& make_backward) {
    Tape* tape = nullptr;
    bool needs_grad = false;
    for (const Var* v : inputs) {
        if (!tape && v->tape()) tape = v->tape();
        needs_grad = needs_grad || v->requires_grad();
    }
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (!tape) return Var(std::move(node), nullptr);
    if (needs_grad) {
        node->requires_grad = true;
        node->backward = make_backward(node.get());
    }
    return tape->record(std::move(node));
}

void require_rank(const Var& v, std::size_t rank, const char* op) {
    if (v.value().rank() != rank)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(v.shape()));
}

struct ConvGeometry {
    int n, c, h, w, k, kh, kw, stride, pad, ho, wo;
    int patch() const { return c * kh * kw; }
    int out_pixels() const { return ho * wo; }
    bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

// Columns for image `x` land in cols[row * ld + p], row = (ci, ki, kj), p = output pixel.
void im2col(const ConvGeometry& g, const float* x, float* cols, std::size_t ld) {
    for (int ci = 0; ci < g.c; ++ci)
        for (int ki = 0; ki < g.kh; ++ki)
            for (int kj = 0; kj < g.kw; ++kj) {
                float* row = cols + static_cast<std::size_t>((ci * g.kh + ki) * g.kw + kj) * ld;
                // valid ox satisfy 0 <= ox * stride - pad + kj < w
                int lo = 0;
                while (lo < g.wo && lo * g.stride - g.pad + kj < 0) ++lo;
                int hi = g.wo;
                while (hi > lo && (hi - 1) * g.stride - g.pad + kj >= g.w) --hi;
                for (int oy = 0; oy < g.ho; ++oy) {
                    const int iy = oy * g.stride - g.pad + ki;
                    float* dst = row + oy * g.wo;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(dst, dst + g.wo, 0.0f);
                        continue;
                    }
                    const float* src = x + (ci * g.h + iy) * g.w - g.pad + kj;
                    std::fill(dst, dst + lo, 0.0f);
                    if (g.stride == 1) {
                        std::copy(src + lo, src + hi, dst + lo);
                    } else {
                        for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox * g.stride];
                    }
                    std::fill(dst + hi, dst + g.wo, 0.0f);
                }
            }
}

void col2im(const ConvGeometry& g, const float* cols, std::size_t ld, float* dx) {
    for (int ci = 0; ci < g.c; ++ci)
        for (int ki = 0; ki < g.kh; ++ki)
            for (int kj = 0; kj < g.kw; ++kj) {
                const float* row = cols + static_cast<std::size_t>((ci * g.kh + ki) * g.kw + kj) * ld;
                int lo = 0;
                while (lo < g.wo && lo * g.stride - g.pad + kj < 0) ++lo;
                int hi = g.wo;
                while (hi > lo && (hi - 1) * g.stride - g.pad + kj >= g.w) --hi;
                for (int oy = 0; oy < g.ho; ++oy) {
                    const int iy = oy * g.stride - g.pad + ki;
                    if (iy < 0 || iy >= g.h) continue;
                    float* dst = dx + (ci * g.h + iy) * g.w - g.pad + kj;
                    const float* src = row + oy * g.wo;
                    for (int ox = lo; ox < hi; ++ox) dst[ox * g.stride] += src[ox];
                }
            }
}

void require_same(const Var& a, const Var& b, const char* op) { require_same_shape(a.value(), b.value(), op); }

} // namespace

Var conv2d(const Var& input, const Var& weight, const Var& bias, int stride, int padding) {
    require_rank(input, 4, "conv2d input");
    require_rank(weight, 4, "conv2d weight");
    const auto& xs = input.shape();
    const auto& ws = weight.shape();
    if (xs[1] != ws[1])
        throw ShapeError("conv2d: input has " + std::to_string(xs[1]) + " channels, weight expects " +
                         std::to_string(ws[1]));
    if (bias.value().numel() != static_cast<std::size_t>(ws[0]))
        throw ShapeError("conv2d: bias length does not match output channels");
    if (stride < 1 || padding < 0) throw ConfigError("conv2d: stride must be >= 1 and padding >= 0");

    ConvGeometry g{};
    g.n = static_cast<int>(xs[0]);
    g.c = static_cast<int>(xs[1]);
    g.h = static_cast<int>(xs[2]);
    g.w = static_cast<int>(xs[3]);
    g.k = static_cast<int>(ws[0]);
    g.kh = static_cast<int>(ws[2]);
    g.kw = static_cast<int>(ws[3]);
    g.stride = stride;
    g.pad = padding;
    g.ho = (g.h + 2 * padding - g.kh) / stride + 1;
    g.wo = (g.w + 2 * padding - g.kw) / stride + 1;
    if (g.ho <= 0 || g.wo <= 0) throw ShapeError("conv2d: kernel larger than padded input");

    // One GEMM for the whole batch: cols is [patch, N * P], the product [K, N * P].
    const std::size_t P = static_cast<std::size_t>(g.out_pixels());
    const std::size_t NP = P * static_cast<std::size_t>(g.n);
    const std::size_t image = static_cast<std::size_t>(g.c) * g.h * g.w;
    auto cols = std::make_shared<std::vector<float>>(static_cast<std::size_t>(g.patch()) * NP);
    const float* x = input.value().data();
    for (int n = 0; n < g.n; ++n) {
        const float* xn = x + n * image;
        float* dst = cols->data() + n * P;
        if (g.pointwise()) {
            for (int ci = 0; ci < g.c; ++ci) std::copy_n(xn + ci * P, P, dst + ci * NP);
        } else {
            im2col(g, xn, dst, NP);
        }
    }
    std::vector<float> prod(static_cast<std::size_t>(g.k) * NP);
    gemm(false, false, g.k, static_cast<int>(NP), g.patch(), 1.0f, weight.value().data(), cols->data(), 0.0f,
         prod.data());
    Tensor out(Shape{g.n, g.k, g.ho, g.wo});
    const float* b = bias.value().data();
    for (int n = 0; n < g.n; ++n)
        for (int k = 0; k < g.k; ++k) {
            const float* src = prod.data() + k * NP + n * P;
            float* dst = out.data() + (static_cast<std::size_t>(n) * g.k + k) * P;
            for (std::size_t p = 0; p < P; ++p) dst[p] = src[p] + b[k];
        }
    if (!weight.requires_grad()) cols.reset();

    return finish(std::move(out), {&input, &weight, &bias}, [=](Node* self) {
        return [=] {
            const float* dy = self->grad.data();
            std::vector<float> dyt(static_cast<std::size_t>(g.k) * NP);
            for (int n = 0; n < g.n; ++n)
                for (int k = 0; k < g.k; ++k)
                    std::copy_n(dy + (static_cast<std::size_t>(n) * g.k + k) * P, P, dyt.data() + k * NP + n * P);
            if (bias.requires_grad()) {
                float* db = bias.node()->grad_buffer().data();
                for (int k = 0; k < g.k; ++k) {
                    double s = 0.0;
                    const float* row = dyt.data() + k * NP;
                    for (std::size_t p = 0; p < NP; ++p) s += row[p];
                    db[k] += static_cast<float>(s);
                }
            }
            if (weight.requires_grad())
                gemm(false, true, g.k, g.patch(), static_cast<int>(NP), 1.0f, dyt.data(), cols->data(), 1.0f,
                     weight.node()->grad_buffer().data());
            if (input.requires_grad()) {
                std::vector<float> dcol(static_cast<std::size_t>(g.patch()) * NP);
                gemm(true, false, g.patch(), static_cast<int>(NP), g.k, 1.0f, weight.value().data(), dyt.data(),
                     0.0f, dcol.data());
                float* dx = input.node()->grad_buffer().data();
                for (int n = 0; n < g.n; ++n) {
                    float* dxn = dx + n * image;
                    const float* src = dcol.data() + n * P;
                    if (g.pointwise()) {
                        for (int ci = 0; ci < g.c; ++ci) {
                            float* d = dxn + ci * P;
                            const float* s2 = src + ci * NP;
                            for (std::size_t p = 0; p < P; ++p) d[p] += s2[p];
                        }
                    } else {
                        col2im(g, src, NP, dxn);
                    }
                }
            }
        };
    });
}

int default_groups(std::int64_t channels) {
    return channels < 8 ? static_cast<int>(channels) : static_cast<int>(std::gcd(channels, std::int64_t{8}));
}

Var group_norm(const Var& input, int groups, const Var& gain, const Var& offset, float eps) {
    require_rank(input, 4, "group_norm");
    const auto& s = input.shape();
    const std::int64_t n_batch = s[0], c = s[1], hw = s[2] * s[3];
    if (groups <= 0 || c % groups != 0)
        throw ConfigError("group_norm: " + std::to_string(c) + " channels not divisible into " +
                          std::to_string(groups) + " groups");
    if (!(eps > 0.0f)) throw ConfigError("group_norm: eps must be positive");
    if (gain.value().numel() != static_cast<std::size_t>(c) || offset.value().numel() != static_cast<std::size_t>(c))
        throw ShapeError("group_norm: gain/offset length must equal channel count");

    const std::int64_t cpg = c / groups;
    const std::int64_t group_size = cpg * hw;
    auto xhat = std::make_shared<Tensor>(s);
    auto rstd = std::make_shared<std::vector<float>>(static_cast<std::size_t>(n_batch * groups));
    Tensor out(s);
    const float* x = input.value().data();
    const float* gm = gain.value().data();
    const float* of = offset.value().data();
    for (std::int64_t n = 0; n < n_batch; ++n)
        for (std::int64_t gi = 0; gi < groups; ++gi) {
            const std::int64_t base = (n * c + gi * cpg) * hw;
            double m = 0.0;
            for (std::int64_t i = 0; i < group_size; ++i) m += x[base + i];
            m /= static_cast<double>(group_size);
            double v = 0.0;
            for (std::int64_t i = 0; i < group_size; ++i) {
                const double d = x[base + i] - m;
                v += d * d;
            }
            v /= static_cast<double>(group_size);
            const double r = 1.0 / std::sqrt(v + eps);
            (*rstd)[static_cast<std::size_t>(n * groups + gi)] = static_cast<float>(r);
            for (std::int64_t ch = 0; ch < cpg; ++ch) {
                const std::int64_t cc = gi * cpg + ch;
                for (std::int64_t p = 0; p < hw; ++p) {
                    const std::int64_t idx = base + ch * hw + p;
                    const float xh = static_cast<float>((x[idx] - m) * r);
                    (*xhat)[static_cast<std::size_t>(idx)] = xh;
                    out[static_cast<std::size_t>(idx)] = xh * gm[cc] + of[cc];
                }
            }
        }

    return finish(std::move(out), {&input, &gain, &offset}, [=](Node* self) {
        return [=] {
            const float* dy = self->grad.data();
            const float* gv = gain.value().data();
            float* dg = gain.requires_grad() ? gain.node()->grad_buffer().data() : nullptr;
            float* dofs = offset.requires_grad() ? offset.node()->grad_buffer().data() : nullptr;
            float* dx = input.requires_grad() ? input.node()->grad_buffer().data() : nullptr;
            for (std::int64_t n = 0; n < n_batch; ++n)
                for (std::int64_t gi = 0; gi < groups; ++gi) {
                    const std::int64_t base = (n * c + gi * cpg) * hw;
                    double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                    for (std::int64_t ch = 0; ch < cpg; ++ch) {
                        const std::int64_t cc = gi * cpg + ch;
                        double sg = 0.0, so = 0.0;
                        for (std::int64_t p = 0; p < hw; ++p) {
                            const std::int64_t idx = base + ch * hw + p;
                            const double xh = (*xhat)[static_cast<std::size_t>(idx)];
                            sg += dy[idx] * xh;
                            so += dy[idx];
                            const double dxh = dy[idx] * gv[cc];
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xh;
                        }
                        if (dg) dg[cc] += static_cast<float>(sg);
                        if (dofs) dofs[cc] += static_cast<float>(so);
                    }
                    if (!dx) continue;
                    const double r = (*rstd)[static_cast<std::size_t>(n * groups + gi)];
                    const double mean_dxh = sum_dxh / static_cast<double>(group_size);
                    const double mean_dxh_xh = sum_dxh_xh / static_cast<double>(group_size);
                    for (std::int64_t ch = 0; ch < cpg; ++ch) {
                        const std::int64_t cc = gi * cpg + ch;
                        for (std::int64_t p = 0; p < hw; ++p) {
                            const std::int64_t idx = base + ch * hw + p;
                            const double xh = (*xhat)[static_cast<std::size_t>(idx)];
                            dx[idx] += static_cast<float>(r * (dy[idx] * gv[cc] - mean_dxh - xh * mean_dxh_xh));
                        }
                    }
                }
        };
    });
}

Var silu(const Var& input) {
    Tensor out(input.shape());
    const float* x = input.value().data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = x[i] / (1.0f + std::exp(-x[i]));
    return finish(std::move(out), {&input}, [=](Node* self) {
        return [=] {
            const float* xv = input.value().data();
            const float* dy = self->grad.data();
            float* dx = input.node()->grad_buffer().data();
            for (std::size_t i = 0; i < self->grad.numel(); ++i) {
                const float sg = 1.0f / (1.0f + std::exp(-xv[i]));
                dx[i] += dy[i] * sg * (1.0f + xv[i] * (1.0f - sg));
            }
        };
    });
}

Var linear(const Var& input, const Var& weight, const Var& bias) {
    require_rank(input, 2, "linear input");
    require_rank(weight, 2, "linear weight");
    const int n = static_cast<int>(input.shape()[0]);
    const int in = static_cast<int>(input.shape()[1]);
    const int out_f = static_cast<int>(weight.shape()[0]);
    if (weight.shape()[1] != in)
        throw ShapeError("linear: input width " + std::to_string(in) + " vs weight " + shape_str(weight.shape()));
    if (bias.value().numel() != static_cast<std::size_t>(out_f)) throw ShapeError("linear: bias length mismatch");
    Tensor out(Shape{n, out_f});
    for (int i = 0; i < n; ++i) std::copy_n(bias.value().data(), out_f, out.data() + i * out_f);
    gemm(false, true, n, out_f, in, 1.0f, input.value().data(), weight.value().data(), 1.0f, out.data());
    return finish(std::move(out), {&input, &weight, &bias}, [=](Node* self) {
        return [=] {
            const float* dy = self->grad.data();
            if (input.requires_grad())
                gemm(false, false, n, in, out_f, 1.0f, dy, weight.value().data(), 1.0f,
                     input.node()->grad_buffer().data());
            if (weight.requires_grad())
                gemm(true, false, out_f, in, n, 1.0f, dy, input.value().data(), 1.0f,
                     weight.node()->grad_buffer().data());
            if (bias.requires_grad()) {
                float* db = bias.node()->grad_buffer().data();
                for (int j = 0; j < out_f; ++j) {
                    double s = 0.0;
                    for (int i = 0; i < n; ++i) s += dy[i * out_f + j];
                    db[j] += static_cast<float>(s);
                }
            }
        };
    });
}

Var attention(const Var& qkv, int heads) {
    require_rank(qkv, 4, "attention");
    const auto& s = qkv.shape();
    if (s[1] % 3 != 0) throw ShapeError("attention: qkv channel count must be a multiple of 3");
    const int n_batch = static_cast<int>(s[0]);
    const int c = static_cast<int>(s[1] / 3);
    if (heads <= 0 || c % heads != 0)
        throw ConfigError("attention: " + std::to_string(heads) + " heads do not divide " + std::to_string(c) +
                          " channels");
    const int d = c / heads;
    const int len = static_cast<int>(s[2] * s[3]);
    const float sc = 1.0f / std::sqrt(static_cast<float>(d));
    const std::size_t pl = static_cast<std::size_t>(len) * len;

    auto probs = std::make_shared<std::vector<float>>(static_cast<std::size_t>(n_batch) * heads * pl);
    Tensor out(Shape{n_batch, c, s[2], s[3]});
    const float* src = qkv.value().data();
    for (int n = 0; n < n_batch; ++n)
        for (int h = 0; h < heads; ++h) {
            const float* q = src + (static_cast<std::size_t>(n) * 3 * c + h * d) * len;
            const float* k = q + static_cast<std::size_t>(c) * len;
            const float* v = k + static_cast<std::size_t>(c) * len;
            float* p = probs->data() + (static_cast<std::size_t>(n) * heads + h) * pl;
            gemm(true, false, len, len, d, sc, q, k, 0.0f, p);
            for (int i = 0; i < len; ++i) {
                float* row = p + static_cast<std::size_t>(i) * len;
                const float mx = *std::max_element(row, row + len);
                double z = 0.0;
                for (int j = 0; j < len; ++j) {
                    row[j] = std::exp(row[j] - mx);
                    z += row[j];
                }
                const float inv = static_cast<float>(1.0 / z);
                for (int j = 0; j < len; ++j) row[j] *= inv;
            }
            float* o = out.data() + (static_cast<std::size_t>(n) * c + h * d) * len;
            gemm(false, true, d, len, len, 1.0f, v, p, 0.0f, o);
        }

    return finish(std::move(out), {&qkv}, [=](Node* self) {
        return [=] {
            const float* base = qkv.value().data();
            float* dsrc = qkv.node()->grad_buffer().data();
            std::vector<float> dp(pl);
            for (int n = 0; n < n_batch; ++n)
                for (int h = 0; h < heads; ++h) {
                    const std::size_t qoff = (static_cast<std::size_t>(n) * 3 * c + h * d) * len;
                    const std::size_t koff = qoff + static_cast<std::size_t>(c) * len;
                    const std::size_t voff = koff + static_cast<std::size_t>(c) * len;
                    const float* p = probs->data() + (static_cast<std::size_t>(n) * heads + h) * pl;
                    const float* dout = self->grad.data() + (static_cast<std::size_t>(n) * c + h * d) * len;
                    // dV = dO P
                    gemm(false, false, d, len, len, 1.0f, dout, p, 1.0f, dsrc + voff);
                    // dP = dO^T V
                    gemm(true, false, len, len, d, 1.0f, dout, base + voff, 0.0f, dp.data());
                    for (int i = 0; i < len; ++i) {
                        const float* prow = p + static_cast<std::size_t>(i) * len;
                        float* drow = dp.data() + static_cast<std::size_t>(i) * len;
                        double dot = 0.0;
                        for (int j = 0; j < len; ++j) dot += static_cast<double>(drow[j]) * prow[j];
                        for (int j = 0; j < len; ++j) drow[j] = sc * prow[j] * (drow[j] - static_cast<float>(dot));
                    }
                    // dQ = K dS^T, dK = Q dS
                    gemm(false, true, d, len, len, 1.0f, base + koff, dp.data(), 1.0f, dsrc + qoff);
                    gemm(false, false, d, len, len, 1.0f, base + qoff, dp.data(), 1.0f, dsrc + koff);
                }
        };
    });
}

Var add(const Var& a, const Var& b) {
    require_same(a, b, "add");
    Tensor out = a.value();
    const float* bv = b.value().data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
    return finish(std::move(out), {&a, &b}, [=](Node* self) {
        return [=] {
            a.node()->accumulate(self->grad);
            b.node()->accumulate(self->grad);
        };
    });
}

Var sub(const Var& a, const Var& b) {
    require_same(a, b, "sub");
    Tensor out = a.value();
    const float* bv = b.value().data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
    return finish(std::move(out), {&a, &b}, [=](Node* self) {
        return [=] {
            a.node()->accumulate(self->grad);
            if (b.requires_grad()) {
                float* db = b.node()->grad_buffer().data();
                for (std::size_t i = 0; i < self->grad.numel(); ++i) db[i] -= self->grad[i];
            }
        };
    });
}

Var mul(const Var& a, const Var& b) {
    require_same(a, b, "mul");
    Tensor out = a.value();
    const float* bv = b.value().data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
    return finish(std::move(out), {&a, &b}, [=](Node* self) {
        return [=] {
            const float* dy = self->grad.data();
            if (a.requires_grad()) {
                float* da = a.node()->grad_buffer().data();
                const float* bv2 = b.value().data();
                for (std::size_t i = 0; i < self->grad.numel(); ++i) da[i] += dy[i] * bv2[i];
            }
            if (b.requires_grad()) {
                float* db = b.node()->grad_buffer().data();
                const float* av = a.value().data();
                for (std::size_t i = 0; i < self->grad.numel(); ++i) db[i] += dy[i] * av[i];
            }
        };
    });
}

Var scale(const Var& a, float s) {
    Tensor out = a.value();
    for (auto& v : out.values()) v *= s;
    return finish(std::move(out), {&a}, [=](Node* self) {
        return [=] {
            float* da = a.node()->grad_buffer().data();
            for (std::size_t i = 0; i < self->grad.numel(); ++i) da[i] += s * self->grad[i];
        };
    });
}

Var add_channel_bias(const Var& x, const Var& v) {
    require_rank(x, 4, "add_channel_bias");
    const auto& s = x.shape();
    if (v.shape() != Shape{s[0], s[1]})
        throw ShapeError("add_channel_bias: bias " + shape_str(v.shape()) + " does not fit " + shape_str(s));
    const std::int64_t nc = s[0] * s[1], hw = s[2] * s[3];
    Tensor out = x.value();
    for (std::int64_t i = 0; i < nc; ++i) {
        const float b = v.value()[static_cast<std::size_t>(i)];
        float* row = out.data() + i * hw;
        for (std::int64_t p = 0; p < hw; ++p) row[p] += b;
    }
    return finish(std::move(out), {&x, &v}, [=](Node* self) {
        return [=] {
            x.node()->accumulate(self->grad);
            if (v.requires_grad()) {
                float* dv = v.node()->grad_buffer().data();
                for (std::int64_t i = 0; i < nc; ++i) {
                    double acc = 0.0;
                    const float* row = self->grad.data() + i * hw;
                    for (std::int64_t p = 0; p < hw; ++p) acc += row[p];
                    dv[i] += static_cast<float>(acc);
                }
            }
        };
    });
}

Var concat_channels(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_channels: nothing to concatenate");
    const Shape& s0 = parts[0].shape();
    if (s0.size() != 4) throw ShapeError("concat_channels: expected rank-4 inputs");
    std::int64_t channels = 0;
    for (const auto& p : parts) {
        const auto& s = p.shape();
        if (s.size() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3])
            throw ShapeError("concat_channels: " + shape_str(s) + " incompatible with " + shape_str(s0));
        channels += s[1];
    }
    const std::int64_t n_batch = s0[0], hw = s0[2] * s0[3];
    Tensor out(Shape{n_batch, channels, s0[2], s0[3]});
    std::vector<std::int64_t> offsets;
    std::int64_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const std::int64_t pc = p.shape()[1];
        for (std::int64_t n = 0; n < n_batch; ++n)
            std::copy_n(p.value().data() + n * pc * hw, pc * hw, out.data() + (n * channels + off) * hw);
        off += pc;
    }

    Tape* tape = nullptr;
    bool needs_grad = false;
    for (const auto& p : parts) {
        if (!tape && p.tape()) tape = p.tape();
        needs_grad = needs_grad || p.requires_grad();
    }
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    if (!tape) return Var(std::move(node), nullptr);
    if (needs_grad) {
        node->requires_grad = true;
        std::vector<Var> kept(parts.begin(), parts.end());
        Node* self = node.get();
        node->backward = [=] {
            for (std::size_t i = 0; i < kept.size(); ++i) {
                if (!kept[i].requires_grad()) continue;
                const std::int64_t pc = kept[i].shape()[1];
                float* dp = kept[i].node()->grad_buffer().data();
                for (std::int64_t n = 0; n < n_batch; ++n) {
                    const float* g = self->grad.data() + (n * channels + offsets[i]) * hw;
                    float* dst = dp + n * pc * hw;
                    for (std::int64_t j = 0; j < pc * hw; ++j) dst[j] += g[j];
                }
            }
        };
    }
    return tape->record(std::move(node));
}

Var upsample_nearest2x(const Var& input) {
    require_rank(input, 4, "upsample_nearest2x");
    const auto& s = input.shape();
    const std::int64_t nc = s[0] * s[1], h = s[2], w = s[3];
    Tensor out(Shape{s[0], s[1], 2 * h, 2 * w});
    const float* x = input.value().data();
    for (std::int64_t i = 0; i < nc; ++i)
        for (std::int64_t y = 0; y < 2 * h; ++y) {
            const float* src = x + (i * h + y / 2) * w;
            float* dst = out.data() + (i * 2 * h + y) * 2 * w;
            for (std::int64_t xx = 0; xx < 2 * w; ++xx) dst[xx] = src[xx / 2];
        }
    return finish(std::move(out), {&input}, [=](Node* self) {
        return [=] {
            float* dx = input.node()->grad_buffer().data();
            const float* dy = self->grad.data();
            for (std::int64_t i = 0; i < nc; ++i)
                for (std::int64_t y = 0; y < 2 * h; ++y) {
                    const float* src = dy + (i * 2 * h + y) * 2 * w;
                    float* dst = dx + (i * h + y / 2) * w;
                    for (std::int64_t xx = 0; xx < 2 * w; ++xx) dst[xx / 2] += src[xx];
                }
        };
    });
}

Var softmax(const Var& input) {
    if (input.value().rank() == 0) throw ShapeError("softmax: empty shape");
    const std::int64_t width = input.shape().back();
    const std::int64_t rows = static_cast<std::int64_t>(input.value().numel()) / width;
    Tensor out = input.value();
    for (std::int64_t r = 0; r < rows; ++r) {
        float* row = out.data() + r * width;
        const float mx = *std::max_element(row, row + width);
        double z = 0.0;
        for (std::int64_t j = 0; j < width; ++j) {
            row[j] = std::exp(row[j] - mx);
            z += row[j];
        }
        for (std::int64_t j = 0; j < width; ++j) row[j] = static_cast<float>(row[j] / z);
    }
    return finish(std::move(out), {&input}, [=](Node* self) {
        return [=] {
            float* dx = input.node()->grad_buffer().data();
            for (std::int64_t r = 0; r < rows; ++r) {
                const float* p = self->value.data() + r * width;
                const float* dy = self->grad.data() + r * width;
                double dot = 0.0;
                for (std::int64_t j = 0; j < width; ++j) dot += static_cast<double>(dy[j]) * p[j];
                for (std::int64_t j = 0; j < width; ++j)
                    dx[r * width + j] += p[j] * (dy[j] - static_cast<float>(dot));
            }
        };
    });
}

Var sum(const Var& input) {
    double acc = 0.0;
    for (float v : input.value().values()) acc += v;
    return finish(Tensor::scalar(static_cast<float>(acc)), {&input}, [=](Node* self) {
        return [=] {
            Tensor g(input.shape(), self->grad[0]);
            input.node()->accumulate(g);
        };
    });
}

Var mean(const Var& input) {
    const auto count = static_cast<double>(input.value().numel());
    double acc = 0.0;
    for (float v : input.value().values()) acc += v;
    return finish(Tensor::scalar(static_cast<float>(acc / count)), {&input}, [=](Node* self) {
        return [=] {
            Tensor g(input.shape(), static_cast<float>(self->grad[0] / count));
            input.node()->accumulate(g);
        };
    });
}

Tensor time_embedding(std::int64_t t, int dim, float max_period) {
    if (dim <= 0 || dim % 2 != 0) throw ConfigError("time_embedding: dim must be positive and even, got " + std::to_string(dim));
    if (t < 0) throw DomainError("time_embedding: negative time step");
    const int half = dim / 2;
    Tensor e(Shape{dim});
    for (int k = 0; k < half; ++k) {
        const double freq = std::pow(static_cast<double>(max_period), -2.0 * k / dim);
        const double arg = static_cast<double>(t) * freq;
        e[static_cast<std::size_t>(k)] = static_cast<float>(std::sin(arg));
        e[static_cast<std::size_t>(k + half)] = static_cast<float>(std::cos(arg));
    }
    return e;
}

Var self_attention(const Var& input, int heads, const AttentionParams& p) {
    require_rank(input, 4, "self_attention");
    const auto c = input.shape()[1];
    if (heads <= 0 || c % heads != 0)
        throw ConfigError("self_attention: " + std::to_string(heads) + " heads do not divide " + std::to_string(c) +
                          " channels");
    Var h = group_norm(input, default_groups(c), p.norm_gain, p.norm_offset);
    Var qkv = conv2d(h, p.qkv_weight, p.qkv_bias, 1, 0);
    Var attended = attention(qkv, heads);
    return add(input, conv2d(attended, p.proj_weight, p.proj_bias, 1, 0));
}

} // namespace dfip
