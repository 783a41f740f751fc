#include "cvcs/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace cvcs {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

void require(bool ok, const std::string& message) {
    if (!ok) throw Error(message);
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    require(t.defined(), std::string(op) + ": undefined input");
    require(t.ndim() == rank, std::string(op) + ": expected rank " + std::to_string(rank) +
                                  ", got " + shape_string(t.shape()));
}

Tensor make_output(Shape shape, bool track) {
    Tensor out(std::move(shape));
    if (track) out.set_requires_grad(true);
    return out;
}

// Index of b's element for every element of a, under trailing-dim broadcasting.
std::vector<std::size_t> broadcast_index(const Shape& a, const Shape& b, const char* op) {
    require(b.size() <= a.size(), std::string(op) + ": cannot broadcast " + shape_string(b) +
                                      " onto " + shape_string(a));
    const std::size_t rank = a.size();
    const std::size_t offset = rank - b.size();
    std::vector<std::size_t> bstride(rank, 0);
    std::size_t stride = 1;
    for (std::size_t k = b.size(); k-- > 0;) {
        const std::size_t ad = a[offset + k];
        require(b[k] == ad || b[k] == 1, std::string(op) + ": incompatible shapes " +
                                             shape_string(a) + " and " + shape_string(b));
        bstride[offset + k] = b[k] == 1 ? 0 : stride;
        stride *= b[k];
    }
    const std::size_t n = shape_size(a);
    std::vector<std::size_t> index(n);
    std::vector<std::size_t> counter(rank, 0);
    std::size_t bi = 0;
    for (std::size_t i = 0; i < n; ++i) {
        index[i] = bi;
        for (std::size_t k = rank; k-- > 0;) {
            ++counter[k];
            bi += bstride[k];
            if (counter[k] < a[k]) break;
            bi -= bstride[k] * counter[k];
            counter[k] = 0;
        }
    }
    return index;
}

enum class Elem { Add, Sub, Mul };

Tensor elementwise(Elem kind, const Tensor& a, const Tensor& b, const char* op) {
    require(a.defined() && b.defined(), std::string(op) + ": undefined input");
    const bool same = a.shape() == b.shape();
    std::vector<std::size_t> bidx;
    if (!same) bidx = broadcast_index(a.shape(), b.shape(), op);
    const bool track = needs_grad({&a, &b});
    Tensor out = make_output(a.shape(), track);
    auto ad = a.data();
    auto bd = b.data();
    auto od = out.mutable_data();
    for (std::size_t i = 0; i < od.size(); ++i) {
        const double bv = bd[same ? i : bidx[i]];
        switch (kind) {
            case Elem::Add: od[i] = ad[i] + bv; break;
            case Elem::Sub: od[i] = ad[i] - bv; break;
            case Elem::Mul: od[i] = ad[i] * bv; break;
        }
    }
    ensure_finite(out, op);
    if (track) {
        Tape::active()->record([kind, a = a, b = b, out, bidx = std::move(bidx), same]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            auto ad = a.data();
            auto bd = b.data();
            if (a.requires_grad()) {
                auto ga = a.mutable_grad();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] += kind == Elem::Mul ? g[i] * bd[same ? i : bidx[i]] : g[i];
                }
            }
            if (b.requires_grad()) {
                auto gb = b.mutable_grad();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const std::size_t j = same ? i : bidx[i];
                    switch (kind) {
                        case Elem::Add: gb[j] += g[i]; break;
                        case Elem::Sub: gb[j] -= g[i]; break;
                        case Elem::Mul: gb[j] += g[i] * ad[i]; break;
                    }
                }
            }
        });
    }
    return out;
}

// Output columns [lo, hi) whose stride-1 input column ox + kj - pad lies in [0, w).
std::pair<std::size_t, std::size_t> valid_span(std::size_t wo, std::size_t w, int pad,
                                               std::size_t kj) {
    const long shift = static_cast<long>(kj) - pad;
    const long lo = std::max(0L, -shift);
    const long hi = std::min(static_cast<long>(wo), static_cast<long>(w) - shift);
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(std::max(lo, hi))};
}

void im2col(const double* in, std::size_t cin, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, int pad, int stride, std::size_t ho, std::size_t wo, double* cols) {
    const std::size_t plane = ho * wo;
    for (std::size_t c = 0; c < cin; ++c) {
        const double* src = in + c * h * w;
        for (std::size_t ki = 0; ki < kh; ++ki) {
            for (std::size_t kj = 0; kj < kw; ++kj) {
                double* row = cols + ((c * kh + ki) * kw + kj) * plane;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const long iy = static_cast<long>(oy) * stride - pad + static_cast<long>(ki);
                    double* dst = row + oy * wo;
                    if (iy < 0 || iy >= static_cast<long>(h)) {
                        std::fill(dst, dst + wo, 0.0);
                        continue;
                    }
                    const double* srow = src + static_cast<std::size_t>(iy) * w;
                    if (stride == 1) {
                        const auto [lo, hi] = valid_span(wo, w, pad, kj);
                        std::fill(dst, dst + lo, 0.0);
                        std::copy(srow + lo + kj - pad, srow + hi + kj - pad, dst + lo);
                        std::fill(dst + hi, dst + wo, 0.0);
                        continue;
                    }
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const long ix =
                            static_cast<long>(ox) * stride - pad + static_cast<long>(kj);
                        dst[ox] = (ix < 0 || ix >= static_cast<long>(w)) ? 0.0 : srow[ix];
                    }
                }
            }
        }
    }
}

void col2im_add(const double* cols, std::size_t cin, std::size_t h, std::size_t w,
                std::size_t kh, std::size_t kw, int pad, int stride, std::size_t ho,
                std::size_t wo, double* out) {
    const std::size_t plane = ho * wo;
    for (std::size_t c = 0; c < cin; ++c) {
        double* dst = out + c * h * w;
        for (std::size_t ki = 0; ki < kh; ++ki) {
            for (std::size_t kj = 0; kj < kw; ++kj) {
                const double* row = cols + ((c * kh + ki) * kw + kj) * plane;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                    const long iy = static_cast<long>(oy) * stride - pad + static_cast<long>(ki);
                    if (iy < 0 || iy >= static_cast<long>(h)) continue;
                    double* drow = dst + static_cast<std::size_t>(iy) * w;
                    const double* srow = row + oy * wo;
                    if (stride == 1) {
                        const auto [lo, hi] = valid_span(wo, w, pad, kj);
                        double* d = drow + (static_cast<long>(kj) - pad);
                        for (std::size_t ox = lo; ox < hi; ++ox) d[ox] += srow[ox];
                        continue;
                    }
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const long ix =
                            static_cast<long>(ox) * stride - pad + static_cast<long>(kj);
                        if (ix >= 0 && ix < static_cast<long>(w)) drow[ix] += srow[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int padding,
              int stride) {
    require_rank(input, 4, "conv2d");
    require_rank(kernel, 4, "conv2d kernel");
    require(bias.defined() && bias.ndim() == 1, "conv2d: bias must be rank 1");
    const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    require(kernel.dim(1) == cin, "conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                                      " input channels, got " + std::to_string(cin));
    require(bias.dim(0) == cout, "conv2d: bias size does not match output channels");
    require(kh % 2 == 1 && kw % 2 == 1, "conv2d: kernel dims must be odd");
    require(stride >= 1 && padding >= 0, "conv2d: stride must be >= 1 and padding >= 0");
    require(h + 2 * padding >= kh && w + 2 * padding >= kw, "conv2d: kernel larger than input");

    const std::size_t ho = (h + 2 * padding - kh) / stride + 1;
    const std::size_t wo = (w + 2 * padding - kw) / stride + 1;
    const std::size_t depth = cin * kh * kw;
    const std::size_t plane = ho * wo;

    const bool track = needs_grad({&input, &kernel, &bias});
    Tensor out = make_output({n, cout, ho, wo}, track);
    Buffer cols(n * depth * plane);

    ConstMap wm(kernel.data().data(), cout, depth);
    auto bd = bias.data();
    for (std::size_t b = 0; b < n; ++b) {
        double* col = cols.data() + b * depth * plane;
        im2col(input.data().data() + b * cin * h * w, cin, h, w, kh, kw, padding, stride, ho, wo,
               col);
        MutMap om(out.mutable_data().data() + b * cout * plane, cout, plane);
        om.noalias() = wm * ConstMap(col, depth, plane);
        for (std::size_t c = 0; c < cout; ++c) om.row(c).array() += bd[c];
    }
    ensure_finite(out, "conv2d");

    if (track) {
        Tape::active()->record([=, input = input, kernel = kernel, bias = bias, cols = std::move(cols)]() mutable {
            if (!out.has_grad()) return;
            ConstMap wm(kernel.data().data(), cout, depth);
            for (std::size_t b = 0; b < n; ++b) {
                ConstMap gout(out.grad().data() + b * cout * plane, cout, plane);
                ConstMap col(cols.data() + b * depth * plane, depth, plane);
                if (kernel.requires_grad()) {
                    MutMap gw(kernel.mutable_grad().data(), cout, depth);
                    gw.noalias() += gout * col.transpose();
                }
                if (bias.requires_grad()) {
                    // Sequential sums: Eigen's vectorized reduction depends on buffer
                    // alignment, which would break run-to-run bit equality.
                    auto gb = bias.mutable_grad();
                    const double* g = out.grad().data() + b * cout * plane;
                    for (std::size_t c = 0; c < cout; ++c) {
                        gb[c] += std::accumulate(g + c * plane, g + (c + 1) * plane, 0.0);
                    }
                }
                if (input.requires_grad()) {
                    RowMat gcol(depth, plane);
                    gcol.noalias() = wm.transpose() * gout;
                    col2im_add(gcol.data(), cin, h, w, kh, kw, padding, stride, ho, wo,
                               input.mutable_grad().data() + b * cin * h * w);
                }
            }
        });
    }
    return out;
}

Tensor relu(const Tensor& x) {
    require(x.defined(), "relu: undefined input");
    const bool track = needs_grad({&x});
    Tensor out = make_output(x.shape(), track);
    auto xd = x.data();
    auto od = out.mutable_data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = xd[i] > 0.0 ? xd[i] : 0.0;
    if (track) {
        Tape::active()->record([x = x, out]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            auto xd = x.data();
            auto gx = x.mutable_grad();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (xd[i] > 0.0) gx[i] += g[i];
            }
        });
    }
    return out;
}

Tensor max_pool2d(const Tensor& x, int kernel, int stride) {
    require_rank(x, 4, "max_pool2d");
    require(kernel >= 1 && stride >= 1, "max_pool2d: kernel and stride must be >= 1");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const auto k = static_cast<std::size_t>(kernel);
    const auto s = static_cast<std::size_t>(stride);
    require(k <= h && k <= w, "max_pool2d: window " + std::to_string(k) +
                                  " exceeds input " + shape_string(x.shape()));
    const std::size_t ho = (h - k) / s + 1, wo = (w - k) / s + 1;
    const bool track = needs_grad({&x});
    Tensor out = make_output({n, c, ho, wo}, track);
    std::vector<std::size_t> argmax(out.size());
    auto xd = x.data();
    auto od = out.mutable_data();
    std::size_t o = 0;
    for (std::size_t p = 0; p < n * c; ++p) {
        const std::size_t base = p * h * w;
        for (std::size_t oy = 0; oy < ho; ++oy) {
            for (std::size_t ox = 0; ox < wo; ++ox, ++o) {
                std::size_t best = base + oy * s * w + ox * s;
                for (std::size_t ky = 0; ky < k; ++ky) {
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const std::size_t idx = base + (oy * s + ky) * w + ox * s + kx;
                        if (xd[idx] > xd[best]) best = idx;
                    }
                }
                argmax[o] = best;
                od[o] = xd[best];
            }
        }
    }
    if (track) {
        Tape::active()->record([x = x, out, argmax = std::move(argmax)]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            auto gx = x.mutable_grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
        });
    }
    return out;
}

Sampled bilinear_sample(const Tensor& feat, const SamplingGrid& grid) {
    require_rank(feat, 4, "bilinear_sample");
    require(grid.uv.size() == grid.rows * grid.cols * 2,
            "bilinear_sample: grid holds " + std::to_string(grid.uv.size()) +
                " values, expected " + std::to_string(grid.rows * grid.cols * 2));
    const std::size_t n = feat.dim(0), c = feat.dim(1), h = feat.dim(2), w = feat.dim(3);
    const std::size_t cells = grid.rows * grid.cols;

    struct Tap {
        std::size_t i00, i01, i10, i11;
        double w00, w01, w10, w11;
    };
    std::vector<Tap> taps(cells);
    Tensor mask({grid.rows, grid.cols});
    auto md = mask.mutable_data();
    const double umax = static_cast<double>(w) - 1.0, vmax = static_cast<double>(h) - 1.0;
    for (std::size_t q = 0; q < cells; ++q) {
        const double u = grid.uv[2 * q], v = grid.uv[2 * q + 1];
        Tap& t = taps[q];
        if (!(u >= 0.0 && u <= umax && v >= 0.0 && v <= vmax)) {
            t = Tap{0, 0, 0, 0, 0.0, 0.0, 0.0, 0.0};
            continue;
        }
        md[q] = 1.0;
        const auto x0 = static_cast<std::size_t>(std::floor(u));
        const auto y0 = static_cast<std::size_t>(std::floor(v));
        const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
        const double a = u - static_cast<double>(x0), b = v - static_cast<double>(y0);
        t = Tap{y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1,
                (1 - a) * (1 - b), a * (1 - b), (1 - a) * b, a * b};
    }

    const bool track = needs_grad({&feat});
    Tensor out = make_output({n, c, grid.rows, grid.cols}, track);
    auto fd = feat.data();
    auto od = out.mutable_data();
    for (std::size_t p = 0; p < n * c; ++p) {
        const double* src = fd.data() + p * h * w;
        double* dst = od.data() + p * cells;
        for (std::size_t q = 0; q < cells; ++q) {
            const Tap& t = taps[q];
            dst[q] = t.w00 * src[t.i00] + t.w01 * src[t.i01] + t.w10 * src[t.i10] +
                     t.w11 * src[t.i11];
        }
    }
    ensure_finite(out, "bilinear_sample");
    if (track) {
        Tape::active()->record([feat = feat, out, taps = std::move(taps), n, c, h, w, cells]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            auto gf = feat.mutable_grad();
            for (std::size_t p = 0; p < n * c; ++p) {
                double* dst = gf.data() + p * h * w;
                const double* src = g.data() + p * cells;
                for (std::size_t q = 0; q < cells; ++q) {
                    const Tap& t = taps[q];
                    const double gv = src[q];
                    dst[t.i00] += t.w00 * gv;
                    dst[t.i01] += t.w01 * gv;
                    dst[t.i10] += t.w10 * gv;
                    dst[t.i11] += t.w11 * gv;
                }
            }
        });
    }
    return Sampled{out, mask};
}

Tensor stack_max(std::span<const Tensor> views) {
    require(!views.empty(), "stack_max: empty view list");
    const Shape& shape = views.front().shape();
    for (const auto& v : views) {
        require(v.shape() == shape, "stack_max: shape mismatch " + shape_string(v.shape()) +
                                        " vs " + shape_string(shape));
    }
    bool track = false;
    for (const auto& v : views) track = track || needs_grad({&v});
    Tensor out = make_output(shape, track);
    std::vector<std::uint32_t> winner(out.size(), 0);
    auto od = out.mutable_data();
    auto first = views.front().data();
    std::copy(first.begin(), first.end(), od.begin());
    for (std::size_t k = 1; k < views.size(); ++k) {
        auto vd = views[k].data();
        for (std::size_t i = 0; i < od.size(); ++i) {
            if (vd[i] > od[i]) {
                od[i] = vd[i];
                winner[i] = static_cast<std::uint32_t>(k);
            }
        }
    }
    if (track) {
        std::vector<Tensor> inputs(views.begin(), views.end());
        Tape::active()->record([inputs, out, winner = std::move(winner)]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            std::vector<double*> dst(inputs.size(), nullptr);
            for (std::size_t k = 0; k < inputs.size(); ++k) {
                if (inputs[k].requires_grad()) dst[k] = inputs[k].mutable_grad().data();
            }
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (double* d = dst[winner[i]]) d[i] += g[i];
            }
        });
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(Elem::Add, a, b, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(Elem::Sub, a, b, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(Elem::Mul, a, b, "mul"); }

Tensor maximum(const Tensor& a, const Tensor& b) {
    const Tensor pair[] = {a, b};
    return stack_max(pair);
}

Tensor scale(const Tensor& x, double factor) {
    require(x.defined(), "scale: undefined input");
    const bool track = needs_grad({&x});
    Tensor out = make_output(x.shape(), track);
    auto xd = x.data();
    auto od = out.mutable_data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = xd[i] * factor;
    ensure_finite(out, "scale");
    if (track) {
        Tape::active()->record([x = x, out, factor]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            auto gx = x.mutable_grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
        });
    }
    return out;
}

Tensor reduce_sum(const Tensor& x) {
    require(x.defined(), "reduce_sum: undefined input");
    const bool track = needs_grad({&x});
    Tensor out = make_output({1}, track);
    double total = 0.0;
    for (double v : x.data()) total += v;
    out.mutable_data()[0] = total;
    ensure_finite(out, "reduce_sum");
    if (track) {
        Tape::active()->record([x = x, out]() mutable {
            if (!out.has_grad()) return;
            const double g = out.grad()[0];
            for (double& gx : x.mutable_grad()) gx += g;
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
    require(x.defined(), "reshape: undefined input");
    require(shape_size(shape) == x.size(), "reshape: cannot view " + shape_string(x.shape()) +
                                               " as " + shape_string(shape));
    const bool track = needs_grad({&x});
    Tensor out = make_output(std::move(shape), track);
    std::copy(x.data().begin(), x.data().end(), out.mutable_data().begin());
    if (track) {
        Tape::active()->record([x = x, out]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            auto gx = x.mutable_grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    }
    return out;
}

Tensor global_avg_pool(const Tensor& x) {
    require_rank(x, 4, "global_avg_pool");
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    const bool track = needs_grad({&x});
    Tensor out = make_output({n, c, 1, 1}, track);
    auto xd = x.data();
    auto od = out.mutable_data();
    for (std::size_t p = 0; p < n * c; ++p) {
        double total = 0.0;
        for (std::size_t q = 0; q < hw; ++q) total += xd[p * hw + q];
        od[p] = total / static_cast<double>(hw);
    }
    if (track) {
        Tape::active()->record([x = x, out, hw]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            auto gx = x.mutable_grad();
            const double inv = 1.0 / static_cast<double>(hw);
            for (std::size_t p = 0; p < g.size(); ++p) {
                for (std::size_t q = 0; q < hw; ++q) gx[p * hw + q] += g[p] * inv;
            }
        });
    }
    return out;
}

Tensor grad_reverse(const Tensor& x, double lambda) {
    require(x.defined(), "grad_reverse: undefined input");
    const bool track = needs_grad({&x});
    Tensor out = make_output(x.shape(), track);
    std::copy(x.data().begin(), x.data().end(), out.mutable_data().begin());
    if (track) {
        Tape::active()->record([x = x, out, lambda]() mutable {
            if (!out.has_grad()) return;
            auto g = out.grad();
            auto gx = x.mutable_grad();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += -lambda * g[i];
        });
    }
    return out;
}

}  // namespace cvcs
