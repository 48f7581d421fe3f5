#include "ordistill/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace ordistill::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
using StoragePtr = std::shared_ptr<TensorStorage<T>>;

template <typename T>
Tape<T>* recording_tape(std::initializer_list<const Tensor<T>*> inputs) {
    Tape<T>* tape = active_tape<T>();
    if (!tape) return nullptr;
    for (const Tensor<T>* t : inputs) {
        if (t && t->requires_grad()) return tape;
    }
    return nullptr;
}

void require_rank(const Shape& shape, std::size_t rank, const char* op, const char* what) {
    if (shape.size() != rank) {
        fail(ErrorKind::Shape, std::string(op) + ": " + what + " must have rank " +
                                   std::to_string(rank) + ", got " + shape_str(shape));
    }
}

template <typename T>
void im2col(const T* image, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad,
            std::size_t out_h, std::size_t out_w, T* col) {
    const std::size_t plane = out_h * out_w;
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
                T* row = col + ((c * kh + ky) * kw + kx) * plane;
                for (std::size_t oy = 0; oy < out_h; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                              static_cast<std::ptrdiff_t>(pad);
                    T* dst = row + oy * out_w;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) {
                        std::fill(dst, dst + out_w, T(0));
                        continue;
                    }
                    const T* src = image + (c * height + static_cast<std::size_t>(iy)) * width;
                    for (std::size_t ox = 0; ox < out_w; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                                  static_cast<std::ptrdiff_t>(pad);
                        dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width))
                                      ? T(0)
                                      : src[ix];
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, std::size_t channels, std::size_t height, std::size_t width,
                std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad,
                std::size_t out_h, std::size_t out_w, T* image) {
    const std::size_t plane = out_h * out_w;
    for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
                const T* row = col + ((c * kh + ky) * kw + kx) * plane;
                for (std::size_t oy = 0; oy < out_h; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                              static_cast<std::ptrdiff_t>(pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) continue;
                    T* dst = image + (c * height + static_cast<std::size_t>(iy)) * width;
                    for (std::size_t ox = 0; ox < out_w; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                                  static_cast<std::ptrdiff_t>(pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width)) continue;
                        dst[ix] += row[oy * out_w + ox];
                    }
                }
            }
        }
    }
}

template <typename T>
Tensor<T> conv2d_impl(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias,
                      Conv2dParams params) {
    require_rank(input.shape(), 4, "conv2d", "input");
    require_rank(weight.shape(), 4, "conv2d", "weight");
    const std::size_t batch = input.extent(0), cin = input.extent(1);
    const std::size_t height = input.extent(2), width = input.extent(3);
    const std::size_t cout = weight.extent(0), kh = weight.extent(2), kw = weight.extent(3);
    const std::size_t stride = params.stride, pad = params.padding;
    if (weight.extent(1) != cin) {
        fail(ErrorKind::Shape, "conv2d: input channels " + std::to_string(cin) +
                                   " do not match weight " + shape_str(weight.shape()));
    }
    if (stride == 0) fail(ErrorKind::Shape, "conv2d: stride must be positive");
    if (height + 2 * pad < kh || width + 2 * pad < kw) {
        fail(ErrorKind::Shape, "conv2d: kernel " + shape_str(weight.shape()) +
                                   " larger than padded input " + shape_str(input.shape()));
    }
    if (bias && (bias->rank() != 1 || bias->extent(0) != cout)) {
        fail(ErrorKind::Shape, "conv2d: bias shape " + shape_str(bias->shape()) +
                                   " does not match " + std::to_string(cout) + " output channels");
    }
    const std::size_t out_h = (height + 2 * pad - kh) / stride + 1;
    const std::size_t out_w = (width + 2 * pad - kw) / stride + 1;
    const std::size_t k = cin * kh * kw, plane = out_h * out_w;
    const std::size_t in_sample = cin * height * width;

    Tensor<T> out(Shape{batch, cout, out_h, out_w});
    Tape<T>* tape = recording_tape<T>({&input, &weight, bias});

    std::vector<T> cols(batch * k * plane);
    ConstMatMap<T> wmat(weight.values().data(), cout, k);
    for (std::size_t b = 0; b < batch; ++b) {
        T* col = cols.data() + b * k * plane;
        im2col(input.values().data() + b * in_sample, cin, height, width, kh, kw, stride, pad,
               out_h, out_w, col);
        MatMap<T> omat(out.mutable_values().data() + b * cout * plane, cout, plane);
        omat.noalias() = wmat * ConstMatMap<T>(col, k, plane);
        if (bias) {
            for (std::size_t c = 0; c < cout; ++c) omat.row(c).array() += bias->values()[c];
        }
    }
    out.check_finite("conv2d");

    if (tape) {
        StoragePtr<T> in_s = input.storage(), w_s = weight.storage();
        StoragePtr<T> b_s = bias ? bias->storage() : nullptr;
        tape->record("conv2d", out.storage(),
                     [=, cols = std::move(cols)](std::span<const T> g) {
                         ConstMatMap<T> w(w_s->data.data(), cout, k);
                         std::vector<T> gcol(k * plane);
                         for (std::size_t b = 0; b < batch; ++b) {
                             ConstMatMap<T> gout(g.data() + b * cout * plane, cout, plane);
                             ConstMatMap<T> col(cols.data() + b * k * plane, k, plane);
                             if (w_s->requires_grad) {
                                 MatMap<T> gw(detail::grad_buffer(*w_s).data(), cout, k);
                                 gw.noalias() += gout * col.transpose();
                             }
                             if (b_s && b_s->requires_grad) {
                                 auto& gb = detail::grad_buffer(*b_s);
                                 // Plain loop: a vectorized sum would depend on the buffer's alignment.
                                 for (std::size_t c = 0; c < cout; ++c) {
                                     const T* row = g.data() + (b * cout + c) * plane;
                                     T acc = 0;
                                     for (std::size_t p = 0; p < plane; ++p) acc += row[p];
                                     gb[c] += acc;
                                 }
                             }
                             if (in_s->requires_grad) {
                                 MatMap<T> gc(gcol.data(), k, plane);
                                 gc.noalias() = w.transpose() * gout;
                                 col2im_add(gcol.data(), cin, height, width, kh, kw, stride, pad,
                                            out_h, out_w,
                                            detail::grad_buffer(*in_s).data() + b * in_sample);
                             }
                         }
                     });
    }
    return out;
}

// Strides of `shape` re-expressed against an output of rank `rank`, zero on
// broadcast axes.
std::vector<std::size_t> broadcast_strides(const Shape& shape, const Shape& out) {
    const std::size_t rank = out.size(), offset = rank - shape.size();
    std::vector<std::size_t> strides(rank, 0);
    std::size_t stride = 1;
    for (std::size_t i = shape.size(); i-- > 0;) {
        strides[i + offset] = shape[i] == 1 ? 0 : stride;
        stride *= shape[i];
    }
    return strides;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (ea != eb && ea != 1 && eb != 1) {
            fail(ErrorKind::Shape, std::string(op) + ": cannot broadcast " + shape_str(a) +
                                       " with " + shape_str(b));
        }
        out[i] = std::max(ea, eb);
    }
    return out;
}

// Visits every output element with the matching operand offsets.
template <typename Fn>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, Fn&& fn) {
    const std::size_t rank = out.size(), n = shape_numel(out);
    std::vector<std::size_t> idx(rank, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t o = 0; o < n; ++o) {
        fn(o, ia, ib);
        for (std::size_t d = rank; d-- > 0;) {
            if (++idx[d] < out[d]) {
                ia += sa[d];
                ib += sb[d];
                break;
            }
            ia -= sa[d] * (out[d] - 1);
            ib -= sb[d] * (out[d] - 1);
            idx[d] = 0;
        }
    }
}

// f(a, b) with partials da(a, b), db(a, b).
template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b, F f, DA da, DB db) {
    const Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
    const auto sa = broadcast_strides(a.shape(), out_shape);
    const auto sb = broadcast_strides(b.shape(), out_shape);
    Tensor<T> out(out_shape);
    {
        const T* pa = a.values().data();
        const T* pb = b.values().data();
        T* po = out.mutable_values().data();
        if (a.shape() == b.shape()) {
            for (std::size_t i = 0; i < out.numel(); ++i) po[i] = f(pa[i], pb[i]);
        } else {
            for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                po[o] = f(pa[ia], pb[ib]);
            });
        }
    }
    out.check_finite(name);
    if (Tape<T>* tape = recording_tape<T>({&a, &b})) {
        StoragePtr<T> as = a.storage(), bs = b.storage();
        tape->record(name, out.storage(), [=](std::span<const T> g) {
            const T* pa = as->data.data();
            const T* pb = bs->data.data();
            T* ga = as->requires_grad ? detail::grad_buffer(*as).data() : nullptr;
            T* gb = bs->requires_grad ? detail::grad_buffer(*bs).data() : nullptr;
            for_each_broadcast(out_shape, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
                if (ga) ga[ia] += g[o] * da(pa[ia], pb[ib]);
                if (gb) gb[ib] += g[o] * db(pa[ia], pb[ib]);
            });
        });
    }
    return out;
}

// f(x) with derivative df(x, f(x)).
template <typename T, typename F, typename DF>
Tensor<T> unary_op(const char* name, const Tensor<T>& a, F f, DF df) {
    Tensor<T> out(a.shape());
    const T* pa = a.values().data();
    T* po = out.mutable_values().data();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] = f(pa[i]);
    out.check_finite(name);
    if (Tape<T>* tape = recording_tape<T>({&a})) {
        StoragePtr<T> as = a.storage(), os = out.storage();
        tape->record(name, os, [=](std::span<const T> g) {
            auto& ga = detail::grad_buffer(*as);
            const auto& x = as->data;
            const auto& y = os->data;
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
        });
    }
    return out;
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 Conv2dParams params) {
    return conv2d_impl(input, weight, &bias, params);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, Conv2dParams params) {
    return conv2d_impl<T>(input, weight, nullptr, params);
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& input, std::size_t kernel, std::size_t stride) {
    require_rank(input.shape(), 4, "max_pool2d", "input");
    if (kernel == 0 || stride == 0) fail(ErrorKind::Shape, "max_pool2d: kernel and stride must be positive");
    const std::size_t batch = input.extent(0), ch = input.extent(1);
    const std::size_t height = input.extent(2), width = input.extent(3);
    if (height < kernel || width < kernel) {
        fail(ErrorKind::Shape, "max_pool2d: kernel " + std::to_string(kernel) +
                                   " larger than input " + shape_str(input.shape()));
    }
    const std::size_t out_h = (height - kernel) / stride + 1, out_w = (width - kernel) / stride + 1;
    Tensor<T> out(Shape{batch, ch, out_h, out_w});
    std::vector<std::size_t> argmax(out.numel());
    const T* in = input.values().data();
    T* po = out.mutable_values().data();
    std::size_t o = 0;
    for (std::size_t p = 0; p < batch * ch; ++p) {
        const std::size_t base = p * height * width;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
            for (std::size_t ox = 0; ox < out_w; ++ox, ++o) {
                std::size_t best = base + oy * stride * width + ox * stride;
                for (std::size_t ky = 0; ky < kernel; ++ky) {
                    for (std::size_t kx = 0; kx < kernel; ++kx) {
                        const std::size_t i = base + (oy * stride + ky) * width + ox * stride + kx;
                        if (in[i] > in[best]) best = i;
                    }
                }
                argmax[o] = best;
                po[o] = in[best];
            }
        }
    }
    out.check_finite("max_pool2d");
    if (Tape<T>* tape = recording_tape<T>({&input})) {
        StoragePtr<T> is = input.storage();
        tape->record("max_pool2d", out.storage(),
                     [is, argmax = std::move(argmax)](std::span<const T> g) {
                         auto& gi = detail::grad_buffer(*is);
                         for (std::size_t i = 0; i < argmax.size(); ++i) gi[argmax[i]] += g[i];
                     });
    }
    return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
    require_rank(input.shape(), 4, "global_avg_pool", "input");
    const std::size_t planes = input.extent(0) * input.extent(1);
    const std::size_t area = input.extent(2) * input.extent(3);
    Tensor<T> out(Shape{input.extent(0), input.extent(1), 1, 1});
    const T* in = input.values().data();
    T* po = out.mutable_values().data();
    for (std::size_t p = 0; p < planes; ++p) {
        T acc = 0;
        for (std::size_t i = 0; i < area; ++i) acc += in[p * area + i];
        po[p] = acc / static_cast<T>(area);
    }
    out.check_finite("global_avg_pool");
    if (Tape<T>* tape = recording_tape<T>({&input})) {
        StoragePtr<T> is = input.storage();
        tape->record("global_avg_pool", out.storage(), [=](std::span<const T> g) {
            auto& gi = detail::grad_buffer(*is);
            const T scale = T(1) / static_cast<T>(area);
            for (std::size_t p = 0; p < planes; ++p) {
                const T share = g[p] * scale;
                for (std::size_t i = 0; i < area; ++i) gi[p * area + i] += share;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> channel_avg_pool(const Tensor<T>& input) {
    require_rank(input.shape(), 4, "channel_avg_pool", "input");
    const std::size_t batch = input.extent(0), ch = input.extent(1);
    const std::size_t area = input.extent(2) * input.extent(3);
    Tensor<T> out(Shape{batch, 1, input.extent(2), input.extent(3)});
    const T* in = input.values().data();
    T* po = out.mutable_values().data();
    const T scale = T(1) / static_cast<T>(ch);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < ch; ++c) {
            const T* src = in + (b * ch + c) * area;
            for (std::size_t i = 0; i < area; ++i) po[b * area + i] += src[i];
        }
        for (std::size_t i = 0; i < area; ++i) po[b * area + i] *= scale;
    }
    out.check_finite("channel_avg_pool");
    if (Tape<T>* tape = recording_tape<T>({&input})) {
        StoragePtr<T> is = input.storage();
        tape->record("channel_avg_pool", out.storage(), [=](std::span<const T> g) {
            auto& gi = detail::grad_buffer(*is);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t c = 0; c < ch; ++c) {
                    T* dst = gi.data() + (b * ch + c) * area;
                    for (std::size_t i = 0; i < area; ++i) dst[i] += g[b * area + i] * scale;
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
        [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
        [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> broadcast_mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        "broadcast_mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
        [](T x, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return binary_op<T>(
        "div", a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
        [](T x, T y) { return -x / (y * y); });
}

template <typename T>
Tensor<T> scalar_mul(const Tensor<T>& a, T factor) {
    return unary_op<T>(
        "scalar_mul", a, [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T offset) {
    return unary_op<T>(
        "add_scalar", a, [offset](T x) { return x + offset; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    return unary_op<T>(
        "relu", a, [](T x) { return x > T(0) ? x : T(0); },
        [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
    return unary_op<T>(
        "abs", a, [](T x) { return std::abs(x); },
        [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
    for (T v : a.values()) {
        if (v < T(0)) fail(ErrorKind::Numeric, "sqrt of negative value");
    }
    return unary_op<T>(
        "sqrt", a, [](T x) { return std::sqrt(x); },
        [](T, T y) { return y > T(0) ? T(0.5) / y : T(0); });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    require_rank(x.shape(), 2, "linear", "input");
    require_rank(weight.shape(), 2, "linear", "weight");
    const std::size_t batch = x.extent(0), in = x.extent(1), outf = weight.extent(0);
    if (weight.extent(1) != in) {
        fail(ErrorKind::Shape, "linear: input " + shape_str(x.shape()) + " does not match weight " +
                                   shape_str(weight.shape()));
    }
    if (bias.rank() != 1 || bias.extent(0) != outf) {
        fail(ErrorKind::Shape, "linear: bias " + shape_str(bias.shape()) + " does not match " +
                                   std::to_string(outf) + " outputs");
    }
    Tensor<T> out(Shape{batch, outf});
    MatMap<T> y(out.mutable_values().data(), batch, outf);
    y.noalias() = ConstMatMap<T>(x.values().data(), batch, in) *
                  ConstMatMap<T>(weight.values().data(), outf, in).transpose();
    for (std::size_t r = 0; r < batch; ++r) {
        for (std::size_t c = 0; c < outf; ++c) y(r, c) += bias.values()[c];
    }
    out.check_finite("linear");
    if (Tape<T>* tape = recording_tape<T>({&x, &weight, &bias})) {
        StoragePtr<T> xs = x.storage(), ws = weight.storage(), bs = bias.storage();
        tape->record("linear", out.storage(), [=](std::span<const T> g) {
            ConstMatMap<T> gy(g.data(), batch, outf);
            if (xs->requires_grad) {
                MatMap<T>(detail::grad_buffer(*xs).data(), batch, in).noalias() +=
                    gy * ConstMatMap<T>(ws->data.data(), outf, in);
            }
            if (ws->requires_grad) {
                MatMap<T>(detail::grad_buffer(*ws).data(), outf, in).noalias() +=
                    gy.transpose() * ConstMatMap<T>(xs->data.data(), batch, in);
            }
            if (bs->requires_grad) {
                auto& gb = detail::grad_buffer(*bs);
                for (std::size_t r = 0; r < batch; ++r) {
                    for (std::size_t c = 0; c < outf; ++c) gb[c] += gy(r, c);
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        fail(ErrorKind::Shape, "reshape: cannot view " + shape_str(a.shape()) + " as " +
                                   shape_str(shape));
    }
    Tensor<T> out(std::move(shape), std::vector<T>(a.values().begin(), a.values().end()));
    if (Tape<T>* tape = recording_tape<T>({&a})) {
        StoragePtr<T> as = a.storage();
        tape->record("reshape", out.storage(),
                     [as](std::span<const T> g) { detail::accumulate_grad(*as, g); });
    }
    return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T acc = 0;
    for (T v : a.values()) acc += v;
    Tensor<T> out = Tensor<T>::scalar(acc);
    out.check_finite("sum");
    if (Tape<T>* tape = recording_tape<T>({&a})) {
        StoragePtr<T> as = a.storage();
        tape->record("sum", out.storage(), [as](std::span<const T> g) {
            for (T& v : detail::grad_buffer(*as)) v += g[0];
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    T acc = 0;
    for (T v : a.values()) acc += v;
    const T n = static_cast<T>(a.numel());
    Tensor<T> out = Tensor<T>::scalar(acc / n);
    out.check_finite("mean");
    if (Tape<T>* tape = recording_tape<T>({&a})) {
        StoragePtr<T> as = a.storage();
        tape->record("mean", out.storage(), [as, n](std::span<const T> g) {
            const T share = g[0] / n;
            for (T& v : detail::grad_buffer(*as)) v += share;
        });
    }
    return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
    require_rank(logits.shape(), 2, "softmax", "logits");
    const std::size_t batch = logits.extent(0), k = logits.extent(1);
    Tensor<T> out(logits.shape());
    const T* in = logits.values().data();
    T* po = out.mutable_values().data();
    for (std::size_t r = 0; r < batch; ++r) {
        const T* row = in + r * k;
        const T m = *std::max_element(row, row + k);
        T z = 0;
        for (std::size_t c = 0; c < k; ++c) z += (po[r * k + c] = std::exp(row[c] - m));
        for (std::size_t c = 0; c < k; ++c) po[r * k + c] /= z;
    }
    return out;
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
    require_rank(logits.shape(), 2, "softmax_cross_entropy", "logits");
    const std::size_t batch = logits.extent(0), k = logits.extent(1);
    if (k < 2) fail(ErrorKind::Shape, "softmax_cross_entropy: need at least 2 classes");
    if (labels.size() != batch) {
        fail(ErrorKind::Shape, "softmax_cross_entropy: " + std::to_string(labels.size()) +
                                   " labels for batch of " + std::to_string(batch));
    }
    for (int label : labels) {
        if (label < 0 || static_cast<std::size_t>(label) >= k) {
            fail(ErrorKind::Index, "softmax_cross_entropy: label " + std::to_string(label) +
                                       " outside [0," + std::to_string(k) + ")");
        }
    }
    const T* in = logits.values().data();
    std::vector<T> probs(batch * k);
    T total = 0;
    for (std::size_t r = 0; r < batch; ++r) {
        const T* row = in + r * k;
        const T m = *std::max_element(row, row + k);
        T z = 0;
        for (std::size_t c = 0; c < k; ++c) z += std::exp(row[c] - m);
        const T log_z = std::log(z);
        for (std::size_t c = 0; c < k; ++c) probs[r * k + c] = std::exp(row[c] - m - log_z);
        total += -(row[labels[r]] - m - log_z);
    }
    Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(batch));
    out.check_finite("softmax_cross_entropy");
    if (Tape<T>* tape = recording_tape<T>({&logits})) {
        StoragePtr<T> ls = logits.storage();
        std::vector<int> targets(labels.begin(), labels.end());
        tape->record("softmax_cross_entropy", out.storage(),
                     [=, probs = std::move(probs)](std::span<const T> g) {
                         auto& gl = detail::grad_buffer(*ls);
                         const T scale = g[0] / static_cast<T>(batch);
                         for (std::size_t r = 0; r < batch; ++r) {
                             for (std::size_t c = 0; c < k; ++c) {
                                 const T onehot = static_cast<int>(c) == targets[r] ? T(1) : T(0);
                                 gl[r * k + c] += scale * (probs[r * k + c] - onehot);
                             }
                         }
                     });
    }
    return out;
}

#define ORDISTILL_INSTANTIATE(T)                                                              \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                 Conv2dParams);                                               \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, Conv2dParams);          \
    template Tensor<T> max_pool2d<T>(const Tensor<T>&, std::size_t, std::size_t);            \
    template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                                 \
    template Tensor<T> channel_avg_pool<T>(const Tensor<T>&);                                \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                           \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                           \
    template Tensor<T> broadcast_mul<T>(const Tensor<T>&, const Tensor<T>&);                 \
    template Tensor<T> div<T>(const Tensor<T>&, const Tensor<T>&);                           \
    template Tensor<T> scalar_mul<T>(const Tensor<T>&, T);                                   \
    template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                   \
    template Tensor<T> relu<T>(const Tensor<T>&);                                            \
    template Tensor<T> abs<T>(const Tensor<T>&);                                             \
    template Tensor<T> sqrt<T>(const Tensor<T>&);                                            \
    template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);      \
    template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                  \
    template Tensor<T> sum<T>(const Tensor<T>&);                                             \
    template Tensor<T> mean<T>(const Tensor<T>&);                                            \
    template Tensor<T> softmax<T>(const Tensor<T>&);                                         \
    template Tensor<T> softmax_cross_entropy<T>(const Tensor<T>&, std::span<const int>);

ORDISTILL_INSTANTIATE(float)
ORDISTILL_INSTANTIATE(double)
#undef ORDISTILL_INSTANTIATE

}  // namespace ordistill::ops
