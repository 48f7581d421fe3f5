#include "ordistill/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "ordistill/attention.hpp"
#include "ordistill/backbone.hpp"
#include "ordistill/losses.hpp"
#include "ordistill/ops.hpp"

namespace ordistill::gradcheck {

namespace {

using T = double;
using Inputs = std::vector<Tensor<T>>;
using Rng = std::mt19937_64;

Tensor<T> random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor<T> t(std::move(shape));
    for (T& v : t.mutable_values()) v = dist(rng);
    return t;
}

// Uniform values with |x| >= margin and a random sign.
Tensor<T> away_from_zero(Rng& rng, Shape shape, double margin, double hi = 1.0) {
    std::uniform_real_distribution<double> mag(margin, hi);
    std::bernoulli_distribution sign(0.5);
    Tensor<T> t(std::move(shape));
    for (T& v : t.mutable_values()) v = sign(rng) ? mag(rng) : -mag(rng);
    return t;
}

std::size_t extent(Rng& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Tensor<T> leaf(Tensor<T> t) {
    t.set_requires_grad(true);
    return t;
}

// Contracts a non-scalar output to a scalar with fixed random weights so
// every output element contributes a distinct amount.
Tensor<T> weighted_sum(const Tensor<T>& out, const Tensor<T>& weights) {
    return ops::sum(ops::broadcast_mul(out, weights));
}

Tensor<T> weights_like(Rng& rng, const Shape& shape) {
    return random_tensor(rng, shape, 0.5, 1.5);
}

// One random instance of a check: the function and its inputs.
struct Instance {
    ScalarFn fn;
    Inputs inputs;
};

// Unary elementwise op on a random rank-1..4 tensor.
Instance unary_instance(Rng& rng, std::function<Tensor<T>(const Tensor<T>&)> op, Tensor<T> x) {
    const Tensor<T> w = weights_like(rng, op(x).shape());
    return {[op, w](const Inputs& in) { return weighted_sum(op(in[0]), w); }, {leaf(std::move(x))}};
}

Shape random_shape(Rng& rng) {
    Shape s(extent(rng, 1, 4));
    for (auto& e : s) e = extent(rng, 1, 4);
    return s;
}

// Two shapes of equal rank where either operand may broadcast per axis.
std::pair<Shape, Shape> broadcast_pair(Rng& rng) {
    Shape full = random_shape(rng), a = full, b = full;
    std::bernoulli_distribution coin(0.35);
    for (std::size_t i = 0; i < full.size(); ++i) {
        if (coin(rng)) a[i] = 1;
        else if (coin(rng)) b[i] = 1;
    }
    if (coin(rng) && b.size() > 1) b.erase(b.begin());  // leading-1 insertion
    return {a, b};
}

Instance binary_instance(Rng& rng, std::function<Tensor<T>(const Tensor<T>&, const Tensor<T>&)> op,
                         bool positive_rhs) {
    auto [sa, sb] = broadcast_pair(rng);
    Tensor<T> a = random_tensor(rng, sa);
    Tensor<T> b = positive_rhs ? away_from_zero(rng, sb, 0.5, 2.0) : random_tensor(rng, sb);
    const Shape out_shape = op(a, b).shape();
    const Tensor<T> w = weights_like(rng, out_shape);
    return {[op, w](const Inputs& in) { return weighted_sum(op(in[0], in[1]), w); },
            {leaf(std::move(a)), leaf(std::move(b))}};
}

// Feature tensor whose normalized attention map keeps every entry at least
// 1e-2 away from the clamp kink at 0.
Tensor<T> attention_features(Rng& rng, Shape shape) {
    for (;;) {
        Tensor<T> f = random_tensor(rng, shape, 0.0, 1.0);
        const auto m = normalize(spatial_attention(f));
        const auto v = m.values.values();
        if (std::all_of(v.begin(), v.end(), [](T x) { return std::abs(x) > 1e-2; })) return f;
    }
}

using Generator = std::function<Instance(Rng&)>;

struct Case {
    Generator make;
    double tolerance = kPrimitiveTolerance;
    bool in_default_suite = true;
};

const std::map<std::string, Case>& registry() {
    static const std::map<std::string, Case> cases = [] {
        std::map<std::string, Case> c;
        c["conv2d"] = {[](Rng& rng) {
            const std::size_t b = extent(rng, 1, 2), cin = extent(rng, 1, 3), cout = extent(rng, 1, 3);
            const std::size_t h = extent(rng, 3, 4), w = extent(rng, 3, 4), k = extent(rng, 1, 3);
            const ops::Conv2dParams p{extent(rng, 1, 2), extent(rng, 0, 1)};
            Tensor<T> x = random_tensor(rng, {b, cin, h, w});
            Tensor<T> wt = random_tensor(rng, {cout, cin, k, k});
            Tensor<T> bias = random_tensor(rng, {cout});
            const Tensor<T> weights = weights_like(rng, ops::conv2d(x, wt, bias, p).shape());
            return Instance{[p, weights](const Inputs& in) {
                                return weighted_sum(ops::conv2d(in[0], in[1], in[2], p), weights);
                            },
                            {leaf(x), leaf(wt), leaf(bias)}};
        }};
        c["max_pool2d"] = {[](Rng& rng) {
            const Shape s{extent(rng, 1, 2), extent(rng, 1, 3), 4, 4};
            // Distinct values spaced far beyond the finite-difference step.
            std::vector<T> vals(shape_numel(s));
            for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = 0.1 * static_cast<double>(i) - 1.0;
            std::shuffle(vals.begin(), vals.end(), rng);
            return unary_instance(rng, [](const Tensor<T>& x) { return ops::max_pool2d(x, 2, 2); },
                                  Tensor<T>(s, vals));
        }};
        c["global_avg_pool"] = {[](Rng& rng) {
            return unary_instance(rng, [](const Tensor<T>& x) { return ops::global_avg_pool(x); },
                                  random_tensor(rng, {extent(rng, 1, 4), extent(rng, 1, 4), extent(rng, 1, 4), extent(rng, 1, 4)}));
        }};
        c["channel_avg_pool"] = {[](Rng& rng) {
            return unary_instance(rng, [](const Tensor<T>& x) { return ops::channel_avg_pool(x); },
                                  random_tensor(rng, {extent(rng, 1, 4), extent(rng, 1, 4), extent(rng, 1, 4), extent(rng, 1, 4)}));
        }};
        c["add"] = {[](Rng& rng) { return binary_instance(rng, ops::add<T>, false); }};
        c["sub"] = {[](Rng& rng) { return binary_instance(rng, ops::sub<T>, false); }};
        c["broadcast_mul"] = {[](Rng& rng) { return binary_instance(rng, ops::broadcast_mul<T>, false); }};
        c["div"] = {[](Rng& rng) { return binary_instance(rng, ops::div<T>, true); }};
        c["scalar_mul"] = {[](Rng& rng) {
            const T factor = std::uniform_real_distribution<double>(-2, 2)(rng);
            return unary_instance(rng, [factor](const Tensor<T>& x) { return ops::scalar_mul(x, factor); },
                                  random_tensor(rng, random_shape(rng)));
        }};
        c["add_scalar"] = {[](Rng& rng) {
            return unary_instance(rng, [](const Tensor<T>& x) { return ops::add_scalar(x, T(0.75)); },
                                  random_tensor(rng, random_shape(rng)));
        }};
        c["relu"] = {[](Rng& rng) {
            return unary_instance(rng, [](const Tensor<T>& x) { return ops::relu(x); },
                                  away_from_zero(rng, random_shape(rng), 1e-2));
        }};
        c["abs"] = {[](Rng& rng) {
            return unary_instance(rng, [](const Tensor<T>& x) { return ops::abs(x); },
                                  away_from_zero(rng, random_shape(rng), 1e-2));
        }};
        c["sqrt"] = {[](Rng& rng) {
            return unary_instance(rng, [](const Tensor<T>& x) { return ops::sqrt(x); },
                                  random_tensor(rng, random_shape(rng), 0.2, 2.0));
        }};
        c["linear"] = {[](Rng& rng) {
            const std::size_t b = extent(rng, 1, 4), in = extent(rng, 1, 4), out = extent(rng, 1, 4);
            Tensor<T> x = random_tensor(rng, {b, in}), w = random_tensor(rng, {out, in}), bias = random_tensor(rng, {out});
            const Tensor<T> weights = weights_like(rng, {b, out});
            return Instance{[weights](const Inputs& i) { return weighted_sum(ops::linear(i[0], i[1], i[2]), weights); },
                            {leaf(x), leaf(w), leaf(bias)}};
        }};
        c["reshape"] = {[](Rng& rng) {
            Tensor<T> x = random_tensor(rng, random_shape(rng));
            const Shape flat{x.numel()};
            return unary_instance(rng, [flat](const Tensor<T>& v) { return ops::reshape(v, flat); }, x);
        }};
        c["sum"] = {[](Rng& rng) {
            Tensor<T> x = leaf(random_tensor(rng, random_shape(rng)));
            return Instance{[](const Inputs& in) { return ops::sum(ops::broadcast_mul(in[0], in[0])); }, {x}};
        }};
        c["mean"] = {[](Rng& rng) {
            Tensor<T> x = leaf(random_tensor(rng, random_shape(rng)));
            return Instance{[](const Inputs& in) { return ops::mean(ops::broadcast_mul(in[0], in[0])); }, {x}};
        }};
        c["softmax_cross_entropy"] = {[](Rng& rng) {
            const std::size_t b = extent(rng, 1, 4), k = extent(rng, 2, 4);
            std::vector<int> labels(b);
            for (int& l : labels) l = static_cast<int>(extent(rng, 0, k - 1));
            return Instance{[labels](const Inputs& in) { return ops::softmax_cross_entropy(in[0], labels); },
                            {leaf(random_tensor(rng, {b, k}, -3, 3))}};
        }};
        c["attention"] = {[](Rng& rng) {
            const Shape s{extent(rng, 1, 2), extent(rng, 1, 4), extent(rng, 2, 4), extent(rng, 2, 4)};
            Tensor<T> f = attention_features(rng, s);
            const Tensor<T> w = weights_like(rng, {s[0], 1, s[2], s[3]});
            return Instance{[w](const Inputs& in) {
                                return weighted_sum(student_map(normalize(spatial_attention(in[0]))).values, w);
                            },
                            {leaf(f)}};
        }};
        c["or_loss"] = {[](Rng& rng) {
            const Shape s{extent(rng, 1, 2), extent(rng, 1, 4), extent(rng, 2, 4), extent(rng, 2, 4)};
            const auto teacher = teacher_map(normalize(spatial_attention(random_tensor(rng, s, 0.0, 1.0))));
            return Instance{[teacher](const Inputs& in) {
                                return or_loss(teacher, student_map(normalize(spatial_attention(in[0]))));
                            },
                            {leaf(attention_features(rng, s))}};
        }};
        c["total_loss"] = {
            [](Rng& rng) {
                // Image -> backbone -> CE + alpha * OR against one frozen teacher.
                BackboneConfig cfg;
                cfg.stage_channels = {2, 3};
                cfg.input_height = cfg.input_width = 16;
                cfg.num_classes = 3;
                cfg.seed = rng();
                const Model<T> student = Model<T>::init(cfg);
                cfg.seed = rng();
                const Model<T> teacher = Model<T>::init(cfg);
                Tensor<T> images = random_tensor(rng, {2, 3, 16, 16}, 0.0, 1.0);
                const std::vector<int> labels{static_cast<int>(extent(rng, 0, 2)), static_cast<int>(extent(rng, 0, 2))};
                AttentionMap<T> tmap;
                {
                    NoGradScope<T> no_grad;
                    tmap = teacher_map(normalize(spatial_attention(teacher.forward(images).features)));
                }
                Inputs inputs{leaf(images)};
                for (const auto& p : student.parameters()) inputs.push_back(p.second.detach());
                for (std::size_t i = 1; i < inputs.size(); ++i) inputs[i].set_requires_grad(true);
                return Instance{[cfg = student.config(), tmap, labels](const Inputs& in) {
                                    std::vector<Model<T>::Parameter> params;
                                    const auto layout = parameter_layout(cfg);
                                    for (std::size_t i = 0; i < layout.size(); ++i) {
                                        params.emplace_back(layout[i].first, in[i + 1]);
                                    }
                                    const Model<T> model = Model<T>::from_parameters(cfg, std::move(params));
                                    const auto out = model.forward(in[0]);
                                    const auto ce = ops::softmax_cross_entropy(out.logits, labels);
                                    const auto smap = student_map(normalize(spatial_attention(out.features)));
                                    return total_objective(ce, {or_loss(tmap, smap)}, 0.5);
                                },
                                inputs};
            },
            kEndToEndTolerance};
        // Deliberately wrong derivative (x instead of 2x) so callers can
        // confirm the checker fails loudly.
        c["faulty_square"] = {[](Rng& rng) {
                                  Tensor<T> x = leaf(away_from_zero(rng, random_shape(rng), 0.1));
                                  return Instance{[](const Inputs& in) {
                                                      const Tensor<T> sq = ops::broadcast_mul(in[0], in[0]);
                                                      Tensor<T> out = Tensor<T>::scalar(ops::sum(sq).item());
                                                      if (Tape<T>* tape = active_tape<T>()) {
                                                          auto xs = in[0].storage();
                                                          tape->record("faulty_square", out.storage(),
                                                                       [xs](std::span<const T> g) {
                                                                           auto& gx = detail::grad_buffer(*xs);
                                                                           for (std::size_t i = 0; i < gx.size(); ++i)
                                                                               gx[i] += g[0] * xs->data[i];
                                                                       });
                                                      }
                                                      return out;
                                                  },
                                                  {x}};
                              },
                              kPrimitiveTolerance, false};
        return c;
    }();
    return cases;
}

}  // namespace

double relative_error(double analytic, double numeric) {
    const double diff = std::abs(analytic - numeric);
    if (diff <= kAbsoluteFloor) return 0.0;
    return diff / std::max(std::abs(analytic), std::abs(numeric));
}

double check(const ScalarFn& fn, const std::vector<Tensor<double>>& inputs, double step) {
    for (const auto& in : inputs) {
        auto& mutable_in = const_cast<Tensor<double>&>(in);
        mutable_in.zero_grad();
    }
    {
        Tape<double> tape;
        TapeScope<double> scope(tape);
        const Tensor<double> loss = fn(inputs);
        tape.backward(loss);
    }
    double worst = 0;
    NoGradScope<double> no_grad;
    for (const auto& in : inputs) {
        if (!in.requires_grad()) continue;
        const std::vector<double> analytic = in.has_grad() ? std::vector<double>(in.grad().begin(), in.grad().end())
                                                           : std::vector<double>(in.numel(), 0.0);
        auto values = const_cast<Tensor<double>&>(in).mutable_values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + step;
            const double up = fn(inputs).item();
            values[i] = saved - step;
            const double down = fn(inputs).item();
            values[i] = saved;
            worst = std::max(worst, relative_error(analytic[i], (up - down) / (2 * step)));
        }
    }
    return worst;
}

std::vector<std::string> default_ops() {
    std::vector<std::string> names;
    for (const auto& [name, c] : registry()) {
        if (c.in_default_suite) names.push_back(name);
    }
    return names;
}

std::vector<std::string> all_ops() {
    std::vector<std::string> names;
    for (const auto& [name, c] : registry()) names.push_back(name);
    return names;
}

std::vector<Report> run(const std::optional<std::string>& op) {
    std::vector<std::string> names;
    if (op) {
        if (!registry().contains(*op)) fail(ErrorKind::Config, "unknown gradcheck op '" + *op + "'");
        names.push_back(*op);
    } else {
        names = default_ops();
    }
    std::vector<Report> reports;
    for (const auto& name : names) {
        const Case& c = registry().at(name);
        Rng rng(std::hash<std::string>{}(name) ^ 0x6c62272e07bb0142ULL);
        Report r{name, 0.0, c.tolerance, kTrials, false};
        for (int t = 0; t < kTrials; ++t) {
            const Instance inst = c.make(rng);
            r.max_relative_error = std::max(r.max_relative_error, check(inst.fn, inst.inputs));
        }
        r.passed = r.max_relative_error < r.tolerance;
        reports.push_back(r);
    }
    return reports;
}

}  // namespace ordistill::gradcheck
