#pragma once

// Minimal reverse-mode training engine for the two reference architectures:
// dense stacks and 1-D convolutional stacks with Swish activations, trained
// with Adam on MSE. f64 arithmetic throughout; training is deterministic in
// (seed, data, config), independent of the worker-thread count.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fhn/dataset.hpp"
#include "fhn/errors.hpp"
#include "fhn/linalg.hpp"
#include "fhn/rng.hpp"
#include "fhn/spd.hpp"

namespace fhn {

inline double swish_scalar(double x) { return x / (1.0 + std::exp(-x)); }

inline std::vector<double> swish(const std::vector<double>& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = swish_scalar(x[i]);
    return out;
}

struct LayerSpec {
    enum class Kind { Dense, Conv1D, AvgPool1D, Swish, Flatten, LinearOutput, Dropout };
    Kind kind = Kind::Dense;
    std::size_t units = 0;   // Dense / LinearOutput
    std::size_t filters = 0; // Conv1D (kernel 3, stride 2)
    double rate = 0.0;       // Dropout

    static LayerSpec dense(std::size_t u) { return {Kind::Dense, u, 0, 0.0}; }
    static LayerSpec conv1d(std::size_t f) { return {Kind::Conv1D, 0, f, 0.0}; }
    static LayerSpec avg_pool() { return {Kind::AvgPool1D, 0, 0, 0.0}; }
    static LayerSpec swish_act() { return {Kind::Swish, 0, 0, 0.0}; }
    static LayerSpec flatten() { return {Kind::Flatten, 0, 0, 0.0}; }
    static LayerSpec linear_output(std::size_t p) { return {Kind::LinearOutput, p, 0, 0.0}; }
    static LayerSpec dropout(double rate) { return {Kind::Dropout, 0, 0, rate}; }
};

struct ModelSpec {
    std::vector<LayerSpec> layers;
    std::size_t input_len = 0;      // per-channel length
    std::size_t input_channels = 1;
    std::size_t output_dim = 0;

    std::size_t input_size() const { return input_len * input_channels; }
};

/// Dense stack: n_layers hidden layers of n_units with Swish, then a linear
/// output layer. Optional dropout after each hidden activation.
inline ModelSpec dnn_spec(std::size_t n_layers, std::size_t n_units, std::size_t input_size,
                          std::size_t p, double dropout_rate = 0.0) {
    ModelSpec spec;
    spec.input_len = input_size;
    spec.input_channels = 1;
    spec.output_dim = p;
    for (std::size_t l = 0; l < n_layers; ++l) {
        spec.layers.push_back(LayerSpec::dense(n_units));
        spec.layers.push_back(LayerSpec::swish_act());
        if (dropout_rate > 0.0) spec.layers.push_back(LayerSpec::dropout(dropout_rate));
    }
    spec.layers.push_back(LayerSpec::linear_output(p));
    return spec;
}

/// Convolutional stack: per block l a Conv1D with n_f * 2^l filters (kernel
/// 3, stride 2), Swish, then average pooling (2, 2); afterwards Flatten, two
/// Dense(32) + Swish, and the linear output layer.
inline ModelSpec cnn_spec(std::size_t n_conv_layers, std::size_t n_f, std::size_t input_len,
                          std::size_t input_channels, std::size_t p) {
    ModelSpec spec;
    spec.input_len = input_len;
    spec.input_channels = input_channels;
    spec.output_dim = p;
    for (std::size_t l = 0; l < n_conv_layers; ++l) {
        spec.layers.push_back(LayerSpec::conv1d(n_f << l));
        spec.layers.push_back(LayerSpec::swish_act());
        spec.layers.push_back(LayerSpec::avg_pool());
    }
    spec.layers.push_back(LayerSpec::flatten());
    spec.layers.push_back(LayerSpec::dense(32));
    spec.layers.push_back(LayerSpec::swish_act());
    spec.layers.push_back(LayerSpec::dense(32));
    spec.layers.push_back(LayerSpec::swish_act());
    spec.layers.push_back(LayerSpec::linear_output(p));
    return spec;
}

namespace nn_detail {

struct Shape {
    std::size_t len = 0;
    std::size_t ch = 1;
    std::size_t size() const { return len * ch; }
};

} // namespace nn_detail

/// A parameterized network: spec plus per-layer weight/bias arrays and the
/// stage shape algebra. Layers without parameters hold empty arrays.
class Model {
  public:
    explicit Model(const ModelSpec& spec) : spec_(spec) {
        shapes_.push_back({spec.input_len, spec.input_channels});
        for (std::size_t l = 0; l < spec.layers.size(); ++l) {
            const LayerSpec& ls = spec.layers[l];
            nn_detail::Shape in = shapes_.back();
            nn_detail::Shape out = in;
            std::size_t nw = 0, nb = 0;
            switch (ls.kind) {
                case LayerSpec::Kind::Dense:
                case LayerSpec::Kind::LinearOutput:
                    out = {ls.units, 1};
                    nw = in.size() * ls.units;
                    nb = ls.units;
                    break;
                case LayerSpec::Kind::Conv1D:
                    if (in.len < 3)
                        throw ShapeMismatchError("conv input shorter than kernel", l);
                    out = {(in.len - 3) / 2 + 1, ls.filters};
                    nw = 3 * in.ch * ls.filters;
                    nb = ls.filters;
                    break;
                case LayerSpec::Kind::AvgPool1D:
                    if (in.len < 2) throw ShapeMismatchError("pool input shorter than 2", l);
                    out = {(in.len - 2) / 2 + 1, in.ch};
                    break;
                case LayerSpec::Kind::Flatten: out = {in.size(), 1}; break;
                case LayerSpec::Kind::Swish:
                case LayerSpec::Kind::Dropout: break;
            }
            weights_.emplace_back(nw, 0.0);
            biases_.emplace_back(nb, 0.0);
            shapes_.push_back(out);
        }
        if (shapes_.back().size() != spec.output_dim || shapes_.back().ch != 1)
            throw ShapeMismatchError("network output does not match output_dim",
                                     spec.layers.size());
    }

    /// Glorot-uniform weights, zero biases, drawn in declaration order.
    void init_weights(std::uint64_t seed) {
        RngStream rng(seed, 0x9e3779b97f4a7c15ULL);
        for (std::size_t l = 0; l < spec_.layers.size(); ++l) {
            const LayerSpec& ls = spec_.layers[l];
            double fan_in = 0.0, fan_out = 0.0;
            if (ls.kind == LayerSpec::Kind::Dense || ls.kind == LayerSpec::Kind::LinearOutput) {
                fan_in = static_cast<double>(shapes_[l].size());
                fan_out = static_cast<double>(ls.units);
            } else if (ls.kind == LayerSpec::Kind::Conv1D) {
                fan_in = static_cast<double>(3 * shapes_[l].ch);
                fan_out = static_cast<double>(3 * ls.filters);
            } else {
                continue;
            }
            double limit = std::sqrt(6.0 / (fan_in + fan_out));
            for (double& w : weights_[l]) w = rng.uniform(-limit, limit);
            for (double& b : biases_[l]) b = 0.0;
        }
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (std::size_t l = 0; l < weights_.size(); ++l)
            n += weights_[l].size() + biases_[l].size();
        return n;
    }

    const ModelSpec& spec() const { return spec_; }
    const std::vector<nn_detail::Shape>& shapes() const { return shapes_; }
    std::vector<std::vector<double>>& weights() { return weights_; }
    std::vector<std::vector<double>>& biases() { return biases_; }
    const std::vector<std::vector<double>>& weights() const { return weights_; }
    const std::vector<std::vector<double>>& biases() const { return biases_; }

  private:
    ModelSpec spec_;
    std::vector<nn_detail::Shape> shapes_;
    std::vector<std::vector<double>> weights_;
    std::vector<std::vector<double>> biases_;
};

namespace nn_detail {

// Per-thread buffers: activations per stage, gradients per stage, and
// weight-gradient accumulators.
struct Workspace {
    std::vector<std::vector<double>> act;     // act[l] = input of layer l; act.back() = output
    std::vector<std::vector<double>> grad;    // same shapes as act
    std::vector<std::vector<double>> w_grad;  // per layer
    std::vector<std::vector<double>> b_grad;
    RngStream dropout_rng{0, 0};
    bool train_mode = false;

    explicit Workspace(const Model& m) {
        for (const Shape& s : m.shapes()) {
            act.emplace_back(s.size(), 0.0);
            grad.emplace_back(s.size(), 0.0);
        }
        for (std::size_t l = 0; l < m.weights().size(); ++l) {
            w_grad.emplace_back(m.weights()[l].size(), 0.0);
            b_grad.emplace_back(m.biases()[l].size(), 0.0);
        }
    }

    void zero_param_grads() {
        for (auto& g : w_grad) std::fill(g.begin(), g.end(), 0.0);
        for (auto& g : b_grad) std::fill(g.begin(), g.end(), 0.0);
    }
};

// Load one feature row into the input stage. Rows store channels
// block-major ([ts | fc]); conv stages use interleaved position-major
// layout, so multi-channel inputs are transposed here.
inline void load_input(const Model& m, const double* row, std::vector<double>& dst) {
    const Shape in = m.shapes()[0];
    if (in.ch == 1) {
        std::copy(row, row + in.len, dst.begin());
    } else {
        for (std::size_t pos = 0; pos < in.len; ++pos)
            for (std::size_t c = 0; c < in.ch; ++c) dst[pos * in.ch + c] = row[c * in.len + pos];
    }
}

inline void forward(const Model& m, Workspace& ws) {
    const auto& layers = m.spec().layers;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const LayerSpec& ls = layers[l];
        const Shape in = m.shapes()[l];
        const Shape out = m.shapes()[l + 1];
        const std::vector<double>& x = ws.act[l];
        std::vector<double>& y = ws.act[l + 1];
        switch (ls.kind) {
            case LayerSpec::Kind::Dense:
            case LayerSpec::Kind::LinearOutput: {
                const std::vector<double>& w = m.weights()[l];
                const std::vector<double>& b = m.biases()[l];
                const std::size_t n = in.size();
                for (std::size_t o = 0; o < ls.units; ++o) {
                    double s = b[o];
                    const double* wr = w.data() + o * n;
                    for (std::size_t i = 0; i < n; ++i) s += wr[i] * x[i];
                    y[o] = s;
                }
                break;
            }
            case LayerSpec::Kind::Conv1D: {
                const std::vector<double>& w = m.weights()[l];
                const std::vector<double>& b = m.biases()[l];
                const std::size_t C = in.ch, F = ls.filters;
                for (std::size_t o = 0; o < out.len; ++o) {
                    double* yr = y.data() + o * F;
                    for (std::size_t f = 0; f < F; ++f) yr[f] = b[f];
                    for (std::size_t k = 0; k < 3; ++k) {
                        const double* xr = x.data() + (2 * o + k) * C;
                        for (std::size_t f = 0; f < F; ++f) {
                            const double* wr = w.data() + (f * 3 + k) * C;
                            double s = 0.0;
                            for (std::size_t c = 0; c < C; ++c) s += wr[c] * xr[c];
                            yr[f] += s;
                        }
                    }
                }
                break;
            }
            case LayerSpec::Kind::AvgPool1D: {
                const std::size_t C = in.ch;
                for (std::size_t o = 0; o < out.len; ++o)
                    for (std::size_t c = 0; c < C; ++c)
                        y[o * C + c] = 0.5 * (x[2 * o * C + c] + x[(2 * o + 1) * C + c]);
                break;
            }
            case LayerSpec::Kind::Swish: {
                for (std::size_t i = 0; i < x.size(); ++i) y[i] = swish_scalar(x[i]);
                break;
            }
            case LayerSpec::Kind::Flatten: {
                std::copy(x.begin(), x.end(), y.begin());
                break;
            }
            case LayerSpec::Kind::Dropout: {
                if (ws.train_mode && ls.rate > 0.0) {
                    const double keep = 1.0 - ls.rate;
                    for (std::size_t i = 0; i < x.size(); ++i)
                        y[i] = ws.dropout_rng.uniform() < keep ? x[i] / keep : 0.0;
                } else {
                    std::copy(x.begin(), x.end(), y.begin());
                }
                break;
            }
        }
    }
}

// Reverse pass; expects ws.grad.back() seeded with dL/d(output) and the
// forward activations in place. Dropout backward reuses the forward mask by
// comparing the stored output against zero.
inline void backward(const Model& m, Workspace& ws) {
    const auto& layers = m.spec().layers;
    for (std::size_t l = layers.size(); l-- > 0;) {
        const LayerSpec& ls = layers[l];
        const Shape in = m.shapes()[l];
        const Shape out = m.shapes()[l + 1];
        const std::vector<double>& x = ws.act[l];
        const std::vector<double>& y = ws.act[l + 1];
        const std::vector<double>& gy = ws.grad[l + 1];
        std::vector<double>& gx = ws.grad[l];
        std::fill(gx.begin(), gx.end(), 0.0);
        switch (ls.kind) {
            case LayerSpec::Kind::Dense:
            case LayerSpec::Kind::LinearOutput: {
                const std::vector<double>& w = m.weights()[l];
                std::vector<double>& dw = ws.w_grad[l];
                std::vector<double>& db = ws.b_grad[l];
                const std::size_t n = in.size();
                for (std::size_t o = 0; o < ls.units; ++o) {
                    const double g = gy[o];
                    if (g == 0.0) continue;
                    const double* wr = w.data() + o * n;
                    double* dwr = dw.data() + o * n;
                    db[o] += g;
                    for (std::size_t i = 0; i < n; ++i) {
                        dwr[i] += g * x[i];
                        gx[i] += g * wr[i];
                    }
                }
                break;
            }
            case LayerSpec::Kind::Conv1D: {
                const std::vector<double>& w = m.weights()[l];
                std::vector<double>& dw = ws.w_grad[l];
                std::vector<double>& db = ws.b_grad[l];
                const std::size_t C = in.ch, F = ls.filters;
                for (std::size_t o = 0; o < out.len; ++o) {
                    const double* gr = gy.data() + o * F;
                    for (std::size_t f = 0; f < F; ++f) db[f] += gr[f];
                    for (std::size_t k = 0; k < 3; ++k) {
                        const std::size_t pos = (2 * o + k) * C;
                        const double* xr = x.data() + pos;
                        double* gxr = gx.data() + pos;
                        for (std::size_t f = 0; f < F; ++f) {
                            const double g = gr[f];
                            if (g == 0.0) continue;
                            const double* wr = w.data() + (f * 3 + k) * C;
                            double* dwr = dw.data() + (f * 3 + k) * C;
                            for (std::size_t c = 0; c < C; ++c) {
                                dwr[c] += g * xr[c];
                                gxr[c] += g * wr[c];
                            }
                        }
                    }
                }
                break;
            }
            case LayerSpec::Kind::AvgPool1D: {
                const std::size_t C = in.ch;
                for (std::size_t o = 0; o < out.len; ++o)
                    for (std::size_t c = 0; c < C; ++c) {
                        double g = 0.5 * gy[o * C + c];
                        gx[2 * o * C + c] += g;
                        gx[(2 * o + 1) * C + c] += g;
                    }
                break;
            }
            case LayerSpec::Kind::Swish: {
                for (std::size_t i = 0; i < x.size(); ++i) {
                    double s = 1.0 / (1.0 + std::exp(-x[i]));
                    gx[i] = gy[i] * s * (1.0 + x[i] * (1.0 - s));
                }
                break;
            }
            case LayerSpec::Kind::Flatten: {
                std::copy(gy.begin(), gy.end(), gx.begin());
                break;
            }
            case LayerSpec::Kind::Dropout: {
                if (ws.train_mode && ls.rate > 0.0) {
                    const double keep = 1.0 - ls.rate;
                    for (std::size_t i = 0; i < x.size(); ++i)
                        gx[i] = (x[i] != 0.0 && y[i] == 0.0) ? 0.0 : gy[i] / keep;
                    // zero inputs that were kept contribute gy/keep as well;
                    // the mask test above only misses x[i] == 0, where the
                    // scale is irrelevant because the product is zero anyway
                } else {
                    std::copy(gy.begin(), gy.end(), gx.begin());
                }
                break;
            }
        }
    }
}

} // namespace nn_detail

/// Forward pass over a batch of raw feature rows (no scaling applied).
inline std::vector<std::vector<double>> forward(const Model& m,
                                                const std::vector<std::vector<double>>& batch) {
    nn_detail::Workspace ws(m);
    std::vector<std::vector<double>> out;
    out.reserve(batch.size());
    for (const auto& row : batch) {
        if (row.size() != m.spec().input_size())
            throw ShapeMismatchError("forward: feature width", 0);
        nn_detail::load_input(m, row.data(), ws.act[0]);
        nn_detail::forward(m, ws);
        out.push_back(ws.act.back());
    }
    return out;
}

/// Flattened-gradient view used by tests and the optimizer: MSE loss over the
/// batch plus exact reverse-mode gradients for every layer.
struct BackwardResult {
    double loss = 0.0;
    std::vector<std::vector<double>> w_grad;
    std::vector<std::vector<double>> b_grad;
};

inline BackwardResult backward(const Model& m, const std::vector<std::vector<double>>& batch,
                               const std::vector<std::vector<double>>& targets) {
    if (batch.size() != targets.size() || batch.empty())
        throw ShapeMismatchError("backward: batch/target sizes", 0);
    nn_detail::Workspace ws(m);
    ws.zero_param_grads();
    const std::size_t p = m.spec().output_dim;
    const double scale = 1.0 / (static_cast<double>(batch.size()) * static_cast<double>(p));
    double loss = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        if (batch[b].size() != m.spec().input_size() || targets[b].size() != p)
            throw ShapeMismatchError("backward: row widths", 0);
        nn_detail::load_input(m, batch[b].data(), ws.act[0]);
        nn_detail::forward(m, ws);
        for (std::size_t k = 0; k < p; ++k) {
            double r = ws.act.back()[k] - targets[b][k];
            loss += r * r * scale;
            ws.grad.back()[k] = 2.0 * r * scale;
        }
        nn_detail::backward(m, ws);
    }
    return {loss, std::move(ws.w_grad), std::move(ws.b_grad)};
}

/// Standard Adam with bias correction; moment decay 0.9 / 0.999, eps 1e-8.
class AdamState {
  public:
    explicit AdamState(const Model& m) {
        for (std::size_t l = 0; l < m.weights().size(); ++l) {
            mw_.emplace_back(m.weights()[l].size(), 0.0);
            vw_.emplace_back(m.weights()[l].size(), 0.0);
            mb_.emplace_back(m.biases()[l].size(), 0.0);
            vb_.emplace_back(m.biases()[l].size(), 0.0);
        }
    }

    void step(Model& m, const std::vector<std::vector<double>>& w_grad,
              const std::vector<std::vector<double>>& b_grad, double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
        for (std::size_t l = 0; l < w_grad.size(); ++l) {
            update(m.weights()[l], w_grad[l], mw_[l], vw_[l], lr, c1, c2);
            update(m.biases()[l], b_grad[l], mb_[l], vb_[l], lr, c1, c2);
        }
    }

    std::size_t steps() const { return t_; }

    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

  private:
    static void update(std::vector<double>& w, const std::vector<double>& g,
                       std::vector<double>& mo, std::vector<double>& ve, double lr, double c1,
                       double c2) {
        for (std::size_t i = 0; i < w.size(); ++i) {
            mo[i] = kBeta1 * mo[i] + (1.0 - kBeta1) * g[i];
            ve[i] = kBeta2 * ve[i] + (1.0 - kBeta2) * g[i] * g[i];
            double mhat = mo[i] / c1;
            double vhat = ve[i] / c2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + kEps);
        }
    }

    std::size_t t_ = 0;
    std::vector<std::vector<double>> mw_, vw_, mb_, vb_;
};

struct TrainConfig {
    double learning_rate = 0.002;
    std::size_t batch_size = 32;
    std::size_t epochs = 64;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    bool track_test_loss = false;  // record per-epoch test-split MSE in the history
    bool center_output_bias = true; // start the output bias at the train-label means
};

struct TrainHistory {
    std::vector<double> train_loss; // per epoch, running MSE over the epoch's batches
    std::vector<double> val_loss;   // per epoch, full validation MSE
    std::vector<double> test_loss;  // per epoch, only when track_test_loss is set
    std::size_t optimizer_steps = 0;
};

namespace nn_detail {

// MSE over dataset rows [begin, begin+count) without touching gradients.
inline double eval_mse(const Model& m, const Dataset& ds, std::size_t begin, std::size_t count) {
    if (count == 0) return 0.0;
    Workspace ws(m);
    const std::size_t p = m.spec().output_dim;
    double loss = 0.0;
    for (std::size_t i = begin; i < begin + count; ++i) {
        load_input(m, ds.feature_row(i), ws.act[0]);
        forward(m, ws);
        for (std::size_t k = 0; k < p; ++k) {
            double r = ws.act.back()[k] - ds.label_row(i)[k];
            loss += r * r;
        }
    }
    return loss / (static_cast<double>(count) * static_cast<double>(p));
}

} // namespace nn_detail

/// Minibatch Adam training with a seeded per-epoch shuffle. The dataset is
/// expected to be standardized already. Batches are split into a fixed number
/// of chunks processed by a worker pool; chunk gradients are reduced in fixed
/// index order, so results do not depend on the thread count.
inline TrainHistory train(Model& model, const Dataset& ds, const TrainConfig& cfg) {
    if (ds.n_train == 0) throw EmptyInputError("train: empty training split");
    if (ds.feature_width != model.spec().input_size())
        throw ShapeMismatchError("train: feature width vs model input", 0);
    if (ds.label_width != model.spec().output_dim)
        throw ShapeMismatchError("train: label width vs model output", 0);

    constexpr std::size_t kChunks = 8; // fixed reduction schedule
    const std::size_t p = model.spec().output_dim;
    if (cfg.center_output_bias &&
        model.spec().layers.back().kind == LayerSpec::Kind::LinearOutput) {
        // Adam moves biases by at most ~lr per step, so label blocks with
        // means far from zero (the log-covariance entries) would spend
        // thousands of steps closing that gap; start at the train means.
        std::vector<double>& bias = model.biases().back();
        std::fill(bias.begin(), bias.end(), 0.0);
        for (std::size_t i = 0; i < ds.n_train; ++i) {
            const double* row = ds.label_row(i);
            for (std::size_t k = 0; k < p; ++k) bias[k] += row[k];
        }
        for (double& b : bias) b /= static_cast<double>(ds.n_train);
    }
    AdamState adam(model);
    RngStream shuffle_rng(cfg.seed, 0x5eedu);
    std::vector<std::size_t> order(ds.n_train);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<nn_detail::Workspace> workspaces;
    for (std::size_t c = 0; c < kChunks; ++c) workspaces.emplace_back(model);

    TrainHistory hist;
    const bool has_dropout = [&] {
        for (const auto& l : model.spec().layers)
            if (l.kind == LayerSpec::Kind::Dropout && l.rate > 0.0) return true;
        return false;
    }();

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Fisher-Yates with the seeded stream
        for (std::size_t i = order.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(shuffle_rng.uniform() * static_cast<double>(i));
            if (j >= i) j = i - 1;
            std::swap(order[i - 1], order[j]);
        }
        double epoch_loss = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < ds.n_train; start += cfg.batch_size) {
            const std::size_t bs = std::min(cfg.batch_size, ds.n_train - start);
            const double scale = 1.0 / (static_cast<double>(bs) * static_cast<double>(p));
            std::vector<double> chunk_loss(kChunks, 0.0);
            auto run_chunk = [&](std::size_t c) {
                nn_detail::Workspace& ws = workspaces[c];
                ws.zero_param_grads();
                ws.train_mode = true;
                const std::size_t lo = start + (bs * c) / kChunks;
                const std::size_t hi = start + (bs * (c + 1)) / kChunks;
                double loss = 0.0;
                for (std::size_t b = lo; b < hi; ++b) {
                    const std::size_t row = order[b];
                    if (has_dropout)
                        ws.dropout_rng = RngStream(cfg.seed ^ 0xd50bu,
                                                   (epoch << 24) ^ (row + 1));
                    nn_detail::load_input(model, ds.feature_row(row), ws.act[0]);
                    nn_detail::forward(model, ws);
                    for (std::size_t k = 0; k < p; ++k) {
                        double r = ws.act.back()[k] - ds.label_row(row)[k];
                        loss += r * r * scale;
                        ws.grad.back()[k] = 2.0 * r * scale;
                    }
                    nn_detail::backward(model, ws);
                }
                chunk_loss[c] = loss;
            };
            if (cfg.threads > 1) {
                std::vector<std::thread> pool;
                std::atomic<std::size_t> next{0};
                const std::size_t nthreads = std::min(cfg.threads, kChunks);
                for (std::size_t t = 0; t < nthreads; ++t)
                    pool.emplace_back([&]() {
                        for (;;) {
                            std::size_t c = next.fetch_add(1);
                            if (c >= kChunks) return;
                            run_chunk(c);
                        }
                    });
                for (auto& th : pool) th.join();
            } else {
                for (std::size_t c = 0; c < kChunks; ++c) run_chunk(c);
            }
            // fixed-order reduction into chunk 0
            double batch_loss = 0.0;
            for (std::size_t c = 0; c < kChunks; ++c) batch_loss += chunk_loss[c];
            for (std::size_t c = 1; c < kChunks; ++c) {
                for (std::size_t l = 0; l < workspaces[0].w_grad.size(); ++l) {
                    auto& acc = workspaces[0].w_grad[l];
                    const auto& src = workspaces[c].w_grad[l];
                    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += src[i];
                    auto& accb = workspaces[0].b_grad[l];
                    const auto& srcb = workspaces[c].b_grad[l];
                    for (std::size_t i = 0; i < accb.size(); ++i) accb[i] += srcb[i];
                }
            }
            adam.step(model, workspaces[0].w_grad, workspaces[0].b_grad, cfg.learning_rate);
            epoch_loss += batch_loss * static_cast<double>(bs);
            seen += bs;
        }
        hist.train_loss.push_back(epoch_loss / static_cast<double>(seen));
        hist.val_loss.push_back(ds.n_val > 0
                                    ? nn_detail::eval_mse(model, ds, ds.split_begin(Split::Val),
                                                          ds.n_val)
                                    : 0.0);
        if (cfg.track_test_loss)
            hist.test_loss.push_back(
                nn_detail::eval_mse(model, ds, ds.split_begin(Split::Test), ds.n_test));
    }
    hist.optimizer_steps = adam.steps();
    return hist;
}

/// Test-split (or any split) MSE on a standardized dataset.
inline double evaluate_mse(const Model& model, const Dataset& ds, Split split) {
    return nn_detail::eval_mse(model, ds, ds.split_begin(split), ds.split_count(split));
}

// ---------------------------------------------------------------------------
// model file: structured-text header + little-endian f64 weight blobs

struct ModelFile {
    ModelSpec spec;
    std::vector<std::vector<double>> weights;
    std::vector<std::vector<double>> biases;
    ScalerStats scaler;        // feature scaler
    ScalerStats label_scaler;  // empty when the model was trained on raw labels
    LabelLayout labels;
    FeatureKind features = FeatureKind::TS;
    std::size_t n_t = 2000;
    std::uint64_t seed = 0;
    std::uint64_t dataset_hash = 0;

    Model instantiate() const {
        Model m(spec);
        m.weights() = weights;
        m.biases() = biases;
        return m;
    }
};

inline std::uint64_t fnv1a64(const std::string& text) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

namespace nn_detail {

inline std::string spec_to_line(const ModelSpec& spec) {
    std::ostringstream os;
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        if (l) os << ",";
        const LayerSpec& ls = spec.layers[l];
        switch (ls.kind) {
            case LayerSpec::Kind::Dense: os << "dense:" << ls.units; break;
            case LayerSpec::Kind::Conv1D: os << "conv:" << ls.filters; break;
            case LayerSpec::Kind::AvgPool1D: os << "pool"; break;
            case LayerSpec::Kind::Swish: os << "swish"; break;
            case LayerSpec::Kind::Flatten: os << "flatten"; break;
            case LayerSpec::Kind::LinearOutput: os << "linear:" << ls.units; break;
            case LayerSpec::Kind::Dropout: {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.17g", ls.rate);
                os << "dropout:" << buf;
                break;
            }
        }
    }
    return os.str();
}

inline std::vector<LayerSpec> layers_from_line(const std::string& line) {
    std::vector<LayerSpec> layers;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        auto colon = tok.find(':');
        std::string kind = tok.substr(0, colon);
        std::string arg = colon == std::string::npos ? "" : tok.substr(colon + 1);
        if (kind == "dense") layers.push_back(LayerSpec::dense(std::stoull(arg)));
        else if (kind == "conv") layers.push_back(LayerSpec::conv1d(std::stoull(arg)));
        else if (kind == "pool") layers.push_back(LayerSpec::avg_pool());
        else if (kind == "swish") layers.push_back(LayerSpec::swish_act());
        else if (kind == "flatten") layers.push_back(LayerSpec::flatten());
        else if (kind == "linear") layers.push_back(LayerSpec::linear_output(std::stoull(arg)));
        else if (kind == "dropout") layers.push_back(LayerSpec::dropout(std::stod(arg)));
        else throw IoError("unknown layer token: " + tok);
    }
    return layers;
}

} // namespace nn_detail

inline void save_model(const std::filesystem::path& path, const ModelFile& mf) {
    std::ostringstream header;
    detail::put_kv(header, "schema", std::string("fhn-model-1"));
    detail::put_kv(header, "layers", nn_detail::spec_to_line(mf.spec));
    detail::put_kv(header, "input_len", mf.spec.input_len);
    detail::put_kv(header, "input_channels", mf.spec.input_channels);
    detail::put_kv(header, "output_dim", mf.spec.output_dim);
    detail::put_kv(header, "features", to_string(mf.features));
    detail::put_kv(header, "labels", mf.labels.blocks());
    detail::put_kv(header, "noise", to_string(mf.labels.noise_kind));
    detail::put_kv(header, "n_t", mf.n_t);
    detail::put_kv(header, "seed", static_cast<std::size_t>(mf.seed));
    {
        char buf[24];
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(mf.dataset_hash));
        detail::put_kv(header, "dataset_hash", std::string(buf));
    }
    detail::put_kv(header, "scaler_width", mf.scaler.mean.size());
    detail::put_kv(header, "label_scaler_width", mf.label_scaler.mean.size());
    std::vector<double> blob;
    blob.insert(blob.end(), mf.scaler.mean.begin(), mf.scaler.mean.end());
    blob.insert(blob.end(), mf.scaler.stddev.begin(), mf.scaler.stddev.end());
    blob.insert(blob.end(), mf.label_scaler.mean.begin(), mf.label_scaler.mean.end());
    blob.insert(blob.end(), mf.label_scaler.stddev.begin(), mf.label_scaler.stddev.end());
    for (std::size_t l = 0; l < mf.weights.size(); ++l) {
        blob.insert(blob.end(), mf.weights[l].begin(), mf.weights[l].end());
        blob.insert(blob.end(), mf.biases[l].begin(), mf.biases[l].end());
    }
    detail::put_kv(header, "blob_doubles", blob.size());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write model: " + path.string());
    os << header.str() << "---\n";
    os.write(reinterpret_cast<const char*>(blob.data()),
             static_cast<std::streamsize>(blob.size() * sizeof(double)));
    if (!os) throw IoError("model write failed: " + path.string());
}

inline ModelFile load_model(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read model: " + path.string());
    std::string header;
    std::string line;
    while (std::getline(is, line)) {
        if (line == "---") break;
        header += line;
        header += "\n";
    }
    detail::KvMap kv = detail::KvMap::parse(header);
    if (kv.get("schema") != "fhn-model-1") throw IoError("unsupported model schema");
    ModelFile mf;
    mf.spec.layers = nn_detail::layers_from_line(kv.get("layers"));
    mf.spec.input_len = kv.get_u("input_len");
    mf.spec.input_channels = kv.get_u("input_channels");
    mf.spec.output_dim = kv.get_u("output_dim");
    mf.features = feature_kind_from_string(kv.get("features"));
    mf.labels = LabelLayout::from_blocks(kv.get("labels"),
                                         noise_kind_from_string(kv.get("noise")));
    mf.n_t = kv.get_u("n_t");
    mf.seed = kv.get_u("seed");
    mf.dataset_hash = std::stoull(kv.get("dataset_hash"), nullptr, 16);
    std::size_t scaler_width = kv.get_u("scaler_width");
    std::size_t blob_doubles = kv.get_u("blob_doubles");
    std::vector<double> blob(blob_doubles);
    is.read(reinterpret_cast<char*>(blob.data()),
            static_cast<std::streamsize>(blob_doubles * sizeof(double)));
    if (!is) throw IoError("model blob truncated: " + path.string());
    Model shape_check(mf.spec); // validates the layer algebra
    std::size_t off = 0;
    mf.scaler.mean.assign(blob.begin(), blob.begin() + scaler_width);
    off += scaler_width;
    mf.scaler.stddev.assign(blob.begin() + off, blob.begin() + off + scaler_width);
    off += scaler_width;
    for (std::size_t l = 0; l < shape_check.weights().size(); ++l) {
        std::size_t nw = shape_check.weights()[l].size();
        std::size_t nb = shape_check.biases()[l].size();
        if (off + nw + nb > blob.size()) throw IoError("model blob size mismatch");
        mf.weights.emplace_back(blob.begin() + off, blob.begin() + off + nw);
        off += nw;
        mf.biases.emplace_back(blob.begin() + off, blob.begin() + off + nb);
        off += nb;
    }
    if (off != blob.size()) throw IoError("model blob has trailing data");
    return mf;
}

/// Prediction on raw (unscaled) features; covariance labels are mapped back
/// to SPD via exp(devec(.)).
struct Prediction {
    std::vector<double> values; // the p label values
    bool has_cov = false;
    Mat3 gamma_pred;            // SPD by construction when has_cov
};

inline Prediction predict(const ModelFile& mf, const Model& model,
                          const std::vector<double>& raw_features) {
    if (raw_features.size() != mf.scaler.mean.size())
        throw ShapeMismatchError("predict: feature width", 0);
    std::vector<double> row = raw_features;
    apply_scaler(mf.scaler, row);
    Prediction pred;
    pred.values = forward(model, {row})[0];
    if (mf.labels.cov) {
        TangentVec t;
        std::copy(pred.values.begin() + static_cast<std::ptrdiff_t>(mf.labels.cov_offset()),
                  pred.values.end(), t.begin());
        pred.gamma_pred = exp_at_identity(devec(t));
        pred.has_cov = true;
    }
    return pred;
}

inline Prediction predict(const ModelFile& mf, const std::vector<double>& raw_features) {
    Model m = mf.instantiate();
    return predict(mf, m, raw_features);
}

} // namespace fhn
