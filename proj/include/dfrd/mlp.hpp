#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "dfrd/error.hpp"
#include "dfrd/rng.hpp"
#include "dfrd/rrf.hpp"

// The shared classifier backbone: a plain multi-layer perceptron with
// rectified-linear hidden units and a softmax head, trained from scratch by
// mini-batch gradient descent. Weights are stored input-major (w[i*out + o])
// so the forward pass and the weight-gradient accumulation walk contiguous
// rows and skip zero activations; RRF-expanded inputs are mostly zeros.

namespace dfrd {

struct MlpConfig {
    std::uint32_t in_dim = 0;
    std::vector<std::uint32_t> hidden_dims;
    std::uint32_t out_dim = 0;
    std::uint64_t seed = 0;
};

struct Layer {
    std::uint32_t in = 0;
    std::uint32_t out = 0;
    std::vector<double> w;  // input-major: w[i * out + o]
    std::vector<double> b;  // size out
};

struct MlpModel {
    MlpConfig config;
    std::vector<Layer> layers;

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.w.size() + l.b.size();
        return n;
    }
};

struct TrainConfig {
    std::uint32_t epochs = 30;
    std::uint32_t batch_size = 32;
    double step_size = 0.01;
    std::uint64_t shuffle_seed = 0;
};

struct LabeledSample {
    ScoreVector input;
    OneHotLabel label;
};

struct LabeledDataset {
    std::vector<LabeledSample> samples;
};

namespace detail {

inline void axpy(std::size_t n, double a, const double* x, double* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

inline double dot(std::size_t n, const double* a, const double* b) {
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    double s = (s0 + s1) + (s2 + s3);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

}  // namespace detail

inline void validate_config(const MlpConfig& cfg) {
    if (cfg.in_dim == 0 || cfg.out_dim == 0) throw InvalidInput("mlp config: dims must be >= 1");
    for (auto h : cfg.hidden_dims) {
        if (h == 0) throw InvalidInput("mlp config: hidden dims must be >= 1");
    }
}

// Uniform fan-scaled initialization: |w| <= sqrt(6 / (fan_in + fan_out)),
// biases zero. Deterministic in the provided stream.
inline MlpModel init_mlp(const MlpConfig& cfg, Rng& rng) {
    validate_config(cfg);
    std::vector<std::uint32_t> dims;
    dims.push_back(cfg.in_dim);
    dims.insert(dims.end(), cfg.hidden_dims.begin(), cfg.hidden_dims.end());
    dims.push_back(cfg.out_dim);

    MlpModel model;
    model.config = cfg;
    model.layers.resize(dims.size() - 1);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        Layer& layer = model.layers[l];
        layer.in = dims[l];
        layer.out = dims[l + 1];
        layer.w.resize(static_cast<std::size_t>(layer.in) * layer.out);
        layer.b.assign(layer.out, 0.0);
        const double bound = std::sqrt(6.0 / (static_cast<double>(layer.in) + layer.out));
        for (double& w : layer.w) w = (2.0 * rng.next_double() - 1.0) * bound;
    }
    return model;
}

inline MlpModel init_mlp(const MlpConfig& cfg) {
    Rng rng(cfg.seed);
    return init_mlp(cfg, rng);
}

// Reusable activation buffers for forward/backward passes.
struct MlpScratch {
    std::vector<ScoreVector> acts;    // acts[l] = output of layer l (ReLU'd for hidden)
    std::vector<ScoreVector> deltas;  // deltas[l] = dLoss/d(layer l pre-activation)
    ScoreVector probs;

    void resize(const MlpModel& model) {
        acts.resize(model.layers.size());
        deltas.resize(model.layers.size());
        for (std::size_t l = 0; l < model.layers.size(); ++l) {
            acts[l].assign(model.layers[l].out, 0.0);
            deltas[l].assign(model.layers[l].out, 0.0);
        }
        probs.assign(model.layers.empty() ? 0 : model.layers.back().out, 0.0);
    }
};

// Logits for one input; hidden activations are rectified in place.
inline const ScoreVector& forward_logits(const MlpModel& model, const ScoreVector& x,
                                         MlpScratch& scratch) {
    if (x.size() != model.config.in_dim) throw InvalidInput("forward: input dimension mismatch");
    const ScoreVector* in = &x;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const Layer& layer = model.layers[l];
        ScoreVector& out = scratch.acts[l];
        out.assign(layer.b.begin(), layer.b.end());
        const double* w = layer.w.data();
        for (std::uint32_t i = 0; i < layer.in; ++i) {
            const double a = (*in)[i];
            if (a != 0.0) detail::axpy(layer.out, a, w + static_cast<std::size_t>(i) * layer.out, out.data());
        }
        if (l + 1 < model.layers.size()) {
            for (double& v : out) v = v > 0.0 ? v : 0.0;
        }
        in = &out;
    }
    return scratch.acts.back();
}

inline double log_sum_exp(const ScoreVector& logits, double& max_out) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    max_out = mx;
    return std::log(sum);
}

// Class probabilities for one input. Sums to 1 within 1e-6 for finite inputs.
inline ScoreVector forward_softmax(const MlpModel& model, const ScoreVector& x) {
    MlpScratch scratch;
    scratch.resize(model);
    const ScoreVector& logits = forward_logits(model, x, scratch);
    ScoreVector probs(logits.size());
    double mx = 0.0;
    const double lse = log_sum_exp(logits, mx);
    for (std::size_t c = 0; c < logits.size(); ++c) probs[c] = std::exp(logits[c] - mx - lse);
    return probs;
}

// Rank view of the softmax output; the rank-1 index is the Top-1 prediction.
inline RankVector predict_rank(const MlpModel& model, const ScoreVector& x) {
    return rank_of(forward_softmax(model, x));
}

// Top-1 class without the full sort; ties resolve to the lower index,
// matching rank_of.
inline std::uint32_t argmax_label(const MlpModel& model, const ScoreVector& x, MlpScratch& scratch) {
    const ScoreVector& logits = forward_logits(model, x, scratch);
    std::uint32_t best = 0;
    for (std::uint32_t c = 1; c < logits.size(); ++c) {
        if (logits[c] > logits[best]) best = c;
    }
    return best;
}

// A training target as a sparse distribution over classes. Hard labels are
// the single-term case; soft distillation targets carry k terms.
struct SparseTarget {
    std::vector<std::pair<std::uint32_t, double>> terms;
};

struct TargetDataset {
    std::vector<ScoreVector> inputs;
    std::vector<SparseTarget> targets;
};

struct MlpGradients {
    std::vector<Layer> layers;  // same shapes as the model

    void match(const MlpModel& model) {
        layers.resize(model.layers.size());
        for (std::size_t l = 0; l < model.layers.size(); ++l) {
            layers[l].in = model.layers[l].in;
            layers[l].out = model.layers[l].out;
            layers[l].w.assign(model.layers[l].w.size(), 0.0);
            layers[l].b.assign(model.layers[l].b.size(), 0.0);
        }
    }

    void zero() {
        for (auto& l : layers) {
            std::fill(l.w.begin(), l.w.end(), 0.0);
            std::fill(l.b.begin(), l.b.end(), 0.0);
        }
    }
};

namespace detail {

// Cross-entropy loss and gradient accumulation for one sample. Gradients
// are summed into `grad`; the caller divides by the batch size.
inline double backprop_sample(const MlpModel& model, const ScoreVector& x,
                              const SparseTarget& target, MlpGradients& grad,
                              MlpScratch& scratch) {
    const ScoreVector& logits = forward_logits(model, x, scratch);
    double mx = 0.0;
    const double lse = log_sum_exp(logits, mx);

    double loss = 0.0;
    ScoreVector& delta = scratch.deltas.back();
    for (std::size_t c = 0; c < logits.size(); ++c) delta[c] = std::exp(logits[c] - mx - lse);
    for (const auto& [cls, weight] : target.terms) {
        if (cls >= logits.size()) throw InvalidInput("train: label out of range");
        loss -= weight * (logits[cls] - mx - lse);
        delta[cls] -= weight;
    }

    for (std::size_t l = model.layers.size(); l-- > 0;) {
        const Layer& layer = model.layers[l];
        Layer& g = grad.layers[l];
        const ScoreVector& a_in = (l == 0) ? x : scratch.acts[l - 1];
        const ScoreVector& d = scratch.deltas[l];
        for (std::uint32_t i = 0; i < layer.in; ++i) {
            const double a = a_in[i];
            if (a != 0.0) axpy(layer.out, a, d.data(), g.w.data() + static_cast<std::size_t>(i) * layer.out);
        }
        for (std::uint32_t o = 0; o < layer.out; ++o) g.b[o] += d[o];
        if (l > 0) {
            ScoreVector& d_prev = scratch.deltas[l - 1];
            for (std::uint32_t j = 0; j < layer.in; ++j) {
                // ReLU derivative: gradient flows only through active units.
                d_prev[j] = (a_in[j] > 0.0)
                                ? dot(layer.out, layer.w.data() + static_cast<std::size_t>(j) * layer.out, d.data())
                                : 0.0;
            }
        }
    }
    return loss;
}

inline SparseTarget hard_target(OneHotLabel label) { return SparseTarget{{{label.class_id, 1.0}}}; }

}  // namespace detail

// Mean cross-entropy and exact analytic gradients over a batch.
inline std::pair<double, MlpGradients> loss_and_grad(const MlpModel& model,
                                                     const LabeledDataset& batch) {
    if (batch.samples.empty()) throw InvalidInput("loss_and_grad: empty batch");
    MlpGradients grad;
    grad.match(model);
    MlpScratch scratch;
    scratch.resize(model);
    double loss_sum = 0.0;
    for (const auto& s : batch.samples) {
        loss_sum += detail::backprop_sample(model, s.input, detail::hard_target(s.label), grad, scratch);
    }
    const double inv = 1.0 / static_cast<double>(batch.samples.size());
    for (auto& l : grad.layers) {
        for (double& v : l.w) v *= inv;
        for (double& v : l.b) v *= inv;
    }
    return {loss_sum * inv, grad};
}

struct TrainResult {
    MlpModel model;
    std::vector<double> loss_trace;  // per-epoch mean loss
};

// Mini-batch gradient descent on sparse-distribution targets. Order is
// reshuffled every epoch from shuffle_seed; everything is deterministic
// given (model, data, config).
inline TrainResult train_targets(const MlpModel& start, const TargetDataset& data,
                                 const TrainConfig& tc) {
    if (data.inputs.empty()) throw InvalidInput("train: empty dataset");
    if (data.inputs.size() != data.targets.size()) throw InvalidInput("train: inputs/targets size mismatch");
    if (tc.epochs == 0) throw InvalidInput("train: epochs must be positive");
    if (tc.batch_size == 0) throw InvalidInput("train: batch_size must be positive");
    if (!(tc.step_size >= 0.0)) throw InvalidInput("train: step_size must be >= 0");

    TrainResult result;
    result.model = start;
    MlpModel& model = result.model;

    const std::size_t n = data.inputs.size();
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    Rng shuffle_rng(tc.shuffle_seed);

    MlpGradients grad;
    grad.match(model);
    MlpScratch scratch;
    scratch.resize(model);

    for (std::uint32_t epoch = 0; epoch < tc.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss_sum = 0.0;
        for (std::size_t start_idx = 0; start_idx < n; start_idx += tc.batch_size) {
            const std::size_t end_idx = std::min(n, start_idx + tc.batch_size);
            const std::size_t batch_n = end_idx - start_idx;
            grad.zero();
            double batch_loss = 0.0;
            for (std::size_t i = start_idx; i < end_idx; ++i) {
                const std::uint32_t s = order[i];
                batch_loss += detail::backprop_sample(model, data.inputs[s], data.targets[s], grad, scratch);
            }
            if (!std::isfinite(batch_loss)) {
                throw TrainingDiverged(epoch, "non-finite batch loss");
            }
            epoch_loss_sum += batch_loss;
            const double scale = tc.step_size / static_cast<double>(batch_n);
            for (std::size_t l = 0; l < model.layers.size(); ++l) {
                Layer& layer = model.layers[l];
                const Layer& g = grad.layers[l];
                for (std::size_t i = 0; i < layer.w.size(); ++i) layer.w[i] -= scale * g.w[i];
                for (std::size_t i = 0; i < layer.b.size(); ++i) layer.b[i] -= scale * g.b[i];
            }
        }
        result.loss_trace.push_back(epoch_loss_sum / static_cast<double>(n));
    }
    return result;
}

inline TrainResult train(const MlpModel& start, const LabeledDataset& data, const TrainConfig& tc) {
    TargetDataset targets;
    targets.inputs.reserve(data.samples.size());
    targets.targets.reserve(data.samples.size());
    for (const auto& s : data.samples) {
        targets.inputs.push_back(s.input);
        targets.targets.push_back(detail::hard_target(s.label));
    }
    return train_targets(start, targets, tc);
}

// ---------------------------------------------------------------------------
// Model file format: magic "DFRDMLP1", then the dimension chain as 32-bit
// little-endian integers (count first), then per layer the weights row-major
// ([out][in]) and the biases, all 64-bit little-endian IEEE doubles.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u32le(std::ostream& os, std::uint32_t v) {
    unsigned char buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), 4);
}

inline void write_f64le(std::ostream& os, double d) {
    const auto v = std::bit_cast<std::uint64_t>(d);
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), 8);
}

inline std::uint32_t read_u32le(std::istream& is) {
    unsigned char buf[4];
    if (!is.read(reinterpret_cast<char*>(buf), 4)) throw IoError("model file: truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
    return v;
}

inline double read_f64le(std::istream& is) {
    unsigned char buf[8];
    if (!is.read(reinterpret_cast<char*>(buf), 8)) throw IoError("model file: truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return std::bit_cast<double>(v);
}

inline constexpr char model_magic[8] = {'D', 'F', 'R', 'D', 'M', 'L', 'P', '1'};

}  // namespace detail

inline void save_mlp(const MlpModel& model, std::ostream& os) {
    os.write(detail::model_magic, 8);
    const auto n_dims = static_cast<std::uint32_t>(model.layers.size() + 1);
    detail::write_u32le(os, n_dims);
    detail::write_u32le(os, model.config.in_dim);
    for (const auto& l : model.layers) detail::write_u32le(os, l.out);
    for (const auto& l : model.layers) {
        for (std::uint32_t o = 0; o < l.out; ++o) {
            for (std::uint32_t i = 0; i < l.in; ++i) {
                detail::write_f64le(os, l.w[static_cast<std::size_t>(i) * l.out + o]);
            }
        }
        for (std::uint32_t o = 0; o < l.out; ++o) detail::write_f64le(os, l.b[o]);
    }
    if (!os) throw IoError("model file: write failed");
}

inline void save_mlp(const MlpModel& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("model file: cannot open for write: " + path);
    save_mlp(model, os);
}

inline MlpModel load_mlp(std::istream& is) {
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, detail::model_magic, 8) != 0) {
        throw IoError("model file: bad magic");
    }
    const std::uint32_t n_dims = detail::read_u32le(is);
    if (n_dims < 2 || n_dims > 64) throw IoError("model file: implausible dimension count");
    std::vector<std::uint32_t> dims(n_dims);
    for (auto& d : dims) {
        d = detail::read_u32le(is);
        if (d == 0 || d > (1u << 24)) throw IoError("model file: implausible dimension");
    }
    MlpModel model;
    model.config.in_dim = dims.front();
    model.config.out_dim = dims.back();
    model.config.hidden_dims.assign(dims.begin() + 1, dims.end() - 1);
    model.layers.resize(n_dims - 1);
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        Layer& layer = model.layers[l];
        layer.in = dims[l];
        layer.out = dims[l + 1];
        layer.w.resize(static_cast<std::size_t>(layer.in) * layer.out);
        layer.b.resize(layer.out);
        for (std::uint32_t o = 0; o < layer.out; ++o) {
            for (std::uint32_t i = 0; i < layer.in; ++i) {
                const double v = detail::read_f64le(is);
                if (!std::isfinite(v)) throw IoError("model file: non-finite parameter");
                layer.w[static_cast<std::size_t>(i) * layer.out + o] = v;
            }
        }
        for (std::uint32_t o = 0; o < layer.out; ++o) {
            const double v = detail::read_f64le(is);
            if (!std::isfinite(v)) throw IoError("model file: non-finite parameter");
            layer.b[o] = v;
        }
    }
    return model;
}

inline MlpModel load_mlp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("model file: cannot open: " + path);
    return load_mlp(is);
}

// Order-stable digest of all parameters; used to assert seed discipline.
inline std::uint64_t checksum_mlp(const MlpModel& model) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto feed = [&h](double d) {
        const auto v = std::bit_cast<std::uint64_t>(d);
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 0x100000001b3ull;
        }
    };
    for (const auto& l : model.layers) {
        for (double v : l.w) feed(v);
        for (double v : l.b) feed(v);
    }
    return h;
}

}  // namespace dfrd
