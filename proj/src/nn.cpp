#include "doa/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace doa {

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "identity"; }
std::string to_string(OutputHead h) { return h == OutputHead::softmax ? "softmax" : "sigmoid"; }

Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "identity") return Activation::identity;
    throw std::invalid_argument("unknown activation '" + s + "'");
}

OutputHead head_from_string(const std::string& s) {
    if (s == "softmax") return OutputHead::softmax;
    if (s == "sigmoid") return OutputHead::sigmoid;
    throw std::invalid_argument("unknown output head '" + s + "'");
}

template <typename T>
std::size_t DenseNetwork<T>::num_parameters() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
    return n;
}

template <typename T>
void DenseNetwork<T>::validate() const {
    if (layers.empty()) throw std::invalid_argument("network has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        if (l.bias.size() != l.weights.rows()) throw std::invalid_argument("bias does not match layer width");
        if (i > 0 && l.in_dim() != layers[i - 1].out_dim()) throw std::invalid_argument("layer dimensions do not chain");
        if (!l.weights.allFinite() || !l.bias.allFinite()) throw std::invalid_argument("non-finite network parameters");
    }
}

template <typename T>
Mat<T> glorot_init(Rng& rng, Eigen::Index fan_out, Eigen::Index fan_in) {
    if (fan_out < 1 || fan_in < 1) throw std::invalid_argument("glorot_init: dimensions must be positive");
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-a, a);
    Mat<T> w(fan_out, fan_in);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(u(rng));
    return w;
}

template <typename T>
DenseNetwork<T> make_network(Eigen::Index input_dim, Eigen::Index output_dim, const Architecture& arch,
                             OutputHead head, Rng& rng) {
    DenseNetwork<T> net;
    net.head = head;
    Eigen::Index in = input_dim;
    for (int h = 0; h < arch.hidden_layers; ++h) {
        net.layers.push_back({glorot_init<T>(rng, arch.hidden_units, in), Vec<T>::Zero(arch.hidden_units),
                              Activation::relu});
        in = arch.hidden_units;
    }
    net.layers.push_back({glorot_init<T>(rng, output_dim, in), Vec<T>::Zero(output_dim), Activation::identity});
    return net;
}

template <typename T>
Mat<T> apply_head(OutputHead head, const Mat<T>& logits) {
    Mat<T> out(logits.rows(), logits.cols());
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        if (head == OutputHead::softmax) {
            const T m = logits.col(c).maxCoeff();
            double sum = 0.0;
            for (Eigen::Index r = 0; r < logits.rows(); ++r) sum += std::exp(static_cast<double>(logits(r, c) - m));
            for (Eigen::Index r = 0; r < logits.rows(); ++r)
                out(r, c) = static_cast<T>(std::exp(static_cast<double>(logits(r, c) - m)) / sum);
        } else {
            for (Eigen::Index r = 0; r < logits.rows(); ++r)
                out(r, c) = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(logits(r, c)))));
        }
    }
    return out;
}

template <typename T>
Mat<T> forward(const DenseNetwork<T>& net, const Mat<T>& input, ForwardCache<T>* cache) {
    if (input.rows() != net.input_dim()) throw std::invalid_argument("forward: input dimension mismatch");
    if (cache != nullptr) cache->layer_inputs.clear();
    Mat<T> x = input;
    for (const auto& layer : net.layers) {
        Mat<T> z;
        kernels::affine_forward(layer.weights, layer.bias, x, z);
        if (layer.activation == Activation::relu) kernels::relu_inplace(z);
        if (cache != nullptr) cache->layer_inputs.push_back(std::move(x));
        x = std::move(z);
    }
    Mat<T> out = apply_head(net.head, x);
    if (cache != nullptr) cache->logits = std::move(x);
    return out;
}

template <typename T>
Gradients<T> backward(const DenseNetwork<T>& net, const ForwardCache<T>& cache, const Mat<T>& grad_logits) {
    const std::size_t n = net.layers.size();
    if (cache.layer_inputs.size() != n) throw std::invalid_argument("backward: cache does not match network");
    Gradients<T> g;
    g.weights.resize(n);
    g.bias.resize(n);
    Mat<T> grad = grad_logits;
    if (net.layers.back().activation == Activation::relu) kernels::relu_backward_inplace(cache.logits, grad);
    for (std::size_t i = n; i-- > 0;) {
        const auto& layer = net.layers[i];
        const Mat<T>& input = cache.layer_inputs[i];
        Mat<T> grad_input;
        kernels::affine_backward(layer.weights, input, grad, g.weights[i], g.bias[i], i > 0 ? &grad_input : nullptr);
        if (i > 0) {
            if (net.layers[i - 1].activation == Activation::relu) kernels::relu_backward_inplace(input, grad_input);
            grad = std::move(grad_input);
        }
    }
    return g;
}

template <typename T>
LossAndGrad<T> softmax_xent(const Vec<T>& logits, int label) {
    const Eigen::Index g = label - 1;
    if (g < 0 || g >= logits.size()) throw std::out_of_range("softmax_xent: label out of range");
    const double m = static_cast<double>(logits.maxCoeff());
    double sum = 0.0;
    for (Eigen::Index i = 0; i < logits.size(); ++i) sum += std::exp(static_cast<double>(logits[i]) - m);
    const double lse = m + std::log(sum);
    LossAndGrad<T> out;
    out.loss = lse - static_cast<double>(logits[g]);
    out.grad.resize(logits.size());
    for (Eigen::Index i = 0; i < logits.size(); ++i)
        out.grad[i] = static_cast<T>(std::exp(static_cast<double>(logits[i]) - lse) - (i == g ? 1.0 : 0.0));
    return out;
}

template <typename T>
LossAndGrad<T> sigmoid_bce(const Vec<T>& logits, const Vec<T>& labels) {
    if (labels.size() != logits.size()) throw std::invalid_argument("sigmoid_bce: length mismatch");
    LossAndGrad<T> out;
    out.grad.resize(logits.size());
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        const double x = static_cast<double>(logits[i]);
        const double v = static_cast<double>(labels[i]);
        out.loss += std::max(x, 0.0) - x * v + std::log1p(std::exp(-std::abs(x)));
        const double sig = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        out.grad[i] = static_cast<T>(sig - v);
    }
    return out;
}

template <typename T>
AdamState<T> AdamState<T>::zeros_like(const DenseNetwork<T>& net) {
    AdamState<T> s;
    for (const auto& l : net.layers) {
        s.m_weights.push_back(Mat<T>::Zero(l.weights.rows(), l.weights.cols()));
        s.v_weights.push_back(Mat<T>::Zero(l.weights.rows(), l.weights.cols()));
        s.m_bias.push_back(Vec<T>::Zero(l.bias.size()));
        s.v_bias.push_back(Vec<T>::Zero(l.bias.size()));
    }
    return s;
}

template <typename T>
void adam_update(std::span<T> params, std::span<const T> grads, std::span<T> m, std::span<T> v, std::int64_t t,
                 double lr, const AdamConfig& cfg) {
    if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size())
        throw std::invalid_argument("adam_update: shape mismatch");
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    const T b1 = static_cast<T>(cfg.beta1);
    const T b2 = static_cast<T>(cfg.beta2);
    const std::size_t n = params.size();
    for (std::size_t i = 0; i < n; ++i) {
        const T g = grads[i];
        m[i] = b1 * m[i] + (T(1) - b1) * g;
        v[i] = b2 * v[i] + (T(1) - b2) * g * g;
        const double mhat = static_cast<double>(m[i]) / c1;
        const double vhat = static_cast<double>(v[i]) / c2;
        params[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + cfg.epsilon));
    }
}

namespace {

template <typename Dense>
auto as_span(Dense& m) {
    return std::span(m.data(), static_cast<std::size_t>(m.size()));
}

}  // namespace

template <typename T>
void adam_step(DenseNetwork<T>& net, const Gradients<T>& grads, AdamState<T>& state, double lr,
               const AdamConfig& cfg) {
    if (grads.weights.size() != net.layers.size() || state.m_weights.size() != net.layers.size())
        throw std::invalid_argument("adam_step: shape mismatch");
    ++state.step;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        adam_update<T>(as_span(net.layers[i].weights), as_span(grads.weights[i]), as_span(state.m_weights[i]),
                       as_span(state.v_weights[i]), state.step, lr, cfg);
        adam_update<T>(as_span(net.layers[i].bias), as_span(grads.bias[i]), as_span(state.m_bias[i]),
                       as_span(state.v_bias[i]), state.step, lr, cfg);
    }
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("learning rate must be non-negative");
    if (!(loss_smoothing > 0.0 && loss_smoothing <= 1.0)) throw std::invalid_argument("loss smoothing must be in (0, 1]");
}

double batch_loss_and_grad(OutputHead head, const Mat<float>& logits, const Batch& batch, Mat<float>& grad_logits) {
    const Eigen::Index n = logits.cols();
    grad_logits.resize(logits.rows(), n);
    const float inv_n = 1.0f / static_cast<float>(n);
    double total = 0.0;
    for (Eigen::Index c = 0; c < n; ++c) {
        const Vec<float> col = logits.col(c);
        LossAndGrad<float> lg = head == OutputHead::softmax
                                    ? softmax_xent<float>(col, batch.classes.at(static_cast<std::size_t>(c)))
                                    : sigmoid_bce<float>(col, batch.targets.col(c));
        total += lg.loss;
        grad_logits.col(c) = lg.grad * inv_n;
    }
    return total / static_cast<double>(n);
}

Trainer::Trainer(DenseNetwork<float>& net, const TrainConfig& cfg)
    : net_(net), cfg_(cfg), state_(AdamState<float>::zeros_like(net)) {
    cfg_.validate();
}

double Trainer::step(const Batch& batch) {
    ForwardCache<float> cache;
    forward(net_, batch.inputs, &cache);
    Mat<float> grad_logits;
    const double loss = batch_loss_and_grad(net_.head, cache.logits, batch, grad_logits);
    const Gradients<float> grads = backward(net_, cache, grad_logits);
    adam_step(net_, grads, state_, cfg_.learning_rate, cfg_.adam);
    return loss;
}

TrainResult train(DenseNetwork<float>& net, const BatchSource& source, const TrainConfig& cfg) {
    Trainer trainer(net, cfg);
    LossSmoother smoother(cfg.loss_smoothing);
    TrainResult result;
    while (result.samples_seen < cfg.total_samples) {
        const auto want = static_cast<std::size_t>(
            std::min<std::uint64_t>(cfg.batch_size, cfg.total_samples - result.samples_seen));
        const Batch batch = source(want);
        if (batch.size() < want) throw std::runtime_error("training stream exhausted before total_samples");
        result.loss_trace.push_back(smoother.update(trainer.step(batch)));
        result.samples_seen += want;
    }
    return result;
}

void write_tensor(const std::filesystem::path& file, const Mat<float>& m) {
    static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");
    const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
    std::ofstream out(file, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    out.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(rm.size() * sizeof(float)));
}

Mat<float> read_tensor(const std::filesystem::path& file, Eigen::Index rows, Eigen::Index cols) {
    const auto expected = static_cast<std::uintmax_t>(rows * cols) * sizeof(float);
    if (!std::filesystem::exists(file) || std::filesystem::file_size(file) != expected)
        throw std::runtime_error("tensor file " + file.string() + " does not match manifest dimensions");
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
    std::ifstream in(file, std::ios::binary);
    in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(expected));
    return rm;
}

void save_network(const std::filesystem::path& dir, const DenseNetwork<float>& net, const nlohmann::json& metadata) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["format_version"] = kCheckpointFormatVersion;
    manifest["kind"] = "dense_network";
    manifest["precision"] = "float32";
    manifest["byte_order"] = "little";
    manifest["head"] = to_string(net.head);
    manifest["layers"] = nlohmann::json::array();
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const auto& l = net.layers[i];
        const std::string w_name = "layer" + std::to_string(i) + "_weights.f32";
        const std::string b_name = "layer" + std::to_string(i) + "_bias.f32";
        write_tensor(dir / w_name, l.weights);
        write_tensor(dir / b_name, l.bias);
        manifest["layers"].push_back({{"in", l.in_dim()},
                                      {"out", l.out_dim()},
                                      {"activation", to_string(l.activation)},
                                      {"weights", w_name},
                                      {"bias", b_name}});
    }
    manifest["training"] = metadata;
    std::ofstream out(dir / "manifest.json");
    out << manifest.dump(2) << '\n';
}

nlohmann::json load_manifest(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw std::runtime_error("missing manifest.json in " + dir.string());
    return nlohmann::json::parse(in);
}

void save_adam_state(const std::filesystem::path& dir, const AdamState<float>& state) {
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < state.m_weights.size(); ++i) {
        const std::string p = "layer" + std::to_string(i);
        write_tensor(dir / (p + "_m_weights.f32"), state.m_weights[i]);
        write_tensor(dir / (p + "_v_weights.f32"), state.v_weights[i]);
        write_tensor(dir / (p + "_m_bias.f32"), state.m_bias[i]);
        write_tensor(dir / (p + "_v_bias.f32"), state.v_bias[i]);
    }
    std::ofstream out(dir / "adam.json");
    out << nlohmann::json{{"step", state.step}, {"layers", state.m_weights.size()}}.dump(2) << '\n';
}

AdamState<float> load_adam_state(const std::filesystem::path& dir, const DenseNetwork<float>& net) {
    std::ifstream in(dir / "adam.json");
    if (!in) throw std::runtime_error("missing adam.json in " + dir.string());
    const auto meta = nlohmann::json::parse(in);
    if (meta.at("layers").get<std::size_t>() != net.layers.size())
        throw std::runtime_error("optimizer state does not match the network");
    AdamState<float> s;
    s.step = meta.at("step").get<std::int64_t>();
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const std::string p = "layer" + std::to_string(i);
        const auto r = net.layers[i].weights.rows();
        const auto c = net.layers[i].weights.cols();
        s.m_weights.push_back(read_tensor(dir / (p + "_m_weights.f32"), r, c));
        s.v_weights.push_back(read_tensor(dir / (p + "_v_weights.f32"), r, c));
        s.m_bias.push_back(read_tensor(dir / (p + "_m_bias.f32"), r, 1));
        s.v_bias.push_back(read_tensor(dir / (p + "_v_bias.f32"), r, 1));
    }
    return s;
}

DenseNetwork<float> load_network(const std::filesystem::path& dir) {
    const auto manifest = load_manifest(dir);
    if (manifest.at("format_version").get<int>() != kCheckpointFormatVersion)
        throw std::runtime_error("unsupported checkpoint format version");
    DenseNetwork<float> net;
    net.head = head_from_string(manifest.at("head").get<std::string>());
    for (const auto& l : manifest.at("layers")) {
        const auto in = l.at("in").get<Eigen::Index>();
        const auto out = l.at("out").get<Eigen::Index>();
        DenseLayer<float> layer;
        layer.weights = read_tensor(dir / l.at("weights").get<std::string>(), out, in);
        layer.bias = read_tensor(dir / l.at("bias").get<std::string>(), out, 1);
        layer.activation = activation_from_string(l.at("activation").get<std::string>());
        net.layers.push_back(std::move(layer));
    }
    net.validate();
    return net;
}

#define DOA_NN_INSTANTIATE(T)                                                                                  \
    template struct DenseNetwork<T>;                                                                           \
    template Mat<T> glorot_init<T>(Rng&, Eigen::Index, Eigen::Index);                                          \
    template DenseNetwork<T> make_network<T>(Eigen::Index, Eigen::Index, const Architecture&, OutputHead, Rng&); \
    template Mat<T> apply_head<T>(OutputHead, const Mat<T>&);                                                  \
    template Mat<T> forward<T>(const DenseNetwork<T>&, const Mat<T>&, ForwardCache<T>*);                       \
    template Gradients<T> backward<T>(const DenseNetwork<T>&, const ForwardCache<T>&, const Mat<T>&);          \
    template LossAndGrad<T> softmax_xent<T>(const Vec<T>&, int);                                               \
    template LossAndGrad<T> sigmoid_bce<T>(const Vec<T>&, const Vec<T>&);                                      \
    template struct AdamState<T>;                                                                              \
    template void adam_update<T>(std::span<T>, std::span<const T>, std::span<T>, std::span<T>, std::int64_t,   \
                                 double, const AdamConfig&);                                                   \
    template void adam_step<T>(DenseNetwork<T>&, const Gradients<T>&, AdamState<T>&, double, const AdamConfig&);

DOA_NN_INSTANTIATE(float)
DOA_NN_INSTANTIATE(double)

#undef DOA_NN_INSTANTIATE

}  // namespace doa
