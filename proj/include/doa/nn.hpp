#pragma once

// Dense feedforward networks trained from scratch: Glorot init, forward and
// reverse-mode passes, softmax / sigmoid cross-entropy heads, Adam, a
// streaming training loop and the on-disk checkpoint format.
//
// Samples are stored as columns. Training runs in float; gradient checks
// instantiate the same code in double.

#include "doa/kernels.hpp"
#include "doa/rng.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace doa {

enum class Activation { relu, identity };
enum class OutputHead { softmax, sigmoid };

std::string to_string(Activation a);
std::string to_string(OutputHead h);
Activation activation_from_string(const std::string& s);
OutputHead head_from_string(const std::string& s);

template <typename T>
struct DenseLayer {
    Mat<T> weights;  // out x in
    Vec<T> bias;
    Activation activation = Activation::relu;

    Eigen::Index in_dim() const { return weights.cols(); }
    Eigen::Index out_dim() const { return weights.rows(); }
};

template <typename T>
struct DenseNetwork {
    std::vector<DenseLayer<T>> layers;
    OutputHead head = OutputHead::softmax;

    Eigen::Index input_dim() const { return layers.front().in_dim(); }
    Eigen::Index output_dim() const { return layers.back().out_dim(); }
    std::size_t num_parameters() const;
    void validate() const;

    template <typename U>
    DenseNetwork<U> cast() const {
        DenseNetwork<U> out;
        out.head = head;
        for (const auto& l : layers)
            out.layers.push_back(DenseLayer<U>{l.weights.template cast<U>(), l.bias.template cast<U>(), l.activation});
        return out;
    }
};

struct Architecture {
    int hidden_layers = 2;
    int hidden_units = 256;
};

// Glorot-uniform weights on [-a, a], a = sqrt(6 / (fan_in + fan_out)).
template <typename T>
Mat<T> glorot_init(Rng& rng, Eigen::Index fan_out, Eigen::Index fan_in);

// ReLU hidden layers, identity output layer, biases zero.
template <typename T>
DenseNetwork<T> make_network(Eigen::Index input_dim, Eigen::Index output_dim, const Architecture& arch,
                             OutputHead head, Rng& rng);

template <typename T>
struct ForwardCache {
    std::vector<Mat<T>> layer_inputs;  // input seen by each layer
    Mat<T> logits;
};

// Head outputs (softmax columns or element-wise sigmoid). Fills `cache` when given.
template <typename T>
Mat<T> forward(const DenseNetwork<T>& net, const Mat<T>& input, ForwardCache<T>* cache = nullptr);

template <typename T>
Mat<T> apply_head(OutputHead head, const Mat<T>& logits);

template <typename T>
struct Gradients {
    std::vector<Mat<T>> weights;
    std::vector<Vec<T>> bias;
};

template <typename T>
Gradients<T> backward(const DenseNetwork<T>& net, const ForwardCache<T>& cache, const Mat<T>& grad_logits);

template <typename T>
struct LossAndGrad {
    double loss = 0.0;
    Vec<T> grad;
};

// -log softmax(logits)_label with label 1-based; gradient softmax - onehot.
template <typename T>
LossAndGrad<T> softmax_xent(const Vec<T>& logits, int label);

// Summed binary cross-entropy in logit form; gradient sigmoid(logits) - v.
template <typename T>
LossAndGrad<T> sigmoid_bce(const Vec<T>& logits, const Vec<T>& labels);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
    std::vector<Mat<T>> m_weights, v_weights;
    std::vector<Vec<T>> m_bias, v_bias;
    std::int64_t step = 0;

    static AdamState zeros_like(const DenseNetwork<T>& net);
};

// One bias-corrected Adam update of a flat parameter block at step t >= 1.
template <typename T>
void adam_update(std::span<T> params, std::span<const T> grads, std::span<T> m, std::span<T> v, std::int64_t t,
                 double lr, const AdamConfig& cfg);

template <typename T>
void adam_step(DenseNetwork<T>& net, const Gradients<T>& grads, AdamState<T>& state, double lr,
               const AdamConfig& cfg);

struct TrainConfig {
    std::size_t batch_size = 256;
    double learning_rate = 1e-3;
    std::uint64_t total_samples = 200000;
    AdamConfig adam;
    std::uint64_t seed = 1;
    double loss_smoothing = 0.02;  // EMA weight of the newest batch loss

    void validate() const;
};

// A training batch: inputs in columns plus class labels (softmax head) or
// multi-hot targets (sigmoid head).
struct Batch {
    Mat<float> inputs;
    std::vector<int> classes;
    Mat<float> targets;

    std::size_t size() const { return static_cast<std::size_t>(inputs.cols()); }
};

// Returns at most `count` samples; fewer means the stream is exhausted.
using BatchSource = std::function<Batch(std::size_t count)>;

// Mean loss over the batch and the matching logit gradient (already / batch).
double batch_loss_and_grad(OutputHead head, const Mat<float>& logits, const Batch& batch, Mat<float>& grad_logits);

// Owns the optimizer state for one network; one call = one Adam step.
class Trainer {
public:
    Trainer(DenseNetwork<float>& net, const TrainConfig& cfg);

    double step(const Batch& batch);
    const AdamState<float>& state() const { return state_; }
    AdamState<float>& state() { return state_; }

private:
    DenseNetwork<float>& net_;
    TrainConfig cfg_;
    AdamState<float> state_;
};

struct TrainResult {
    std::vector<double> loss_trace;  // exponentially smoothed, one entry per step
    std::uint64_t samples_seen = 0;
};

// Streams exactly cfg.total_samples samples through the network.
TrainResult train(DenseNetwork<float>& net, const BatchSource& source, const TrainConfig& cfg);

class LossSmoother {
public:
    explicit LossSmoother(double weight) : weight_(weight) {}
    double update(double loss) {
        value_ = started_ ? (1.0 - weight_) * value_ + weight_ * loss : loss;
        started_ = true;
        return value_;
    }
    double value() const { return value_; }
    bool started() const { return started_; }
    void restore(double value, bool started) {
        value_ = value;
        started_ = started;
    }

private:
    double weight_;
    double value_ = 0.0;
    bool started_ = false;
};

// Checkpoint directory: manifest.json plus one raw little-endian float32
// file per tensor, row-major. `metadata` is stored under "training".
inline constexpr int kCheckpointFormatVersion = 1;
void save_network(const std::filesystem::path& dir, const DenseNetwork<float>& net,
                  const nlohmann::json& metadata = nlohmann::json::object());
DenseNetwork<float> load_network(const std::filesystem::path& dir);
nlohmann::json load_manifest(const std::filesystem::path& dir);

// Adam moments and step counter next to a checkpoint, for resumable runs.
void save_adam_state(const std::filesystem::path& dir, const AdamState<float>& state);
AdamState<float> load_adam_state(const std::filesystem::path& dir, const DenseNetwork<float>& net);

void write_tensor(const std::filesystem::path& file, const Mat<float>& m);
Mat<float> read_tensor(const std::filesystem::path& file, Eigen::Index rows, Eigen::Index cols);

}  // namespace doa
