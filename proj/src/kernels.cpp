#include "doa/kernels.hpp"

#include <algorithm>
#include <stdexcept>

namespace doa::kernels {

namespace {

Eigen::Index num_blocks(Eigen::Index n) { return (n + kBlock - 1) / kBlock; }

}  // namespace

template <typename T>
void affine_forward(const Mat<T>& weights, const Vec<T>& bias, const Mat<T>& input, Mat<T>& out) {
    if (input.rows() != weights.cols()) throw std::invalid_argument("affine_forward: dimension mismatch");
    const Eigen::Index cols = input.cols();
    out.resize(weights.rows(), cols);
    const Eigen::Index blocks = num_blocks(cols);
#pragma omp parallel for schedule(static)
    for (Eigen::Index b = 0; b < blocks; ++b) {
        const Eigen::Index c0 = b * kBlock;
        const Eigen::Index n = std::min(kBlock, cols - c0);
        out.middleCols(c0, n).noalias() = weights * input.middleCols(c0, n);
        out.middleCols(c0, n).colwise() += bias;
    }
}

template <typename T>
void affine_backward(const Mat<T>& weights, const Mat<T>& input, const Mat<T>& grad_out, Mat<T>& grad_weights,
                     Vec<T>& grad_bias, Mat<T>* grad_input) {
    const Eigen::Index rows = weights.rows();
    const Eigen::Index cols = input.cols();
    grad_weights.resize(rows, weights.cols());
    grad_bias.resize(rows);
    const Eigen::Index row_blocks = num_blocks(rows);
#pragma omp parallel for schedule(static)
    for (Eigen::Index b = 0; b < row_blocks; ++b) {
        const Eigen::Index r0 = b * kBlock;
        const Eigen::Index n = std::min(kBlock, rows - r0);
        grad_weights.middleRows(r0, n).noalias() = grad_out.middleRows(r0, n) * input.transpose();
        grad_bias.segment(r0, n) = grad_out.middleRows(r0, n).rowwise().sum();
    }
    if (grad_input != nullptr) {
        grad_input->resize(weights.cols(), cols);
        const Eigen::Index col_blocks = num_blocks(cols);
#pragma omp parallel for schedule(static)
        for (Eigen::Index b = 0; b < col_blocks; ++b) {
            const Eigen::Index c0 = b * kBlock;
            const Eigen::Index n = std::min(kBlock, cols - c0);
            grad_input->middleCols(c0, n).noalias() = weights.transpose() * grad_out.middleCols(c0, n);
        }
    }
}

template <typename T>
void relu_inplace(Mat<T>& z) {
    T* data = z.data();
    const Eigen::Index size = z.size();
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < size; ++i) data[i] = data[i] > T(0) ? data[i] : T(0);
}

template <typename T>
void relu_backward_inplace(const Mat<T>& activation, Mat<T>& grad) {
    const T* a = activation.data();
    T* g = grad.data();
    const Eigen::Index size = grad.size();
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < size; ++i)
        if (!(a[i] > T(0))) g[i] = T(0);
}

std::vector<LabeledSample> generate_samples(const SampleGenerator& gen, std::uint64_t master, std::uint64_t tag,
                                            std::uint64_t first, std::size_t count) {
    std::vector<LabeledSample> out(count);
    const auto n = static_cast<std::int64_t>(count);
#pragma omp parallel for schedule(dynamic, 16)
    for (std::int64_t i = 0; i < n; ++i) {
        Rng rng = make_rng(master, tag, first + static_cast<std::uint64_t>(i));
        out[static_cast<std::size_t>(i)] = gen.generate(rng);
    }
    return out;
}

template void affine_forward<float>(const Mat<float>&, const Vec<float>&, const Mat<float>&, Mat<float>&);
template void affine_forward<double>(const Mat<double>&, const Vec<double>&, const Mat<double>&, Mat<double>&);
template void affine_backward<float>(const Mat<float>&, const Mat<float>&, const Mat<float>&, Mat<float>&,
                                     Vec<float>&, Mat<float>*);
template void affine_backward<double>(const Mat<double>&, const Mat<double>&, const Mat<double>&, Mat<double>&,
                                      Vec<double>&, Mat<double>*);
template void relu_inplace<float>(Mat<float>&);
template void relu_inplace<double>(Mat<double>&);
template void relu_backward_inplace<float>(const Mat<float>&, Mat<float>&);
template void relu_backward_inplace<double>(const Mat<double>&, Mat<double>&);

namespace reference {

template <typename T>
void affine_forward(const Mat<T>& weights, const Vec<T>& bias, const Mat<T>& input, Mat<T>& out) {
    if (input.rows() != weights.cols()) throw std::invalid_argument("affine_forward: dimension mismatch");
    out.resize(weights.rows(), input.cols());
    for (Eigen::Index c = 0; c < input.cols(); ++c)
        for (Eigen::Index r = 0; r < weights.rows(); ++r) {
            double acc = bias[r];
            for (Eigen::Index k = 0; k < weights.cols(); ++k)
                acc += static_cast<double>(weights(r, k)) * static_cast<double>(input(k, c));
            out(r, c) = static_cast<T>(acc);
        }
}

template <typename T>
void affine_backward(const Mat<T>& weights, const Mat<T>& input, const Mat<T>& grad_out, Mat<T>& grad_weights,
                     Vec<T>& grad_bias, Mat<T>* grad_input) {
    grad_weights.resize(weights.rows(), weights.cols());
    grad_bias.resize(weights.rows());
    for (Eigen::Index r = 0; r < weights.rows(); ++r) {
        double bacc = 0.0;
        for (Eigen::Index c = 0; c < input.cols(); ++c) bacc += grad_out(r, c);
        grad_bias[r] = static_cast<T>(bacc);
        for (Eigen::Index k = 0; k < weights.cols(); ++k) {
            double acc = 0.0;
            for (Eigen::Index c = 0; c < input.cols(); ++c)
                acc += static_cast<double>(grad_out(r, c)) * static_cast<double>(input(k, c));
            grad_weights(r, k) = static_cast<T>(acc);
        }
    }
    if (grad_input != nullptr) {
        grad_input->resize(weights.cols(), input.cols());
        for (Eigen::Index c = 0; c < input.cols(); ++c)
            for (Eigen::Index k = 0; k < weights.cols(); ++k) {
                double acc = 0.0;
                for (Eigen::Index r = 0; r < weights.rows(); ++r)
                    acc += static_cast<double>(weights(r, k)) * static_cast<double>(grad_out(r, c));
                (*grad_input)(k, c) = static_cast<T>(acc);
            }
    }
}

std::vector<LabeledSample> generate_samples(const SampleGenerator& gen, std::uint64_t master, std::uint64_t tag,
                                            std::uint64_t first, std::size_t count) {
    std::vector<LabeledSample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Rng rng = make_rng(master, tag, first + i);
        out.push_back(gen.generate(rng));
    }
    return out;
}

template void affine_forward<float>(const Mat<float>&, const Vec<float>&, const Mat<float>&, Mat<float>&);
template void affine_forward<double>(const Mat<double>&, const Vec<double>&, const Mat<double>&, Mat<double>&);
template void affine_backward<float>(const Mat<float>&, const Mat<float>&, const Mat<float>&, Mat<float>&,
                                     Vec<float>&, Mat<float>*);
template void affine_backward<double>(const Mat<double>&, const Mat<double>&, const Mat<double>&, Mat<double>&,
                                      Vec<double>&, Mat<double>*);

}  // namespace reference
}  // namespace doa::kernels
