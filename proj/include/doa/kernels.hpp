#pragma once

// OpenMP-parallel hot loops used by training and data generation, each
// paired with a plain serial reference kept for testing and benchmarking.
//
// Work is always split on fixed block boundaries (never on the thread
// count), so results are bit-identical for any number of threads.

#include "doa/signal_sim.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace doa {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

namespace kernels {

inline constexpr Eigen::Index kBlock = 64;

// Z = W X + b 1^T, samples in columns.
template <typename T>
void affine_forward(const Mat<T>& weights, const Vec<T>& bias, const Mat<T>& input, Mat<T>& out);

// dW = dZ X^T, db = dZ 1, and optionally dX = W^T dZ.
template <typename T>
void affine_backward(const Mat<T>& weights, const Mat<T>& input, const Mat<T>& grad_out, Mat<T>& grad_weights,
                     Vec<T>& grad_bias, Mat<T>* grad_input);

// In-place ReLU and its backward mask (derivative at 0 is 0).
template <typename T>
void relu_inplace(Mat<T>& z);
template <typename T>
void relu_backward_inplace(const Mat<T>& activation, Mat<T>& grad);

// Samples [first, first+count) of the stream (master, tag).
std::vector<LabeledSample> generate_samples(const SampleGenerator& gen, std::uint64_t master, std::uint64_t tag,
                                            std::uint64_t first, std::size_t count);

namespace reference {

template <typename T>
void affine_forward(const Mat<T>& weights, const Vec<T>& bias, const Mat<T>& input, Mat<T>& out);

template <typename T>
void affine_backward(const Mat<T>& weights, const Mat<T>& input, const Mat<T>& grad_out, Mat<T>& grad_weights,
                     Vec<T>& grad_bias, Mat<T>* grad_input);

std::vector<LabeledSample> generate_samples(const SampleGenerator& gen, std::uint64_t master, std::uint64_t tag,
                                            std::uint64_t first, std::size_t count);

}  // namespace reference
}  // namespace kernels
}  // namespace doa
