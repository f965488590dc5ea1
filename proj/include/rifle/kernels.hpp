#pragma once

// Compute kernels in two flavours.
//
// `parallel` is what the library uses: OpenMP loops where every output element
// is owned by exactly one thread and accumulated in a fixed order, so results
// are bitwise independent of the thread count.
//
// `reference` holds plain serial loops written independently of the parallel
// versions (direct convolution, dot-product gemm). They exist for the tests and
// the benchmark; summation order differs, so compare with a tolerance.

#include <cstddef>
#include <span>

namespace rifle::kernels {

/// Geometry of a 3x3, zero-padding-1 convolution over an NCHW batch.
struct ConvShape {
  std::size_t batch = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t stride = 1;

  std::size_t out_height() const { return (height - 1) / stride + 1; }
  std::size_t out_width() const { return (width - 1) / stride + 1; }
  std::size_t in_plane() const { return in_channels * height * width; }
  std::size_t out_plane() const { return out_channels * out_height() * out_width(); }
  std::size_t patch() const { return in_channels * 9; }
  std::size_t weight_size() const { return out_channels * patch(); }
};

namespace parallel {

// c[m x n] (+)= a[m x k] * b[k x n]
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate);
// c[m x n] (+)= a^T * b, a stored [k x m]
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate);
// c[m x n] (+)= a * b^T, b stored [n x k]
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate);

/// output[N, Cout, Ho, Wo] = conv(input) + bias. weight is [Cout, Cin, 3, 3].
void conv3x3_forward(const ConvShape& s, std::span<const double> input,
                     std::span<const double> weight, std::span<const double> bias,
                     std::span<double> output);

/// Gradients of conv3x3_forward. Each output span is overwritten; pass an
/// empty span to skip that gradient.
void conv3x3_backward(const ConvShape& s, std::span<const double> input,
                      std::span<const double> weight, std::span<const double> grad_output,
                      std::span<double> grad_input, std::span<double> grad_weight,
                      std::span<double> grad_bias);

}  // namespace parallel

namespace reference {

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate);
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate);
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate);

void conv3x3_forward(const ConvShape& s, std::span<const double> input,
                     std::span<const double> weight, std::span<const double> bias,
                     std::span<double> output);
void conv3x3_backward(const ConvShape& s, std::span<const double> input,
                      std::span<const double> weight, std::span<const double> grad_output,
                      std::span<double> grad_input, std::span<double> grad_weight,
                      std::span<double> grad_bias);

}  // namespace reference

}  // namespace rifle::kernels
