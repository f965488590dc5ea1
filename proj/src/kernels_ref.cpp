#include <algorithm>

#include "rifle/kernels.hpp"

namespace rifle::kernels::reference {

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double sum = 0.0;
      for (std::size_t p = 0; p < k; ++p) sum += a[i * k + p] * b[p * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + sum : sum;
    }
  }
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double sum = 0.0;
      for (std::size_t p = 0; p < k; ++p) sum += a[p * m + i] * b[p * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + sum : sum;
    }
  }
}

void gemm_nt(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double sum = 0.0;
      for (std::size_t p = 0; p < k; ++p) sum += a[i * k + p] * b[j * k + p];
      c[i * n + j] = accumulate ? c[i * n + j] + sum : sum;
    }
  }
}

namespace {

// Input coordinate read by output position `o` and kernel tap `t`, or -1 when
// it falls into the zero padding.
long tap(std::size_t o, std::size_t t, std::size_t stride, std::size_t extent) {
  const long pos = static_cast<long>(o * stride + t) - 1;
  return (pos < 0 || pos >= static_cast<long>(extent)) ? -1 : pos;
}

}  // namespace

void conv3x3_forward(const ConvShape& s, std::span<const double> input,
                     std::span<const double> weight, std::span<const double> bias,
                     std::span<double> output) {
  const std::size_t ho = s.out_height(), wo = s.out_width();
  for (std::size_t n = 0; n < s.batch; ++n) {
    for (std::size_t co = 0; co < s.out_channels; ++co) {
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double sum = bias.empty() ? 0.0 : bias[co];
          for (std::size_t ci = 0; ci < s.in_channels; ++ci) {
            for (std::size_t ky = 0; ky < 3; ++ky) {
              const long iy = tap(oy, ky, s.stride, s.height);
              if (iy < 0) continue;
              for (std::size_t kx = 0; kx < 3; ++kx) {
                const long ix = tap(ox, kx, s.stride, s.width);
                if (ix < 0) continue;
                sum += weight[((co * s.in_channels + ci) * 3 + ky) * 3 + kx] *
                       input[((n * s.in_channels + ci) * s.height + iy) * s.width + ix];
              }
            }
          }
          output[((n * s.out_channels + co) * ho + oy) * wo + ox] = sum;
        }
      }
    }
  }
}

void conv3x3_backward(const ConvShape& s, std::span<const double> input,
                      std::span<const double> weight, std::span<const double> grad_output,
                      std::span<double> grad_input, std::span<double> grad_weight,
                      std::span<double> grad_bias) {
  const std::size_t ho = s.out_height(), wo = s.out_width();
  std::fill(grad_input.begin(), grad_input.end(), 0.0);
  std::fill(grad_weight.begin(), grad_weight.end(), 0.0);
  std::fill(grad_bias.begin(), grad_bias.end(), 0.0);
  for (std::size_t n = 0; n < s.batch; ++n) {
    for (std::size_t co = 0; co < s.out_channels; ++co) {
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const double g = grad_output[((n * s.out_channels + co) * ho + oy) * wo + ox];
          if (!grad_bias.empty()) grad_bias[co] += g;
          for (std::size_t ci = 0; ci < s.in_channels; ++ci) {
            for (std::size_t ky = 0; ky < 3; ++ky) {
              const long iy = tap(oy, ky, s.stride, s.height);
              if (iy < 0) continue;
              for (std::size_t kx = 0; kx < 3; ++kx) {
                const long ix = tap(ox, kx, s.stride, s.width);
                if (ix < 0) continue;
                const std::size_t w_idx = ((co * s.in_channels + ci) * 3 + ky) * 3 + kx;
                const std::size_t in_idx =
                    ((n * s.in_channels + ci) * s.height + iy) * s.width + ix;
                if (!grad_weight.empty()) grad_weight[w_idx] += g * input[in_idx];
                if (!grad_input.empty()) grad_input[in_idx] += g * weight[w_idx];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace rifle::kernels::reference
