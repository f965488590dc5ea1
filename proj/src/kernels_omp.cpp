#include <algorithm>
#include <cstdint>
#include <vector>

#include "rifle/kernels.hpp"

namespace rifle::kernels::parallel {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

using Index = std::int64_t;

// Serial row-streaming product used inside per-example parallel loops.
void gemm_rows(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
               double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* c_row = c + i * n;
    std::fill(c_row, c_row + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double a_ip = a[i * k + p];
      const double* b_row = b + p * n;
      for (std::size_t j = 0; j < n; ++j) c_row[j] += a_ip * b_row[j];
    }
  }
}

void im2col(const ConvShape& s, const double* image, double* col) {
  const std::size_t ho = s.out_height(), wo = s.out_width();
  for (std::size_t ci = 0; ci < s.in_channels; ++ci) {
    const double* plane = image + ci * s.height * s.width;
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        double* dst = col + ((ci * 3 + ky) * 3 + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * s.stride + ky) - 1;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * s.stride + kx) - 1;
            const bool inside = iy >= 0 && iy < static_cast<long>(s.height) && ix >= 0 &&
                                ix < static_cast<long>(s.width);
            dst[oy * wo + ox] = inside ? plane[iy * s.width + ix] : 0.0;
          }
        }
      }
    }
  }
}

// Scatter-add of im2col; `image` must be zeroed by the caller.
void col2im(const ConvShape& s, const double* col, double* image) {
  const std::size_t ho = s.out_height(), wo = s.out_width();
  for (std::size_t ci = 0; ci < s.in_channels; ++ci) {
    double* plane = image + ci * s.height * s.width;
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const double* src = col + ((ci * 3 + ky) * 3 + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy * s.stride + ky) - 1;
          if (iy < 0 || iy >= static_cast<long>(s.height)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox * s.stride + kx) - 1;
            if (ix < 0 || ix >= static_cast<long>(s.width)) continue;
            plane[iy * s.width + ix] += src[oy * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate) {
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (Index i = 0; i < static_cast<Index>(m); ++i) {
    double* c_row = pc + i * n;
    if (!accumulate) std::fill(c_row, c_row + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double a_ip = pa[i * k + p];
      const double* b_row = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) c_row[j] += a_ip * b_row[j];
    }
  }
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate) {
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (Index i = 0; i < static_cast<Index>(m); ++i) {
    double* c_row = pc + i * n;
    if (!accumulate) std::fill(c_row, c_row + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double a_pi = pa[p * m + i];
      const double* b_row = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) c_row[j] += a_pi * b_row[j];
    }
  }
}

void gemm_nt(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
             std::span<const double> b, std::span<double> c, bool accumulate) {
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (Index i = 0; i < static_cast<Index>(m); ++i) {
    const double* a_row = pa + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* b_row = pb + j * k;
      double sum = 0.0;
      for (std::size_t p = 0; p < k; ++p) sum += a_row[p] * b_row[p];
      pc[i * n + j] = accumulate ? pc[i * n + j] + sum : sum;
    }
  }
}

void conv3x3_forward(const ConvShape& s, std::span<const double> input,
                     std::span<const double> weight, std::span<const double> bias,
                     std::span<double> output) {
  const std::size_t spatial = s.out_height() * s.out_width();
  const std::size_t work = s.batch * s.weight_size() * spatial;
#pragma omp parallel if (work > kParallelWork)
  {
    std::vector<double> col(s.patch() * spatial);
#pragma omp for schedule(static)
    for (Index n = 0; n < static_cast<Index>(s.batch); ++n) {
      im2col(s, input.data() + n * s.in_plane(), col.data());
      double* out = output.data() + n * s.out_plane();
      gemm_rows(s.out_channels, s.patch(), spatial, weight.data(), col.data(), out);
      if (!bias.empty()) {
        for (std::size_t co = 0; co < s.out_channels; ++co) {
          for (std::size_t q = 0; q < spatial; ++q) out[co * spatial + q] += bias[co];
        }
      }
    }
  }
}

void conv3x3_backward(const ConvShape& s, std::span<const double> input,
                      std::span<const double> weight, std::span<const double> grad_output,
                      std::span<double> grad_input, std::span<double> grad_weight,
                      std::span<double> grad_bias) {
  const std::size_t spatial = s.out_height() * s.out_width();
  const std::size_t patch = s.patch();
  const std::size_t work = s.batch * s.weight_size() * spatial;

  if (!grad_bias.empty()) {
    for (std::size_t co = 0; co < s.out_channels; ++co) {
      double sum = 0.0;
      for (std::size_t n = 0; n < s.batch; ++n) {
        const double* g = grad_output.data() + n * s.out_plane() + co * spatial;
        for (std::size_t q = 0; q < spatial; ++q) sum += g[q];
      }
      grad_bias[co] = sum;
    }
  }

  if (!grad_input.empty()) {
#pragma omp parallel if (work > kParallelWork)
    {
      std::vector<double> dcol(patch * spatial);
#pragma omp for schedule(static)
      for (Index n = 0; n < static_cast<Index>(s.batch); ++n) {
        const double* g = grad_output.data() + n * s.out_plane();
        // dcol[patch x spatial] = W^T[patch x Cout] * g[Cout x spatial]
        std::fill(dcol.begin(), dcol.end(), 0.0);
        for (std::size_t co = 0; co < s.out_channels; ++co) {
          const double* g_row = g + co * spatial;
          for (std::size_t q = 0; q < patch; ++q) {
            const double w = weight[co * patch + q];
            double* d_row = dcol.data() + q * spatial;
            for (std::size_t j = 0; j < spatial; ++j) d_row[j] += w * g_row[j];
          }
        }
        double* gi = grad_input.data() + n * s.in_plane();
        std::fill(gi, gi + s.in_plane(), 0.0);
        col2im(s, dcol.data(), gi);
      }
    }
  }

  if (!grad_weight.empty()) {
    std::vector<double> cols(s.batch * patch * spatial);
#pragma omp parallel for schedule(static) if (work > kParallelWork)
    for (Index n = 0; n < static_cast<Index>(s.batch); ++n) {
      im2col(s, input.data() + n * s.in_plane(), cols.data() + n * patch * spatial);
    }
    // Each thread owns whole rows of grad_weight and sums examples in order.
#pragma omp parallel for schedule(static) if (work > kParallelWork)
    for (Index co = 0; co < static_cast<Index>(s.out_channels); ++co) {
      double* dw = grad_weight.data() + co * patch;
      std::fill(dw, dw + patch, 0.0);
      for (std::size_t n = 0; n < s.batch; ++n) {
        const double* g_row = grad_output.data() + n * s.out_plane() + co * spatial;
        const double* col = cols.data() + n * patch * spatial;
        for (std::size_t q = 0; q < patch; ++q) {
          const double* c_row = col + q * spatial;
          double sum = 0.0;
          for (std::size_t j = 0; j < spatial; ++j) sum += g_row[j] * c_row[j];
          dw[q] += sum;
        }
      }
    }
  }
}

}  // namespace rifle::kernels::parallel
