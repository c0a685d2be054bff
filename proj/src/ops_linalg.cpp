#include <algorithm>
#include <atomic>
#include <cmath>
#include <vector>

#include "gemm.hpp"
#include "samamba/ops.hpp"
#include "samamba/parallel.hpp"

namespace samamba {

using detail::input_data;
using detail::input_grad;
using detail::make_result;
using detail::Node;

namespace {
std::atomic<std::uint64_t> macs{0};
}

std::uint64_t mac_counter() { return macs.load(); }
void reset_mac_counter() { macs.store(0); }

namespace detail {

void count_macs(std::uint64_t n) { macs.fetch_add(n, std::memory_order_relaxed); }

namespace {

constexpr std::size_t kColBlock = 512;

// Four rows of c share each load of a row of b. Every c element still
// accumulates over p in increasing order, so results do not depend on blocking.
void nn_rows(const double* a, const double* b, double* c, std::size_t i0, std::size_t i1, std::size_t k,
             std::size_t n) {
  for (std::size_t jb = 0; jb < n; jb += kColBlock) {
    const std::size_t je = std::min(n, jb + kColBlock);
    std::size_t i = i0;
    for (; i + 4 <= i1; i += 4) {
      double* c0 = c + i * n;
      double* c1 = c0 + n;
      double* c2 = c1 + n;
      double* c3 = c2 + n;
      const double* a0 = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double v0 = a0[p], v1 = a0[k + p], v2 = a0[2 * k + p], v3 = a0[3 * k + p];
        const double* brow = b + p * n;
        for (std::size_t j = jb; j < je; ++j) {
          const double bv = brow[j];
          c0[j] += v0 * bv;
          c1[j] += v1 * bv;
          c2[j] += v2 * bv;
          c3[j] += v3 * bv;
        }
      }
    }
    for (; i < i1; ++i) {
      double* crow = c + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a[i * k + p];
        const double* brow = b + p * n;
        for (std::size_t j = jb; j < je; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

}  // namespace

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  const std::size_t groups = (m + 3) / 4;
  parallel_for(
      groups, [&](std::size_t g0, std::size_t g1) { nn_rows(a, b, c, 4 * g0, std::min(m, 4 * g1), k, n); }, 4);
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  // c[m,n] += a[m,k] * b[n,k]^T, via an explicit transpose of b
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(a, bt.data(), c, m, k, n);
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  // c[k,n] += a[m,k]^T * b[m,n]; rows of c are split across workers, each
  // accumulating over i in increasing order.
  const std::size_t groups = (k + 3) / 4;
  parallel_for(
      groups,
      [&](std::size_t g0, std::size_t g1) {
        const std::size_t p0 = 4 * g0, p1 = std::min(k, 4 * g1);
        for (std::size_t jb = 0; jb < n; jb += kColBlock) {
          const std::size_t je = std::min(n, jb + kColBlock);
          std::size_t p = p0;
          for (; p + 4 <= p1; p += 4) {
            double* c0 = c + p * n;
            double* c1 = c0 + n;
            double* c2 = c1 + n;
            double* c3 = c2 + n;
            for (std::size_t i = 0; i < m; ++i) {
              const double* arow = a + i * k + p;
              const double v0 = arow[0], v1 = arow[1], v2 = arow[2], v3 = arow[3];
              const double* brow = b + i * n;
              for (std::size_t j = jb; j < je; ++j) {
                const double bv = brow[j];
                c0[j] += v0 * bv;
                c1[j] += v1 * bv;
                c2[j] += v2 * bv;
                c3[j] += v3 * bv;
              }
            }
          }
          for (; p < p1; ++p) {
            double* crow = c + p * n;
            for (std::size_t i = 0; i < m; ++i) {
              const double av = a[i * k + p];
              const double* brow = b + i * n;
              for (std::size_t j = jb; j < je; ++j) crow[j] += av * brow[j];
            }
          }
        }
      },
      1);
}

}  // namespace detail

Tensor matmul(const Tensor& a, const Tensor& b) {
  const bool batched = a.ndim() == 3;
  if (!((a.ndim() == 2 && b.ndim() == 2) || (a.ndim() == 3 && b.ndim() == 3))) {
    throw DimensionError("matmul: expects two 2-D or two 3-D tensors, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  std::size_t bt = batched ? a.dim(0) : 1;
  std::size_t m = a.dim(batched ? 1 : 0), k = a.dim(batched ? 2 : 1);
  std::size_t k2 = b.dim(batched ? 1 : 0), n = b.dim(batched ? 2 : 1);
  if (k != k2 || (batched && b.dim(0) != bt)) {
    throw DimensionError("matmul: inner extents differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(bt * m * n, 0.0);
  auto ad = a.data(), bd = b.data();
  for (std::size_t s = 0; s < bt; ++s) detail::gemm_nn(ad.data() + s * m * k, bd.data() + s * k * n, out.data() + s * m * n, m, k, n);
  detail::count_macs(bt * m * k * n);
  Shape os = batched ? Shape{bt, m, n} : Shape{m, n};
  return make_result(os, std::move(out), "matmul", {a, b}, [bt, m, k, n](Node& self) {
    const auto& av = input_data(self, 0);
    const auto& bv = input_data(self, 1);
    double* ga = input_grad(self, 0);
    double* gb = input_grad(self, 1);
    for (std::size_t s = 0; s < bt; ++s) {
      const double* up = self.grad.data() + s * m * n;
      if (ga) detail::gemm_nt(up, bv.data() + s * k * n, ga + s * m * k, m, n, k);
      if (gb) detail::gemm_tn(av.data() + s * m * k, up, gb + s * k * n, m, k, n);
    }
  });
}

Tensor transpose(const Tensor& x) {
  if (x.ndim() < 2) throw DimensionError("transpose: needs at least 2 axes");
  std::vector<std::size_t> axes(x.ndim());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return permute(x, axes);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.ndim() != 2) throw DimensionError("linear: weight must be [in, out]");
  std::size_t in = w.dim(0), out_f = w.dim(1);
  if (x.ndim() == 0 || x.shape().back() != in) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not end in " + std::to_string(in));
  }
  if (b.defined() && b.size() != out_f) throw DimensionError("linear: bias extent mismatch");
  std::size_t rows = x.size() / in;
  std::vector<double> out(rows * out_f, 0.0);
  if (b.defined()) {
    auto bd = b.data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < out_f; ++j) out[r * out_f + j] = bd[j];
  }
  detail::gemm_nn(x.data().data(), w.data().data(), out.data(), rows, in, out_f);
  detail::count_macs(rows * in * out_f);
  Shape os = x.shape();
  os.back() = out_f;
  std::vector<Tensor> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  return make_result(os, std::move(out), "linear", inputs, [rows, in, out_f](Node& self) {
    const auto& xv = input_data(self, 0);
    const auto& wv = input_data(self, 1);
    if (double* gx = input_grad(self, 0)) detail::gemm_nt(self.grad.data(), wv.data(), gx, rows, out_f, in);
    if (double* gw = input_grad(self, 1)) detail::gemm_tn(xv.data(), self.grad.data(), gw, rows, in, out_f);
    if (self.inputs.size() > 2) {
      if (double* gb = input_grad(self, 2)) {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < out_f; ++j) gb[j] += self.grad[r * out_f + j];
      }
    }
  });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.ndim() != k.ndim() || q.ndim() != v.ndim() || (q.ndim() != 2 && q.ndim() != 3)) {
    throw DimensionError("attention: q, k, v must all be [T, d] or [H, T, d]");
  }
  std::size_t d = q.shape().back();
  if (k.shape().back() != d) throw DimensionError("attention: q/k feature extents differ");
  std::size_t tk_axis = q.ndim() - 2;
  if (k.dim(tk_axis) != v.dim(tk_axis)) throw DimensionError("attention: k/v lengths differ");
  Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(d)));
  return matmul(softmax(scores, scores.ndim() - 1), v);
}

}  // namespace samamba
