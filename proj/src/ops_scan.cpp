#include <cmath>

#include "gemm.hpp"
#include "samamba/ops.hpp"
#include "samamba/parallel.hpp"

namespace samamba {

using detail::input_data;
using detail::input_grad;
using detail::make_result;
using detail::Node;

namespace {

constexpr std::size_t kChunk = 16;

}  // namespace

// The forward pass runs the recurrence chunk-by-chunk: each chunk is scanned from
// a zero state while tracking the running product of transitions, then chunk
// results are stitched with the carried state h = local + prod(abar) * h_carry.
Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& A, const Tensor& B, const Tensor& C) {
  if (u.ndim() != 2 || delta.shape() != u.shape()) throw DimensionError("selective_scan: u and delta must be [T, C]");
  std::size_t T = u.dim(0), ch = u.dim(1);
  if (T == 0) throw DimensionError("selective_scan: empty sequence");
  if (A.ndim() != 2 || A.dim(0) != ch) throw DimensionError("selective_scan: A must be [C, N]");
  std::size_t N = A.dim(1);
  if (B.shape() != Shape{T, N} || C.shape() != Shape{T, N}) throw DimensionError("selective_scan: B and C must be [T, N]");

  auto ud = u.data(), dd = delta.data(), ad = A.data(), bd = B.data(), cd = C.data();
  std::vector<double> H(T * ch * N);
  std::vector<double> y(T * ch, 0.0);

  parallel_for(ch, [&](std::size_t c0, std::size_t c1) {
    std::vector<double> local(T), prod(T);
    for (std::size_t c = c0; c < c1; ++c)
      for (std::size_t n = 0; n < N; ++n) {
        double a_cn = ad[c * N + n];
        for (std::size_t s = 0; s < T; s += kChunk) {
          std::size_t e = std::min(T, s + kChunk);
          double h = 0.0, p = 1.0;
          for (std::size_t t = s; t < e; ++t) {
            double dt = dd[t * ch + c];
            double abar = std::exp(dt * a_cn);
            h = abar * h + dt * bd[t * N + n] * ud[t * ch + c];
            p *= abar;
            local[t] = h;
            prod[t] = p;
          }
        }
        double carry = 0.0;
        for (std::size_t s = 0; s < T; s += kChunk) {
          std::size_t e = std::min(T, s + kChunk);
          for (std::size_t t = s; t < e; ++t) H[(t * ch + c) * N + n] = local[t] + prod[t] * carry;
          carry = H[((e - 1) * ch + c) * N + n];
        }
      }
    for (std::size_t c = c0; c < c1; ++c)
      for (std::size_t t = 0; t < T; ++t) {
        double acc = 0.0;
        for (std::size_t n = 0; n < N; ++n) acc += cd[t * N + n] * H[(t * ch + c) * N + n];
        y[t * ch + c] = acc;
      }
  });
  detail::count_macs(3 * T * ch * N);

  return make_result({T, ch}, std::move(y), "selective_scan", {u, delta, A, B, C},
                     [T, ch, N, H = std::move(H)](Node& self) {
                       const auto& uv = input_data(self, 0);
                       const auto& dv = input_data(self, 1);
                       const auto& av = input_data(self, 2);
                       const auto& bv = input_data(self, 3);
                       const auto& cv = input_data(self, 4);
                       double* gu = input_grad(self, 0);
                       double* gd = input_grad(self, 1);
                       double* ga = input_grad(self, 2);
                       double* gb = input_grad(self, 3);
                       double* gc = input_grad(self, 4);
                       const auto& gy = self.grad;
                       // Adjoint of h runs backwards in time: lam_t = gy_t C_t + abar_{t+1} lam_{t+1}.
                       for (std::size_t c = 0; c < ch; ++c)
                         for (std::size_t n = 0; n < N; ++n) {
                           double a_cn = av[c * N + n];
                           double lam = 0.0, abar_next = 0.0;
                           double ga_acc = 0.0;
                           for (std::size_t t = T; t-- > 0;) {
                             double g_y = gy[t * ch + c];
                             lam = g_y * cv[t * N + n] + abar_next * lam;
                             double dt = dv[t * ch + c];
                             double abar = std::exp(dt * a_cn);
                             double h_prev = t > 0 ? H[((t - 1) * ch + c) * N + n] : 0.0;
                             double ut = uv[t * ch + c];
                             double bt = bv[t * N + n];
                             double g_abar = lam * h_prev;
                             if (gc) gc[t * N + n] += g_y * H[(t * ch + c) * N + n];
                             if (gu) gu[t * ch + c] += lam * dt * bt;
                             if (gd) gd[t * ch + c] += g_abar * abar * a_cn + lam * bt * ut;
                             if (gb) gb[t * N + n] += lam * dt * ut;
                             ga_acc += g_abar * abar * dt;
                             abar_next = abar;
                           }
                           if (ga) ga[c * N + n] += ga_acc;
                         }
                     });
}

}  // namespace samamba
