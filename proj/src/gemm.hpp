#pragma once

#include <cstddef>
#include <cstdint>

namespace samamba::detail {

// Row-major kernels; all accumulate into c.
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);

void count_macs(std::uint64_t n);

}  // namespace samamba::detail
