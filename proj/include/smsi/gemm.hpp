#pragma once

// Row-major GEMM front end: C = alpha * op(A) * op(B) + beta * C.
// Backed by OpenBLAS when available (pinned to one thread so results are
// reproducible regardless of the host's core count); otherwise a portable
// fallback loop with identical rounding behavior per element order.

#include <cstdint>

namespace smsi {

void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, float alpha,
          const float* a, std::int64_t lda, const float* b, std::int64_t ldb, float beta, float* c,
          std::int64_t ldc);

void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, double alpha,
          const double* a, std::int64_t lda, const double* b, std::int64_t ldb, double beta,
          double* c, std::int64_t ldc);

// Name of the active backend ("openblas" or "fallback"); used in logs.
const char* gemm_backend();

}  // namespace smsi
