#include <algorithm>
#include <cstring>
#include <vector>

#include "csfnet/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace csfnet::kernels {
namespace {

#if defined(__AVX512F__)
constexpr int kVec = 16;
constexpr int kMR = 8;
#elif defined(__AVX__)
constexpr int kVec = 8;
constexpr int kMR = 6;
#else
constexpr int kVec = 4;
constexpr int kMR = 4;
#endif
constexpr int kNR = 2 * kVec;
constexpr std::int64_t kKC = 256;
constexpr std::int64_t kMC = 16 * kMR;
constexpr std::int64_t kNC = 4096;

typedef float vfloat __attribute__((vector_size(kVec * sizeof(float))));

inline float elem(const float* m, std::int64_t ld, bool trans, std::int64_t r, std::int64_t c) {
  return trans ? m[c * ld + r] : m[r * ld + c];
}

// Packs op(A)[i0:i0+mc, p0:p0+kc] into kMR-row panels, zero-padded.
void pack_a(const float* a, std::int64_t lda, bool trans, std::int64_t i0, std::int64_t mc,
            std::int64_t p0, std::int64_t kc, float* dst) {
  for (std::int64_t ir = 0; ir < mc; ir += kMR) {
    const std::int64_t rows = std::min<std::int64_t>(kMR, mc - ir);
    for (std::int64_t p = 0; p < kc; ++p) {
      for (std::int64_t i = 0; i < rows; ++i) dst[i] = elem(a, lda, trans, i0 + ir + i, p0 + p);
      for (std::int64_t i = rows; i < kMR; ++i) dst[i] = 0.0f;
      dst += kMR;
    }
  }
}

// Packs op(B)[p0:p0+kc, j0:j0+nc] into kNR-column panels, zero-padded.
void pack_b(const float* b, std::int64_t ldb, bool trans, std::int64_t p0, std::int64_t kc,
            std::int64_t j0, std::int64_t nc, float* dst) {
  for (std::int64_t jr = 0; jr < nc; jr += kNR) {
    const std::int64_t cols = std::min<std::int64_t>(kNR, nc - jr);
    for (std::int64_t p = 0; p < kc; ++p) {
      if (!trans && cols == kNR) {
        std::memcpy(dst, b + (p0 + p) * ldb + j0 + jr, sizeof(float) * kNR);
      } else {
        for (std::int64_t j = 0; j < cols; ++j) dst[j] = elem(b, ldb, trans, p0 + p, j0 + jr + j);
        for (std::int64_t j = cols; j < kNR; ++j) dst[j] = 0.0f;
      }
      dst += kNR;
    }
  }
}

void micro_kernel(std::int64_t kc, const float* ap, const float* bp, float alpha, float* c,
                  std::int64_t ldc, std::int64_t rows, std::int64_t cols) {
  vfloat acc[kMR][2];
  for (int i = 0; i < kMR; ++i) acc[i][0] = acc[i][1] = vfloat{};
  for (std::int64_t p = 0; p < kc; ++p) {
    vfloat b0, b1;
    std::memcpy(&b0, bp, sizeof(vfloat));
    std::memcpy(&b1, bp + kVec, sizeof(vfloat));
    for (int i = 0; i < kMR; ++i) {
      const float av = ap[i];
      acc[i][0] += av * b0;
      acc[i][1] += av * b1;
    }
    ap += kMR;
    bp += kNR;
  }
  alignas(64) float tile[kMR][kNR];
  std::memcpy(tile, acc, sizeof(tile));
  for (std::int64_t i = 0; i < rows; ++i) {
    float* crow = c + i * ldc;
    for (std::int64_t j = 0; j < cols; ++j) crow[j] += alpha * tile[i][j];
  }
}

// Serial Goto-style loop nest over the column range [j_begin, j_end) and row
// range [i_begin, i_end).
void gemm_block(bool ta, bool tb, std::int64_t i_begin, std::int64_t i_end, std::int64_t j_begin,
                std::int64_t j_end, std::int64_t k, float alpha, const float* a, std::int64_t lda,
                const float* b, std::int64_t ldb, float* c, std::int64_t ldc) {
  thread_local std::vector<float> packed_a, packed_b;
  for (std::int64_t jc = j_begin; jc < j_end; jc += kNC) {
    const std::int64_t nc = std::min(kNC, j_end - jc);
    for (std::int64_t pc = 0; pc < k; pc += kKC) {
      const std::int64_t kc = std::min(kKC, k - pc);
      packed_b.resize(static_cast<std::size_t>(((nc + kNR - 1) / kNR) * kNR * kc));
      pack_b(b, ldb, tb, pc, kc, jc, nc, packed_b.data());
      for (std::int64_t ic = i_begin; ic < i_end; ic += kMC) {
        const std::int64_t mc = std::min(kMC, i_end - ic);
        packed_a.resize(static_cast<std::size_t>(((mc + kMR - 1) / kMR) * kMR * kc));
        pack_a(a, lda, ta, ic, mc, pc, kc, packed_a.data());
        for (std::int64_t jr = 0; jr < nc; jr += kNR) {
          const std::int64_t cols = std::min<std::int64_t>(kNR, nc - jr);
          const float* bp = packed_b.data() + (jr / kNR) * kNR * kc;
          for (std::int64_t ir = 0; ir < mc; ir += kMR) {
            const std::int64_t rows = std::min<std::int64_t>(kMR, mc - ir);
            const float* ap = packed_a.data() + (ir / kMR) * kMR * kc;
            micro_kernel(kc, ap, bp, alpha, c + (ic + ir) * ldc + jc + jr, ldc, rows, cols);
          }
        }
      }
    }
  }
}

}  // namespace

void sgemm(Trans trans_a, Trans trans_b, std::int64_t m, std::int64_t n, std::int64_t k,
           float alpha, const float* a, std::int64_t lda, const float* b, std::int64_t ldb,
           float beta, float* c, std::int64_t ldc) {
  if (m <= 0 || n <= 0) return;
  for (std::int64_t i = 0; i < m; ++i) {
    float* row = c + i * ldc;
    if (beta == 0.0f)
      std::fill(row, row + n, 0.0f);
    else if (beta != 1.0f)
      for (std::int64_t j = 0; j < n; ++j) row[j] *= beta;
  }
  if (k <= 0 || alpha == 0.0f) return;
  const bool ta = trans_a == Trans::kYes;
  const bool tb = trans_b == Trans::kYes;

  int threads = 1;
#ifdef _OPENMP
  threads = omp_get_max_threads();
#endif
  const std::int64_t col_panels = (n + kNR - 1) / kNR;
  const std::int64_t row_panels = (m + kMR - 1) / kMR;
  if (threads <= 1 || (col_panels < 2 && row_panels < 2)) {
    gemm_block(ta, tb, 0, m, 0, n, k, alpha, a, lda, b, ldb, c, ldc);
    return;
  }
  // Split along whichever axis has more panels; chunks own disjoint C blocks.
  const bool split_cols = col_panels >= row_panels;
  const std::int64_t panels = split_cols ? col_panels : row_panels;
  const std::int64_t chunks = std::min<std::int64_t>(threads, panels);
  const std::int64_t per_chunk = (panels + chunks - 1) / chunks;
#pragma omp parallel for schedule(static)
  for (std::int64_t t = 0; t < chunks; ++t) {
    if (split_cols) {
      const std::int64_t j0 = t * per_chunk * kNR;
      const std::int64_t j1 = std::min(n, j0 + per_chunk * kNR);
      if (j0 < j1) gemm_block(ta, tb, 0, m, j0, j1, k, alpha, a, lda, b, ldb, c, ldc);
    } else {
      const std::int64_t i0 = t * per_chunk * kMR;
      const std::int64_t i1 = std::min(m, i0 + per_chunk * kMR);
      if (i0 < i1) gemm_block(ta, tb, i0, i1, 0, n, k, alpha, a, lda, b, ldb, c, ldc);
    }
  }
}

}  // namespace csfnet::kernels
