#pragma once

#include <vector>

#include "gca/common.hpp"

namespace gca {

namespace detail {

// 16-column register-blocked tile: per output element the k accumulation is
// strictly ascending, and the accumulators live in registers across the k
// loop.
template <typename T>
void gemm_tile16(const T* __restrict A, const T* __restrict B, T* __restrict C, i64 lo,
                 i64 hi, i64 K, i64 N, i64 j0) {
    constexpr int JB = 16;
    for (i64 i = lo; i < hi; ++i) {
        T acc[JB];
        T* c = C + i * N + j0;
        for (int j = 0; j < JB; ++j) acc[j] = c[j];
        const T* a = A + i * K;
        const T* b = B + j0;
        for (i64 k = 0; k < K; ++k) {
            const T av = a[k];
            const T* br = b + k * N;
            for (int j = 0; j < JB; ++j) acc[j] += av * br[j];
        }
        for (int j = 0; j < JB; ++j) c[j] = acc[j];
    }
}

template <typename T>
void gemm_tile8(const T* __restrict A, const T* __restrict B, T* __restrict C, i64 lo,
                i64 hi, i64 K, i64 N, i64 j0) {
    constexpr int JB = 8;
    for (i64 i = lo; i < hi; ++i) {
        T acc[JB];
        T* c = C + i * N + j0;
        for (int j = 0; j < JB; ++j) acc[j] = c[j];
        const T* a = A + i * K;
        const T* b = B + j0;
        for (i64 k = 0; k < K; ++k) {
            const T av = a[k];
            const T* br = b + k * N;
            for (int j = 0; j < JB; ++j) acc[j] += av * br[j];
        }
        for (int j = 0; j < JB; ++j) c[j] = acc[j];
    }
}

template <typename T>
void gemm_tail(const T* __restrict A, const T* __restrict B, T* __restrict C, i64 lo,
               i64 hi, i64 K, i64 N, i64 j0, i64 j1) {
    for (i64 i = lo; i < hi; ++i) {
        const T* a = A + i * K;
        T* c = C + i * N;
        for (i64 k = 0; k < K; ++k) {
            const T av = a[k];
            const T* br = B + k * N;
            for (i64 j = j0; j < j1; ++j) c[j] += av * br[j];
        }
    }
}

}  // namespace detail

// C (MxN) += A (MxK) * B (KxN), all row-major. Reproducible: every output
// element accumulates over k strictly ascending, independent of the worker
// count (rows are partitioned across threads). Narrow right-hand sides are
// padded to 8 columns so the inner loops stay vectorizable.
template <typename T>
void gemm_acc(const T* A, const T* B, T* C, i64 M, i64 K, i64 N) {
    if (N < 8) {
        std::vector<T> bp(static_cast<size_t>(K) * 8, T(0));
        std::vector<T> cp(static_cast<size_t>(M) * 8, T(0));
        for (i64 k = 0; k < K; ++k)
            for (i64 j = 0; j < N; ++j) bp[size_t(k * 8 + j)] = B[k * N + j];
        for (i64 i = 0; i < M; ++i)
            for (i64 j = 0; j < N; ++j) cp[size_t(i * 8 + j)] = C[i * N + j];
        gemm_acc(A, bp.data(), cp.data(), M, K, i64(8));
        for (i64 i = 0; i < M; ++i)
            for (i64 j = 0; j < N; ++j) C[i * N + j] = cp[size_t(i * 8 + j)];
        return;
    }
    const i64 grain = std::max<i64>(1, 16384 / std::max<i64>(1, N));
    parallel_blocks(M, grain, [&](i64 lo, i64 hi) {
        i64 j0 = 0;
        for (; j0 + 16 <= N; j0 += 16) detail::gemm_tile16(A, B, C, lo, hi, K, N, j0);
        if (j0 == 0 && N >= 8) {
            detail::gemm_tile8(A, B, C, lo, hi, K, N, j0);
            j0 += 8;
        }
        if (j0 < N) detail::gemm_tail(A, B, C, lo, hi, K, N, j0, N);
    });
}

// B (MxN) -> out (NxM)
template <typename T>
void transpose(const T* B, T* out, i64 M, i64 N) {
    constexpr i64 TB = 32;
    for (i64 i0 = 0; i0 < M; i0 += TB)
        for (i64 j0 = 0; j0 < N; j0 += TB) {
            i64 i1 = std::min(M, i0 + TB), j1 = std::min(N, j0 + TB);
            for (i64 i = i0; i < i1; ++i)
                for (i64 j = j0; j < j1; ++j) out[j * M + i] = B[i * N + j];
        }
}

template <typename T>
std::vector<T> transposed(const T* B, i64 M, i64 N) {
    std::vector<T> out(static_cast<size_t>(M * N));
    transpose(B, out.data(), M, N);
    return out;
}

}  // namespace gca
