#pragma once

// GEMM entry point for all tensor ops. Single-threaded Eigen under the hood;
// big products are tiled over output columns with a fixed tile width, so the
// accumulation order for every output element is independent of the worker
// count.

#define EIGEN_DONT_PARALLELIZE 1
#include <Eigen/Dense>

#include <cstdint>

#include "stylealign/thread_pool.hpp"

namespace stylealign {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// C[M,N] = op_a(A) * op_b(B), where op transposes when the flag is set.
// A is stored row-major as [M,K] (or [K,M] when ta), likewise B.
template <typename T>
void gemm(bool ta, bool tb, int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C,
          bool accumulate = false) {
    ConstMatMap<T> a(A, ta ? K : M, ta ? M : K);
    ConstMatMap<T> b(B, tb ? N : K, tb ? K : N);
    MatMap<T> c(C, M, N);

    constexpr int64_t kTile = 512;
    const int64_t flops = M * N * K;
    const bool tile = flops > (1 << 21) && N > kTile;

    auto run = [&](int64_t n0, int64_t n1) {
        auto cb = c.middleCols(n0, n1 - n0);
        if (!ta && !tb) {
            if (accumulate) cb.noalias() += a * b.middleCols(n0, n1 - n0);
            else cb.noalias() = a * b.middleCols(n0, n1 - n0);
        } else if (ta && !tb) {
            if (accumulate) cb.noalias() += a.transpose() * b.middleCols(n0, n1 - n0);
            else cb.noalias() = a.transpose() * b.middleCols(n0, n1 - n0);
        } else if (!ta && tb) {
            if (accumulate) cb.noalias() += a * b.middleRows(n0, n1 - n0).transpose();
            else cb.noalias() = a * b.middleRows(n0, n1 - n0).transpose();
        } else {
            if (accumulate) cb.noalias() += a.transpose() * b.middleRows(n0, n1 - n0).transpose();
            else cb.noalias() = a.transpose() * b.middleRows(n0, n1 - n0).transpose();
        }
    };

    if (!tile) {
        run(0, N);
        return;
    }
    const int64_t tiles = (N + kTile - 1) / kTile;
    parallel_for(tiles, [&](int64_t t) {
        const int64_t n0 = t * kTile;
        const int64_t n1 = std::min<int64_t>(n0 + kTile, N);
        run(n0, n1);
    });
}

} // namespace stylealign
