#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace ragme {

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatF = MatX<float>;
using MatD = MatX<double>;

template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// FNV-1a over raw bytes. Used for weight-group hashes and config hashes.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

template <typename S>
uint64_t hash_matrix(const MatX<S>& m, uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a64(m.data(), sizeof(S) * static_cast<size_t>(m.size()), h);
}

}  // namespace ragme
