#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ragme/mat.hpp"

namespace ragme::io {

uint32_t crc32(const void* data, size_t n, uint32_t crc = 0);

inline void write_bytes(std::ostream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!os) throw std::runtime_error("io: write failed");
}

inline void read_bytes(std::istream& is, void* p, size_t n) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (is.gcount() != static_cast<std::streamsize>(n))
        throw std::runtime_error("io: truncated file");
}

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    write_bytes(os, &v, sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v;
    read_bytes(is, &v, sizeof(T));
    return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
    write_pod<uint32_t>(os, static_cast<uint32_t>(s.size()));
    write_bytes(os, s.data(), s.size());
}

inline std::string read_string(std::istream& is) {
    uint32_t n = read_pod<uint32_t>(is);
    if (n > (1u << 28)) throw std::runtime_error("io: string length out of range");
    std::string s(n, '\0');
    read_bytes(is, s.data(), n);
    return s;
}

// Named float32 weight blobs with shapes. The in-memory scalar type may be
// float or double; files always hold float32.
struct Blob {
    uint32_t rows = 0;
    uint32_t cols = 0;
    std::vector<float> data;
};

using BlobMap = std::map<std::string, Blob>;

void write_blob_map(std::ostream& os, const BlobMap& blobs);
BlobMap read_blob_map(std::istream& is);

template <typename S>
Blob to_blob(const MatX<S>& m) {
    Blob b;
    b.rows = static_cast<uint32_t>(m.rows());
    b.cols = static_cast<uint32_t>(m.cols());
    b.data.resize(static_cast<size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            b.data[static_cast<size_t>(i) * m.cols() + j] = static_cast<float>(m(i, j));
    return b;
}

template <typename S>
MatX<S> from_blob(const Blob& b) {
    MatX<S> m(b.rows, b.cols);
    for (uint32_t i = 0; i < b.rows; ++i)
        for (uint32_t j = 0; j < b.cols; ++j)
            m(i, j) = static_cast<S>(b.data[static_cast<size_t>(i) * b.cols + j]);
    return m;
}

std::ofstream open_out(const std::string& path);
std::ifstream open_in(const std::string& path);

}  // namespace ragme::io
