#include "ragme/io.hpp"

#include <array>

namespace ragme::io {

namespace {

std::array<uint32_t, 256> make_crc_table() {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
        uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        t[i] = c;
    }
    return t;
}

}  // namespace

uint32_t crc32(const void* data, size_t n, uint32_t crc) {
    static const std::array<uint32_t, 256> table = make_crc_table();
    const unsigned char* p = static_cast<const unsigned char*>(data);
    uint32_t c = crc ^ 0xFFFFFFFFu;
    for (size_t i = 0; i < n; ++i) c = table[(c ^ p[i]) & 0xFFu] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

void write_blob_map(std::ostream& os, const BlobMap& blobs) {
    write_pod<uint32_t>(os, static_cast<uint32_t>(blobs.size()));
    for (const auto& [name, blob] : blobs) {
        write_string(os, name);
        write_pod<uint32_t>(os, blob.rows);
        write_pod<uint32_t>(os, blob.cols);
        write_bytes(os, blob.data.data(), blob.data.size() * sizeof(float));
    }
}

BlobMap read_blob_map(std::istream& is) {
    BlobMap blobs;
    uint32_t count = read_pod<uint32_t>(is);
    for (uint32_t i = 0; i < count; ++i) {
        std::string name = read_string(is);
        Blob b;
        b.rows = read_pod<uint32_t>(is);
        b.cols = read_pod<uint32_t>(is);
        size_t n = static_cast<size_t>(b.rows) * b.cols;
        if (n > (1u << 30)) throw std::runtime_error("io: blob size out of range: " + name);
        b.data.resize(n);
        read_bytes(is, b.data.data(), n * sizeof(float));
        blobs.emplace(std::move(name), std::move(b));
    }
    return blobs;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    return os;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for reading: " + path);
    return is;
}

}  // namespace ragme::io
