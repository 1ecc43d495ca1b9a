#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "cadenceforge/common.hpp"

namespace cforge::binio {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts unsupported");

template <class T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    require(static_cast<bool>(is), std::string("truncated file while reading ") + what);
    return v;
}

inline void write_magic(std::ostream& os, const char magic[4]) { os.write(magic, 4); }

inline void check_magic(std::istream& is, const char magic[4], const char* what) {
    char got[4] = {};
    is.read(got, 4);
    require(static_cast<bool>(is) && std::memcmp(got, magic, 4) == 0,
            std::string("bad magic, not a ") + what + " file");
}

inline void write_f32s(std::ostream& os, const std::vector<float>& v) {
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(float)));
}

inline std::vector<float> read_f32s(std::istream& is, std::size_t n, const char* what) {
    std::vector<float> v(n);
    is.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(n * sizeof(float)));
    require(static_cast<bool>(is), std::string("truncated payload in ") + what);
    return v;
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    require(static_cast<bool>(os), "cannot open for writing: " + path);
    return os;
}

inline std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(static_cast<bool>(is), "cannot open for reading: " + path);
    return is;
}

}  // namespace cforge::binio
