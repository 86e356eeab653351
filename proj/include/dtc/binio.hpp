// SPDX-License-Identifier: Apache-2.0
//
// Little-endian binary readers/writers for the on-disk record formats
// (snapshot archives, dataset splits, checkpoints). Layouts are documented
// in docs/formats.md.

#pragma once

#include "dtc/common.hpp"

#include <cstring>
#include <fstream>

namespace dtc::io {

class BinWriter {
  public:
    explicit BinWriter(const std::string& path) : f_(path, std::ios::binary), path_(path) {
        if (!f_) throw IoError("cannot open for writing: " + path);
    }

    void u32(std::uint32_t v) { raw(&v, sizeof(v)); }
    void u64(std::uint64_t v) { raw(&v, sizeof(v)); }
    void f64(double v) { raw(&v, sizeof(v)); }
    void f64s(const double* p, std::size_t n) { raw(p, n * sizeof(double)); }
    void f64s(const std::vector<double>& v) { f64s(v.data(), v.size()); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    void magic(const char m[4]) { raw(m, 4); }

    void close() {
        f_.close();
        if (!f_) throw IoError("write failed: " + path_);
    }

  private:
    void raw(const void* p, std::size_t n) {
        f_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
        if (!f_) throw IoError("write failed: " + path_);
    }

    std::ofstream f_;
    std::string path_;
};

class BinReader {
  public:
    explicit BinReader(const std::string& path) : f_(path, std::ios::binary), path_(path) {
        if (!f_) throw IoError("cannot open: " + path);
    }

    std::uint32_t u32() {
        std::uint32_t v;
        raw(&v, sizeof(v));
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        raw(&v, sizeof(v));
        return v;
    }
    double f64() {
        double v;
        raw(&v, sizeof(v));
        return v;
    }
    void f64s(double* p, std::size_t n) { raw(p, n * sizeof(double)); }
    std::vector<double> f64s(std::size_t n) {
        std::vector<double> v(n);
        f64s(v.data(), n);
        return v;
    }
    std::string str() {
        const auto n = u32();
        std::string s(n, '\0');
        raw(s.data(), n);
        return s;
    }
    void expect_magic(const char m[4]) {
        char got[4];
        raw(got, 4);
        if (std::memcmp(got, m, 4) != 0)
            throw IoError(path_ + ": bad magic (expected " + std::string(m, 4) + ")");
    }

  private:
    void raw(void* p, std::size_t n) {
        f_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (f_.gcount() != static_cast<std::streamsize>(n))
            throw IoError(path_ + ": truncated file");
    }

    std::ifstream f_;
    std::string path_;
};

} // namespace dtc::io
