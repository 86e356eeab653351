// SPDX-License-Identifier: Apache-2.0
//
// dtclab -- digital twin channel laboratory
// Basic value types, deterministic RNG, error types and the worker pool
// shared by all modules.

#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dtc {

inline constexpr double kSpeedOfLight = 299792458.0; // m/s
inline constexpr double kPi = 3.14159265358979323846;

using cplx = std::complex<double>;

// ---------------------------------------------------------------------------
// errors

/// Input or file content violates a documented contract.
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// File could not be read/written or has a malformed layout.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A numeric operation produced NaN/Inf or an otherwise unusable value.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Bad run configuration (unknown keys, inconsistent settings).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------------------
// geometry primitives

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    bool operator==(const Vec3& o) const = default;

    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    double norm() const { return std::sqrt(dot(*this)); }
    Vec3 normalized() const {
        const double n = norm();
        return {x / n, y / n, z / n};
    }
};

/// Axis-aligned rectangle in the ground plane, in meters.
struct Rect {
    double min_x = 0.0, min_y = 0.0, max_x = 0.0, max_y = 0.0;

    bool operator==(const Rect& o) const = default;

    double width() const { return max_x - min_x; }
    double depth() const { return max_y - min_y; }
    double area() const { return width() * depth(); }
    double center_x() const { return 0.5 * (min_x + max_x); }
    double center_y() const { return 0.5 * (min_y + max_y); }

    bool contains(double x, double y) const {
        return x >= min_x && x <= max_x && y >= min_y && y <= max_y;
    }
    bool contains(const Rect& o) const {
        return o.min_x >= min_x && o.max_x <= max_x && o.min_y >= min_y && o.max_y <= max_y;
    }
    /// Area of the intersection with `o`; zero when footprints only touch.
    double overlap_area(const Rect& o) const {
        const double w = std::min(max_x, o.max_x) - std::max(min_x, o.min_x);
        const double d = std::min(max_y, o.max_y) - std::max(min_y, o.min_y);
        if (w <= 0.0 || d <= 0.0) return 0.0;
        return w * d;
    }
};

// ---------------------------------------------------------------------------
// deterministic RNG
//
// All randomness in the project flows through this generator. The raw engine
// is xoshiro256** seeded via splitmix64; the uniform/normal transforms below
// are spelled out so that streams are identical on every platform and never
// depend on libstdc++ distribution internals.

class Rng {
  public:
    explicit Rng(std::uint64_t seed) { reseed(seed); }

    void reseed(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& w : state_) w = splitmix64(x);
        have_spare_ = false;
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n), n > 0. Rejection-free modulo is fine here:
    /// n is always tiny compared to 2^64 so the bias is far below anything
    /// observable.
    std::uint64_t uniform_int(std::uint64_t n) { return next_u64() % n; }

    /// Standard normal via Box-Muller (deterministic spare caching).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * kPi * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    static std::uint64_t splitmix64(std::uint64_t& x) {
        std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

  private:
    static std::uint64_t rotl(std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

    std::array<std::uint64_t, 4> state_{};
    double spare_ = 0.0;
    bool have_spare_ = false;
};

/// FNV-1a 64-bit over raw bytes. Used for manifest hashes and for deriving
/// purpose-specific seeds from a global seed plus a tag.
std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(const std::string& s);

/// Derive an independent stream seed from (seed, tag).
std::uint64_t seed_for(std::uint64_t seed, const std::string& tag);

// ---------------------------------------------------------------------------
// worker pool

/// Set/get the process-wide worker count used by parallel_for. Count 1 runs
/// everything inline. Results never depend on the count: each index is
/// computed by exactly one worker and reductions are per-index.
void set_worker_count(unsigned n);
unsigned worker_count();

/// Run fn(i) for i in [0, n). Partitioning is static by block so repeated
/// calls schedule identically.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

} // namespace dtc
