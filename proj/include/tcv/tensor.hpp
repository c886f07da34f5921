#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tcv {

// Dense row-major double tensor. Shapes are small (<= 4 dims in practice).
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape, double fill = 0.0)
        : shape_(std::move(shape)) {
        std::size_t n = 1;
        for (int d : shape_) {
            if (d <= 0) throw std::invalid_argument("Tensor: non-positive dim");
            n *= static_cast<std::size_t>(d);
        }
        data_.assign(n, fill);
    }

    Tensor(std::initializer_list<int> shape, double fill = 0.0)
        : Tensor(std::vector<int>(shape), fill) {}

    static Tensor scalar(double v) {
        Tensor t({1});
        t.data_[0] = v;
        return t;
    }

    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    const std::vector<int>& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& operator()(int i) { return data_[static_cast<std::size_t>(i)]; }
    const double& operator()(int i) const { return data_[static_cast<std::size_t>(i)]; }

    double& operator()(int i, int j) {
        return data_[static_cast<std::size_t>(i) * shape_[1] + j];
    }
    const double& operator()(int i, int j) const {
        return data_[static_cast<std::size_t>(i) * shape_[1] + j];
    }

    double& operator()(int i, int j, int k) {
        return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    const double& operator()(int i, int j, int k) const {
        return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }

    double& operator()(int i, int j, int k, int l) {
        return data_[((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }
    const double& operator()(int i, int j, int k, int l) const {
        return data_[((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    double min() const { return *std::min_element(data_.begin(), data_.end()); }
    double max() const { return *std::max_element(data_.begin(), data_.end()); }
    double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }
    double mean() const { return empty() ? 0.0 : sum() / static_cast<double>(size()); }

    double max_abs_diff(const Tensor& o) const {
        if (!same_shape(o)) throw std::invalid_argument("max_abs_diff: shape mismatch");
        double m = 0.0;
        for (std::size_t i = 0; i < data_.size(); ++i)
            m = std::max(m, std::abs(data_[i] - o.data_[i]));
        return m;
    }

    bool operator==(const Tensor& o) const {
        return shape_ == o.shape_ && std::memcmp(data_.data(), o.data_.data(),
                                                 data_.size() * sizeof(double)) == 0;
    }

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

inline std::string shape_str(const Tensor& t) {
    std::string s = "(";
    for (int i = 0; i < t.ndim(); ++i) {
        if (i) s += ",";
        s += std::to_string(t.dim(i));
    }
    return s + ")";
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a) + " vs " + shape_str(b));
}

// ---------------------------------------------------------------------------
// Seeded RNG. All randomness in the project flows from one u64 seed through
// named sub-streams, so stages can re-derive their stream independently of
// call order (required for resumable, bit-reproducible runs).
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& w : s_) w = splitmix64(x);
    }

    // Independent deterministic stream, e.g. stream(seed, "edit.noise").
    static Rng stream(std::uint64_t seed, std::string_view name) {
        return Rng(seed ^ fnv1a64(name));
    }

    std::uint64_t next_u64() {  // xoshiro256++
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    double uniform() {  // [0,1)
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {  // Box-Muller, second value discarded for statelessness
        double u1 = uniform();
        double u2 = uniform();
        u1 = std::max(u1, 0x1.0p-60);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    int uniform_int(int n) {  // [0, n)
        return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i)
            std::swap(v[static_cast<std::size_t>(i)],
                      v[static_cast<std::size_t>(uniform_int(i + 1))]);
    }

    Tensor normal_tensor(std::vector<int> shape, double stddev = 1.0) {
        Tensor t(std::move(shape));
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = normal() * stddev;
        return t;
    }

    Tensor uniform_tensor(std::vector<int> shape, double lo, double hi) {
        Tensor t(std::move(shape));
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = uniform(lo, hi);
        return t;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }
    std::uint64_t s_[4];
};

}  // namespace tcv
