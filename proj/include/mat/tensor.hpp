#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mat {

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& m) : std::runtime_error("shape error: " + m) {}
};
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& m) : std::runtime_error("config error: " + m) {}
};
struct GeometryError : std::runtime_error {
    explicit GeometryError(const std::string& m) : std::runtime_error("geometry error: " + m) {}
};
struct IntegrityError : std::runtime_error {
    explicit IntegrityError(const std::string& m) : std::runtime_error("integrity error: " + m) {}
};
struct IoError : std::runtime_error {
    explicit IoError(const std::string& m) : std::runtime_error("io error: " + m) {}
};

// Dense 4-D array in NCHW row-major order. The universal value type;
// Scalar is float for compute and double for verification.
template <class Scalar>
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<Scalar> data;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_) {
        if (n < 1 || c < 1 || h < 1 || w < 1)
            throw ShapeError("all dimensions must be >= 1, got " + shape_str());
        data.assign(size(), Scalar(0));
    }

    std::size_t size() const { return std::size_t(n) * c * h * w; }
    bool same_shape(const Tensor& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }
    std::string shape_str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }

    Scalar& at(int ni, int ci, int hi, int wi) {
        return data[((std::size_t(ni) * c + ci) * h + hi) * w + wi];
    }
    Scalar at(int ni, int ci, int hi, int wi) const {
        return data[((std::size_t(ni) * c + ci) * h + hi) * w + wi];
    }
    Scalar* plane(int ni, int ci) { return data.data() + (std::size_t(ni) * c + ci) * h * w; }
    const Scalar* plane(int ni, int ci) const {
        return data.data() + (std::size_t(ni) * c + ci) * h * w;
    }

    static Tensor zeros(int n, int c, int h, int w) { return Tensor(n, c, h, w); }
    static Tensor full(int n, int c, int h, int w, Scalar v) {
        Tensor t(n, c, h, w);
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }
    static Tensor from_values(int n, int c, int h, int w, std::vector<Scalar> vals) {
        Tensor t(n, c, h, w);
        if (vals.size() != t.size()) throw ShapeError("value count does not match shape");
        t.data = std::move(vals);
        return t;
    }

    template <class T>
    Tensor<T> cast() const {
        Tensor<T> out;
        out.n = n; out.c = c; out.h = h; out.w = w;
        out.data.resize(size());
        for (std::size_t i = 0; i < size(); ++i) out.data[i] = T(data[i]);
        return out;
    }

    bool all_finite() const {
        for (Scalar v : data)
            if (!std::isfinite(double(v))) return false;
        return true;
    }
    void check_finite(const char* what) const {
        if (!all_finite()) throw std::runtime_error(std::string("non-finite value in ") + what);
    }

    Scalar max_abs() const {
        Scalar m = 0;
        for (Scalar v : data) m = std::max(m, std::abs(v));
        return m;
    }
    Scalar sum() const {
        Scalar s = 0;
        for (Scalar v : data) s += v;
        return s;
    }
};

template <class S>
S max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
    if (!a.same_shape(b)) throw ShapeError("max_abs_diff: " + a.shape_str() + " vs " + b.shape_str());
    S m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

template <class S>
bool bit_equal(const Tensor<S>& a, const Tensor<S>& b) {
    return a.same_shape(b) && a.data == b.data;
}

// ---- random fills ---------------------------------------------------------

using Rng = std::mt19937_64;

template <class S>
void fill_uniform(Tensor<S>& t, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    for (auto& v : t.data) v = S(d(rng));
}

template <class S>
void fill_normal(Tensor<S>& t, Rng& rng, double mean = 0.0, double sigma = 1.0) {
    std::normal_distribution<double> d(mean, sigma);
    for (auto& v : t.data) v = S(d(rng));
}

// Truncated normal: redraw outside two sigma.
template <class S>
void fill_trunc_normal(Tensor<S>& t, Rng& rng, double sigma) {
    std::normal_distribution<double> d(0.0, sigma);
    for (auto& v : t.data) {
        double x = d(rng);
        while (std::abs(x) > 2.0 * sigma) x = d(rng);
        v = S(x);
    }
}

// ---- spatial rearrangements (used by augmentation and self-ensemble) ------

template <class S>
Tensor<S> flip_h(const Tensor<S>& x) {
    Tensor<S> y(x.n, x.c, x.h, x.w);
    for (int ni = 0; ni < x.n; ++ni)
        for (int ci = 0; ci < x.c; ++ci)
            for (int hi = 0; hi < x.h; ++hi)
                for (int wi = 0; wi < x.w; ++wi)
                    y.at(ni, ci, hi, wi) = x.at(ni, ci, hi, x.w - 1 - wi);
    return y;
}

// Rotate 90 degrees counter-clockwise in the (h, w) plane.
template <class S>
Tensor<S> rot90(const Tensor<S>& x) {
    Tensor<S> y(x.n, x.c, x.w, x.h);
    for (int ni = 0; ni < x.n; ++ni)
        for (int ci = 0; ci < x.c; ++ci)
            for (int hi = 0; hi < x.h; ++hi)
                for (int wi = 0; wi < x.w; ++wi)
                    y.at(ni, ci, x.w - 1 - wi, hi) = x.at(ni, ci, hi, wi);
    return y;
}

// The 8 dihedral transforms: index t = r + 4*f with r quarter-turns then
// optional horizontal flip.
template <class S>
Tensor<S> dihedral(const Tensor<S>& x, int t) {
    if (t < 0 || t > 7) throw ConfigError("dihedral transform index must be 0..7");
    Tensor<S> y = x;
    for (int r = 0; r < t % 4; ++r) y = rot90(y);
    if (t / 4) y = flip_h(y);
    return y;
}

template <class S>
Tensor<S> dihedral_inverse(const Tensor<S>& x, int t) {
    Tensor<S> y = x;
    if (t / 4) y = flip_h(y);
    for (int r = 0; r < (4 - t % 4) % 4; ++r) y = rot90(y);
    return y;
}

template <class S>
Tensor<S> crop(const Tensor<S>& x, int h0, int w0, int hh, int ww) {
    if (h0 < 0 || w0 < 0 || h0 + hh > x.h || w0 + ww > x.w)
        throw ShapeError("crop window out of bounds");
    Tensor<S> y(x.n, x.c, hh, ww);
    for (int ni = 0; ni < x.n; ++ni)
        for (int ci = 0; ci < x.c; ++ci)
            for (int hi = 0; hi < hh; ++hi)
                for (int wi = 0; wi < ww; ++wi)
                    y.at(ni, ci, hi, wi) = x.at(ni, ci, h0 + hi, w0 + wi);
    return y;
}

}  // namespace mat
