#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "dpcov/errors.hpp"

namespace dpcov {

// Spatial extent of a signal. Channels are stored as planes, i.e. the
// element at (channel ch, row y, column x) lives at index
// ch*h*w + y*w + x. A plain vector is a 1 x d x 1 signal.
struct Shape {
    int h = 1;
    int w = 1;
    int c = 1;

    int pixels() const { return h * w; }
    int size() const { return h * w * c; }
    bool operator==(const Shape&) const = default;
};

struct Signal {
    std::vector<double> data;
    Shape shape;

    Signal() = default;
    explicit Signal(Shape s, double fill = 0.0)
        : data(static_cast<size_t>(s.size()), fill), shape(s) {
        if (s.h <= 0 || s.w <= 0 || s.c <= 0)
            throw ValidationError("signal shape must be positive");
    }
    Signal(std::vector<double> values, Shape s) : data(std::move(values)), shape(s) {
        if (static_cast<int>(data.size()) != s.size())
            throw DimensionError("signal data length does not match shape");
    }
    // 1-D convenience constructors.
    explicit Signal(std::vector<double> values)
        : data(std::move(values)), shape{1, static_cast<int>(data.size()), 1} {
        if (data.empty()) throw ValidationError("signal must be non-empty");
    }
    Signal(std::initializer_list<double> values) : Signal(std::vector<double>(values)) {}

    int size() const { return static_cast<int>(data.size()); }
    double& operator[](int i) { return data[static_cast<size_t>(i)]; }
    double operator[](int i) const { return data[static_cast<size_t>(i)]; }
    double& at(int ch, int y, int x) { return data[idx(ch, y, x)]; }
    double at(int ch, int y, int x) const { return data[idx(ch, y, x)]; }

    size_t idx(int ch, int y, int x) const {
        return static_cast<size_t>((ch * shape.h + y) * shape.w + x);
    }
};

inline void require_same_shape(const Signal& a, const Signal& b, const char* what) {
    if (!(a.shape == b.shape))
        throw DimensionError(std::string(what) + ": shape mismatch");
}

inline double dot(const Signal& a, const Signal& b) {
    require_same_shape(a, b, "dot");
    return std::inner_product(a.data.begin(), a.data.end(), b.data.begin(), 0.0);
}

inline double norm2(const Signal& a) { return std::sqrt(dot(a, a)); }

inline double norm_inf(const Signal& a) {
    double m = 0.0;
    for (double v : a.data) m = std::max(m, std::abs(v));
    return m;
}

inline Signal operator+(Signal a, const Signal& b) {
    require_same_shape(a, b, "add");
    for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
    return a;
}

inline Signal operator-(Signal a, const Signal& b) {
    require_same_shape(a, b, "sub");
    for (size_t i = 0; i < a.data.size(); ++i) a.data[i] -= b.data[i];
    return a;
}

inline Signal operator*(double c, Signal a) {
    for (double& v : a.data) v *= c;
    return a;
}

inline Signal& axpy(double alpha, const Signal& x, Signal& y) {
    require_same_shape(x, y, "axpy");
    for (size_t i = 0; i < x.data.size(); ++i) y.data[i] += alpha * x.data[i];
    return y;
}

inline bool all_finite(const Signal& a) {
    return std::all_of(a.data.begin(), a.data.end(),
                       [](double v) { return std::isfinite(v); });
}

} // namespace dpcov
