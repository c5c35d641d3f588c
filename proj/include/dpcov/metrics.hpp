#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "dpcov/signal.hpp"

namespace dpcov {

// Mean absolute difference ||x - y||_1 / d.
inline double mad(const Signal& x, const Signal& y) {
    require_same_shape(x, y, "mad");
    double acc = 0.0;
    for (size_t i = 0; i < x.data.size(); ++i) acc += std::abs(x.data[i] - y.data[i]);
    return acc / static_cast<double>(x.data.size());
}

inline double mse(const Signal& x, const Signal& y) {
    require_same_shape(x, y, "mse");
    double acc = 0.0;
    for (size_t i = 0; i < x.data.size(); ++i) {
        const double e = x.data[i] - y.data[i];
        acc += e * e;
    }
    return acc / static_cast<double>(x.data.size());
}

// 10 log10(peak^2 / MSE); exact matches report the infinity sentinel.
inline double psnr(const Signal& x, const Signal& ref, double peak) {
    if (peak <= 0.0) throw DomainError("psnr: peak must be positive");
    const double m = mse(x, ref);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / m);
}

namespace detail {

inline std::vector<double> gaussian_window(int radius, double sigma) {
    const int n = 2 * radius + 1;
    std::vector<double> w(static_cast<size_t>(n) * n);
    double sum = 0.0;
    for (int y = -radius; y <= radius; ++y)
        for (int x = -radius; x <= radius; ++x) {
            double v = std::exp(-(x * x + y * y) / (2.0 * sigma * sigma));
            w[static_cast<size_t>(y + radius) * n + (x + radius)] = v;
            sum += v;
        }
    for (double& v : w) v /= sum;
    return w;
}

} // namespace detail

// Mean local SSIM over the valid region with the canonical 11x11 Gaussian
// window (sigma 1.5) and constants C1 = (0.01 peak)^2, C2 = (0.03 peak)^2.
// Multi-channel inputs average the per-channel values.
inline double ssim(const Signal& x, const Signal& ref, double peak = 2.0) {
    require_same_shape(x, ref, "ssim");
    if (peak <= 0.0) throw DomainError("ssim: peak must be positive");
    constexpr int kRadius = 5;
    const int win = 2 * kRadius + 1;
    if (x.shape.h < win || x.shape.w < win)
        throw DimensionError("ssim: image smaller than the 11x11 window");
    static const std::vector<double> w = detail::gaussian_window(kRadius, 1.5);
    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);

    double total = 0.0;
    for (int ch = 0; ch < x.shape.c; ++ch) {
        double acc = 0.0;
        int count = 0;
        for (int cy = kRadius; cy < x.shape.h - kRadius; ++cy) {
            for (int cx = kRadius; cx < x.shape.w - kRadius; ++cx) {
                double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
                for (int dy = -kRadius; dy <= kRadius; ++dy)
                    for (int dx = -kRadius; dx <= kRadius; ++dx) {
                        const double wv =
                            w[static_cast<size_t>(dy + kRadius) * win + (dx + kRadius)];
                        const double a = x.at(ch, cy + dy, cx + dx);
                        const double b = ref.at(ch, cy + dy, cx + dx);
                        mx += wv * a;
                        my += wv * b;
                        mxx += wv * a * a;
                        myy += wv * b * b;
                        mxy += wv * a * b;
                    }
                const double vx = mxx - mx * mx;
                const double vy = myy - my * my;
                const double cxy = mxy - mx * my;
                const double num = (2.0 * mx * my + c1) * (2.0 * cxy + c2);
                const double den = (mx * mx + my * my + c1) * (vx + vy + c2);
                acc += num / den;
                ++count;
            }
        }
        total += acc / count;
    }
    return total / x.shape.c;
}

} // namespace dpcov
