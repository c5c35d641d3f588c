#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "dpcov/fft.hpp"
#include "dpcov/signal.hpp"

namespace dpcov {

// Degradation operator A with apply/adjoint and, where available, a
// pseudo-inverse. Operators are immutable after construction (cached
// spectra included), so shared instances may be used concurrently.
class LinearOperator {
public:
    virtual ~LinearOperator() = default;

    virtual Shape input_shape() const = 0;
    virtual Shape output_shape() const = 0;
    int input_dim() const { return input_shape().size(); }
    int output_dim() const { return output_shape().size(); }

    virtual Signal apply(const Signal& x) const = 0;
    virtual Signal adjoint(const Signal& u) const = 0;

    virtual bool has_pseudo_inverse() const { return false; }
    virtual Signal pseudo_inverse(const Signal&) const {
        throw CapabilityError("operator does not support a pseudo-inverse");
    }

    // Closed-form v = A^T (sigma^2 I + r^2 A A^T)^{-1} resid for isotropic
    // posterior covariance, where resid lives in measurement space.
    // Returns nullopt when no closed form exists (callers fall back to CG).
    virtual std::optional<Signal> closed_form_v(const Signal& /*resid*/, double /*sigma2*/,
                                                double /*r2*/) const {
        return std::nullopt;
    }

protected:
    void check_input(const Signal& x) const {
        if (!(x.shape == input_shape())) throw DimensionError("operator: input shape mismatch");
    }
    void check_output(const Signal& u) const {
        if (!(u.shape == output_shape())) throw DimensionError("operator: output shape mismatch");
    }
};

// Averages the s aliased blocks of a spectrum; the frequency-domain
// equivalent of standard s-fold spatial downsampling. 1-D planes (h == 1)
// downsample along w; 2-D planes downsample separably in both dimensions.
inline std::vector<cdouble> block_downsample_spectrum(const std::vector<cdouble>& spec, int h,
                                                      int w, int s) {
    if (s <= 0) throw ValidationError("block downsample: factor must be positive");
    if (static_cast<int>(spec.size()) != h * w)
        throw DimensionError("block downsample: spectrum size mismatch");
    if (w % s != 0 || (h != 1 && h % s != 0))
        throw DimensionError("block downsample: factor must divide spectral dimensions");
    const int oh = (h == 1) ? 1 : h / s;
    const int ow = w / s;
    const int sh = (h == 1) ? 1 : s;
    std::vector<cdouble> out(static_cast<size_t>(oh) * ow);
    const double scale = 1.0 / (sh * s);
    for (int p = 0; p < oh; ++p) {
        for (int q = 0; q < ow; ++q) {
            cdouble acc = 0.0;
            for (int a = 0; a < sh; ++a)
                for (int b = 0; b < s; ++b) acc += spec[static_cast<size_t>(p + a * oh) * w + (q + b * ow)];
            out[static_cast<size_t>(p) * ow + q] = acc * scale;
        }
    }
    return out;
}

// Selection operator D_m: keeps the entries of the signal where the mask is
// nonzero. Rows are orthonormal, so A A^T = I and A^dagger = A^T (zero-fill).
class MaskOp final : public LinearOperator {
public:
    MaskOp(std::vector<uint8_t> mask, Shape shape) : mask_(std::move(mask)), in_shape_(shape) {
        if (static_cast<int>(mask_.size()) != shape.size())
            throw DimensionError("mask: length does not match signal shape");
        for (size_t i = 0; i < mask_.size(); ++i)
            if (mask_[i]) kept_.push_back(static_cast<int>(i));
        if (kept_.empty()) throw ValidationError("mask: keeps no entries");
    }

    Shape input_shape() const override { return in_shape_; }
    Shape output_shape() const override { return Shape{1, static_cast<int>(kept_.size()), 1}; }

    const std::vector<uint8_t>& mask() const { return mask_; }
    int kept_count() const { return static_cast<int>(kept_.size()); }

    Signal apply(const Signal& x) const override {
        check_input(x);
        Signal y(output_shape());
        for (size_t i = 0; i < kept_.size(); ++i) y[static_cast<int>(i)] = x[kept_[i]];
        return y;
    }

    Signal adjoint(const Signal& u) const override {
        check_output(u);
        Signal x(in_shape_);
        for (size_t i = 0; i < kept_.size(); ++i) x[kept_[i]] = u[static_cast<int>(i)];
        return x;
    }

    bool has_pseudo_inverse() const override { return true; }
    Signal pseudo_inverse(const Signal& y) const override { return adjoint(y); }

    std::optional<Signal> closed_form_v(const Signal& resid, double sigma2,
                                        double r2) const override {
        if (sigma2 + r2 <= 0.0)
            throw SingularityError("mask: sigma^2 + r^2 must be positive");
        return (1.0 / (sigma2 + r2)) * adjoint(resid);
    }

private:
    std::vector<uint8_t> mask_;
    std::vector<int> kept_;
    Shape in_shape_;
};

namespace detail {

// Zero-pads a center-anchored kernel into an h x w plane with circular
// wrap-around, so the kernel center lands on index (0, 0).
inline std::vector<double> pad_kernel(const std::vector<double>& k, int kh, int kw, int h,
                                      int w) {
    if (static_cast<int>(k.size()) != kh * kw) throw DimensionError("kernel: grid size mismatch");
    if (kh > h || kw > w) throw DimensionError("kernel: larger than signal");
    std::vector<double> padded(static_cast<size_t>(h) * w, 0.0);
    const int cy = kh / 2, cx = kw / 2;
    for (int y = 0; y < kh; ++y) {
        for (int x = 0; x < kw; ++x) {
            int py = ((y - cy) % h + h) % h;
            int px = ((x - cx) % w + w) % w;
            padded[static_cast<size_t>(py) * w + px] += k[static_cast<size_t>(y) * kw + x];
        }
    }
    return padded;
}

} // namespace detail

// Circular convolution A = F^{-1} diag(k_hat) F, applied per channel.
class CircularConvOp final : public LinearOperator {
public:
    CircularConvOp(Shape shape, const std::vector<double>& kernel, int kh, int kw,
                   double spectral_zero_tol = 3e-2)
        : in_shape_(shape), fft_(shape.h, shape.w), zero_tol_(spectral_zero_tol) {
        k_hat_ = fft_.forward(detail::pad_kernel(kernel, kh, kw, shape.h, shape.w));
    }

    Shape input_shape() const override { return in_shape_; }
    Shape output_shape() const override { return in_shape_; }

    const std::vector<cdouble>& spectrum() const { return k_hat_; }
    double spectral_zero_tol() const { return zero_tol_; }

    Signal apply(const Signal& x) const override {
        check_input(x);
        return per_channel(x, [&](std::vector<cdouble> sp) {
            for (size_t i = 0; i < sp.size(); ++i) sp[i] *= k_hat_[i];
            return sp;
        });
    }

    Signal adjoint(const Signal& u) const override {
        check_output(u);
        return per_channel(u, [&](std::vector<cdouble> sp) {
            for (size_t i = 0; i < sp.size(); ++i) sp[i] *= std::conj(k_hat_[i]);
            return sp;
        });
    }

    bool has_pseudo_inverse() const override { return true; }

    // Spectral reciprocal, zeroing entries where |k_hat| falls below the
    // configured threshold.
    Signal pseudo_inverse(const Signal& y) const override {
        check_output(y);
        return per_channel(y, [&](std::vector<cdouble> sp) {
            for (size_t i = 0; i < sp.size(); ++i)
                sp[i] = std::abs(k_hat_[i]) < zero_tol_ ? cdouble(0.0) : sp[i] / k_hat_[i];
            return sp;
        });
    }

    std::optional<Signal> closed_form_v(const Signal& resid, double sigma2,
                                        double r2) const override {
        check_output(resid);
        return per_channel(resid, [&](std::vector<cdouble> sp) {
            for (size_t i = 0; i < sp.size(); ++i) {
                double denom = sigma2 + r2 * std::norm(k_hat_[i]);
                if (denom <= 0.0)
                    throw SingularityError("deblur: singular spectral denominator");
                sp[i] = std::conj(k_hat_[i]) * sp[i] / denom;
            }
            return sp;
        });
    }

private:
    template <typename F>
    Signal per_channel(const Signal& x, F&& spectral_map) const {
        Signal out(x.shape);
        const int plane = in_shape_.pixels();
        std::vector<double> ch(static_cast<size_t>(plane));
        for (int c = 0; c < x.shape.c; ++c) {
            std::copy_n(x.data.begin() + static_cast<size_t>(c) * plane, plane, ch.begin());
            auto mapped = fft_.inverse_real(spectral_map(fft_.forward(ch)));
            std::copy_n(mapped.begin(), plane, out.data.begin() + static_cast<size_t>(c) * plane);
        }
        return out;
    }

    Shape in_shape_;
    Fft2D fft_;
    std::vector<cdouble> k_hat_;
    double zero_tol_;
};

// A = D_{down s} F^{-1} diag(k_hat) F: circular blur followed by standard
// s-fold downsampling (upper-left pixel of each s x s patch).
class SuperResOp final : public LinearOperator {
public:
    SuperResOp(Shape shape, const std::vector<double>& kernel, int kh, int kw, int factor)
        : in_shape_(shape),
          factor_(factor),
          fft_(shape.h, shape.w),
          fft_small_(shape.h / std::max(factor, 1), shape.w / std::max(factor, 1)) {
        if (factor <= 0 || shape.h % factor != 0 || shape.w % factor != 0)
            throw DimensionError("super-resolution: factor must divide spatial dimensions");
        k_hat_ = fft_.forward(detail::pad_kernel(kernel, kh, kw, shape.h, shape.w));
        k_abs2_small_.resize(k_hat_.size());
        std::vector<cdouble> abs2(k_hat_.size());
        for (size_t i = 0; i < k_hat_.size(); ++i) abs2[i] = std::norm(k_hat_[i]);
        auto bd = block_downsample_spectrum(abs2, shape.h, shape.w, factor);
        k_abs2_small_.assign(bd.size(), 0.0);
        for (size_t i = 0; i < bd.size(); ++i) k_abs2_small_[i] = bd[i].real();
    }

    Shape input_shape() const override { return in_shape_; }
    Shape output_shape() const override {
        return Shape{in_shape_.h / factor_, in_shape_.w / factor_, in_shape_.c};
    }
    int factor() const { return factor_; }
    const std::vector<cdouble>& spectrum() const { return k_hat_; }

    Signal apply(const Signal& x) const override {
        check_input(x);
        const int plane = in_shape_.pixels();
        Signal y(output_shape());
        std::vector<double> ch(static_cast<size_t>(plane));
        for (int c = 0; c < x.shape.c; ++c) {
            std::copy_n(x.data.begin() + static_cast<size_t>(c) * plane, plane, ch.begin());
            auto sp = fft_.forward(ch);
            for (size_t i = 0; i < sp.size(); ++i) sp[i] *= k_hat_[i];
            auto blurred = fft_.inverse_real(std::move(sp));
            for (int p = 0; p < y.shape.h; ++p)
                for (int q = 0; q < y.shape.w; ++q)
                    y.at(c, p, q) = blurred[static_cast<size_t>(p * factor_) * in_shape_.w +
                                            static_cast<size_t>(q) * factor_];
        }
        return y;
    }

    Signal adjoint(const Signal& u) const override {
        check_output(u);
        const int plane = in_shape_.pixels();
        Signal x(in_shape_);
        for (int c = 0; c < u.shape.c; ++c) {
            std::vector<double> up(static_cast<size_t>(plane), 0.0);
            for (int p = 0; p < u.shape.h; ++p)
                for (int q = 0; q < u.shape.w; ++q)
                    up[static_cast<size_t>(p * factor_) * in_shape_.w +
                       static_cast<size_t>(q) * factor_] = u.at(c, p, q);
            auto sp = fft_.forward(up);
            for (size_t i = 0; i < sp.size(); ++i) sp[i] *= std::conj(k_hat_[i]);
            auto res = fft_.inverse_real(std::move(sp));
            std::copy_n(res.begin(), plane, x.data.begin() + static_cast<size_t>(c) * plane);
        }
        return x;
    }

    // Nearest-neighbor upsampling surrogate; does not undo the kernel, so
    // A A^dagger A = A is not guaranteed for this operator.
    bool has_pseudo_inverse() const override { return true; }
    Signal pseudo_inverse(const Signal& y) const override {
        check_output(y);
        Signal x(in_shape_);
        for (int c = 0; c < y.shape.c; ++c)
            for (int p = 0; p < in_shape_.h; ++p)
                for (int q = 0; q < in_shape_.w; ++q)
                    x.at(c, p, q) = y.at(c, p / factor_, q / factor_);
        return x;
    }

    std::optional<Signal> closed_form_v(const Signal& resid, double sigma2,
                                        double r2) const override {
        check_output(resid);
        const Shape out = output_shape();
        const int small_plane = out.pixels();
        const int plane = in_shape_.pixels();
        const int oh = out.h, ow = out.w;
        Signal v(in_shape_);
        std::vector<double> ch(static_cast<size_t>(small_plane));
        for (int c = 0; c < resid.shape.c; ++c) {
            std::copy_n(resid.data.begin() + static_cast<size_t>(c) * small_plane, small_plane,
                        ch.begin());
            auto r_hat = fft_small_.forward(ch);
            for (size_t i = 0; i < r_hat.size(); ++i) {
                double denom = sigma2 + r2 * k_abs2_small_[i];
                if (denom <= 0.0)
                    throw SingularityError("super-resolution: singular spectral denominator");
                r_hat[i] /= denom;
            }
            // conj(k_hat) block-multiplied against the tiled small spectrum
            std::vector<cdouble> v_hat(k_hat_.size());
            for (int p = 0; p < in_shape_.h; ++p)
                for (int q = 0; q < in_shape_.w; ++q)
                    v_hat[static_cast<size_t>(p) * in_shape_.w + q] =
                        std::conj(k_hat_[static_cast<size_t>(p) * in_shape_.w + q]) *
                        r_hat[static_cast<size_t>(p % oh) * ow + (q % ow)];
            auto res = fft_.inverse_real(std::move(v_hat));
            std::copy_n(res.begin(), plane, v.data.begin() + static_cast<size_t>(c) * plane);
        }
        return v;
    }

private:
    Shape in_shape_;
    int factor_;
    Fft2D fft_;
    Fft2D fft_small_;
    std::vector<cdouble> k_hat_;
    std::vector<double> k_abs2_small_;
};

// Explicit matrix operator, mainly for tests and dense cross-checks.
class DenseOp final : public LinearOperator {
public:
    DenseOp(std::vector<double> row_major, int rows, Shape in_shape)
        : m_(std::move(row_major)), rows_(rows), in_shape_(in_shape) {
        if (static_cast<int>(m_.size()) != rows * in_shape.size())
            throw DimensionError("dense operator: matrix size mismatch");
    }

    Shape input_shape() const override { return in_shape_; }
    Shape output_shape() const override { return Shape{1, rows_, 1}; }

    Signal apply(const Signal& x) const override {
        check_input(x);
        const int d = in_shape_.size();
        Signal y(output_shape());
        for (int i = 0; i < rows_; ++i) {
            double acc = 0.0;
            for (int j = 0; j < d; ++j) acc += m_[static_cast<size_t>(i) * d + j] * x[j];
            y[i] = acc;
        }
        return y;
    }

    Signal adjoint(const Signal& u) const override {
        check_output(u);
        const int d = in_shape_.size();
        Signal x(in_shape_);
        for (int i = 0; i < rows_; ++i)
            for (int j = 0; j < d; ++j) x[j] += m_[static_cast<size_t>(i) * d + j] * u[i];
        return x;
    }

private:
    std::vector<double> m_;
    int rows_;
    Shape in_shape_;
};

// Noisy linear measurement y = A x + n, n ~ N(0, sigma^2 I).
struct MeasurementModel {
    std::shared_ptr<const LinearOperator> op;
    double sigma = 0.0;
    Signal y;

    MeasurementModel(std::shared_ptr<const LinearOperator> op_, double sigma_, Signal y_)
        : op(std::move(op_)), sigma(sigma_), y(std::move(y_)) {
        if (!op) throw ValidationError("measurement: operator is null");
        if (sigma < 0.0) throw DomainError("measurement: sigma must be >= 0");
        if (!(y.shape == op->output_shape()))
            throw DimensionError("measurement: y does not match operator output");
    }
};

} // namespace dpcov
