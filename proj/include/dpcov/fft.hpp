#pragma once

#include <complex>
#include <mutex>
#include <vector>

#include <fftw3.h>

#include "dpcov/errors.hpp"

namespace dpcov {

using cdouble = std::complex<double>;

namespace detail {
// FFTW's planner is not thread-safe; plan creation/destruction is serialized.
// fftw_execute_dft on distinct arrays is safe to call concurrently.
inline std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}
} // namespace detail

// Complex 2-D DFT of a single row-major h x w plane. Forward is
// unnormalized, inverse scales by 1/(h*w), matching F^{-1} = (1/d) F^H.
// Plans use FFTW_ESTIMATE for deterministic algorithm selection and
// FFTW_UNALIGNED so they can execute on ordinary vector storage.
class Fft2D {
public:
    Fft2D(int h, int w) : h_(h), w_(w) {
        if (h <= 0 || w <= 0) throw ValidationError("fft: dimensions must be positive");
        std::vector<cdouble> buf(static_cast<size_t>(h) * w);
        auto* p = reinterpret_cast<fftw_complex*>(buf.data());
        std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
        unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
        fwd_ = fftw_plan_dft_2d(h, w, p, p, FFTW_FORWARD, flags);
        bwd_ = fftw_plan_dft_2d(h, w, p, p, FFTW_BACKWARD, flags);
        if (!fwd_ || !bwd_) throw ValidationError("fft: plan creation failed");
    }

    ~Fft2D() {
        std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
        if (fwd_) fftw_destroy_plan(fwd_);
        if (bwd_) fftw_destroy_plan(bwd_);
    }

    Fft2D(const Fft2D&) = delete;
    Fft2D& operator=(const Fft2D&) = delete;
    Fft2D(Fft2D&& o) noexcept : h_(o.h_), w_(o.w_), fwd_(o.fwd_), bwd_(o.bwd_) {
        o.fwd_ = nullptr;
        o.bwd_ = nullptr;
    }

    int h() const { return h_; }
    int w() const { return w_; }
    int size() const { return h_ * w_; }

    std::vector<cdouble> forward(const std::vector<double>& x) const {
        check_size(x.size());
        std::vector<cdouble> out(x.begin(), x.end());
        exec(fwd_, out);
        return out;
    }

    std::vector<cdouble> forward(std::vector<cdouble> x) const {
        check_size(x.size());
        exec(fwd_, x);
        return x;
    }

    std::vector<cdouble> inverse(std::vector<cdouble> x) const {
        check_size(x.size());
        exec(bwd_, x);
        double scale = 1.0 / size();
        for (auto& v : x) v *= scale;
        return x;
    }

    // Inverse transform of a spectrum known to come from a real signal.
    std::vector<double> inverse_real(std::vector<cdouble> x) const {
        x = inverse(std::move(x));
        std::vector<double> out(x.size());
        for (size_t i = 0; i < x.size(); ++i) out[i] = x[i].real();
        return out;
    }

private:
    void check_size(size_t n) const {
        if (n != static_cast<size_t>(size())) throw DimensionError("fft: input size mismatch");
    }
    static void exec(fftw_plan plan, std::vector<cdouble>& buf) {
        auto* p = reinterpret_cast<fftw_complex*>(buf.data());
        fftw_execute_dft(plan, p, p);
    }

    int h_, w_;
    fftw_plan fwd_ = nullptr;
    fftw_plan bwd_ = nullptr;
};

} // namespace dpcov
