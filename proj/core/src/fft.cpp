#include "flowrecon/fft.hpp"

#include <fftw3.h>

#include <mutex>

#include "flowrecon/errors.hpp"

namespace flowrecon {

namespace {
std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}
}  // namespace

void fft_1d(std::vector<std::complex<double>>& data, bool inverse) {
    if (data.empty()) throw Error("fft_1d: empty input");
    auto* raw = reinterpret_cast<fftw_complex*>(data.data());
    fftw_plan plan;
    {
        std::lock_guard<std::mutex> lock(planner_mutex());
        plan = fftw_plan_dft_1d(static_cast<int>(data.size()), raw, raw,
                                inverse ? FFTW_BACKWARD : FFTW_FORWARD, FFTW_ESTIMATE);
    }
    fftw_execute(plan);
    {
        std::lock_guard<std::mutex> lock(planner_mutex());
        fftw_destroy_plan(plan);
    }
}

void fft_2d(std::vector<std::complex<double>>& data, int64_t rows, int64_t cols, bool inverse) {
    if (rows < 1 || cols < 1 || static_cast<int64_t>(data.size()) != rows * cols)
        throw Error("fft_2d: buffer size does not match " + std::to_string(rows) + "x" +
                    std::to_string(cols));
    auto* raw = reinterpret_cast<fftw_complex*>(data.data());
    fftw_plan plan;
    {
        std::lock_guard<std::mutex> lock(planner_mutex());
        plan = fftw_plan_dft_2d(static_cast<int>(rows), static_cast<int>(cols), raw, raw,
                                inverse ? FFTW_BACKWARD : FFTW_FORWARD, FFTW_ESTIMATE);
    }
    fftw_execute(plan);
    {
        std::lock_guard<std::mutex> lock(planner_mutex());
        fftw_destroy_plan(plan);
    }
}

int64_t next_pow2(int64_t n) {
    int64_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

}  // namespace flowrecon
