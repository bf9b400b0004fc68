#pragma once

#include <complex>
#include <cstdint>
#include <vector>

namespace flowrecon {

// Unnormalized DFTs (FFTW convention): inverse(forward(x)) = n * x.
// Plan creation is serialized internally; execution is thread-safe.
void fft_1d(std::vector<std::complex<double>>& data, bool inverse);
void fft_2d(std::vector<std::complex<double>>& data, int64_t rows, int64_t cols, bool inverse);

int64_t next_pow2(int64_t n);

}  // namespace flowrecon
