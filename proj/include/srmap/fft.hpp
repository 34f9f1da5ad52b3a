#pragma once

// Thin layer over FFTW's real-input transforms. Plans are created once per
// size under a mutex (the FFTW planner is not thread-safe) and executed through
// the new-array interface on per-thread aligned scratch buffers. Planning uses
// FFTW_ESTIMATE so every process picks the same algorithm and results are
// reproducible bit for bit.

#include <fftw3.h>

#include <algorithm>
#include <complex>
#include <cstddef>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include "srmap/common.hpp"

namespace srmap::fft {

using Complex = std::complex<double>;

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

/// Smallest n' >= n of the form 2^a 3^b 5^c (sizes FFTW handles quickly).
inline std::size_t good_size(std::size_t n) {
  std::size_t best = next_pow2(n);
  for (std::size_t p5 = 1; p5 < best; p5 *= 5)
    for (std::size_t p35 = p5; p35 < best; p35 *= 3) {
      std::size_t v = p35;
      while (v < n) v <<= 1;
      best = std::min(best, v);
    }
  return best;
}

namespace detail {

struct PlanPair {
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;
};

// SIMD-aligned scratch owned by fftw_malloc.
template <class T>
struct AlignedBuffer {
  T* data = nullptr;
  std::size_t size = 0;

  void resize(std::size_t n) {
    if (n <= size) return;
    fftw_free(data);
    data = static_cast<T*>(fftw_malloc(sizeof(T) * n));
    if (!data) throw Error("fft: allocation failed");
    size = n;
  }
  ~AlignedBuffer() { fftw_free(data); }
};

class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  // Plans are made on aligned buffers and must be executed on aligned buffers.
  PlanPair get(std::size_t n) {
    std::lock_guard lock(mutex_);
    auto it = plans_.find(n);
    if (it != plans_.end()) return it->second;
    AlignedBuffer<double> real;
    AlignedBuffer<fftw_complex> spec;
    real.resize(n);
    spec.resize(n / 2 + 1);
    const unsigned flags = FFTW_ESTIMATE;
    PlanPair p;
    p.forward = fftw_plan_dft_r2c_1d(static_cast<int>(n), real.data, spec.data, flags);
    p.inverse = fftw_plan_dft_c2r_1d(static_cast<int>(n), spec.data, real.data, flags | FFTW_DESTROY_INPUT);
    if (!p.forward || !p.inverse) throw Error("fft: planning failed");
    plans_.emplace(n, p);
    return p;
  }

  ~PlanCache() {
    for (auto& [n, p] : plans_) {
      fftw_destroy_plan(p.forward);
      fftw_destroy_plan(p.inverse);
    }
  }

 private:
  std::mutex mutex_;
  std::map<std::size_t, PlanPair> plans_;
};

struct Scratch {
  AlignedBuffer<double> real;
  AlignedBuffer<fftw_complex> spec;
};

inline Scratch& scratch() {
  thread_local Scratch s;
  return s;
}

}  // namespace detail

/// Forward real FFT of `input` zero-padded to `n` samples; returns n/2+1 bins.
inline std::vector<Complex> rfft(std::span<const double> input, std::size_t n) {
  if (input.size() > n) throw Error("rfft: input longer than transform size");
  auto plan = detail::PlanCache::instance().get(n);
  auto& s = detail::scratch();
  s.real.resize(n);
  s.spec.resize(n / 2 + 1);
  std::copy(input.begin(), input.end(), s.real.data);
  std::fill(s.real.data + input.size(), s.real.data + n, 0.0);
  fftw_execute_dft_r2c(plan.forward, s.real.data, s.spec.data);
  std::vector<Complex> out(n / 2 + 1);
  std::memcpy(static_cast<void*>(out.data()), s.spec.data, sizeof(fftw_complex) * out.size());
  return out;
}

/// Inverse of rfft, normalized so irfft(rfft(x, n), n) == x.
inline std::vector<double> irfft(std::vector<Complex> spectrum, std::size_t n) {
  if (spectrum.size() != n / 2 + 1) throw Error("irfft: spectrum size mismatch");
  auto plan = detail::PlanCache::instance().get(n);
  auto& s = detail::scratch();
  s.real.resize(n);
  s.spec.resize(n / 2 + 1);
  std::memcpy(s.spec.data, spectrum.data(), sizeof(fftw_complex) * spectrum.size());
  fftw_execute_dft_c2r(plan.inverse, s.spec.data, s.real.data);
  std::vector<double> out(n);
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = s.real.data[i] * scale;
  return out;
}

/// Linear convolution via FFT; result length a.size() + b.size() - 1.
inline std::vector<double> convolve(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) return {};
  const std::size_t out_len = a.size() + b.size() - 1;
  const std::size_t n = good_size(out_len);
  auto fa = rfft(a, n);
  const auto fb = rfft(b, n);
  for (std::size_t k = 0; k < fa.size(); ++k) fa[k] *= fb[k];
  auto full = irfft(std::move(fa), n);
  full.resize(out_len);
  return full;
}

}  // namespace srmap::fft
