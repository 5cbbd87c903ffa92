// 2-D FFT amplitude/phase analysis and amplitude-interpolation interventions.
//
// Spectra follow the convention F = A * exp(-j*P): `amplitude` is |F| and
// `phase` is the negated argument of each bin.  Transforms run in double via
// an iterative radix-2 FFT; images with non-power-of-two sides are zero-padded
// up to the next power of two and cropped back after synthesis.
//
// fourier_intervene(s, s_clean, lambda) linearly interpolates the amplitude
// spectrum of s toward that of its cleaned counterpart while keeping the
// phase of s, then resynthesizes and clips to [0,1].  With lambda drawn from
// U(0, eps) this perturbs exactly the content that distinguishes a state from
// its non-causal-free version.
#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

#include "cdrl/env.hpp"
#include "cdrl/errors.hpp"
#include "cdrl/tensor.hpp"

namespace cdrl {

struct Spectrum {
  Tensor<double> amplitude;  // [Hp x Wp], padded dims, all >= 0
  Tensor<double> phase;      // [Hp x Wp], P with F = A*exp(-j*P)
  int orig_h = 0;            // pre-padding image size
  int orig_w = 0;
};

namespace detail {

inline int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Iterative radix-2 Cooley-Tukey; n must be a power of two.
inline void fft_inplace(std::vector<std::complex<double>>& a, bool invert) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * 3.14159265358979323846 / static_cast<double>(len) * (invert ? 1 : -1);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (invert) {
    for (auto& x : a) x /= static_cast<double>(n);
  }
}

// Full 2-D transform on an Hp x Wp grid of complex bins: rows, then columns.
inline void fft2_inplace(std::vector<std::complex<double>>& bins, int hp, int wp, bool invert) {
  std::vector<std::complex<double>> scratch;
  for (int r = 0; r < hp; ++r) {
    scratch.assign(bins.begin() + static_cast<std::ptrdiff_t>(r) * wp,
                   bins.begin() + static_cast<std::ptrdiff_t>(r + 1) * wp);
    fft_inplace(scratch, invert);
    std::copy(scratch.begin(), scratch.end(), bins.begin() + static_cast<std::ptrdiff_t>(r) * wp);
  }
  scratch.resize(static_cast<std::size_t>(hp));
  for (int c = 0; c < wp; ++c) {
    for (int r = 0; r < hp; ++r) scratch[static_cast<std::size_t>(r)] = bins[static_cast<std::size_t>(r) * wp + c];
    fft_inplace(scratch, invert);
    for (int r = 0; r < hp; ++r) bins[static_cast<std::size_t>(r) * wp + c] = scratch[static_cast<std::size_t>(r)];
  }
}

}  // namespace detail

// Forward transform of a [H x W] image.
inline Spectrum fft2(const Tensor<double>& image) {
  require_rank(image, 2, "fft2");
  const int h = image.shape[0], w = image.shape[1];
  const int hp = detail::next_pow2(h), wp = detail::next_pow2(w);
  std::vector<std::complex<double>> bins(static_cast<std::size_t>(hp) * wp, {0.0, 0.0});
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) bins[static_cast<std::size_t>(r) * wp + c] = image.at2(r, c);
  detail::fft2_inplace(bins, hp, wp, /*invert=*/false);
  Spectrum s;
  s.orig_h = h;
  s.orig_w = w;
  s.amplitude = Tensor<double>({hp, wp});
  s.phase = Tensor<double>({hp, wp});
  for (std::size_t i = 0; i < bins.size(); ++i) {
    s.amplitude[i] = std::abs(bins[i]);
    s.phase[i] = -std::arg(bins[i]);  // F = A * exp(-j*P)
  }
  return s;
}

// Inverse transform: resynthesizes the (cropped) real image from A and P.
inline Tensor<double> ifft2(const Spectrum& s) {
  require_same_shape(s.amplitude, s.phase, "ifft2");
  const int hp = s.amplitude.shape[0], wp = s.amplitude.shape[1];
  std::vector<std::complex<double>> bins(static_cast<std::size_t>(hp) * wp);
  for (std::size_t i = 0; i < bins.size(); ++i) {
    bins[i] = std::polar(s.amplitude[i], -s.phase[i]);
  }
  detail::fft2_inplace(bins, hp, wp, /*invert=*/true);
  Tensor<double> out({s.orig_h, s.orig_w});
  for (int r = 0; r < s.orig_h; ++r)
    for (int c = 0; c < s.orig_w; ++c) out.at2(r, c) = bins[static_cast<std::size_t>(r) * wp + c].real();
  return out;
}

// Single-channel PixelState -> [H x W] double matrix.
inline Tensor<double> pixel_matrix(const PixelState& s) {
  if (s.c != 1) throw ShapeMismatch("pixel_matrix: expected a single channel");
  Tensor<double> m({s.h, s.w});
  for (int r = 0; r < s.h; ++r)
    for (int c = 0; c < s.w; ++c) m.at2(r, c) = static_cast<double>(s.at(r, c));
  return m;
}

// Amplitude interpolation toward the clean state at mixing weight lambda,
// phase taken from s, result clipped to [0,1].  `clipped_count`, when given,
// receives the number of pixels the clip actually moved.
inline PixelState fourier_intervene(const PixelState& s, const PixelState& s_clean, double lambda,
                                    int* clipped_count = nullptr) {
  if (s.h != s_clean.h || s.w != s_clean.w || s.c != s_clean.c) {
    throw ShapeMismatch("fourier_intervene: state shapes differ");
  }
  if (lambda < 0.0 || lambda > 1.0) {
    throw ConfigError("fourier_intervene: lambda must lie in [0,1]");
  }
  Spectrum spec = fft2(pixel_matrix(s));
  const Spectrum clean = fft2(pixel_matrix(s_clean));
  for (std::size_t i = 0; i < spec.amplitude.numel(); ++i) {
    spec.amplitude[i] = (1.0 - lambda) * spec.amplitude[i] + lambda * clean.amplitude[i];
  }
  Tensor<double> mixed = ifft2(spec);
  PixelState out = s;
  int clipped = 0;
  for (int r = 0; r < s.h; ++r) {
    for (int c = 0; c < s.w; ++c) {
      double v = mixed.at2(r, c);
      if (v < 0.0) {
        v = 0.0;
        ++clipped;
      } else if (v > 1.0) {
        v = 1.0;
        ++clipped;
      }
      out.at(r, c) = static_cast<float>(v);
    }
  }
  if (clipped_count) *clipped_count = clipped;
  return out;
}

// Vector-state analogue of the Fourier intervention: resamples the declared
// non-causal (distractor) dimensions from their marginal, leaving causal
// dimensions untouched.  Identity for environments that declare none.
template <typename Env>
VectorState vector_intervene(const VectorState& s, Env& env) {
  return env.clean_state(s);
}

}  // namespace cdrl
