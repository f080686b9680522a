#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "emoknn/common.hpp"

namespace emoknn {

struct Waveform {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate = 16000;

  bool operator==(const Waveform&) const = default;
};

enum class AugmentKind { noise, volume, reverberation, pitch, mixed };

std::string to_string(AugmentKind kind);
AugmentKind parse_augment_kind(const std::string& name);

struct ParamRange {
  double lo = 0.0;
  double hi = 0.0;

  double draw(Rng& rng) const { return lo == hi ? lo : rng.uniform(lo, hi); }
  bool operator==(const ParamRange&) const = default;
};

/// Augmentation recipe. Parameters are drawn per call from the ranges; a
/// range with lo == hi pins the parameter.
struct AugmentSpec {
  AugmentKind kind = AugmentKind::mixed;
  ParamRange snr_db{5.0, 20.0};
  ParamRange gain{0.5, 2.0};
  ParamRange rt60_seconds{0.1, 0.5};
  ParamRange pitch_semitones{-2.0, 2.0};
  // Candidate stages for `mixed`.
  std::vector<AugmentKind> mixed{AugmentKind::noise, AugmentKind::volume,
                                 AugmentKind::reverberation, AugmentKind::pitch};
  // Embedding-space jitter used when no waveforms are available. Not part of
  // the waveform recipe; reports flag it as such.
  double jitter_sigma = 0.3;

  void validate() const;
  bool operator==(const AugmentSpec&) const = default;
};

double rms(std::span<const double> samples);

/// Noise vector whose RMS is rms(w) / 10^(snr_db / 20). Unclipped.
std::vector<double> make_noise(const Waveform& w, double snr_db, std::uint64_t seed);

/// `snr_db = +inf` disables the noise.
Waveform add_noise(const Waveform& w, double snr_db, std::uint64_t seed);
Waveform change_volume(const Waveform& w, double gain_factor);

/// Direct path 1.0 followed by uniform noise under a 60 dB/rt60 exponential
/// envelope; length round(rt60 * sample_rate). Every tail tap is below 1.
std::vector<double> make_impulse_response(double rt60_seconds, int sample_rate, std::uint64_t seed);

/// Full linear convolution via FFT.
std::vector<double> fft_convolve(std::span<const double> a, std::span<const double> b);

/// Convolves with `make_impulse_response`, truncates to the input length and
/// rescales to the input's peak amplitude.
Waveform add_reverb(const Waveform& w, double rt60_seconds, std::uint64_t seed);

/// Resamples by 2^(semitones/12) with linear interpolation (duration changes).
Waveform shift_pitch(const Waveform& w, double semitones);

/// A seeded subset (size >= 2 when available) of spec.mixed applied in the
/// order noise -> volume -> reverb -> pitch.
Waveform augment_mixed(const Waveform& w, const AugmentSpec& spec, std::uint64_t seed);

/// Dispatches on spec.kind with parameters drawn from the spec ranges.
Waveform apply_augment(const Waveform& w, const AugmentSpec& spec, std::uint64_t seed);

/// Additive Gaussian jitter on an embedding. Fallback when only embeddings
/// are available; not a waveform augmentation.
std::vector<double> jitter_embedding(std::span<const double> x, double sigma, std::uint64_t seed);

/// Zero-pads or truncates to max_seconds.
Waveform fit_length(const Waveform& w, double max_seconds);

// 16-bit PCM mono WAV.
Waveform read_wav(const std::filesystem::path& path);
Waveform decode_wav(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_wav(const Waveform& w);
void write_wav(const std::filesystem::path& path, const Waveform& w);

/// FNV-1a over the IEEE-754 bits of the samples; used for golden fixtures.
std::uint64_t waveform_hash(const Waveform& w);

}  // namespace emoknn
