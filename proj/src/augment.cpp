#include "emoknn/augment.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>

#include "emoknn/io_util.hpp"

namespace emoknn {

namespace {

void clip_in_place(std::vector<double>& s) {
  for (double& v : s) v = std::clamp(v, -1.0, 1.0);
}

double peak(std::span<const double> s) {
  double p = 0.0;
  for (double v : s) p = std::max(p, std::abs(v));
  return p;
}

void fft(std::vector<std::complex<double>>& a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        // Twiddles computed directly rather than by recurrence to keep error flat.
        const std::complex<double> w(std::cos(ang * static_cast<double>(k)),
                                     std::sin(ang * static_cast<double>(k)));
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
  if (inverse) {
    for (auto& x : a) x /= static_cast<double>(n);
  }
}

constexpr AugmentKind kCanonicalOrder[] = {AugmentKind::noise, AugmentKind::volume,
                                           AugmentKind::reverberation, AugmentKind::pitch};

}  // namespace

std::string to_string(AugmentKind kind) {
  switch (kind) {
    case AugmentKind::noise: return "noise";
    case AugmentKind::volume: return "volume";
    case AugmentKind::reverberation: return "reverberation";
    case AugmentKind::pitch: return "pitch";
    case AugmentKind::mixed: return "mixed";
  }
  return "?";
}

AugmentKind parse_augment_kind(const std::string& name) {
  if (name == "noise") return AugmentKind::noise;
  if (name == "volume") return AugmentKind::volume;
  if (name == "reverberation" || name == "reverb") return AugmentKind::reverberation;
  if (name == "pitch") return AugmentKind::pitch;
  if (name == "mixed") return AugmentKind::mixed;
  throw ConfigError("unknown augmentation kind '" + name + "'");
}

void AugmentSpec::validate() const {
  const auto ordered = [](const ParamRange& r) { return r.lo <= r.hi; };
  if (!ordered(snr_db) || !ordered(gain) || !ordered(rt60_seconds) || !ordered(pitch_semitones)) {
    throw ConfigError("augment: every range needs lo <= hi");
  }
  if (std::isnan(snr_db.lo) || std::isnan(snr_db.hi)) throw ConfigError("augment: snr_db is NaN");
  if (!(gain.lo > 0.0)) throw ConfigError("augment: gain must be > 0");
  if (!(rt60_seconds.lo > 0.0)) throw ConfigError("augment: rt60_seconds must be > 0");
  if (pitch_semitones.lo < -12.0 || pitch_semitones.hi > 12.0) {
    throw ConfigError("augment: |pitch_semitones| must be <= 12");
  }
  if (kind == AugmentKind::mixed && mixed.empty()) {
    throw ConfigError("augment: mixed needs a non-empty sub-list");
  }
  for (auto k : mixed) {
    if (k == AugmentKind::mixed) throw ConfigError("augment: mixed cannot contain mixed");
  }
  if (!(jitter_sigma >= 0.0)) throw ConfigError("augment: jitter_sigma must be >= 0");
}

double rms(std::span<const double> samples) {
  if (samples.empty()) return 0.0;
  double s = 0.0;
  for (double v : samples) s += v * v;
  return std::sqrt(s / static_cast<double>(samples.size()));
}

std::vector<double> make_noise(const Waveform& w, double snr_db, std::uint64_t seed) {
  const double signal = rms(w.samples);
  if (!(signal > 0.0)) throw std::invalid_argument("add_noise: silent input with finite SNR");
  Rng rng(seed);
  std::vector<double> noise(w.samples.size());
  for (double& v : noise) v = rng.normal();
  const double raw = rms(noise);
  const double target = signal / std::pow(10.0, snr_db / 20.0);
  for (double& v : noise) v *= target / raw;
  return noise;
}

Waveform add_noise(const Waveform& w, double snr_db, std::uint64_t seed) {
  if (std::isnan(snr_db)) throw std::invalid_argument("add_noise: NaN SNR");
  if (snr_db == std::numeric_limits<double>::infinity()) return w;
  const auto noise = make_noise(w, snr_db, seed);
  Waveform out = w;
  for (std::size_t i = 0; i < out.samples.size(); ++i) out.samples[i] += noise[i];
  clip_in_place(out.samples);
  return out;
}

Waveform change_volume(const Waveform& w, double gain_factor) {
  if (!(gain_factor > 0.0) || !std::isfinite(gain_factor)) {
    throw std::invalid_argument("change_volume: gain must be positive and finite");
  }
  Waveform out = w;
  for (double& v : out.samples) v *= gain_factor;
  clip_in_place(out.samples);
  return out;
}

std::vector<double> make_impulse_response(double rt60_seconds, int sample_rate,
                                          std::uint64_t seed) {
  if (!(rt60_seconds > 0.0)) throw std::invalid_argument("add_reverb: rt60 must be > 0");
  const auto length = static_cast<std::size_t>(std::llround(rt60_seconds * sample_rate));
  if (length <= 1) return {1.0};
  // 60 dB of decay over rt60: amplitude 10^(-3 t / rt60).
  const double decay = std::log(1000.0) / (rt60_seconds * sample_rate);
  Rng rng(seed);
  std::vector<double> ir(length);
  ir[0] = 1.0;
  for (std::size_t n = 1; n < length; ++n) {
    ir[n] = 0.5 * rng.uniform(-1.0, 1.0) * std::exp(-decay * static_cast<double>(n));
  }
  return ir;
}

std::vector<double> fft_convolve(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) return {};
  const std::size_t out_len = a.size() + b.size() - 1;
  if (std::min(a.size(), b.size()) <= 32) {
    std::vector<double> out(out_len, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) {
      for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
    }
    return out;
  }
  std::size_t n = 1;
  while (n < out_len) n <<= 1;
  std::vector<std::complex<double>> fa(n), fb(n);
  std::copy(a.begin(), a.end(), fa.begin());
  std::copy(b.begin(), b.end(), fb.begin());
  fft(fa, false);
  fft(fb, false);
  for (std::size_t i = 0; i < n; ++i) fa[i] *= fb[i];
  fft(fa, true);
  std::vector<double> out(out_len);
  for (std::size_t i = 0; i < out_len; ++i) out[i] = fa[i].real();
  return out;
}

Waveform add_reverb(const Waveform& w, double rt60_seconds, std::uint64_t seed) {
  const auto ir = make_impulse_response(rt60_seconds, w.sample_rate, seed);
  if (ir.size() == 1) return w;
  auto wet = fft_convolve(w.samples, ir);
  wet.resize(w.samples.size());
  const double in_peak = peak(w.samples);
  const double out_peak = peak(wet);
  if (out_peak > 0.0) {
    for (double& v : wet) v *= in_peak / out_peak;
  }
  clip_in_place(wet);
  return {std::move(wet), w.sample_rate};
}

Waveform shift_pitch(const Waveform& w, double semitones) {
  if (!(std::abs(semitones) <= 12.0)) {
    throw std::invalid_argument("shift_pitch: |semitones| must be <= 12");
  }
  if (semitones == 0.0 || w.samples.empty()) return w;
  const double factor = std::pow(2.0, semitones / 12.0);
  const std::size_t n = w.samples.size();
  const auto out_len = static_cast<std::size_t>(std::llround(static_cast<double>(n) / factor));
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.resize(out_len);
  for (std::size_t i = 0; i < out_len; ++i) {
    const double pos = static_cast<double>(i) * factor;
    const auto i0 = static_cast<std::size_t>(pos);
    if (i0 + 1 >= n) {
      out.samples[i] = w.samples[n - 1];
      continue;
    }
    const double frac = pos - static_cast<double>(i0);
    out.samples[i] = w.samples[i0] * (1.0 - frac) + w.samples[i0 + 1] * frac;
  }
  return out;
}

Waveform augment_mixed(const Waveform& w, const AugmentSpec& spec, std::uint64_t seed) {
  if (spec.kind != AugmentKind::mixed) throw std::invalid_argument("augment_mixed: kind must be mixed");
  if (spec.mixed.empty()) throw std::invalid_argument("augment_mixed: empty sub-list");

  std::vector<AugmentKind> candidates;
  for (auto k : kCanonicalOrder) {
    if (std::find(spec.mixed.begin(), spec.mixed.end(), k) != spec.mixed.end()) {
      candidates.push_back(k);
    }
  }
  Rng rng(seed);
  std::vector<AugmentKind> chosen = candidates;
  if (candidates.size() > 2) {
    const std::size_t count = 2 + rng.below(candidates.size() - 1);
    rng.shuffle(chosen);
    chosen.resize(count);
  }

  Waveform out = w;
  for (auto k : kCanonicalOrder) {
    if (std::find(chosen.begin(), chosen.end(), k) == chosen.end()) continue;
    const std::uint64_t stage_seed = derive_seed(seed, "mixed." + to_string(k));
    switch (k) {
      case AugmentKind::noise: out = add_noise(out, spec.snr_db.draw(rng), stage_seed); break;
      case AugmentKind::volume: out = change_volume(out, spec.gain.draw(rng)); break;
      case AugmentKind::reverberation:
        out = add_reverb(out, spec.rt60_seconds.draw(rng), stage_seed);
        break;
      case AugmentKind::pitch: out = shift_pitch(out, spec.pitch_semitones.draw(rng)); break;
      case AugmentKind::mixed: break;
    }
  }
  return out;
}

Waveform apply_augment(const Waveform& w, const AugmentSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  const std::uint64_t stage_seed = derive_seed(seed, "stage");
  switch (spec.kind) {
    case AugmentKind::noise: return add_noise(w, spec.snr_db.draw(rng), stage_seed);
    case AugmentKind::volume: return change_volume(w, spec.gain.draw(rng));
    case AugmentKind::reverberation: return add_reverb(w, spec.rt60_seconds.draw(rng), stage_seed);
    case AugmentKind::pitch: return shift_pitch(w, spec.pitch_semitones.draw(rng));
    case AugmentKind::mixed: return augment_mixed(w, spec, seed);
  }
  return w;
}

std::vector<double> jitter_embedding(std::span<const double> x, double sigma, std::uint64_t seed) {
  std::vector<double> out(x.begin(), x.end());
  if (sigma == 0.0) return out;
  Rng rng(seed);
  for (double& v : out) v += sigma * rng.normal();
  return out;
}

Waveform fit_length(const Waveform& w, double max_seconds) {
  const auto target = static_cast<std::size_t>(std::llround(max_seconds * w.sample_rate));
  Waveform out = w;
  out.samples.resize(target, 0.0);
  return out;
}

// ---------------------------------------------------------------------------

Waveform decode_wav(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes, "WAV");
  r.expect_magic("RIFF");
  r.u32();
  r.expect_magic("WAVE");
  bool have_fmt = false;
  int channels = 0;
  int bits = 0;
  Waveform w;
  while (r.remaining() >= 8) {
    const std::string id = r.raw(4);
    const std::uint32_t size = r.u32();
    if (id == "fmt ") {
      if (size < 16) throw DataError("WAV: fmt chunk too small");
      const std::uint16_t format = r.u16();
      channels = r.u16();
      w.sample_rate = static_cast<int>(r.u32());
      r.u32();  // byte rate
      r.u16();  // block align
      bits = r.u16();
      r.raw(size - 16 + (size & 1U));
      if (format != 1) throw DataError("WAV: unsupported encoding (format " + std::to_string(format) + ", need PCM)");
      if (channels != 1) throw DataError("WAV: unsupported channel count " + std::to_string(channels) + " (need mono)");
      if (bits != 16) throw DataError("WAV: unsupported sample width " + std::to_string(bits) + " bits (need 16)");
      if (w.sample_rate <= 0) throw DataError("WAV: invalid sample rate");
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw DataError("WAV: data chunk before fmt chunk");
      const std::uint32_t count = size / 2;
      w.samples.resize(count);
      for (auto& s : w.samples) {
        s = static_cast<double>(static_cast<std::int16_t>(r.u16())) / 32768.0;
      }
      return w;
    } else {
      r.raw(size + (size & 1U));
    }
  }
  throw DataError("WAV: no data chunk");
}

Waveform read_wav(const std::filesystem::path& path) { return decode_wav(read_file_bytes(path)); }

std::vector<std::uint8_t> encode_wav(const Waveform& w) {
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
  ByteWriter b;
  b.raw("RIFF");
  b.u32(36 + data_bytes);
  b.raw("WAVE");
  b.raw("fmt ");
  b.u32(16);
  b.u16(1);
  b.u16(1);
  b.u32(static_cast<std::uint32_t>(w.sample_rate));
  b.u32(static_cast<std::uint32_t>(w.sample_rate) * 2);
  b.u16(2);
  b.u16(16);
  b.raw("data");
  b.u32(data_bytes);
  for (double s : w.samples) {
    const double scaled = std::clamp(std::round(s * 32768.0), -32768.0, 32767.0);
    b.u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(scaled)));
  }
  return std::move(b.bytes());
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  write_file_bytes(path, encode_wav(w));
}

std::uint64_t waveform_hash(const Waveform& w) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xFF;
      h *= 0x100000001b3ULL;
    }
  };
  mix(static_cast<std::uint64_t>(w.sample_rate));
  for (double s : w.samples) {
    std::uint64_t bits;
    std::memcpy(&bits, &s, 8);
    mix(bits);
  }
  return h;
}

}  // namespace emoknn
