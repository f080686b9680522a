#include "emoknn/encoder.hpp"

#include <cmath>
#include <numbers>

#include "emoknn/corpus.hpp"
#include "emoknn/io_util.hpp"

namespace emoknn {

HeadParams HeadParams::zeros(std::size_t input_dim, std::size_t hidden_dim,
                             std::size_t num_classes) {
  HeadParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  p.num_classes = num_classes;
  p.w1 = Matrix(hidden_dim, input_dim);
  p.b1.assign(hidden_dim, 0.0);
  p.w2 = Matrix(num_classes, hidden_dim);
  p.b2.assign(num_classes, 0.0);
  return p;
}

std::size_t HeadParams::parameter_count() const {
  return w1.size() + b1.size() + w2.size() + b2.size();
}

bool HeadParams::same_shape(const HeadParams& o) const {
  return input_dim == o.input_dim && hidden_dim == o.hidden_dim && num_classes == o.num_classes &&
         w1.rows() == o.w1.rows() && w1.cols() == o.w1.cols() && b1.size() == o.b1.size() &&
         w2.rows() == o.w2.rows() && w2.cols() == o.w2.cols() && b2.size() == o.b2.size();
}

bool HeadParams::all_finite() const {
  return emoknn::all_finite(w1.data()) && emoknn::all_finite(b1) &&
         emoknn::all_finite(w2.data()) && emoknn::all_finite(b2);
}

HeadParams init_params(std::size_t input_dim, std::size_t hidden_dim, std::size_t num_classes,
                       std::uint64_t seed) {
  if (input_dim == 0 || hidden_dim == 0 || num_classes == 0) {
    throw std::invalid_argument("init_params: dimensions must be >= 1");
  }
  HeadParams p = HeadParams::zeros(input_dim, hidden_dim, num_classes);
  Rng rng(seed);
  const double bound1 = 1.0 / std::sqrt(static_cast<double>(input_dim));
  const double bound2 = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  for (double& v : p.w1.data()) v = rng.uniform(-bound1, bound1);
  for (double& v : p.w2.data()) v = rng.uniform(-bound2, bound2);
  return p;
}

ForwardTrace forward(const HeadParams& p, std::span<const double> x) {
  if (x.size() != p.input_dim) {
    throw std::invalid_argument("forward: input has dimension " + std::to_string(x.size()) +
                                ", head expects " + std::to_string(p.input_dim));
  }
  ForwardTrace t;
  t.input.assign(x.begin(), x.end());
  t.hidden.resize(p.hidden_dim);
  for (std::size_t h = 0; h < p.hidden_dim; ++h) {
    const double a = dot(p.w1.row(h), x) + p.b1[h];
    t.hidden[h] = a > 0.0 ? a : 0.0;
  }
  t.logits.resize(p.num_classes);
  for (std::size_t c = 0; c < p.num_classes; ++c) {
    t.logits[c] = dot(p.w2.row(c), t.hidden) + p.b2[c];
  }
  t.probs = softmax(t.logits);
  return t;
}

Vec embed(const HeadParams& p, std::span<const double> x) {
  if (x.size() != p.input_dim) throw std::invalid_argument("embed: dimension mismatch");
  Vec z(p.hidden_dim);
  for (std::size_t h = 0; h < p.hidden_dim; ++h) {
    const double a = dot(p.w1.row(h), x) + p.b1[h];
    z[h] = a > 0.0 ? a : 0.0;
  }
  return z;
}

void accumulate_backward(const HeadParams& p, const ForwardTrace& t,
                         std::span<const double> grad_z, std::span<const double> grad_logits,
                         HeadParams& g) {
  if (grad_z.size() != p.hidden_dim || grad_logits.size() != p.num_classes ||
      !g.same_shape(p) || t.input.size() != p.input_dim) {
    throw std::invalid_argument("backward: shape mismatch");
  }
  Vec grad_h(grad_z.begin(), grad_z.end());
  for (std::size_t c = 0; c < p.num_classes; ++c) {
    const double gl = grad_logits[c];
    if (gl == 0.0) continue;
    auto gw = g.w2.row(c);
    const auto w = p.w2.row(c);
    for (std::size_t h = 0; h < p.hidden_dim; ++h) {
      gw[h] += gl * t.hidden[h];
      grad_h[h] += gl * w[h];
    }
    g.b2[c] += gl;
  }
  for (std::size_t h = 0; h < p.hidden_dim; ++h) {
    if (t.hidden[h] <= 0.0) continue;  // relu gate
    const double ga = grad_h[h];
    auto gw = g.w1.row(h);
    for (std::size_t d = 0; d < p.input_dim; ++d) gw[d] += ga * t.input[d];
    g.b1[h] += ga;
  }
}

HeadParams backward(const HeadParams& p, const ForwardTrace& t, std::span<const double> grad_z,
                    std::span<const double> grad_logits) {
  HeadParams g = HeadParams::zeros(p.input_dim, p.hidden_dim, p.num_classes);
  accumulate_backward(p, t, grad_z, grad_logits, g);
  return g;
}

std::vector<std::uint8_t> encode_params(const HeadParams& p) {
  ByteWriter w;
  w.raw("HDP1");
  w.u32(static_cast<std::uint32_t>(p.input_dim));
  w.u32(static_cast<std::uint32_t>(p.hidden_dim));
  w.u32(static_cast<std::uint32_t>(p.num_classes));
  for (double v : p.w1.data()) w.f64(v);
  for (double v : p.b1) w.f64(v);
  for (double v : p.w2.data()) w.f64(v);
  for (double v : p.b2) w.f64(v);
  return std::move(w.bytes());
}

HeadParams decode_params(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes, "HDP1");
  r.expect_magic("HDP1");
  const std::uint32_t d = r.u32();
  const std::uint32_t h = r.u32();
  const std::uint32_t c = r.u32();
  if (d == 0 || h == 0 || c == 0) throw DataError("HDP1: zero dimension");
  const std::uint64_t expected = 8ULL * (std::uint64_t{h} * d + h + std::uint64_t{c} * h + c);
  if (r.remaining() != expected) {
    throw DataError("HDP1: payload is " + std::to_string(r.remaining()) + " bytes, expected " +
                    std::to_string(expected));
  }
  HeadParams p = HeadParams::zeros(d, h, c);
  p.for_each([&r](double& v) { v = r.f64(); });
  if (!p.all_finite()) throw DataError("HDP1: non-finite parameter");
  return p;
}

void save_params(const std::filesystem::path& path, const HeadParams& params) {
  write_file_bytes(path, encode_params(params));
}

HeadParams load_params(const std::filesystem::path& path) {
  return decode_params(read_file_bytes(path));
}

// ---------------------------------------------------------------------------

Matrix frame_features(const Waveform& w, const FrontendConfig& cfg) {
  const auto frame = static_cast<std::size_t>(std::llround(cfg.frame_seconds * w.sample_rate));
  const auto hop = static_cast<std::size_t>(std::llround(cfg.hop_seconds * w.sample_rate));
  if (frame == 0 || hop == 0) throw std::invalid_argument("frontend: frame/hop too short");
  const std::size_t n = w.samples.size();
  const std::size_t frames = n < frame ? 1 : 1 + (n - frame) / hop;
  constexpr double kFloor = 1e-10;

  Matrix out(frames, cfg.feature_dim());
  for (std::size_t f = 0; f < frames; ++f) {
    const std::size_t start = f * hop;
    const std::size_t len = std::min(frame, n - std::min(n, start));
    std::span<const double> x(w.samples.data() + start, len);
    auto row = out.row(f);

    double energy = 0.0;
    std::size_t crossings = 0;
    for (std::size_t i = 0; i < len; ++i) {
      energy += x[i] * x[i];
      if (i > 0 && (x[i - 1] < 0.0) != (x[i] < 0.0)) ++crossings;
    }
    const double denom = static_cast<double>(std::max<std::size_t>(len, 1));
    row[0] = std::log(energy / denom + kFloor);
    row[1] = static_cast<double>(crossings) / denom;

    for (std::size_t b = 0; b < cfg.band_hz.size(); ++b) {
      const double coeff = 2.0 * std::cos(2.0 * std::numbers::pi * cfg.band_hz[b] / w.sample_rate);
      double s1 = 0.0, s2 = 0.0;
      for (double v : x) {
        const double s0 = v + coeff * s1 - s2;
        s2 = s1;
        s1 = s0;
      }
      const double power = s1 * s1 + s2 * s2 - coeff * s1 * s2;
      row[2 + b] = std::log(std::max(power, 0.0) / denom + kFloor);
    }
  }
  return out;
}

Vec featurize(const Waveform& w, const FrontendConfig& config) {
  return pool_frames(frame_features(w, config));
}

}  // namespace emoknn
