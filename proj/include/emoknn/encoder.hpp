#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "emoknn/augment.hpp"
#include "emoknn/common.hpp"

namespace emoknn {

/// One-hidden-layer classifier head:
///   h = relu(W1 x + b1),  z = h,  logits = W2 h + b2.
/// z is the embedding used by the contrastive loss and as datastore key.
/// The same type holds parameter gradients.
struct HeadParams {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t num_classes = 0;
  Matrix w1;  // H x D
  Vec b1;     // H
  Matrix w2;  // C x H
  Vec b2;     // C

  static HeadParams zeros(std::size_t input_dim, std::size_t hidden_dim, std::size_t num_classes);

  std::size_t parameter_count() const;
  bool same_shape(const HeadParams& other) const;
  bool all_finite() const;

  // Flat view over every parameter in W1, b1, W2, b2 order.
  template <typename Fn>
  void for_each(Fn&& fn) {
    for (double& v : w1.data()) fn(v);
    for (double& v : b1) fn(v);
    for (double& v : w2.data()) fn(v);
    for (double& v : b2) fn(v);
  }

  bool operator==(const HeadParams&) const = default;
};

struct ForwardTrace {
  Vec input;
  Vec hidden;  // post-relu; doubles as the embedding z
  Vec logits;
  Vec probs;

  std::span<const double> embedding() const { return hidden; }
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
HeadParams init_params(std::size_t input_dim, std::size_t hidden_dim, std::size_t num_classes,
                       std::uint64_t seed);

ForwardTrace forward(const HeadParams& params, std::span<const double> x);

/// Embedding only (skips the classifier layer).
Vec embed(const HeadParams& params, std::span<const double> x);

/// Adds the reverse-mode gradient for one instance into `grad`.
void accumulate_backward(const HeadParams& params, const ForwardTrace& trace,
                         std::span<const double> grad_z, std::span<const double> grad_logits,
                         HeadParams& grad);

HeadParams backward(const HeadParams& params, const ForwardTrace& trace,
                    std::span<const double> grad_z, std::span<const double> grad_logits);

// HDP1 checkpoint: "HDP1" u32 D,H,C then W1,b1,W2,b2 as f64, row-major.
std::vector<std::uint8_t> encode_params(const HeadParams& params);
HeadParams decode_params(const std::vector<std::uint8_t>& bytes);
void save_params(const std::filesystem::path& path, const HeadParams& params);
HeadParams load_params(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Toy acoustic frontend standing in for the frozen pretrained encoder on the
// waveform path. Per 25 ms frame (10 ms hop): log energy, zero-crossing rate,
// and log band energies at fixed centre frequencies (Goertzel). Frames are
// mean-pooled into a fixed-length vector.

struct FrontendConfig {
  double frame_seconds = 0.025;
  double hop_seconds = 0.010;
  std::vector<double> band_hz{150, 250, 400, 630, 1000, 1600, 2500, 4000};

  std::size_t feature_dim() const { return 2 + band_hz.size(); }
};

Matrix frame_features(const Waveform& w, const FrontendConfig& config);
Vec featurize(const Waveform& w, const FrontendConfig& config);

}  // namespace emoknn
