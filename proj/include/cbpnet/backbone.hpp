#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cbpnet/ops.hpp"
#include "cbpnet/rng.hpp"
#include "cbpnet/tensor.hpp"

namespace cbpnet {

struct BackboneConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 4;
  std::size_t channels = 3;
  std::size_t depth = 6;
  std::size_t dim = 64;
  std::size_t heads = 4;
  double mlp_ratio = 2.0;
  double ln_eps = 1e-6;

  /// Throws ConfigError on inconsistent sizes.
  void validate() const;
  std::size_t grid() const { return image_size / patch_size; }
  std::size_t tokens() const { return grid() * grid(); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  std::size_t mlp_hidden() const;
  std::size_t head_dim() const { return dim / heads; }
};

/// Prefix vectors for one attention layer. Both tensors are L_p x D; either
/// may be trainable, in which case backward accumulates into its gradient.
struct PromptPair {
  Tensor* key = nullptr;
  Tensor* value = nullptr;
};

/// Layer index -> prefix pair. Layers absent from the map run plain attention.
using PromptMap = std::map<std::size_t, PromptPair>;

struct AttentionParams {
  const Tensor* qkv_w = nullptr;   // D x 3D, columns ordered [q | k | v]
  const Tensor* qkv_b = nullptr;   // 3D
  const Tensor* proj_w = nullptr;  // D x D
  const Tensor* proj_b = nullptr;  // D
};

/// Gradient targets for the projections; only trainable tensors receive updates.
struct AttentionGradTargets {
  Tensor* qkv_w = nullptr;
  Tensor* qkv_b = nullptr;
  Tensor* proj_w = nullptr;
  Tensor* proj_b = nullptr;
};

struct AttentionCache {
  std::size_t batch = 0;
  std::size_t tokens = 0;
  std::size_t prefix = 0;
  std::size_t heads = 0;
  Tensor input;                // (B*N) x D
  Tensor qkv;                  // (B*N) x 3D
  std::vector<double> probs;   // B x heads x N x (prefix + N)
  Tensor mixed;                // (B*N) x D, concatenated head outputs
  const Tensor* prefix_key = nullptr;
  const Tensor* prefix_value = nullptr;

  /// Attention distribution of query `n` in head `h` of sample `b`.
  std::span<const double> row(std::size_t b, std::size_t h, std::size_t n) const;
};

/// Multi-head attention whose queries come from `h` alone while keys and
/// values are [p_K; h_K] and [p_V; h_V]. `h` is N x D or B x N x D; the
/// output has the same shape. Null prefix pointers mean L_p = 0.
Tensor msa_prefix(const Tensor& h, const Tensor* prefix_key, const Tensor* prefix_value,
                  const AttentionParams& params, std::size_t heads,
                  AttentionCache* cache = nullptr);

/// Returns d(h). Accumulates into trainable projection weights and into
/// trainable prefix tensors.
Tensor msa_prefix_backward(const Tensor& d_out, const AttentionCache& cache,
                           const AttentionGradTargets& params, Tensor* prefix_key,
                           Tensor* prefix_value);

struct EncoderLayer {
  Tensor ln1_gamma, ln1_beta;
  Tensor qkv_w, qkv_b;
  Tensor proj_w, proj_b;
  Tensor ln2_gamma, ln2_beta;
  Tensor fc1_w, fc1_b;
  Tensor fc2_w, fc2_b;

  AttentionParams attention() const {
    return AttentionParams{&qkv_w, &qkv_b, &proj_w, &proj_b};
  }
  AttentionGradTargets attention_targets() {
    return AttentionGradTargets{&qkv_w, &qkv_b, &proj_w, &proj_b};
  }
};

/// What one encoder layer retains for backward. The attention cache holds
/// the post-LN1 input; the residual stream itself is not needed.
struct LayerActivations {
  LayerNormCache ln1;
  AttentionCache attention;
  LayerNormCache ln2;
  Tensor normed2;
  Tensor fc1_pre;
  Tensor fc1_act;
};

struct ForwardCache {
  std::size_t batch = 0;
  Tensor patches;  // (B*N) x patch_dim
  std::vector<LayerActivations> layers;
  LayerNormCache final_norm;
  Tensor pooled;  // B x D
};

/// Converts u8 pixels (B x H x W x C, row-major) to doubles in [-1, 1].
Tensor normalize_pixels(std::span<const std::uint8_t> pixels, std::size_t batch,
                        std::size_t height, std::size_t width, std::size_t channels);

/// Pre-norm ViT-style encoder with mean pooling over the final tokens.
class Backbone {
 public:
  /// Random initialization; parameters start trainable (unfrozen).
  Backbone(BackboneConfig cfg, Rng& rng);
  /// Zero-valued parameters, for loading from a checkpoint.
  explicit Backbone(BackboneConfig cfg);

  const BackboneConfig& config() const noexcept { return cfg_; }

  /// Patch embedding plus position embeddings: B x H x W x C -> B x N x D.
  Tensor patchify(const Tensor& images) const;

  /// Pooled features (B x D). With a cache, activations are retained for backward.
  Tensor forward(const Tensor& images, const PromptMap& prompts,
                 ForwardCache* cache = nullptr) const;

  /// Prompt-free pooled feature used for E-Prompt selection and matching.
  Tensor query(const Tensor& images) const { return forward(images, PromptMap{}, nullptr); }

  /// Backpropagates d(pooled) into prompt gradients and, when unfrozen, into
  /// every backbone parameter.
  void backward(const Tensor& d_pooled, const ForwardCache& cache, const PromptMap& prompts);

  void set_frozen(bool frozen);
  bool frozen() const noexcept { return frozen_; }

  std::vector<std::pair<std::string, Tensor*>> parameters();
  std::vector<std::pair<std::string, const Tensor*>> parameters() const;
  std::size_t parameter_count() const;
  std::uint64_t checksum() const;

 private:
  void allocate();
  Tensor patch_matrix(const Tensor& images) const;

  BackboneConfig cfg_;
  Tensor patch_w_;  // patch_dim x D
  Tensor patch_b_;
  Tensor pos_;      // N x D
  std::vector<EncoderLayer> layers_;
  Tensor norm_gamma_;
  Tensor norm_beta_;
  bool frozen_ = false;
};

}  // namespace cbpnet
