#include "cbpnet/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cbpnet/errors.hpp"

namespace cbpnet {

void BackboneConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw ConfigError("backbone: image_size " + std::to_string(image_size) +
                      " must be a positive multiple of patch_size " +
                      std::to_string(patch_size));
  }
  if (channels == 0 || depth == 0 || dim == 0) {
    throw ConfigError("backbone: channels, depth and dim must be positive");
  }
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("backbone: dim " + std::to_string(dim) +
                      " must be divisible by heads " + std::to_string(heads));
  }
  if (!(mlp_ratio > 0.0)) throw ConfigError("backbone: mlp_ratio must be positive");
  if (!(ln_eps > 0.0)) throw ConfigError("backbone: ln_eps must be positive");
}

std::size_t BackboneConfig::mlp_hidden() const {
  return std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(mlp_ratio * static_cast<double>(dim))));
}

std::span<const double> AttentionCache::row(std::size_t b, std::size_t h,
                                            std::size_t n) const {
  const std::size_t span_len = prefix + tokens;
  return std::span<const double>(probs).subspan(((b * heads + h) * tokens + n) * span_len,
                                                span_len);
}

namespace {

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void check_prefix(const Tensor* key, const Tensor* value, std::size_t dim) {
  if ((key == nullptr) != (value == nullptr)) {
    throw ShapeError("msa_prefix: prefix key and value must both be present or both absent");
  }
  if (!key) return;
  if (key->rank() != 2 || key->cols() != dim) {
    throw ShapeError("msa_prefix: prefix key must be L_p x " + std::to_string(dim) +
                     ", got " + shape_string(key->shape()));
  }
  if (key->shape() != value->shape()) {
    throw ShapeError("msa_prefix: prefix key " + shape_string(key->shape()) +
                     " and value " + shape_string(value->shape()) + " differ");
  }
}

}  // namespace

Tensor msa_prefix(const Tensor& h, const Tensor* prefix_key, const Tensor* prefix_value,
                  const AttentionParams& params, std::size_t heads, AttentionCache* cache) {
  if (h.rank() != 2 && h.rank() != 3) {
    throw ShapeError("msa_prefix: expected N x D or B x N x D input, got " +
                     shape_string(h.shape()));
  }
  const std::size_t batch = h.rank() == 3 ? h.dim(0) : 1;
  const std::size_t tokens = h.dim(h.rank() - 2);
  const std::size_t dim = h.cols();
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("msa_prefix: dim " + std::to_string(dim) +
                      " is not divisible by heads " + std::to_string(heads));
  }
  require_shape(*params.qkv_w, {dim, 3 * dim}, "msa_prefix qkv weight");
  require_shape(*params.qkv_b, {3 * dim}, "msa_prefix qkv bias");
  require_shape(*params.proj_w, {dim, dim}, "msa_prefix projection weight");
  require_shape(*params.proj_b, {dim}, "msa_prefix projection bias");
  check_prefix(prefix_key, prefix_value, dim);

  const std::size_t prefix = prefix_key ? prefix_key->dim(0) : 0;
  const std::size_t span_len = prefix + tokens;
  const std::size_t head_dim = dim / heads;
  const std::size_t stride = 3 * dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Tensor flat = h.reshaped({batch * tokens, dim});
  Tensor qkv = linear(flat, *params.qkv_w, *params.qkv_b);
  std::vector<double> probs(batch * heads * tokens * span_len);
  Tensor mixed({batch * tokens, dim});

  const double* base = qkv.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t hd = 0; hd < heads; ++hd) {
      const std::size_t off = hd * head_dim;
      for (std::size_t n = 0; n < tokens; ++n) {
        double* row = probs.data() + ((b * heads + hd) * tokens + n) * span_len;
        const double* q = base + (b * tokens + n) * stride + off;
        for (std::size_t j = 0; j < span_len; ++j) {
          const double* k = j < prefix
                                ? prefix_key->data() + j * dim + off
                                : base + (b * tokens + j - prefix) * stride + dim + off;
          row[j] = dot(q, k, head_dim) * scale;
        }
        softmax_inplace(std::span<double>(row, span_len));
        double* out = mixed.data() + (b * tokens + n) * dim + off;
        for (std::size_t j = 0; j < span_len; ++j) {
          const double* v = j < prefix
                                ? prefix_value->data() + j * dim + off
                                : base + (b * tokens + j - prefix) * stride + 2 * dim + off;
          axpy(row[j], v, out, head_dim);
        }
      }
    }
  }

  Tensor out = linear(mixed, *params.proj_w, *params.proj_b);
  if (cache) {
    cache->batch = batch;
    cache->tokens = tokens;
    cache->prefix = prefix;
    cache->heads = heads;
    cache->input = std::move(flat);
    cache->qkv = std::move(qkv);
    cache->probs = std::move(probs);
    cache->mixed = std::move(mixed);
    cache->prefix_key = prefix_key;
    cache->prefix_value = prefix_value;
  }
  return out.reshaped(h.shape());
}

Tensor msa_prefix_backward(const Tensor& d_out, const AttentionCache& cache,
                           const AttentionGradTargets& params, Tensor* prefix_key,
                           Tensor* prefix_value) {
  const std::size_t batch = cache.batch;
  const std::size_t tokens = cache.tokens;
  const std::size_t prefix = cache.prefix;
  const std::size_t heads = cache.heads;
  const std::size_t dim = cache.input.cols();
  const std::size_t head_dim = dim / heads;
  const std::size_t stride = 3 * dim;
  const std::size_t span_len = prefix + tokens;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  if (d_out.size() != batch * tokens * dim) {
    throw ShapeError("msa_prefix_backward: gradient shape " + shape_string(d_out.shape()) +
                     " does not match the cached forward pass");
  }

  const Tensor dy = d_out.reshaped({batch * tokens, dim});
  const Tensor d_mixed = linear_backward(dy, cache.mixed, *params.proj_w, *params.proj_b);

  Tensor d_qkv({batch * tokens, stride});
  const double* pk = cache.prefix_key ? cache.prefix_key->data() : nullptr;
  const double* pv = cache.prefix_value ? cache.prefix_value->data() : nullptr;
  double* d_pk = (prefix_key && prefix_key->trainable()) ? prefix_key->grad().data() : nullptr;
  double* d_pv =
      (prefix_value && prefix_value->trainable()) ? prefix_value->grad().data() : nullptr;

  const double* base = cache.qkv.data();
  double* dbase = d_qkv.data();
  std::vector<double> d_scores(span_len);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t hd = 0; hd < heads; ++hd) {
      const std::size_t off = hd * head_dim;
      for (std::size_t n = 0; n < tokens; ++n) {
        const double* row = cache.probs.data() + ((b * heads + hd) * tokens + n) * span_len;
        const double* d_o = d_mixed.data() + (b * tokens + n) * dim + off;
        double weighted = 0.0;
        for (std::size_t j = 0; j < span_len; ++j) {
          const bool in_prefix = j < prefix;
          const std::size_t src = (b * tokens + j - (in_prefix ? 0 : prefix));
          const double* v = in_prefix ? pv + j * dim + off : base + src * stride + 2 * dim + off;
          d_scores[j] = dot(d_o, v, head_dim);
          weighted += row[j] * d_scores[j];
          if (in_prefix) {
            if (d_pv) axpy(row[j], d_o, d_pv + j * dim + off, head_dim);
          } else {
            axpy(row[j], d_o, dbase + src * stride + 2 * dim + off, head_dim);
          }
        }
        const double* q = base + (b * tokens + n) * stride + off;
        double* d_q = dbase + (b * tokens + n) * stride + off;
        for (std::size_t j = 0; j < span_len; ++j) {
          const double ds = row[j] * (d_scores[j] - weighted) * scale;
          if (ds == 0.0) continue;
          const bool in_prefix = j < prefix;
          const std::size_t src = (b * tokens + j - (in_prefix ? 0 : prefix));
          const double* k = in_prefix ? pk + j * dim + off : base + src * stride + dim + off;
          axpy(ds, k, d_q, head_dim);
          if (in_prefix) {
            if (d_pk) axpy(ds, q, d_pk + j * dim + off, head_dim);
          } else {
            axpy(ds, q, dbase + src * stride + dim + off, head_dim);
          }
        }
      }
    }
  }

  Tensor dx = linear_backward(d_qkv, cache.input, *params.qkv_w, *params.qkv_b);
  return dx.reshaped(d_out.shape());
}

Tensor normalize_pixels(std::span<const std::uint8_t> pixels, std::size_t batch,
                        std::size_t height, std::size_t width, std::size_t channels) {
  const std::size_t n = batch * height * width * channels;
  if (pixels.size() != n) {
    throw ShapeError("normalize_pixels: expected " + std::to_string(n) + " pixels, got " +
                     std::to_string(pixels.size()));
  }
  Tensor out({batch, height, width, channels});
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<double>(pixels[i]) / 127.5 - 1.0;
  return out;
}

Backbone::Backbone(BackboneConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  allocate();
  set_frozen(false);
}

Backbone::Backbone(BackboneConfig cfg, Rng& rng) : Backbone(cfg) {
  const InitSpec init{InitKind::UniformFanIn, 1.0};
  const std::size_t d = cfg_.dim;
  fill_init(patch_w_, init, rng, cfg_.patch_dim());
  for (double& v : pos_.values()) v = 0.02 * rng.normal();
  for (auto& layer : layers_) {
    fill_init(layer.qkv_w, init, rng, d);
    fill_init(layer.proj_w, init, rng, d);
    fill_init(layer.fc1_w, init, rng, d);
    fill_init(layer.fc2_w, init, rng, cfg_.mlp_hidden());
  }
}

void Backbone::allocate() {
  const std::size_t d = cfg_.dim;
  const std::size_t hidden = cfg_.mlp_hidden();
  patch_w_ = Tensor({cfg_.patch_dim(), d});
  patch_b_ = Tensor({d});
  pos_ = Tensor({cfg_.tokens(), d});
  layers_.resize(cfg_.depth);
  for (auto& layer : layers_) {
    layer.ln1_gamma = Tensor({d});
    layer.ln1_gamma.fill(1.0);
    layer.ln1_beta = Tensor({d});
    layer.qkv_w = Tensor({d, 3 * d});
    layer.qkv_b = Tensor({3 * d});
    layer.proj_w = Tensor({d, d});
    layer.proj_b = Tensor({d});
    layer.ln2_gamma = Tensor({d});
    layer.ln2_gamma.fill(1.0);
    layer.ln2_beta = Tensor({d});
    layer.fc1_w = Tensor({d, hidden});
    layer.fc1_b = Tensor({hidden});
    layer.fc2_w = Tensor({hidden, d});
    layer.fc2_b = Tensor({d});
  }
  norm_gamma_ = Tensor({d});
  norm_gamma_.fill(1.0);
  norm_beta_ = Tensor({d});
}

Tensor Backbone::patch_matrix(const Tensor& images) const {
  const bool single = images.rank() == 3;
  if (!single && images.rank() != 4) {
    throw ShapeError("backbone: expected H x W x C or B x H x W x C images, got " +
                     shape_string(images.shape()));
  }
  const std::size_t batch = single ? 1 : images.dim(0);
  const std::size_t off = single ? 0 : 1;
  if (images.dim(off) != cfg_.image_size || images.dim(off + 1) != cfg_.image_size ||
      images.dim(off + 2) != cfg_.channels) {
    throw ShapeError("backbone: image shape " + shape_string(images.shape()) +
                     " does not match " + std::to_string(cfg_.image_size) + "x" +
                     std::to_string(cfg_.image_size) + "x" + std::to_string(cfg_.channels));
  }
  const std::size_t p = cfg_.patch_size;
  const std::size_t c = cfg_.channels;
  const std::size_t g = cfg_.grid();
  const std::size_t side = cfg_.image_size;
  const std::size_t n_tok = cfg_.tokens();
  Tensor patches({batch * n_tok, cfg_.patch_dim()});
  for (std::size_t b = 0; b < batch; ++b) {
    const double* img = images.data() + b * side * side * c;
    for (std::size_t gy = 0; gy < g; ++gy) {
      for (std::size_t gx = 0; gx < g; ++gx) {
        double* dst = patches.data() + (b * n_tok + gy * g + gx) * cfg_.patch_dim();
        for (std::size_t py = 0; py < p; ++py) {
          const double* src = img + ((gy * p + py) * side + gx * p) * c;
          std::copy(src, src + p * c, dst + py * p * c);
        }
      }
    }
  }
  return patches;
}

Tensor Backbone::patchify(const Tensor& images) const {
  Tensor patches = patch_matrix(images);
  Tensor tokens = linear(patches, patch_w_, patch_b_);
  const std::size_t n_tok = cfg_.tokens();
  const std::size_t d = cfg_.dim;
  for (std::size_t r = 0; r < tokens.rows(); ++r) {
    axpy(1.0, pos_.data() + (r % n_tok) * d, tokens.data() + r * d, d);
  }
  if (images.rank() == 3) return tokens.reshaped({n_tok, d});
  return tokens.reshaped({images.dim(0), n_tok, d});
}

Tensor Backbone::forward(const Tensor& images, const PromptMap& prompts,
                         ForwardCache* cache) const {
  for (const auto& [layer, pair] : prompts) {
    if (layer >= cfg_.depth) {
      throw ConfigError("prompt attached to layer " + std::to_string(layer) +
                        " but the backbone has depth " + std::to_string(cfg_.depth));
    }
    check_prefix(pair.key, pair.value, cfg_.dim);
  }
  const std::size_t d = cfg_.dim;
  const std::size_t n_tok = cfg_.tokens();
  Tensor patches = patch_matrix(images);
  const std::size_t batch = patches.rows() / n_tok;

  Tensor x = linear(patches, patch_w_, patch_b_);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    axpy(1.0, pos_.data() + (r % n_tok) * d, x.data() + r * d, d);
  }
  if (cache) {
    cache->batch = batch;
    cache->patches = std::move(patches);
    cache->layers.assign(cfg_.depth, LayerActivations{});
  }

  LayerActivations scratch;
  for (std::size_t l = 0; l < cfg_.depth; ++l) {
    const EncoderLayer& layer = layers_[l];
    LayerActivations& act = cache ? cache->layers[l] : scratch;
    const bool keep = cache != nullptr;

    Tensor normed1 = layer_norm(x, layer.ln1_gamma, layer.ln1_beta, cfg_.ln_eps,
                                keep ? &act.ln1 : nullptr);
    const Tensor* pk = nullptr;
    const Tensor* pv = nullptr;
    if (auto it = prompts.find(l); it != prompts.end()) {
      pk = it->second.key;
      pv = it->second.value;
    }
    Tensor attn = msa_prefix(normed1.reshaped({batch, n_tok, d}), pk, pv, layer.attention(),
                             cfg_.heads, keep ? &act.attention : nullptr);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += attn[i];

    Tensor normed2 = layer_norm(x, layer.ln2_gamma, layer.ln2_beta, cfg_.ln_eps,
                                keep ? &act.ln2 : nullptr);
    Tensor pre = linear(normed2, layer.fc1_w, layer.fc1_b);
    Tensor activated(pre.shape());
    for (std::size_t i = 0; i < pre.size(); ++i) activated[i] = gelu(pre[i]);
    Tensor mlp = linear(activated, layer.fc2_w, layer.fc2_b);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += mlp[i];

    if (!x.all_finite()) {
      throw NumericDomainError("backbone: non-finite activation in layer " + std::to_string(l));
    }
    if (keep) {
      act.normed2 = std::move(normed2);
      act.fc1_pre = std::move(pre);
      act.fc1_act = std::move(activated);
    }
  }

  Tensor final_tokens = layer_norm(x, norm_gamma_, norm_beta_, cfg_.ln_eps,
                                   cache ? &cache->final_norm : nullptr);
  Tensor pooled({batch, d});
  const double inv = 1.0 / static_cast<double>(n_tok);
  for (std::size_t b = 0; b < batch; ++b) {
    double* out = pooled.data() + b * d;
    for (std::size_t n = 0; n < n_tok; ++n) {
      axpy(1.0, final_tokens.data() + (b * n_tok + n) * d, out, d);
    }
    for (std::size_t c = 0; c < d; ++c) out[c] *= inv;
  }
  if (cache) cache->pooled = pooled;
  return pooled;
}

void Backbone::backward(const Tensor& d_pooled, const ForwardCache& cache,
                        const PromptMap& prompts) {
  const std::size_t d = cfg_.dim;
  const std::size_t n_tok = cfg_.tokens();
  const std::size_t batch = cache.batch;
  if (cache.layers.size() != cfg_.depth) {
    throw StateError("backbone backward called without a retained forward cache");
  }
  require_shape(d_pooled, {batch, d}, "backbone backward d_pooled");

  const bool need_params = !frozen_;
  std::size_t lowest = cfg_.depth;
  if (need_params) {
    lowest = 0;
  } else if (!prompts.empty()) {
    lowest = prompts.begin()->first;
  }
  if (lowest >= cfg_.depth && !need_params) return;

  Tensor d_tokens({batch * n_tok, d});
  const double inv = 1.0 / static_cast<double>(n_tok);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t n = 0; n < n_tok; ++n) {
      double* dst = d_tokens.data() + (b * n_tok + n) * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] = d_pooled[b * d + c] * inv;
    }
  }
  Tensor dx = layer_norm_backward(d_tokens, cache.final_norm, norm_gamma_, norm_beta_);

  for (std::size_t l = cfg_.depth; l-- > lowest;) {
    EncoderLayer& layer = layers_[l];
    const LayerActivations& act = cache.layers[l];

    Tensor d_act = linear_backward(dx, act.fc1_act, layer.fc2_w, layer.fc2_b);
    for (std::size_t i = 0; i < d_act.size(); ++i) d_act[i] *= gelu_derivative(act.fc1_pre[i]);
    Tensor d_n2 = linear_backward(d_act, act.normed2, layer.fc1_w, layer.fc1_b);
    Tensor d_mid = layer_norm_backward(d_n2, act.ln2, layer.ln2_gamma, layer.ln2_beta);
    for (std::size_t i = 0; i < d_mid.size(); ++i) d_mid[i] += dx[i];

    Tensor* pk = nullptr;
    Tensor* pv = nullptr;
    if (auto it = prompts.find(l); it != prompts.end()) {
      pk = it->second.key;
      pv = it->second.value;
    }
    Tensor d_n1 =
        msa_prefix_backward(d_mid, act.attention, layer.attention_targets(), pk, pv);
    dx = layer_norm_backward(d_n1, act.ln1, layer.ln1_gamma, layer.ln1_beta);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += d_mid[i];
  }

  if (need_params) {
    if (pos_.trainable()) {
      auto g = pos_.grad();
      for (std::size_t r = 0; r < dx.rows(); ++r) {
        axpy(1.0, dx.data() + r * d, g.data() + (r % n_tok) * d, d);
      }
    }
    linear_backward(dx, cache.patches, patch_w_, patch_b_, /*skip_input=*/true);
  }
}

void Backbone::set_frozen(bool frozen) {
  frozen_ = frozen;
  for (auto& [name, t] : parameters()) t->set_trainable(!frozen);
}

std::vector<std::pair<std::string, Tensor*>> Backbone::parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("backbone/patch_w", &patch_w_);
  out.emplace_back("backbone/patch_b", &patch_b_);
  out.emplace_back("backbone/pos", &pos_);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    auto& L = layers_[l];
    const std::string p = "backbone/layer" + std::to_string(l) + "/";
    out.emplace_back(p + "ln1_gamma", &L.ln1_gamma);
    out.emplace_back(p + "ln1_beta", &L.ln1_beta);
    out.emplace_back(p + "qkv_w", &L.qkv_w);
    out.emplace_back(p + "qkv_b", &L.qkv_b);
    out.emplace_back(p + "proj_w", &L.proj_w);
    out.emplace_back(p + "proj_b", &L.proj_b);
    out.emplace_back(p + "ln2_gamma", &L.ln2_gamma);
    out.emplace_back(p + "ln2_beta", &L.ln2_beta);
    out.emplace_back(p + "fc1_w", &L.fc1_w);
    out.emplace_back(p + "fc1_b", &L.fc1_b);
    out.emplace_back(p + "fc2_w", &L.fc2_w);
    out.emplace_back(p + "fc2_b", &L.fc2_b);
  }
  out.emplace_back("backbone/norm_gamma", &norm_gamma_);
  out.emplace_back("backbone/norm_beta", &norm_beta_);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> Backbone::parameters() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<Backbone*>(this)->parameters()) out.emplace_back(name, t);
  return out;
}

std::size_t Backbone::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : parameters()) n += t->size();
  return n;
}

std::uint64_t Backbone::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : parameters()) h = cbpnet::checksum(*t, h);
  return h;
}

}  // namespace cbpnet
