#pragma once

#include "setcomp/image.hpp"
#include "setcomp/ops.hpp"
#include "setcomp/params.hpp"

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace setcomp {

// Hidden width of the composition and query heads.
inline constexpr int kHeadWidth = 32;

enum class Backbone { kSmallCnn, kResNet18 };

struct EncoderConfig {
  int m = 32;
  Backbone backbone = Backbone::kSmallCnn;
  int input_size = 64;
  // small_cnn conv widths, one per block.
  std::vector<int> channels = {16, 32, 32, 64};

  void validate() const {
    if (m < 2) throw std::invalid_argument("embedding dimension must be at least 2");
    if (backbone == Backbone::kSmallCnn) {
      if (channels.size() != 4) throw std::invalid_argument("small_cnn needs 4 channel widths");
      if (input_size < 16 || input_size % 16 != 0) throw std::invalid_argument("small_cnn input must be a multiple of 16");
    } else if (input_size < 32) {
      throw std::invalid_argument("resnet18 input must be at least 32");
    }
  }
};

enum class GVariant { kMean, kLin, kLinFC, kDNN };
enum class HVariant { kLin, kLinFC, kDNN };

std::string to_string(GVariant v);
std::string to_string(HVariant v);
std::string to_string(Backbone b);
GVariant parse_g_variant(const std::string& s);
HVariant parse_h_variant(const std::string& s);
Backbone parse_backbone(const std::string& s);

struct Model3Config {
  int image_dim = 128;
  int label_dim = 32;
  int n_classes = 80;
  int hidden = 136;
};

namespace layers {

template <typename Scalar>
ad::Var<Scalar> dense(Context<Scalar>& ctx, const std::string& name, const ad::Var<Scalar>& x) {
  return ad::affine(ctx.param(name + ".w"), x, ctx.param(name + ".b"));
}

template <typename Scalar>
ad::Var<Scalar> batch_norm(Context<Scalar>& ctx, const std::string& name, const ad::Var<Scalar>& x) {
  return ad::batch_norm(x, ctx.param(name + ".gamma"), ctx.param(name + ".beta"), ctx.running(name + ".running_mean"),
                        ctx.running(name + ".running_var"), ctx.training());
}

template <typename Scalar>
ad::Var<Scalar> bn_relu(Context<Scalar>& ctx, const std::string& name, const ad::Var<Scalar>& x) {
  return ad::relu(batch_norm(ctx, name, x));
}

template <typename Scalar>
ad::Var<Scalar> conv(Context<Scalar>& ctx, const std::string& name, const ad::Var<Scalar>& x, ad::MapShape& shape,
                     const ad::ConvGeometry& geo) {
  ad::MapShape out;
  auto y = ad::conv2d(x, shape, ctx.param(name + ".w"), ctx.param(name + ".b"), geo, &out);
  shape = out;
  return y;
}

}  // namespace layers

// --- encoder -------------------------------------------------------------

namespace detail {

struct ResStage {
  int channels;
  int stride;
};
inline constexpr ResStage kResNet18Stages[] = {{64, 1}, {128, 2}, {256, 2}, {512, 2}};

}  // namespace detail

template <typename Scalar>
void init_encoder(ParamStore<Scalar>& store, const EncoderConfig& cfg, const std::string& prefix, Rng& rng) {
  cfg.validate();
  if (cfg.backbone == Backbone::kSmallCnn) {
    int in = 1;
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
      const auto name = prefix + ".block" + std::to_string(i);
      add_conv(store, name + ".conv", in, cfg.channels[i], 3, rng);
      add_batch_norm(store, name + ".bn", cfg.channels[i]);
      in = cfg.channels[i];
    }
    const int side = cfg.input_size / 16;
    add_dense(store, prefix + ".fc", in * side * side, cfg.m, rng);
    return;
  }
  add_conv(store, prefix + ".stem.conv", 1, 64, 7, rng);
  add_batch_norm(store, prefix + ".stem.bn", 64);
  int in = 64;
  int s = 0;
  for (const auto& stage : detail::kResNet18Stages) {
    for (int blk = 0; blk < 2; ++blk) {
      const auto name = prefix + ".layer" + std::to_string(s + 1) + "." + std::to_string(blk);
      const int stride = blk == 0 ? stage.stride : 1;
      add_conv(store, name + ".conv1", in, stage.channels, 3, rng);
      add_batch_norm(store, name + ".bn1", stage.channels);
      add_conv(store, name + ".conv2", stage.channels, stage.channels, 3, rng);
      add_batch_norm(store, name + ".bn2", stage.channels);
      if (stride != 1 || in != stage.channels) {
        add_conv(store, name + ".down.conv", in, stage.channels, 1, rng);
        add_batch_norm(store, name + ".down.bn", stage.channels);
      }
      in = stage.channels;
    }
    ++s;
  }
  add_dense(store, prefix + ".fc", in, cfg.m, rng);
}

// Packs equally sized images into the 1 x (B*H*W) layout the encoder reads.
template <typename Scalar>
Matrix<Scalar> pack_images(std::span<const Image> images, int input_size) {
  const Eigen::Index p = static_cast<Eigen::Index>(input_size) * input_size;
  Matrix<Scalar> out(1, p * static_cast<Eigen::Index>(images.size()));
  for (std::size_t b = 0; b < images.size(); ++b) {
    const auto& img = images[b];
    if (img.rows() != input_size || img.cols() != input_size) {
      throw std::invalid_argument("encoder expects " + std::to_string(input_size) + "x" + std::to_string(input_size) +
                                  " input, got " + std::to_string(img.rows()) + "x" + std::to_string(img.cols()));
    }
    // Shift to a zero-centred range: background 1 -> -0.5 ... ink 0 -> +0.5.
    for (Eigen::Index i = 0; i < p; ++i) {
      out(0, static_cast<Eigen::Index>(b) * p + i) = static_cast<Scalar>(0.5f - img.data()[i]);
    }
  }
  return out;
}

// pixels: 1 x (batch*S*S) from pack_images. Returns m x batch.
template <typename Scalar>
ad::Var<Scalar> encoder_forward(Context<Scalar>& ctx, const EncoderConfig& cfg, const std::string& prefix,
                                const ad::Var<Scalar>& pixels, int batch) {
  ad::MapShape shape{1, cfg.input_size, cfg.input_size, batch};
  if (pixels.rows() != 1 || pixels.cols() != shape.columns()) {
    throw std::invalid_argument("encoder input has wrong size");
  }
  ad::Var<Scalar> x = pixels;
  if (cfg.backbone == Backbone::kSmallCnn) {
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
      const auto name = prefix + ".block" + std::to_string(i);
      x = layers::conv(ctx, name + ".conv", x, shape, ad::ConvGeometry{3, 1, 1});
      x = layers::bn_relu(ctx, name + ".bn", x);
      ad::MapShape pooled;
      x = ad::max_pool(x, shape, ad::ConvGeometry{2, 2, 0}, &pooled);
      shape = pooled;
    }
    x = ad::flatten(x, shape);
  } else {
    x = layers::conv(ctx, prefix + ".stem.conv", x, shape, ad::ConvGeometry{7, 2, 3});
    x = layers::bn_relu(ctx, prefix + ".stem.bn", x);
    ad::MapShape pooled;
    x = ad::max_pool(x, shape, ad::ConvGeometry{3, 2, 1}, &pooled);
    shape = pooled;
    int s = 0;
    for (const auto& stage : detail::kResNet18Stages) {
      for (int blk = 0; blk < 2; ++blk) {
        const auto name = prefix + ".layer" + std::to_string(s + 1) + "." + std::to_string(blk);
        const int stride = blk == 0 ? stage.stride : 1;
        ad::MapShape in_shape = shape;
        ad::MapShape mid = shape;
        auto y = layers::conv(ctx, name + ".conv1", x, mid, ad::ConvGeometry{3, stride, 1});
        y = layers::bn_relu(ctx, name + ".bn1", y);
        y = layers::conv(ctx, name + ".conv2", y, mid, ad::ConvGeometry{3, 1, 1});
        y = layers::batch_norm(ctx, name + ".bn2", y);
        ad::Var<Scalar> skip = x;
        if (ctx.params().contains(name + ".down.conv.w")) {
          ad::MapShape ds = in_shape;
          skip = layers::conv(ctx, name + ".down.conv", x, ds, ad::ConvGeometry{1, stride, 0});
          skip = layers::batch_norm(ctx, name + ".down.bn", skip);
        }
        x = ad::relu(ad::add(y, skip));
        shape = mid;
      }
      ++s;
    }
    x = ad::global_avg_pool(x, shape);
  }
  x = layers::dense(ctx, prefix + ".fc", x);
  return ad::l2_normalize_cols(x);
}

// --- composition heads ------------------------------------------------------

// W1 (a + b) + W2 (a .* b); symmetric in (a, b) by construction.
template <typename Scalar>
ad::Var<Scalar> symm(const ad::Var<Scalar>& a, const ad::Var<Scalar>& b, const ad::Var<Scalar>& w1,
                     const ad::Var<Scalar>& w2) {
  return ad::add(ad::matmul(w1, ad::add(a, b)), ad::matmul(w2, ad::mul(a, b)));
}

template <typename Scalar>
void init_g(ParamStore<Scalar>& store, GVariant variant, int m, const std::string& prefix, Rng& rng) {
  if (variant == GVariant::kMean) return;
  const int symm_out = variant == GVariant::kLin ? m : kHeadWidth;
  add_dense(store, prefix + ".symm.w1", m, symm_out, rng, false);
  add_dense(store, prefix + ".symm.w2", m, symm_out, rng, false);
  if (variant == GVariant::kLinFC) {
    add_batch_norm(store, prefix + ".bn0", kHeadWidth);
    add_dense(store, prefix + ".fc1", kHeadWidth, m, rng);
  } else if (variant == GVariant::kDNN) {
    add_batch_norm(store, prefix + ".bn0", kHeadWidth);
    add_dense(store, prefix + ".fc1", kHeadWidth, kHeadWidth, rng);
    add_batch_norm(store, prefix + ".bn1", kHeadWidth);
    add_dense(store, prefix + ".fc2", kHeadWidth, kHeadWidth, rng);
    add_batch_norm(store, prefix + ".bn2", kHeadWidth);
    add_dense(store, prefix + ".fc3", kHeadWidth, m, rng);
  }
}

// a, b: m x B. Returns unit columns, m x B.
template <typename Scalar>
ad::Var<Scalar> g_forward(Context<Scalar>& ctx, GVariant variant, const std::string& prefix, const ad::Var<Scalar>& a,
                          const ad::Var<Scalar>& b) {
  ad::detail::same_shape(a, b, "g_forward");
  if (variant == GVariant::kMean) return ad::l2_normalize_cols(ad::scale(ad::add(a, b), Scalar(0.5)));
  auto x = symm(a, b, ctx.param(prefix + ".symm.w1.w"), ctx.param(prefix + ".symm.w2.w"));
  if (variant == GVariant::kLinFC) {
    x = layers::dense(ctx, prefix + ".fc1", layers::bn_relu(ctx, prefix + ".bn0", x));
  } else if (variant == GVariant::kDNN) {
    x = layers::dense(ctx, prefix + ".fc1", layers::bn_relu(ctx, prefix + ".bn0", x));
    x = layers::dense(ctx, prefix + ".fc2", layers::bn_relu(ctx, prefix + ".bn1", x));
    x = layers::dense(ctx, prefix + ".fc3", layers::bn_relu(ctx, prefix + ".bn2", x));
  }
  return ad::l2_normalize_cols(x);
}

// --- query heads --------------------------------------------------------------

template <typename Scalar>
void init_h(ParamStore<Scalar>& store, HVariant variant, int m, const std::string& prefix, Rng& rng) {
  const int width = variant == HVariant::kLin ? 1 : kHeadWidth;
  add_dense(store, prefix + ".in.w1", m, width, rng, false);
  add_dense(store, prefix + ".in.w2", m, width, rng, false);
  store.add(prefix + ".in.b", Matrix<Scalar>::Zero(width, 1));
  if (variant == HVariant::kLinFC) {
    add_batch_norm(store, prefix + ".bn0", kHeadWidth);
    add_dense(store, prefix + ".out", kHeadWidth, 1, rng);
  } else if (variant == HVariant::kDNN) {
    add_batch_norm(store, prefix + ".bn0", kHeadWidth);
    add_dense(store, prefix + ".fc1", kHeadWidth, kHeadWidth, rng);
    add_batch_norm(store, prefix + ".bn1", kHeadWidth);
    add_dense(store, prefix + ".fc2", kHeadWidth, kHeadWidth, rng);
    add_batch_norm(store, prefix + ".bn2", kHeadWidth);
    add_dense(store, prefix + ".out", kHeadWidth, 1, rng);
  }
}

// Pre-sigmoid score for "classes of b are contained in classes of a".
// a is the container candidate, b the query. Returns 1 x B.
template <typename Scalar>
ad::Var<Scalar> h_logits(Context<Scalar>& ctx, HVariant variant, const std::string& prefix, const ad::Var<Scalar>& a,
                         const ad::Var<Scalar>& b) {
  ad::detail::same_shape(a, b, "h_forward");
  auto x = ad::affine(ctx.param(prefix + ".in.w1.w"), a, ctx.param(prefix + ".in.b"));
  x = ad::add(x, ad::matmul(ctx.param(prefix + ".in.w2.w"), b));
  if (variant == HVariant::kLinFC) {
    x = layers::dense(ctx, prefix + ".out", layers::bn_relu(ctx, prefix + ".bn0", x));
  } else if (variant == HVariant::kDNN) {
    x = layers::dense(ctx, prefix + ".fc1", layers::bn_relu(ctx, prefix + ".bn0", x));
    x = layers::dense(ctx, prefix + ".fc2", layers::bn_relu(ctx, prefix + ".bn1", x));
    x = layers::dense(ctx, prefix + ".out", layers::bn_relu(ctx, prefix + ".bn2", x));
  }
  return x;
}

template <typename Scalar>
ad::Var<Scalar> h_forward(Context<Scalar>& ctx, HVariant variant, const std::string& prefix, const ad::Var<Scalar>& a,
                          const ad::Var<Scalar>& b) {
  return ad::sigmoid(h_logits(ctx, variant, prefix, a, b));
}

// --- supervised query model -----------------------------------------------------

template <typename Scalar>
void init_label_embedder(ParamStore<Scalar>& store, const Model3Config& cfg, const std::string& prefix, Rng& rng) {
  Matrix<Scalar> e(cfg.label_dim, cfg.n_classes);
  for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = static_cast<Scalar>(uniform(rng, -1.0, 1.0));
  store.add(prefix + ".embedding", std::move(e));
}

// Columns of `one_hot` (n_classes x B) must be one-hot.
template <typename Scalar>
ad::Var<Scalar> label_embed(Context<Scalar>& ctx, const std::string& prefix, const Matrix<Scalar>& one_hot) {
  for (Eigen::Index j = 0; j < one_hot.cols(); ++j) {
    int ones = 0;
    for (Eigen::Index i = 0; i < one_hot.rows(); ++i) {
      const Scalar v = one_hot(i, j);
      if (v == Scalar(1)) {
        ++ones;
      } else if (v != Scalar(0)) {
        ones = -1;
        break;
      }
    }
    if (ones != 1) throw std::invalid_argument("label_embed: column " + std::to_string(j) + " is not one-hot");
  }
  auto e = ctx.param(prefix + ".embedding");
  if (e.cols() != one_hot.rows()) throw std::invalid_argument("label_embed: one-hot length mismatch");
  return ad::matmul(e, ctx.tape().constant(one_hot));
}

// The printed FC(160) is the concatenated input itself: the stack proper is
// BN -> ReLU -> FC(hidden) -> BN -> ReLU -> FC(hidden) -> FC(1).
template <typename Scalar>
void init_model3_head(ParamStore<Scalar>& store, const Model3Config& cfg, const std::string& prefix, Rng& rng) {
  const int in = cfg.image_dim + cfg.label_dim;
  add_batch_norm(store, prefix + ".bn0", in);
  add_dense(store, prefix + ".fc1", in, cfg.hidden, rng);
  add_batch_norm(store, prefix + ".bn1", cfg.hidden);
  add_dense(store, prefix + ".fc2", cfg.hidden, cfg.hidden, rng);
  add_dense(store, prefix + ".out", cfg.hidden, 1, rng);
}

template <typename Scalar>
ad::Var<Scalar> model3_logits(Context<Scalar>& ctx, const Model3Config& cfg, const std::string& prefix,
                              const ad::Var<Scalar>& image_emb, const ad::Var<Scalar>& label_emb) {
  if (image_emb.rows() != cfg.image_dim || label_emb.rows() != cfg.label_dim) {
    throw std::invalid_argument("model3: expected " + std::to_string(cfg.image_dim) + "+" +
                                std::to_string(cfg.label_dim) + " input dims");
  }
  auto x = ad::concat_rows(image_emb, label_emb);
  x = layers::dense(ctx, prefix + ".fc1", layers::bn_relu(ctx, prefix + ".bn0", x));
  x = layers::dense(ctx, prefix + ".fc2", layers::bn_relu(ctx, prefix + ".bn1", x));
  return layers::dense(ctx, prefix + ".out", x);
}

// Independent-sigmoid multilabel head on a width-`in` feature: BN -> ReLU ->
// FC(in) -> BN -> ReLU -> FC(in) -> FC(n_classes).
template <typename Scalar>
void init_multilabel_head(ParamStore<Scalar>& store, int in, int n_classes, const std::string& prefix, Rng& rng) {
  add_batch_norm(store, prefix + ".bn0", in);
  add_dense(store, prefix + ".fc1", in, in, rng);
  add_batch_norm(store, prefix + ".bn1", in);
  add_dense(store, prefix + ".fc2", in, in, rng);
  add_dense(store, prefix + ".out", in, n_classes, rng);
}

template <typename Scalar>
ad::Var<Scalar> multilabel_logits(Context<Scalar>& ctx, const std::string& prefix, const ad::Var<Scalar>& feature) {
  auto x = layers::dense(ctx, prefix + ".fc1", layers::bn_relu(ctx, prefix + ".bn0", feature));
  x = layers::dense(ctx, prefix + ".fc2", layers::bn_relu(ctx, prefix + ".bn1", x));
  return layers::dense(ctx, prefix + ".out", x);
}

// --- single-example evaluation helpers -----------------------------------------

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
Vector<Scalar> symm(const Vector<Scalar>& a, const Vector<Scalar>& b, const Matrix<Scalar>& w1,
                    const Matrix<Scalar>& w2) {
  if (a.size() != b.size() || w1.cols() != a.size() || w2.cols() != a.size() || w1.rows() != w2.rows()) {
    throw std::invalid_argument("symm: shape mismatch");
  }
  return w1 * (a + b) + w2 * a.cwiseProduct(b);
}

template <typename Scalar>
Vector<Scalar> g_forward(GVariant variant, const ParamStore<Scalar>& params, const std::string& prefix,
                         const Vector<Scalar>& a, const Vector<Scalar>& b) {
  ad::Tape<Scalar> tape;
  Context<Scalar> ctx(tape, params);
  return g_forward(ctx, variant, prefix, tape.constant(a), tape.constant(b)).value().col(0);
}

template <typename Scalar>
Scalar h_forward(HVariant variant, const ParamStore<Scalar>& params, const std::string& prefix,
                 const Vector<Scalar>& a, const Vector<Scalar>& b) {
  ad::Tape<Scalar> tape;
  Context<Scalar> ctx(tape, params);
  return h_forward(ctx, variant, prefix, tape.constant(a), tape.constant(b)).value()(0, 0);
}

template <typename Scalar>
Vector<Scalar> label_embed(const ParamStore<Scalar>& params, const std::string& prefix, const Vector<Scalar>& one_hot) {
  ad::Tape<Scalar> tape;
  Context<Scalar> ctx(tape, params);
  return label_embed(ctx, prefix, Matrix<Scalar>(one_hot)).value().col(0);
}

template <typename Scalar>
Scalar model3_forward(const ParamStore<Scalar>& params, const Model3Config& cfg, const std::string& prefix,
                      const Vector<Scalar>& image_emb, const Vector<Scalar>& label_emb) {
  ad::Tape<Scalar> tape;
  Context<Scalar> ctx(tape, params);
  auto z = model3_logits(ctx, cfg, prefix, tape.constant(image_emb), tape.constant(label_emb));
  return ad::sigmoid_value<Scalar>(z.value())(0, 0);
}

// Eval-mode embeddings of images already at the encoder input size; m x N.
template <typename Scalar>
Matrix<Scalar> encode_batch(const ParamStore<Scalar>& params, const EncoderConfig& cfg, const std::string& prefix,
                            std::span<const Image> images, std::size_t chunk = 64) {
  Matrix<Scalar> out(cfg.m, static_cast<Eigen::Index>(images.size()));
  for (std::size_t start = 0; start < images.size(); start += chunk) {
    const std::size_t n = std::min(chunk, images.size() - start);
    ad::Tape<Scalar> tape;
    Context<Scalar> ctx(tape, params);
    auto px = tape.constant(pack_images<Scalar>(images.subspan(start, n), cfg.input_size));
    out.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(n)) =
        encoder_forward(ctx, cfg, prefix, px, static_cast<int>(n)).value();
  }
  return out;
}

template <typename Scalar>
Vector<Scalar> encode(const ParamStore<Scalar>& params, const EncoderConfig& cfg, const std::string& prefix,
                      const Image& image) {
  return encode_batch<Scalar>(params, cfg, prefix, std::span<const Image>(&image, 1)).col(0);
}

}  // namespace setcomp
