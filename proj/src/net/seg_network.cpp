#include "n2f/net/seg_network.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <vector>

#include "n2f/core/error.hpp"

namespace n2f {

namespace {

struct ConvDims {
  int out_h = 0, out_w = 0, pad = 0;
};

ConvDims conv_dims(const ConvSpec& spec, int in_h, int in_w) {
  ConvDims d;
  d.pad = spec.kernel / 2;
  d.out_h = (in_h + 2 * d.pad - spec.kernel) / spec.stride + 1;
  d.out_w = (in_w + 2 * d.pad - spec.kernel) / spec.stride + 1;
  return d;
}

// Patch matrix: row (ic * k * k + ky * k + kx), one column per output pixel.
Eigen::MatrixXd im2col(const FeatureMap& in, const ConvSpec& spec, const ConvDims& d) {
  const int k = spec.kernel;
  Eigen::MatrixXd patches =
      Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(in.channels) * k * k,
                            static_cast<Eigen::Index>(d.out_h) * d.out_w);
  for (int oy = 0; oy < d.out_h; ++oy) {
    for (int ox = 0; ox < d.out_w; ++ox) {
      const Eigen::Index col = static_cast<Eigen::Index>(oy) * d.out_w + ox;
      for (int ic = 0; ic < in.channels; ++ic) {
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * spec.stride + ky - d.pad;
          if (iy < 0 || iy >= in.height) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * spec.stride + kx - d.pad;
            if (ix < 0 || ix >= in.width) continue;
            patches(static_cast<Eigen::Index>(ic) * k * k + ky * k + kx, col) =
                in.data(ic, static_cast<Eigen::Index>(iy) * in.width + ix);
          }
        }
      }
    }
  }
  return patches;
}

void relu_inplace(FeatureMap& f) { f.data = f.data.cwiseMax(0.0); }

// Bilinear 2x tap table: output coordinate i samples (i + 0.5) / 2 - 0.5,
// clamped at the borders.
struct UpsampleTaps {
  std::vector<int> lo, hi;
  std::vector<double> w_hi;  // weight of hi; lo gets 1 - w_hi
};

UpsampleTaps upsample_taps(int in_n) {
  UpsampleTaps t;
  const int out_n = in_n * 2;
  t.lo.resize(out_n);
  t.hi.resize(out_n);
  t.w_hi.resize(out_n);
  for (int i = 0; i < out_n; ++i) {
    const double src = (i + 0.5) / 2.0 - 0.5;
    const double base = std::floor(src);
    const double frac = src - base;
    int lo = static_cast<int>(base);
    int hi = lo + 1;
    lo = std::min(std::max(lo, 0), in_n - 1);
    hi = std::min(std::max(hi, 0), in_n - 1);
    t.lo[i] = lo;
    t.hi[i] = hi;
    t.w_hi[i] = frac;
  }
  return t;
}

ConvLayer make_layer(int in_ch, int out_ch, int kernel, int stride, bool relu) {
  ConvLayer l;
  l.spec = {in_ch, out_ch, kernel, stride, relu};
  l.weight = Eigen::MatrixXd::Zero(out_ch, static_cast<Eigen::Index>(in_ch) * kernel * kernel);
  l.bias = Eigen::VectorXd::Zero(out_ch);
  return l;
}

void write_bytes(std::FILE* f, const void* p, std::size_t n, const std::string& path) {
  if (std::fwrite(p, 1, n, f) != n) throw DataError("failed writing " + path);
}

void read_bytes(std::FILE* f, void* p, std::size_t n, const std::string& path) {
  if (std::fread(p, 1, n, f) != n) throw DataError("params file truncated: " + path);
}

constexpr char kParamsMagic[8] = {'N', '2', 'F', 'P', 'A', 'R', 'M', 'S'};
constexpr std::uint32_t kParamsVersion = 1;

}  // namespace

FeatureMap to_network_input(const RgbImage& rgb) {
  const int h = static_cast<int>(rgb.height());
  const int w = static_cast<int>(rgb.width());
  FeatureMap f = FeatureMap::zeros(h, w, 3);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const Eigen::Index p = static_cast<Eigen::Index>(v) * w + u;
      f.data(0, p) = rgb.r(v, u) - 0.5;
      f.data(1, p) = rgb.g(v, u) - 0.5;
      f.data(2, p) = rgb.b(v, u) - 0.5;
    }
  }
  return f;
}

NetworkParams NetworkParams::architecture() {
  NetworkParams p;
  p.e1 = make_layer(3, 16, 3, 2, true);
  p.e2 = make_layer(16, 32, 3, 2, true);
  p.e3 = make_layer(32, 32, 3, 1, true);
  p.d1 = make_layer(32, 16, 3, 1, true);
  p.d2 = make_layer(16, 16, 3, 1, true);
  p.d3 = make_layer(16, 2, 1, 1, false);
  return p;
}

NetworkParams NetworkParams::xavier_initialized(std::uint64_t seed) {
  NetworkParams p = architecture();
  SeededRng rng(seed);
  for (ConvLayer* l : p.layers()) {
    const int k = l->spec.kernel;
    xavier_fill(l->weight, l->spec.in_channels * k * k, l->spec.out_channels * k * k, rng);
  }
  return p;
}

std::string NetworkParams::fingerprint() {
  return "n2f-encdec-v1:"
         "e1=3>16k3s2r,e2=16>32k3s2r,e3=32>32k3s1r,"
         "d1=32>16k3s1r,d2=up2+16>16k3s1r,d3=up2+16>2k1s1";
}

std::array<const char*, 6> NetworkParams::layer_names() {
  return {"e1", "e2", "e3", "d1", "d2", "d3"};
}

std::array<ConvLayer*, 6> NetworkParams::layers() { return {&e1, &e2, &e3, &d1, &d2, &d3}; }

std::array<const ConvLayer*, 6> NetworkParams::layers() const {
  return {&e1, &e2, &e3, &d1, &d2, &d3};
}

void accumulate(NetworkParams& acc, const NetworkParams& g, double scale) {
  auto dst = acc.layers();
  auto src = g.layers();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i]->weight += scale * src[i]->weight;
    dst[i]->bias += scale * src[i]->bias;
  }
}

void scale_params(NetworkParams& p, double factor) {
  for (ConvLayer* l : p.layers()) {
    l->weight *= factor;
    l->bias *= factor;
  }
}

std::uint64_t params_digest(const NetworkParams& p) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto feed = [&h](const double* data, Eigen::Index n) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(data);
    for (Eigen::Index i = 0; i < n * static_cast<Eigen::Index>(sizeof(double)); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const ConvLayer* l : p.layers()) {
    feed(l->weight.data(), l->weight.size());
    feed(l->bias.data(), l->bias.size());
  }
  return h;
}

namespace {

// patches_out, when given, receives the im2col matrix for reuse by backward.
FeatureMap conv_forward_cached(const ConvLayer& layer, const FeatureMap& in,
                               Eigen::MatrixXd* patches_out) {
  if (in.channels != layer.spec.in_channels) {
    throw InvalidInputError("conv_forward: channel mismatch");
  }
  const ConvDims d = conv_dims(layer.spec, in.height, in.width);
  FeatureMap out;
  out.height = d.out_h;
  out.width = d.out_w;
  out.channels = layer.spec.out_channels;
  if (layer.spec.kernel == 1 && layer.spec.stride == 1) {
    out.data = layer.weight * in.data;
  } else if (patches_out) {
    *patches_out = im2col(in, layer.spec, d);
    out.data = layer.weight * (*patches_out);
  } else {
    out.data = layer.weight * im2col(in, layer.spec, d);
  }
  out.data.colwise() += layer.bias;
  return out;
}

// Gradients for one conv layer. grad_pre is dL/d(pre-activation output);
// cached_patches is the im2col matrix saved by the forward pass.
void conv_backward(const ConvLayer& layer, const FeatureMap& in,
                   const Eigen::MatrixXd& cached_patches, const Eigen::MatrixXd& grad_pre,
                   ConvLayer& grad_layer, FeatureMap* grad_in) {
  const ConvDims d = conv_dims(layer.spec, in.height, in.width);
  const int k = layer.spec.kernel;

  grad_layer.spec = layer.spec;
  grad_layer.bias = grad_pre.rowwise().sum();

  if (k == 1 && layer.spec.stride == 1) {
    grad_layer.weight = grad_pre * in.data.transpose();
    if (grad_in) {
      grad_in->height = in.height;
      grad_in->width = in.width;
      grad_in->channels = in.channels;
      grad_in->data = layer.weight.transpose() * grad_pre;
    }
    return;
  }

  const Eigen::MatrixXd& patches = cached_patches;
  grad_layer.weight = grad_pre * patches.transpose();

  if (!grad_in) return;
  const Eigen::MatrixXd grad_patches = layer.weight.transpose() * grad_pre;
  grad_in->height = in.height;
  grad_in->width = in.width;
  grad_in->channels = in.channels;
  grad_in->data = Eigen::MatrixXd::Zero(in.channels, static_cast<Eigen::Index>(in.height) * in.width);
  for (int oy = 0; oy < d.out_h; ++oy) {
    for (int ox = 0; ox < d.out_w; ++ox) {
      const Eigen::Index col = static_cast<Eigen::Index>(oy) * d.out_w + ox;
      for (int ic = 0; ic < in.channels; ++ic) {
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * layer.spec.stride + ky - d.pad;
          if (iy < 0 || iy >= in.height) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * layer.spec.stride + kx - d.pad;
            if (ix < 0 || ix >= in.width) continue;
            grad_in->data(ic, static_cast<Eigen::Index>(iy) * in.width + ix) +=
                grad_patches(static_cast<Eigen::Index>(ic) * k * k + ky * k + kx, col);
          }
        }
      }
    }
  }
}

}  // namespace

FeatureMap conv_forward(const ConvLayer& layer, const FeatureMap& in) {
  return conv_forward_cached(layer, in, nullptr);
}

FeatureMap upsample2x_bilinear(const FeatureMap& in) {
  const UpsampleTaps ty = upsample_taps(in.height);
  const UpsampleTaps tx = upsample_taps(in.width);
  FeatureMap out = FeatureMap::zeros(in.height * 2, in.width * 2, in.channels);
  for (int oy = 0; oy < out.height; ++oy) {
    const double wy1 = ty.w_hi[oy];
    const double wy0 = 1.0 - wy1;
    const Eigen::Index ry0 = static_cast<Eigen::Index>(ty.lo[oy]) * in.width;
    const Eigen::Index ry1 = static_cast<Eigen::Index>(ty.hi[oy]) * in.width;
    for (int ox = 0; ox < out.width; ++ox) {
      const double wx1 = tx.w_hi[ox];
      const double wx0 = 1.0 - wx1;
      out.data.col(static_cast<Eigen::Index>(oy) * out.width + ox) =
          (wy0 * wx0) * in.data.col(ry0 + tx.lo[ox]) + (wy0 * wx1) * in.data.col(ry0 + tx.hi[ox]) +
          (wy1 * wx0) * in.data.col(ry1 + tx.lo[ox]) + (wy1 * wx1) * in.data.col(ry1 + tx.hi[ox]);
    }
  }
  return out;
}

FeatureMap upsample2x_bilinear_backward(const FeatureMap& grad_out, int in_h, int in_w) {
  const UpsampleTaps ty = upsample_taps(in_h);
  const UpsampleTaps tx = upsample_taps(in_w);
  FeatureMap grad_in = FeatureMap::zeros(in_h, in_w, grad_out.channels);
  for (int oy = 0; oy < grad_out.height; ++oy) {
    const double wy1 = ty.w_hi[oy];
    const double wy0 = 1.0 - wy1;
    const Eigen::Index ry0 = static_cast<Eigen::Index>(ty.lo[oy]) * in_w;
    const Eigen::Index ry1 = static_cast<Eigen::Index>(ty.hi[oy]) * in_w;
    for (int ox = 0; ox < grad_out.width; ++ox) {
      const double wx1 = tx.w_hi[ox];
      const double wx0 = 1.0 - wx1;
      const auto g = grad_out.data.col(static_cast<Eigen::Index>(oy) * grad_out.width + ox);
      grad_in.data.col(ry0 + tx.lo[ox]) += (wy0 * wx0) * g;
      grad_in.data.col(ry0 + tx.hi[ox]) += (wy0 * wx1) * g;
      grad_in.data.col(ry1 + tx.lo[ox]) += (wy1 * wx0) * g;
      grad_in.data.col(ry1 + tx.hi[ox]) += (wy1 * wx1) * g;
    }
  }
  return grad_in;
}

FeatureMap forward(const NetworkParams& params, const FeatureMap& input, ForwardTrace* trace) {
  if (input.channels != 3) throw InvalidInputError("forward: input must have 3 channels");
  if (input.height <= 0 || input.width <= 0 || input.height % 4 != 0 || input.width % 4 != 0) {
    throw InvalidInputError("forward: input height and width must be positive multiples of 4");
  }

  if (!trace) {
    // Inference path: no intermediate state is kept.
    auto run = [](const ConvLayer& layer, const FeatureMap& in) {
      FeatureMap act = conv_forward_cached(layer, in, nullptr);
      if (layer.spec.relu) relu_inplace(act);
      return act;
    };
    FeatureMap a = run(params.e1, input);
    a = run(params.e2, a);
    a = run(params.e3, a);
    a = run(params.d1, a);
    a = run(params.d2, upsample2x_bilinear(a));
    a = run(params.d3, upsample2x_bilinear(a));
    return a;
  }

  ForwardTrace& t = *trace;
  auto run = [&t](int idx, const ConvLayer& layer, FeatureMap in) {
    const bool cache_patches = layer.spec.kernel != 1;
    t.layer_in[idx] = std::move(in);
    t.pre_act[idx] =
        conv_forward_cached(layer, t.layer_in[idx], cache_patches ? &t.patches[idx] : nullptr);
    FeatureMap act = t.pre_act[idx];
    if (layer.spec.relu) relu_inplace(act);
    return act;
  };

  FeatureMap a = run(0, params.e1, input);
  a = run(1, params.e2, std::move(a));
  a = run(2, params.e3, std::move(a));
  a = run(3, params.d1, std::move(a));
  a = run(4, params.d2, upsample2x_bilinear(a));
  a = run(5, params.d3, upsample2x_bilinear(a));
  return a;  // d3 has no ReLU: this is the logits map
}

double loss(const FeatureMap& logits, const LabelMap& labels, const LossConfig& cfg) {
  return [&] {
    double value = 0.0;
    Eigen::MatrixXd grads = loss_backward(logits, labels, cfg, &value);
    return value;
  }();
}

Eigen::MatrixXd loss_backward(const FeatureMap& logits, const LabelMap& labels,
                              const LossConfig& cfg, double* loss_out) {
  if (logits.channels != 2 || logits.height != labels.height() || logits.width != labels.width()) {
    throw InvalidInputError("loss: logits and labels dimensions do not match");
  }
  if (!(cfg.w_free > 0.0) || !(cfg.w_obstacle > 0.0)) {
    throw InvalidInputError("loss: class weights must be positive");
  }

  const Eigen::Index n = logits.data.cols();
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(2, n);
  double total = 0.0;
  std::int64_t n_labeled = 0;

  const auto* label_data = labels.values.data();
  for (Eigen::Index p = 0; p < n; ++p) {
    const Label y = static_cast<Label>(label_data[p]);
    if (y != Label::FreeSpace && y != Label::Obstacle) continue;
    ++n_labeled;
    const double w = (y == Label::FreeSpace) ? cfg.w_free : cfg.w_obstacle;
    const double l0 = logits.data(0, p);
    const double l1 = logits.data(1, p);
    const double m = std::max(l0, l1);
    const double z0 = std::exp(l0 - m);
    const double z1 = std::exp(l1 - m);
    const double zsum = z0 + z1;
    const double p0 = z0 / zsum;
    const double p1 = z1 / zsum;
    if (y == Label::FreeSpace) {
      total += w * (std::log(zsum) - (l0 - m));
      grad(0, p) = w * (p0 - 1.0);
      grad(1, p) = w * p1;
    } else {
      total += w * (std::log(zsum) - (l1 - m));
      grad(0, p) = w * p0;
      grad(1, p) = w * (p1 - 1.0);
    }
  }

  if (n_labeled == 0) {
    if (loss_out) *loss_out = 0.0;
    return Eigen::MatrixXd::Zero(2, n);
  }
  grad /= static_cast<double>(n_labeled);
  if (loss_out) *loss_out = total / static_cast<double>(n_labeled);
  return grad;
}

NetworkParams backward(const NetworkParams& params, const FeatureMap& input,
                       const LabelMap& labels, const LossConfig& cfg, double* loss_out) {
  ForwardTrace t;
  const FeatureMap logits = forward(params, input, &t);
  Eigen::MatrixXd grad_pre = loss_backward(logits, labels, cfg, loss_out);

  NetworkParams grads = NetworkParams::architecture();
  auto layer_ptrs = params.layers();
  auto grad_ptrs = grads.layers();

  for (int i = 5; i >= 0; --i) {
    const bool need_input_grad = i > 0;
    FeatureMap grad_in;
    conv_backward(*layer_ptrs[i], t.layer_in[i], t.patches[i], grad_pre, *grad_ptrs[i],
                  need_input_grad ? &grad_in : nullptr);
    if (!need_input_grad) break;

    // d2 and d3 consume an upsampled map; push the gradient through it.
    if (i == 5 || i == 4) {
      const FeatureMap& act_below = t.pre_act[i - 1];
      grad_in = upsample2x_bilinear_backward(grad_in, act_below.height, act_below.width);
    }
    // ReLU mask of the producing layer.
    grad_pre =
        (t.pre_act[i - 1].data.array() > 0.0).cast<double>().matrix().cwiseProduct(grad_in.data);
  }
  return grads;
}

void sgd_step(NetworkParams& params, const NetworkParams& grads, double lr, double momentum,
              SgdState& state, TrainScope scope) {
  if (!(lr > 0.0) || momentum < 0.0 || momentum >= 1.0) {
    throw InvalidInputError("sgd_step: need lr > 0 and 0 <= momentum < 1");
  }
  auto p = params.layers();
  auto g = grads.layers();
  auto v = state.velocity.layers();
  const std::size_t first = (scope == TrainScope::DecoderOnly) ? 3 : 0;
  for (std::size_t i = first; i < p.size(); ++i) {
    v[i]->weight = momentum * v[i]->weight + g[i]->weight;
    v[i]->bias = momentum * v[i]->bias + g[i]->bias;
    p[i]->weight -= lr * v[i]->weight;
    p[i]->bias -= lr * v[i]->bias;
  }
}

double xavier_bound(int fan_in, int fan_out) {
  return std::sqrt(6.0 / (static_cast<double>(fan_in) + static_cast<double>(fan_out)));
}

void xavier_fill(Eigen::Ref<Eigen::MatrixXd> tensor, int fan_in, int fan_out, SeededRng& rng) {
  const double a = xavier_bound(fan_in, fan_out);
  for (Eigen::Index c = 0; c < tensor.cols(); ++c) {
    for (Eigen::Index r = 0; r < tensor.rows(); ++r) {
      tensor(r, c) = rng.uniform(-a, a);
    }
  }
}

void save_params(const NetworkParams& params, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw DataError("cannot open for writing: " + path);
  try {
    write_bytes(f, kParamsMagic, sizeof(kParamsMagic), path);
    write_bytes(f, &kParamsVersion, sizeof(kParamsVersion), path);
    const std::string fp = NetworkParams::fingerprint();
    const std::uint32_t fp_len = static_cast<std::uint32_t>(fp.size());
    write_bytes(f, &fp_len, sizeof(fp_len), path);
    write_bytes(f, fp.data(), fp.size(), path);
    const std::uint32_t n_layers = 6;
    write_bytes(f, &n_layers, sizeof(n_layers), path);
    const auto names = NetworkParams::layer_names();
    auto layers = params.layers();
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::uint32_t name_len = static_cast<std::uint32_t>(std::strlen(names[i]));
      write_bytes(f, &name_len, sizeof(name_len), path);
      write_bytes(f, names[i], name_len, path);
      const ConvSpec& s = layers[i]->spec;
      const std::int32_t meta[5] = {s.in_channels, s.out_channels, s.kernel, s.stride,
                                    s.relu ? 1 : 0};
      write_bytes(f, meta, sizeof(meta), path);
      const std::uint64_t w_count = static_cast<std::uint64_t>(layers[i]->weight.size());
      const std::uint64_t b_count = static_cast<std::uint64_t>(layers[i]->bias.size());
      write_bytes(f, &w_count, sizeof(w_count), path);
      write_bytes(f, layers[i]->weight.data(), w_count * sizeof(double), path);
      write_bytes(f, &b_count, sizeof(b_count), path);
      write_bytes(f, layers[i]->bias.data(), b_count * sizeof(double), path);
    }
  } catch (...) {
    std::fclose(f);
    throw;
  }
  if (std::fclose(f) != 0) throw DataError("failed writing " + path);
}

NetworkParams load_params(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw DataError("cannot open params file: " + path);
  NetworkParams params = NetworkParams::architecture();
  try {
    char magic[8];
    read_bytes(f, magic, sizeof(magic), path);
    if (std::memcmp(magic, kParamsMagic, sizeof(magic)) != 0) {
      throw DataError("not a params file: " + path);
    }
    std::uint32_t version = 0;
    read_bytes(f, &version, sizeof(version), path);
    if (version != kParamsVersion) {
      throw DataError("unsupported params version in " + path);
    }
    std::uint32_t fp_len = 0;
    read_bytes(f, &fp_len, sizeof(fp_len), path);
    if (fp_len > 4096) throw DataError("corrupt params header in " + path);
    std::string fp(fp_len, '\0');
    read_bytes(f, fp.data(), fp_len, path);
    if (fp != NetworkParams::fingerprint()) {
      throw DataError("architecture fingerprint mismatch in " + path);
    }
    std::uint32_t n_layers = 0;
    read_bytes(f, &n_layers, sizeof(n_layers), path);
    if (n_layers != 6) throw DataError("unexpected layer count in " + path);

    const auto names = NetworkParams::layer_names();
    auto layers = params.layers();
    for (std::size_t i = 0; i < layers.size(); ++i) {
      std::uint32_t name_len = 0;
      read_bytes(f, &name_len, sizeof(name_len), path);
      if (name_len > 64) throw DataError("corrupt layer record in " + path);
      std::string name(name_len, '\0');
      read_bytes(f, name.data(), name_len, path);
      if (name != names[i]) throw DataError("unexpected layer name '" + name + "' in " + path);
      std::int32_t meta[5];
      read_bytes(f, meta, sizeof(meta), path);
      const ConvSpec& s = layers[i]->spec;
      if (meta[0] != s.in_channels || meta[1] != s.out_channels || meta[2] != s.kernel ||
          meta[3] != s.stride || meta[4] != (s.relu ? 1 : 0)) {
        throw DataError("layer shape mismatch for '" + name + "' in " + path);
      }
      std::uint64_t w_count = 0, b_count = 0;
      read_bytes(f, &w_count, sizeof(w_count), path);
      if (w_count != static_cast<std::uint64_t>(layers[i]->weight.size())) {
        throw DataError("weight count mismatch for '" + name + "' in " + path);
      }
      read_bytes(f, layers[i]->weight.data(), w_count * sizeof(double), path);
      read_bytes(f, &b_count, sizeof(b_count), path);
      if (b_count != static_cast<std::uint64_t>(layers[i]->bias.size())) {
        throw DataError("bias count mismatch for '" + name + "' in " + path);
      }
      read_bytes(f, layers[i]->bias.data(), b_count * sizeof(double), path);
    }
  } catch (...) {
    std::fclose(f);
    throw;
  }
  std::fclose(f);
  return params;
}

}  // namespace n2f
