#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "n2f/core/error.hpp"
#include "n2f/core/rng.hpp"
#include "n2f/net/seg_network.hpp"
#include "test_util.hpp"

using namespace n2f;

namespace {

FeatureMap random_input(int h, int w, std::uint64_t seed) {
  SeededRng rng(seed);
  FeatureMap f = FeatureMap::zeros(h, w, 3);
  for (Eigen::Index i = 0; i < f.data.size(); ++i) f.data.data()[i] = rng.uniform(-0.5, 0.5);
  return f;
}

LabelMap random_labels(int h, int w, std::uint64_t seed) {
  SeededRng rng(seed);
  LabelMap m = LabelMap::unknown(h, w);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const double r = rng.uniform01();
      if (r < 0.45) m.set(v, u, Label::FreeSpace);
      else if (r < 0.8) m.set(v, u, Label::Obstacle);
    }
  }
  m.set(0, 0, Label::FreeSpace);
  m.set(0, 1, Label::Obstacle);
  return m;
}

// ---- independent reference implementation (plain loops, no Eigen math) ----

struct RefMap {
  int h = 0, w = 0, c = 0;
  std::vector<double> v;
  double at(int ch, int y, int x) const { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  double& at(int ch, int y, int x) { return v[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  static RefMap zeros(int h, int w, int c) {
    return {h, w, c, std::vector<double>(static_cast<std::size_t>(h) * w * c, 0.0)};
  }
};

RefMap to_ref(const FeatureMap& f) {
  RefMap r = RefMap::zeros(f.height, f.width, f.channels);
  for (int c = 0; c < f.channels; ++c) {
    for (int y = 0; y < f.height; ++y) {
      for (int x = 0; x < f.width; ++x) r.at(c, y, x) = f.at(c, y, x);
    }
  }
  return r;
}

RefMap conv_ref(const ConvLayer& layer, const RefMap& in) {
  const int k = layer.spec.kernel;
  const int pad = k / 2;
  const int s = layer.spec.stride;
  const int oh = (in.h + 2 * pad - k) / s + 1;
  const int ow = (in.w + 2 * pad - k) / s + 1;
  RefMap out = RefMap::zeros(oh, ow, layer.spec.out_channels);
  for (int oc = 0; oc < layer.spec.out_channels; ++oc) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double sum = layer.bias(oc);
        for (int ic = 0; ic < layer.spec.in_channels; ++ic) {
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * s + ky - pad;
            if (iy < 0 || iy >= in.h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * s + kx - pad;
              if (ix < 0 || ix >= in.w) continue;
              sum += layer.weight(oc, ic * k * k + ky * k + kx) * in.at(ic, iy, ix);
            }
          }
        }
        if (layer.spec.relu && sum < 0.0) sum = 0.0;
        out.at(oc, oy, ox) = sum;
      }
    }
  }
  return out;
}

RefMap upsample_ref(const RefMap& in) {
  RefMap out = RefMap::zeros(in.h * 2, in.w * 2, in.c);
  auto sample = [](const RefMap& m, int c, double sy, double sx) {
    const int y0raw = static_cast<int>(std::floor(sy));
    const int x0raw = static_cast<int>(std::floor(sx));
    const double fy = sy - std::floor(sy);
    const double fx = sx - std::floor(sx);
    auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
    const int y0 = clampi(y0raw, m.h - 1), y1 = clampi(y0raw + 1, m.h - 1);
    const int x0 = clampi(x0raw, m.w - 1), x1 = clampi(x0raw + 1, m.w - 1);
    return (1 - fy) * ((1 - fx) * m.at(c, y0, x0) + fx * m.at(c, y0, x1)) +
           fy * ((1 - fx) * m.at(c, y1, x0) + fx * m.at(c, y1, x1));
  };
  for (int c = 0; c < in.c; ++c) {
    for (int y = 0; y < out.h; ++y) {
      for (int x = 0; x < out.w; ++x) {
        out.at(c, y, x) = sample(in, c, (y + 0.5) / 2.0 - 0.5, (x + 0.5) / 2.0 - 0.5);
      }
    }
  }
  return out;
}

RefMap forward_ref(const NetworkParams& p, const FeatureMap& input) {
  RefMap a = to_ref(input);
  a = conv_ref(p.e1, a);
  a = conv_ref(p.e2, a);
  a = conv_ref(p.e3, a);
  a = conv_ref(p.d1, a);
  a = conv_ref(p.d2, upsample_ref(a));
  a = conv_ref(p.d3, upsample_ref(a));
  return a;
}

}  // namespace

TEST_CASE("zero network emits zero logits; bias-only d3 propagates its bias") {
  const FeatureMap input = random_input(8, 8, 3);

  NetworkParams zero = NetworkParams::architecture();
  FeatureMap logits = forward(zero, input);
  CHECK(logits.height == 8);
  CHECK(logits.width == 8);
  CHECK(logits.channels == 2);
  CHECK(logits.data.cwiseAbs().maxCoeff() == 0.0);

  zero.d3.bias << 1.0, -1.0;
  logits = forward(zero, input);
  CHECK((logits.data.row(0).array() == 1.0).all());
  CHECK((logits.data.row(1).array() == -1.0).all());
}

TEST_CASE("forward matches an independently written reference network") {
  for (std::uint64_t seed : {10ull, 11ull, 12ull}) {
    const NetworkParams params = NetworkParams::xavier_initialized(seed);
    const FeatureMap input = random_input(8, 8, seed + 100);
    const FeatureMap logits = forward(params, input);
    const RefMap expect = forward_ref(params, input);
    REQUIRE(logits.height == expect.h);
    REQUIRE(logits.width == expect.w);
    double max_diff = 0.0;
    for (int c = 0; c < 2; ++c) {
      for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
          max_diff = std::max(max_diff, std::abs(logits.at(c, y, x) - expect.at(c, y, x)));
        }
      }
    }
    CHECK(max_diff < 1e-12);
  }
}

TEST_CASE("forward rejects dimensions not divisible by 4") {
  const NetworkParams params = NetworkParams::architecture();
  CHECK_THROWS_AS(forward(params, random_input(6, 8, 1)), InvalidInputError);
  CHECK_THROWS_AS(forward(params, random_input(8, 10, 1)), InvalidInputError);
}

TEST_CASE("loss closed forms") {
  FeatureMap logits = FeatureMap::zeros(2, 2, 2);
  LabelMap labels = LabelMap::unknown(2, 2);

  SUBCASE("uniform logits with two labeled pixels give ln 2") {
    labels.set(0, 0, Label::FreeSpace);
    labels.set(1, 1, Label::Obstacle);
    CHECK(loss(logits, labels, {1.0, 1.0}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }

  SUBCASE("all-Unknown gives zero loss and zero gradients") {
    CHECK(loss(logits, labels, {1.0, 1.0}) == 0.0);
    const NetworkParams params = NetworkParams::xavier_initialized(4);
    const FeatureMap input = random_input(8, 8, 5);
    const NetworkParams grads = backward(params, input, LabelMap::unknown(8, 8), {1.0, 1.0});
    for (const ConvLayer* l : grads.layers()) {
      CHECK(l->weight.cwiseAbs().maxCoeff() == 0.0);
      CHECK(l->bias.cwiseAbs().maxCoeff() == 0.0);
    }
  }

  SUBCASE("a growing margin drives the loss to zero") {
    labels.set(0, 0, Label::FreeSpace);
    logits.at(0, 0, 0) = 50.0;  // free logit far above obstacle logit
    CHECK(loss(logits, labels, {1.0, 1.0}) < 1e-20);
    CHECK(loss(logits, labels, {1.0, 1.0}) >= 0.0);
  }
}

TEST_CASE("analytic gradients match central finite differences (spot check)") {
  // Pick a seed whose pre-activations all sit well away from the ReLU kink,
  // where a central difference would not measure the true derivative.
  const double h = 1e-4;
  std::uint64_t seed = 21;
  NetworkParams params = NetworkParams::architecture();
  FeatureMap input;
  for (std::uint64_t attempt = 0;; ++attempt) {
    params = NetworkParams::xavier_initialized(seed + attempt);
    input = random_input(8, 8, seed + attempt + 1000);
    ForwardTrace trace;
    forward(params, input, &trace);
    double margin = std::numeric_limits<double>::infinity();
    for (int layer = 0; layer <= 4; ++layer) {
      margin = std::min(margin, trace.pre_act[layer].data.cwiseAbs().minCoeff());
    }
    if (margin > 3.0 * h) break;
    REQUIRE(attempt < 100);
  }
  const LabelMap labels = random_labels(8, 8, 23);
  const LossConfig cfg{1.3, 0.7};
  const NetworkParams analytic = backward(params, input, labels, cfg);

  auto loss_at = [&](const NetworkParams& p) {
    double value = 0.0;
    loss_backward(forward(p, input), labels, cfg, &value);
    return value;
  };

  NetworkParams probe = params;
  auto probe_layers = probe.layers();
  auto grad_layers = analytic.layers();
  SeededRng rng(24);

  for (std::size_t li = 0; li < probe_layers.size(); ++li) {
    // A random subset of each tensor; the full sweep lives in gradcheck.
    for (int rep = 0; rep < 40; ++rep) {
      const Eigen::Index i =
          static_cast<Eigen::Index>(rng.uniform_int(probe_layers[li]->weight.size()));
      double* v = probe_layers[li]->weight.data() + i;
      const double orig = *v;
      *v = orig + h;
      const double hi = loss_at(probe);
      *v = orig - h;
      const double lo = loss_at(probe);
      *v = orig;
      const double numeric = (hi - lo) / (2.0 * h);
      const double analytic_g = grad_layers[li]->weight.data()[i];
      const double rel = std::abs(analytic_g - numeric) /
                         std::max(std::abs(analytic_g) + std::abs(numeric), 1e-8);
      CHECK(rel < 1e-3);
    }
    for (Eigen::Index i = 0; i < probe_layers[li]->bias.size(); ++i) {
      double* v = probe_layers[li]->bias.data() + i;
      const double orig = *v;
      *v = orig + h;
      const double hi = loss_at(probe);
      *v = orig - h;
      const double lo = loss_at(probe);
      *v = orig;
      const double numeric = (hi - lo) / (2.0 * h);
      const double analytic_g = grad_layers[li]->bias.data()[i];
      const double rel = std::abs(analytic_g - numeric) /
                         std::max(std::abs(analytic_g) + std::abs(numeric), 1e-8);
      CHECK(rel < 1e-3);
    }
  }
}

TEST_CASE("gradients are linear in the class weights") {
  const NetworkParams params = NetworkParams::xavier_initialized(31);
  const FeatureMap input = random_input(8, 8, 32);
  const LabelMap labels = random_labels(8, 8, 33);

  const NetworkParams g1 = backward(params, input, labels, {0.6, 1.1});
  const NetworkParams g2 = backward(params, input, labels, {1.2, 2.2});
  auto l1 = g1.layers();
  auto l2 = g2.layers();
  for (std::size_t i = 0; i < l1.size(); ++i) {
    CHECK((l2[i]->weight - 2.0 * l1[i]->weight).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((l2[i]->bias - 2.0 * l1[i]->bias).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("sgd_step follows the momentum recurrence") {
  SUBCASE("single step without momentum") {
    NetworkParams p = NetworkParams::architecture();
    NetworkParams g = NetworkParams::architecture();
    p.d3.weight(0, 0) = 1.0;
    g.d3.weight(0, 0) = 0.5;
    SgdState state;
    sgd_step(p, g, 0.1, 0.0, state);
    CHECK(p.d3.weight(0, 0) == doctest::Approx(0.95).epsilon(1e-15));
  }

  SUBCASE("zero gradients leave parameters unchanged") {
    NetworkParams p = NetworkParams::xavier_initialized(44);
    const NetworkParams before = p;
    NetworkParams zero_g = NetworkParams::architecture();
    SgdState state;
    sgd_step(p, zero_g, 0.1, 0.9, state);
    CHECK(params_digest(p) == params_digest(before));
  }

  SUBCASE("zero gradients decay a nonzero velocity by the momentum factor") {
    NetworkParams p = NetworkParams::xavier_initialized(44);
    const NetworkParams before = p;
    NetworkParams zero_g = NetworkParams::architecture();
    SgdState state;
    state.velocity.d2.weight(0, 0) = 1.0;
    sgd_step(p, zero_g, 0.1, 0.9, state);
    CHECK(state.velocity.d2.weight(0, 0) == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(p.d2.weight(0, 0) ==
          doctest::Approx(before.d2.weight(0, 0) - 0.1 * 0.9).epsilon(1e-12));
  }

  SUBCASE("two steps with momentum 0.9 match the hand-unrolled recurrence") {
    NetworkParams p = NetworkParams::architecture();
    NetworkParams g = NetworkParams::architecture();
    p.d3.weight(0, 0) = 1.0;
    g.d3.weight(0, 0) = 0.5;
    SgdState state;
    sgd_step(p, g, 0.1, 0.9, state);
    // v1 = 0.5, p1 = 1 - 0.05 = 0.95
    CHECK(p.d3.weight(0, 0) == doctest::Approx(0.95).epsilon(1e-15));
    sgd_step(p, g, 0.1, 0.9, state);
    // v2 = 0.9 * 0.5 + 0.5 = 0.95, p2 = 0.95 - 0.095 = 0.855
    CHECK(p.d3.weight(0, 0) == doctest::Approx(0.855).epsilon(1e-15));
  }

  SUBCASE("invalid hyperparameters are rejected") {
    NetworkParams p = NetworkParams::architecture();
    SgdState state;
    CHECK_THROWS_AS(sgd_step(p, p, 0.0, 0.9, state), InvalidInputError);
    CHECK_THROWS_AS(sgd_step(p, p, 0.1, 1.0, state), InvalidInputError);
  }
}

TEST_CASE("decoder-only scope keeps encoder bytes identical") {
  NetworkParams p = NetworkParams::xavier_initialized(55);
  const NetworkParams before = p;
  const FeatureMap input = random_input(8, 8, 56);
  const LabelMap labels = random_labels(8, 8, 57);
  SgdState state;
  for (int step = 0; step < 5; ++step) {
    const NetworkParams g = backward(p, input, labels, {1.0, 1.0});
    sgd_step(p, g, 0.05, 0.9, state, TrainScope::DecoderOnly);
  }
  for (auto [a, b] : {std::pair{&p.e1, &before.e1}, {&p.e2, &before.e2}, {&p.e3, &before.e3}}) {
    CHECK(std::memcmp(a->weight.data(), b->weight.data(),
                      sizeof(double) * a->weight.size()) == 0);
    CHECK(std::memcmp(a->bias.data(), b->bias.data(), sizeof(double) * a->bias.size()) == 0);
  }
  CHECK((p.d3.weight - before.d3.weight).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("xavier initialization") {
  SUBCASE("1x1 conv with one channel each way has bound sqrt(3)") {
    CHECK(xavier_bound(1, 1) == doctest::Approx(std::sqrt(3.0)).epsilon(1e-15));
  }

  SUBCASE("draws stay inside the bound and center on zero") {
    SeededRng rng(77);
    Eigen::MatrixXd t(100000, 1);
    xavier_fill(t, 1, 1, rng);
    const double a = std::sqrt(3.0);
    CHECK(t.maxCoeff() <= a);
    CHECK(t.minCoeff() >= -a);
    CHECK(std::abs(t.mean()) < 0.01);
  }

  SUBCASE("identical seeds give identical parameters") {
    const NetworkParams a = NetworkParams::xavier_initialized(123);
    const NetworkParams b = NetworkParams::xavier_initialized(123);
    CHECK(params_digest(a) == params_digest(b));
    const NetworkParams c = NetworkParams::xavier_initialized(124);
    CHECK(params_digest(a) != params_digest(c));
  }
}

TEST_CASE("parameter files round trip bit-exactly and reject corruption") {
  n2f_test::TempDir tmp("n2f-params");
  const std::string path = tmp.str("params.bin");
  const NetworkParams params = NetworkParams::xavier_initialized(91);
  save_params(params, path);

  SUBCASE("round trip") {
    const NetworkParams loaded = load_params(path);
    CHECK(params_digest(loaded) == params_digest(params));
  }

  SUBCASE("truncated file") {
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    in.close();
    const std::string cut = tmp.str("cut.bin");
    std::ofstream out(cut, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    CHECK_THROWS_AS(load_params(cut), DataError);
  }

  SUBCASE("fingerprint mismatch") {
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    in.close();
    // The fingerprint string begins right after magic + version + length.
    const std::size_t fp_offset = 8 + 4 + 4;
    bytes[fp_offset] ^= 0x5a;
    const std::string bad = tmp.str("bad.bin");
    std::ofstream out(bad, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    CHECK_THROWS_AS(load_params(bad), DataError);
  }

  SUBCASE("not a params file") {
    const std::string junk = tmp.str("junk.bin");
    std::ofstream out(junk, std::ios::binary);
    out << "definitely not parameters";
    out.close();
    CHECK_THROWS_AS(load_params(junk), DataError);
  }
}

TEST_CASE("a short training loop halves the loss on one fixed frame") {
  // Smaller frame than the deployment resolution; the full-size run is part
  // of the acceptance suite.
  const int h = 24, w = 32;
  NetworkParams params = NetworkParams::xavier_initialized(61);
  const FeatureMap input = random_input(h, w, 62);
  LabelMap labels = LabelMap::unknown(h, w);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      labels.set(v, u, u < w / 2 ? Label::FreeSpace : Label::Obstacle);
    }
  }
  const LossConfig cfg{1.0, 1.0};
  SgdState state;
  double initial = 0.0;
  double final_loss = 0.0;
  for (int step = 0; step < 200; ++step) {
    double step_loss = 0.0;
    const NetworkParams g = backward(params, input, labels, cfg, &step_loss);
    if (step == 0) initial = step_loss;
    sgd_step(params, g, 0.05, 0.9, state);
    final_loss = step_loss;
  }
  CHECK(final_loss < 0.5 * initial);
}
