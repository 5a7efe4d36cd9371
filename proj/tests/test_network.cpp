#include <gtest/gtest.h>

#include "oracles.hpp"
#include "subprune/linalg.hpp"
#include "subprune/multilayer.hpp"
#include "subprune/network.hpp"
#include "subprune/synth.hpp"

using namespace subprune;

namespace {

LayerSpec dense_layer(Matrix w, std::vector<double> bias = {}, Nonlinearity nl = Nonlinearity::None) {
  LayerSpec l;
  l.name = "d";
  l.kind = LayerKind::Dense;
  l.weight = std::move(w);
  l.bias = std::move(bias);
  l.nonlinearity = nl;
  return l;
}

LayerSpec conv_layer(std::size_t in_c, std::size_t out_c, std::size_t k, std::size_t stride, std::size_t pad,
                     SplitMix64& rng) {
  LayerSpec l;
  l.name = "c";
  l.kind = LayerKind::Conv2d;
  l.in_channels = in_c;
  l.kernel_h = l.kernel_w = k;
  l.stride = stride;
  l.padding = pad;
  l.weight = oracle::random_matrix(out_c, in_c * k * k, rng);
  return l;
}

// Direct cross-correlation on one [c, h, w] sample.
std::vector<double> naive_conv(std::span<const double> x, const Shape3& in, const LayerSpec& l) {
  const std::size_t oc = l.weight.rows(), k = l.kernel_h, s = l.stride, p = l.padding;
  const std::size_t oh = (in.h + 2 * p - k) / s + 1, ow = (in.w + 2 * p - k) / s + 1;
  std::vector<double> y(oc * oh * ow, 0.0);
  for (std::size_t o = 0; o < oc; ++o)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < in.c; ++c)
          for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = 0; b < k; ++b) {
              const long yy = static_cast<long>(i * s + a) - static_cast<long>(p);
              const long xx = static_cast<long>(j * s + b) - static_cast<long>(p);
              if (yy < 0 || xx < 0 || yy >= static_cast<long>(in.h) || xx >= static_cast<long>(in.w)) continue;
              acc += l.weight(o, (c * k + a) * k + b) * x[(c * in.h + yy) * in.w + xx];
            }
        y[(o * oh + i) * ow + j] = acc;
      }
  return y;
}

}  // namespace

TEST(Dense, IdentityIsPassThrough) {
  SplitMix64 rng(1);
  const auto x = oracle::random_matrix(4, 3, rng);
  EXPECT_EQ(dense_forward(x, dense_layer(Matrix::identity(3), {0, 0, 0})), x);
}

TEST(Dense, HandExample) {
  const auto y = dense_forward(Matrix::from_rows({{1, 2}}), dense_layer(Matrix::from_rows({{1}, {1}}), {0}));
  EXPECT_EQ(y, Matrix::from_rows({{3}}));
}

TEST(Dense, MatchesLoopOracleWithReluAndMask) {
  SplitMix64 rng(2);
  const auto x = oracle::random_matrix(7, 5, rng);
  auto l = dense_layer(oracle::random_matrix(5, 4, rng), {0.1, -0.2, 0.3, -0.4}, Nonlinearity::Relu);
  l.kept_mask = std::vector<bool>{true, false, true, true};
  const auto y = dense_forward(x, l);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double s = l.bias[j];
      for (std::size_t p = 0; p < 5; ++p) s += x(i, p) * l.weight(p, j);
      const double want = j == 1 ? 0.0 : std::max(0.0, s);
      EXPECT_NEAR(y(i, j), want, 1e-12);
    }
  EXPECT_EQ(y, serial::dense_forward(x, l));
}

TEST(Conv, OnesKernelOnOnesImage) {
  LayerSpec l;
  l.kind = LayerKind::Conv2d;
  l.in_channels = 1;
  l.kernel_h = l.kernel_w = 2;
  l.weight = Matrix(1, 4, 1.0);
  const auto y = conv2d_forward(Matrix(1, 9, 1.0), {1, 3, 3}, l);
  EXPECT_EQ(y, Matrix(1, 4, 4.0));
}

TEST(Conv, OneByOneKernelIsChannelMix) {
  SplitMix64 rng(3);
  auto l = conv_layer(3, 2, 1, 1, 0, rng);
  const Shape3 in{3, 4, 4};
  const auto x = oracle::random_matrix(2, in.size(), rng);
  const auto y = conv2d_forward(x, in, l);
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t o = 0; o < 2; ++o)
      for (std::size_t q = 0; q < 16; ++q) {
        double want = 0.0;
        for (std::size_t c = 0; c < 3; ++c) want += l.weight(o, c) * x(s, c * 16 + q);
        EXPECT_NEAR(y(s, o * 16 + q), want, 1e-12);
      }
}

TEST(Conv, MatchesNaiveAndIm2colOracles) {
  SplitMix64 rng(4);
  for (auto [k, stride, pad] : {std::tuple{3, 1, 1}, std::tuple{3, 2, 0}, std::tuple{2, 1, 0}, std::tuple{5, 1, 2}}) {
    auto l = conv_layer(2, 3, k, stride, pad, rng);
    const Shape3 in{2, 7, 7};
    const auto x = oracle::random_matrix(3, in.size(), rng);
    const auto y = conv2d_forward(x, in, l);
    EXPECT_EQ(y, serial::conv2d_forward(x, in, l));
    const auto cols = im2col(x, in, k, k, stride, pad);
    EXPECT_EQ(cols, serial::im2col(x, in, k, k, stride, pad));
    const auto prod = oracle::loop_matmul(cols, l.weight.transposed());
    const std::size_t p = cols.rows() / 3;
    for (std::size_t s = 0; s < 3; ++s) {
      const auto ref = naive_conv(x.row(s), in, l);
      for (std::size_t o = 0; o < 3; ++o)
        for (std::size_t q = 0; q < p; ++q) {
          EXPECT_NEAR(y(s, o * p + q), ref[o * p + q], 1e-10);
          EXPECT_NEAR(prod(s * p + q, o), ref[o * p + q], 1e-10);
        }
    }
  }
}

TEST(Conv, NonIntegralGeometryNamesLayer) {
  SplitMix64 rng(5);
  auto l = conv_layer(1, 1, 2, 2, 0, rng);
  l.name = "odd";
  try {
    (void)output_shape(l, {1, 5, 5});
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("odd"), std::string::npos);
  }
}

TEST(Im2col, ShapesAndLayout) {
  Matrix x(1, 9);
  for (std::size_t i = 0; i < 9; ++i) x(0, i) = static_cast<double>(i);
  const auto m = im2col(x, {1, 3, 3}, 2, 2, 1, 0);
  ASSERT_EQ(m.rows(), 4u);
  ASSERT_EQ(m.cols(), 4u);
  EXPECT_EQ(m, Matrix::from_rows({{0, 1, 3, 4}, {1, 2, 4, 5}, {3, 4, 6, 7}, {4, 5, 7, 8}}));
  SplitMix64 rng(6);
  const auto y = oracle::random_matrix(2, 2 * 9, rng);
  const auto flat = im2col(y, {2, 3, 3}, 1, 1, 1, 0);
  ASSERT_EQ(flat.rows(), 18u);
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t q = 0; q < 9; ++q)
      for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(flat(s * 9 + q, c), y(s, c * 9 + q));
}

TEST(Capture, SingleDenseLayerIsActivation) {
  SplitMix64 rng(7);
  NetworkModel m;
  m.input = {3, 1, 1};
  auto l0 = dense_layer(oracle::random_matrix(3, 4, rng), {0.1, 0.2, 0.3, 0.4}, Nonlinearity::Relu);
  l0.prunable = true;
  m.layers = {l0, dense_layer(oracle::random_matrix(4, 2, rng))};
  const auto x = oracle::random_matrix(5, 3, rng);
  const auto caps = forward_capture(m, x);
  ASSERT_EQ(caps.captures.size(), 1u);
  EXPECT_EQ(caps.captures[0].matrix, dense_forward(x, l0));
  EXPECT_EQ(caps.captures[0].group_size, 1u);
}

TEST(Capture, LenetToyShapesFollowSuccessorGeometry) {
  SplitMix64 rng(8);
  const auto m = make_teacher("lenet-toy", rng);
  const std::size_t n = 6;
  const auto x = oracle::random_matrix(n, m.input.size(), rng);
  const auto caps = forward_capture(m, x);
  const auto shapes = layer_shapes(m);
  ASSERT_EQ(caps.captures.size(), 3u);
  for (const auto& cap : caps.captures) {
    const auto& succ = m.layers[cap.successor];
    const Shape3 seen = shapes[cap.successor];
    if (succ.kind == LayerKind::Conv2d) {
      const std::size_t oh = (seen.h + 2 * succ.padding - succ.kernel_h) / succ.stride + 1;
      const std::size_t ow = (seen.w + 2 * succ.padding - succ.kernel_w) / succ.stride + 1;
      EXPECT_EQ(cap.matrix.rows(), n * oh * ow);
      EXPECT_EQ(cap.matrix.cols(), seen.c * succ.kernel_h * succ.kernel_w);
      EXPECT_EQ(cap.group_size, succ.kernel_h * succ.kernel_w);
    } else {
      EXPECT_EQ(cap.matrix.rows(), n);
      EXPECT_EQ(cap.matrix.cols(), seen.c * seen.h * seen.w);
      EXPECT_EQ(cap.group_size, seen.h * seen.w);
    }
    EXPECT_EQ(cap.units, m.layers[cap.layer].out_units());
  }
  // conv1 -> pool -> conv2 (k3): 4 channels, 5x5 pooled map, 3x3 patches
  EXPECT_EQ(caps.captures[0].matrix.rows(), n * 9);
  EXPECT_EQ(caps.captures[0].matrix.cols(), 36u);
  // conv2 -> fc1: 8 channels of 3x3
  EXPECT_EQ(caps.captures[1].matrix.cols(), 72u);
  EXPECT_EQ(caps.captures[1].group_size, 9u);
}

TEST(Capture, MaskedColumnsAreZeroDownstream) {
  SplitMix64 rng(9);
  auto m = make_teacher("lenet-toy", rng);
  m.layers[0].kept_mask = std::vector<bool>{true, false, true, false};
  m.layers[2].kept_mask = std::vector<bool>{true, true, false, true, true, true, true, false};
  const auto x = oracle::random_matrix(4, m.input.size(), rng);
  const auto caps = forward_capture(m, x);
  for (std::size_t ci = 0; ci < 2; ++ci) {
    const auto& cap = caps.captures[ci];
    const auto& mask = *m.layers[cap.layer].kept_mask;
    for (std::size_t u = 0; u < cap.units; ++u) {
      if (mask[u]) continue;
      for (std::size_t r = 0; r < cap.matrix.rows(); ++r)
        for (std::size_t g = 0; g < cap.group_size; ++g) EXPECT_EQ(cap.matrix(r, u * cap.group_size + g), 0.0);
    }
  }
}

TEST(Capture, PrunedSuccessorInputEqualsSelectedTimesReweighted) {
  SplitMix64 rng(10);
  for (const std::string arch : {"mlp:6,9,7,3", "lenet-toy"}) {
    auto m = make_teacher(arch, rng);
    const auto x = oracle::random_matrix(12, m.input.size(), rng);
    const auto caps = forward_capture(m, x);
    const auto& cap = caps.captures[0];
    const auto problem = capture_problem(m, cap);
    const std::vector<std::size_t> kept{0, 2};
    const auto wt = extract_reweighted_weights(problem, kept);
    auto pruned = m;
    apply_pruning(pruned, cap.layer, kept, wt);
    const auto pre = preactivation(pruned, x, cap.successor);
    const auto want = oracle::loop_matmul(cap.matrix, wt);
    ASSERT_EQ(pre.rows(), want.rows());
    ASSERT_EQ(pre.cols(), want.cols());
    for (std::size_t i = 0; i < pre.size(); ++i) EXPECT_NEAR(pre.data()[i], want.data()[i], 1e-10) << arch;
  }
}

TEST(Accuracy, OneHotLogits) {
  const std::vector<std::int64_t> labels{0, 2, 1};
  Matrix right(3, 3), wrong(3, 3);
  for (std::size_t i = 0; i < 3; ++i) {
    right(i, static_cast<std::size_t>(labels[i])) = 1.0;
    wrong(i, (static_cast<std::size_t>(labels[i]) + 1) % 3) = 1.0;
  }
  EXPECT_EQ(accuracy_from_logits(right, labels), 1.0);
  EXPECT_EQ(accuracy_from_logits(wrong, labels), 0.0);
  // ties go to the lowest index
  EXPECT_EQ(accuracy_from_logits(Matrix(1, 3, 0.5), {0}), 1.0);
  EXPECT_EQ(accuracy_from_logits(Matrix(1, 3, 0.5), {1}), 0.0);
}

TEST(Accuracy, MatchesLoopOracle) {
  SplitMix64 rng(11);
  const auto logits = oracle::random_matrix(200, 5, rng);
  std::vector<std::int64_t> labels(200);
  for (auto& l : labels) l = static_cast<std::int64_t>(rng.uniform_below(5));
  std::size_t hit = 0;
  for (std::size_t i = 0; i < 200; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < 5; ++j)
      if (logits(i, j) > logits(i, best)) best = j;
    hit += static_cast<std::int64_t>(best) == labels[i];
  }
  EXPECT_EQ(accuracy_from_logits(logits, labels), static_cast<double>(hit) / 200.0);
  EXPECT_THROW((void)accuracy_from_logits(logits, {0, 1}), std::invalid_argument);
}

TEST(Cost, DenseExamples) {
  SplitMix64 rng(12);
  NetworkModel one;
  one.input = {4, 1, 1};
  one.layers = {dense_layer(Matrix(4, 3), {0, 0, 0})};
  EXPECT_EQ(count_params(one), 15u);
  EXPECT_EQ(count_flops(one), 2u * 12u);

  NetworkModel two;
  two.input = {5, 1, 1};
  auto l = dense_layer(Matrix(5, 4), std::vector<double>(4));
  l.prunable = true;
  l.kept_mask = std::vector<bool>{false, true, false, true};
  two.layers = {l, dense_layer(Matrix(4, 3), std::vector<double>(3))};
  const auto costs = layer_costs(two);
  EXPECT_EQ(costs[0].params, 12u);
  EXPECT_EQ(costs[1].params, 9u);
}

TEST(Cost, WeightParamsScaleByKeptFraction) {
  SplitMix64 rng(13);
  auto m = make_teacher("lenet-toy", rng);
  const auto before = layer_costs(m);
  m.layers[2].kept_mask = std::vector<bool>{true, false, true, false, true, false, true, false};
  const auto after = layer_costs(m);
  // conv2: weights 8*4*9 plus 8 bias; fc1: 72*16 weights plus 16 bias
  EXPECT_EQ(before[2].params - 8, 8u * 36u);
  EXPECT_EQ(after[2].params - 4, 4u * 36u);
  EXPECT_EQ(after[3].params - 16, (before[3].params - 16) / 2);
  EXPECT_EQ(after[2].flops * 2, before[2].flops);
}
