#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "clap/model.hpp"
#include "support/gradcheck.hpp"

namespace clap {
namespace {

ModelConfig small_config(Variant v = Variant::full) {
  ModelConfig c;
  c.input_height = c.input_width = 16;
  c.encoder_widths = {4, 8, 16};
  c.decoder_width = 8;
  c.num_classes = 3;
  c.variant = v;
  c.seed = 5;
  return c;
}

Tensor<float> image_batch(std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed) {
  Tensor<float> x({n, 3, h, w});
  Rng rng(seed);
  for (auto& v : x.data()) v = static_cast<float>(rng.uniform());
  return x;
}

// Independent closed form of one separable block: dw k^2*C, pw Cin*Cout + Cout,
// BN 2C trainable and 2C running statistics.
std::size_t sepconv_trainable(std::size_t cin, std::size_t cout, std::size_t k) {
  return k * k * cin + cin * cout + cout + 2 * cout;
}

TEST(ModelShapes, DefaultPipelineLayerByLayer) {
  Model<float> model(ModelConfig{});
  const std::vector<std::size_t> enc_in{224, 112, 56, 28, 14, 7};
  const std::vector<std::size_t> widths{32, 64, 128, 256, 512, 1024};

  auto tr = model.forward(image_batch(1, 224, 224, 1), Mode::infer);
  ASSERT_EQ(tr.encoder_outputs.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(tr.encoder_outputs[i].shape(), (Shape{1, widths[i], enc_in[i], enc_in[i]}));
  }
  EXPECT_EQ(tr.pooled.shape(), (Shape{1, 1024, 4, 4}));
  EXPECT_EQ(tr.gated.shape(), (Shape{1, 1024, 4, 4}));
  EXPECT_EQ(tr.latent.shape(), (Shape{1, 1024, 4, 4}));
  ASSERT_EQ(tr.decoder_outputs.size(), 2u);
  EXPECT_EQ(tr.decoder_outputs[0].shape(), (Shape{1, 1024, 8, 8}));
  EXPECT_EQ(tr.decoder_outputs[1].shape(), (Shape{1, 1024, 16, 16}));
  EXPECT_EQ(tr.map3.shape(), (Shape{1, 1024, 16, 16}));
  EXPECT_EQ(tr.map5.shape(), (Shape{1, 1024, 16, 16}));
  EXPECT_EQ(tr.fused.shape(), (Shape{1, 2048}));
  EXPECT_EQ(tr.probs.shape(), (Shape{1, 22}));
}

TEST(ModelShapes, PlanMatchesDefaultSequence) {
  Model<float> model(ModelConfig{});
  std::vector<Shape> expected;
  const std::vector<std::size_t> sizes{224, 112, 56, 28, 14, 7, 4};
  const std::vector<std::size_t> widths{32, 64, 128, 256, 512, 1024};
  for (std::size_t i = 0; i < 6; ++i) {
    expected.push_back({widths[i], sizes[i], sizes[i]});
    expected.push_back({widths[i], sizes[i + 1], sizes[i + 1]});
  }
  expected.push_back({1024, 4, 4});
  expected.push_back({1024, 8, 8});
  expected.push_back({1024, 16, 16});
  expected.push_back({1024, 16, 16});
  expected.push_back({2048});
  auto plan = model.shape_plan();
  ASSERT_EQ(plan.size(), expected.size());
  for (std::size_t i = 0; i < plan.size(); ++i) EXPECT_EQ(plan[i].shape, expected[i]) << plan[i].stage;
}

TEST(ModelVariants, EncoderOnlyHasNoDecoder) {
  auto cfg = ModelConfig{};
  cfg.variant = Variant::encoder_only;
  Model<float> model(cfg);
  EXPECT_FALSE(model.has_decoder());
  EXPECT_EQ(model.fused_width(), 1024u);
  EXPECT_EQ(model.conv_layer_names().size(), 6u);
  for (const auto& p : model.parameters()) EXPECT_FALSE(p.name.starts_with("decoder")) << p.name;
}

TEST(ModelVariants, DecoderIUsesOneStage) {
  auto cfg = small_config(Variant::decoder_i);
  Model<float> model(cfg);
  auto tr = model.forward(image_batch(2, 16, 16, 3), Mode::infer);
  // 16 -> 8 -> 4 -> 2 bottleneck, one upsample stage -> 4x4.
  EXPECT_EQ(tr.pooled.shape(), (Shape{2, 16, 2, 2}));
  EXPECT_EQ(tr.map3.shape(), (Shape{2, 8, 4, 4}));
  EXPECT_EQ(tr.map5.shape(), (Shape{2, 8, 4, 4}));
  EXPECT_EQ(tr.fused.shape(), (Shape{2, 24}));
}

TEST(ModelBuild, DeterministicAndNamed) {
  Model<double> a(small_config()), b(small_config());
  auto other_cfg = small_config();
  other_cfg.seed = 6;
  Model<double> c(other_cfg);
  ASSERT_EQ(a.parameters().size(), b.parameters().size());
  bool any_differs = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    EXPECT_EQ(a.parameters()[i].name, b.parameters()[i].name);
    EXPECT_EQ(a.parameters()[i].value, b.parameters()[i].value);
    EXPECT_EQ(a.parameters()[i].name, c.parameters()[i].name);
    any_differs |= !(a.parameters()[i].value == c.parameters()[i].value);
  }
  EXPECT_TRUE(any_differs);
  EXPECT_NE(a.parameters().find("encoder.0.depthwise"), nullptr);
  EXPECT_NE(a.parameters().find("decoder.wide.pointwise"), nullptr);
  EXPECT_NE(a.parameters().find("head.weight"), nullptr);
}

TEST(ModelBuild, RejectsInvalidConfigs) {
  auto collapse = small_config();
  collapse.input_height = collapse.input_width = 4;
  collapse.encoder_widths = {2, 4, 8, 16};
  EXPECT_THROW(Model<float>{collapse}, InvalidConfig);
  auto order = small_config();
  order.encoder_widths = {8, 8};
  EXPECT_THROW(Model<float>{order}, InvalidConfig);
  auto kernel = small_config();
  kernel.decoder_kernel_b = 4;
  EXPECT_THROW(Model<float>{kernel}, InvalidConfig);
}

TEST(ModelConfigText, RoundTrips) {
  auto cfg = small_config(Variant::decoder_i);
  cfg.dropout_rate = 0.125;
  cfg.bn_order = BnOrder::conventional;
  EXPECT_EQ(ModelConfig::from_kv(KeyValues::parse(cfg.to_kv().to_text())), cfg);
}

TEST(EncoderForward, RejectsWrongInputShape) {
  Model<float> model(small_config());
  ForwardTrace<float> tr;
  Rng rng(0);
  EXPECT_THROW(model.encoder_forward(image_batch(1, 8, 8, 0), Mode::infer, rng, tr), ShapeMismatch);
}

TEST(EncoderForward, GateInUnitIntervalAndSignPreserved) {
  Model<double> model(small_config());
  for (auto& p : model.parameters()) {
    if (p.name.ends_with("bn.beta")) p.value = testing::random_tensor(p.value.shape(), 11, 1.0);
  }
  ForwardTrace<double> tr;
  Rng rng(0);
  Tensor<double> x = testing::random_tensor({2, 3, 16, 16}, 12, 1.0);
  auto [pooled, gated] = model.encoder_forward(x, Mode::infer, rng, tr);
  EXPECT_EQ(gated.shape(), pooled.shape());
  for (double g : tr.gate.data()) {
    EXPECT_GT(g, 0.0);
    EXPECT_LT(g, 1.0);
  }
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    EXPECT_EQ(pooled[i] > 0, gated[i] > 0);
    EXPECT_EQ(pooled[i] < 0, gated[i] < 0);
  }
}

TEST(EncoderForward, ZeroWeightsGiveConstantGate) {
  Model<double> model(small_config());
  const double beta = 0.7;
  for (auto& p : model.parameters()) {
    if (p.trainable) p.value.fill(0.0);
    if (p.name == "encoder.2.bn.beta") p.value.fill(beta);
  }
  ForwardTrace<double> tr;
  Rng rng(0);
  auto [pooled, gated] = model.encoder_forward(testing::random_tensor({1, 3, 16, 16}, 1), Mode::infer,
                                               rng, tr);
  const double g = 1.0 / (1.0 + std::exp(-beta));
  for (double v : pooled.data()) EXPECT_DOUBLE_EQ(v, beta);
  for (double v : tr.gate.data()) EXPECT_DOUBLE_EQ(v, g);
  for (std::size_t i = 0; i < gated.size(); ++i) EXPECT_EQ(gated[i], tr.gate[i / 4] * pooled[i]);
}

TEST(Latent, ReluOnFlattenedView) {
  Model<double> model(small_config());
  ForwardTrace<double> tr;
  Tensor<double> pos({1, 16, 2, 2}, 0.5);
  EXPECT_EQ(model.latent(pos, tr), pos);
  Tensor<double> neg({1, 16, 2, 2}, -0.5);
  auto zeroed = model.latent(neg, tr);
  for (double v : zeroed.data()) EXPECT_EQ(v, 0.0);
  auto mixed = testing::random_tensor({2, 16, 2, 2}, 4, 1.0);
  auto out = model.latent(mixed, tr);
  EXPECT_EQ(out.shape(), mixed.shape());
  for (std::size_t i = 0; i < mixed.size(); ++i) EXPECT_EQ(out[i], std::max(0.0, mixed[i]));
  EXPECT_THROW(model.latent(Tensor<double>({1, 8, 2, 2}), tr), ShapeMismatch);
}

TEST(FuseAndClassify, ZeroDecoderMapsLeaveEncoderPath) {
  Model<double> model(small_config());
  ForwardTrace<double> tr;
  auto pooled = testing::random_tensor({2, 16, 2, 2}, 8, 1.0);
  Tensor<double> zeros({2, 8, 4, 4});
  auto [probs, fused] = model.fuse_and_classify(pooled, &zeros, &zeros, tr);
  ASSERT_EQ(fused.shape(), (Shape{2, 24}));
  auto gap = global_average_pool(pooled);
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t c = 0; c < 16; ++c) EXPECT_DOUBLE_EQ(fused.at(n, c), gap[n * 16 + c]);
    for (std::size_t c = 16; c < 24; ++c) EXPECT_EQ(fused.at(n, c), 0.0);
    double row = 0;
    for (std::size_t k = 0; k < 3; ++k) row += probs.at(n, k);
    EXPECT_NEAR(row, 1.0, 1e-6);
  }
}

TEST(FuseAndClassify, DecoderVectorSumsBothBranches) {
  Model<double> model(small_config());
  ForwardTrace<double> tr;
  auto pooled = testing::random_tensor({1, 16, 2, 2}, 1);
  auto m3 = testing::random_tensor({1, 8, 4, 4}, 2);
  auto m5 = testing::random_tensor({1, 8, 4, 4}, 3);
  auto [probs, fused] = model.fuse_and_classify(pooled, &m3, &m5, tr);
  auto g3 = global_average_pool(m3), g5 = global_average_pool(m5);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_DOUBLE_EQ(fused.at(0, 16 + c), g3[c] + g5[c]);
}

// Training loss at initialization: batch statistics normalize every block, so
// the head sees near-zero features and the logits are near uniform.
TEST(ModelForward, InitialLossNearLogK) {
  Model<float> model(ModelConfig{});
  auto tr = model.forward(image_batch(2, 224, 224, 7), Mode::train, 1);
  const std::vector<std::size_t> labels{3, 17};
  EXPECT_NEAR(cross_entropy(tr.probs, labels), std::log(22.0), 0.2);
}

TEST(ModelForward, InferenceIsDeterministic) {
  Model<float> model(small_config());
  auto x = image_batch(3, 16, 16, 9);
  EXPECT_EQ(model.predict(x), model.predict(x));
}

TEST(ModelForward, TrainModeDropoutFollowsSeed) {
  Model<double> model(small_config());
  auto x = testing::random_tensor({2, 3, 16, 16}, 4, 1.0);
  EXPECT_EQ(model.forward(x, Mode::train, 1).logits, model.forward(x, Mode::train, 1).logits);
  EXPECT_FALSE(model.forward(x, Mode::train, 1).logits == model.forward(x, Mode::train, 2).logits);
}

TEST(ModelGradients, CoverEveryTrainableTensor) {
  Model<double> model(small_config());
  auto x = testing::random_tensor({2, 3, 16, 16}, 4, 1.0);
  const std::vector<std::size_t> labels{0, 2};
  model.loss_and_grads(x, labels, 3);
  for (const auto& p : model.parameters()) {
    double norm = 0;
    for (double g : p.grad.data()) norm += g * g;
    if (p.trainable) EXPECT_GT(norm, 0.0) << p.name;
    else EXPECT_EQ(norm, 0.0) << p.name;
  }
  EXPECT_THROW(model.loss_and_grads(x, std::vector<std::size_t>{0, 3}, 3), InvalidLabel);
}

TEST(ParamCount, DefaultMatchesHandCount) {
  Model<float> model(ModelConfig{});
  auto rows = model.count_params();
  const std::vector<std::size_t> widths{32, 64, 128, 256, 512, 1024};
  std::size_t expected = 0, cin = 3;
  for (std::size_t w : widths) {
    expected += sepconv_trainable(cin, w, 3);
    cin = w;
  }
  EXPECT_EQ(expected, 713'467u);
  expected += 2 * sepconv_trainable(1024, 1024, 3) + sepconv_trainable(1024, 1024, 5);
  expected += 2048 * 22 + 22;
  EXPECT_EQ(expected, 3'957'521u);

  std::size_t trainable = 0, frozen = 0;
  for (const auto& r : rows) {
    trainable += r.trainable;
    frozen += r.non_trainable;
  }
  EXPECT_EQ(trainable, expected);
  EXPECT_EQ(frozen, 2u * (32 + 64 + 128 + 256 + 512 + 1024 + 3 * 1024));
  EXPECT_EQ(rows.back().layer, "head");
  EXPECT_EQ(rows.back().trainable, 45'078u);
  EXPECT_EQ(rows[5].trainable, 531'968u);
}

TEST(ParamCount, SelfConsistentWithStoredTensors) {
  for (auto v : {Variant::encoder_only, Variant::decoder_i, Variant::full}) {
    auto cfg = ModelConfig{};
    cfg.variant = v;
    Model<float> model(cfg);
    std::size_t trainable = 0, frozen = 0;
    for (const auto& r : model.count_params()) {
      trainable += r.trainable;
      frozen += r.non_trainable;
    }
    EXPECT_EQ(trainable, model.parameters().trainable_count());
    EXPECT_EQ(frozen, model.parameters().non_trainable_count());
  }
}

TEST(FlopCount, ToyConfigHandCount) {
  ModelConfig cfg;
  cfg.input_height = cfg.input_width = 8;
  cfg.encoder_widths = {4, 8};
  cfg.num_classes = 2;
  cfg.variant = Variant::encoder_only;
  Model<float> model(cfg);
  auto rows = model.count_flops();
  ASSERT_EQ(rows.size(), 3u);
  // 8x8: dw 9*3*64 + pw 3*4*64; 4x4: dw 9*4*16 + pw 4*8*16; head 8*2.
  EXPECT_EQ(rows[0].macs, 1728u + 768u);
  EXPECT_EQ(rows[1].macs, 576u + 512u);
  EXPECT_EQ(rows[2].macs, 16u);
  std::size_t flops = 0;
  for (const auto& r : rows) flops += r.flops();
  EXPECT_EQ(flops, 7200u);
}

TEST(FlopCount, DoublingResolutionQuadruplesConvolutions) {
  ModelConfig lo;
  lo.input_height = lo.input_width = 256;
  ModelConfig hi = lo;
  hi.input_height = hi.input_width = 512;
  Model<float> a(lo), b(hi);
  EXPECT_EQ(a.parameters().trainable_count(), b.parameters().trainable_count());
  auto ra = a.count_flops(), rb = b.count_flops();
  std::size_t conv_a = 0, conv_b = 0;
  for (std::size_t i = 0; i + 1 < ra.size(); ++i) {
    EXPECT_EQ(rb[i].macs, 4 * ra[i].macs) << ra[i].layer;
    conv_a += ra[i].macs;
    conv_b += rb[i].macs;
  }
  EXPECT_EQ(ra.back().macs, rb.back().macs);
  EXPECT_EQ(conv_b, 4 * conv_a);
}

}  // namespace
}  // namespace clap
