#include <gtest/gtest.h>

#include "support/layer_gradchecks.hpp"

namespace clap {
namespace {

TEST(GradientCheck, EveryLayerPrimitive) {
  for (const auto& r : testing::layer_gradient_checks()) {
    EXPECT_LT(r.max_error, 1e-4) << r.name;
  }
}

TEST(GradientCheck, ReducedFullModel) {
  EXPECT_LT(testing::model_gradient_error(Variant::full), 1e-4);
}

TEST(GradientCheck, ReducedDecoderIModel) {
  EXPECT_LT(testing::model_gradient_error(Variant::decoder_i), 1e-4);
}

TEST(GradientCheck, ReducedEncoderOnlyModel) {
  EXPECT_LT(testing::model_gradient_error(Variant::encoder_only), 1e-4);
}

TEST(GradientCheck, ConventionalNormalizationOrder) {
  EXPECT_LT(testing::model_gradient_error(Variant::full, BnOrder::conventional), 1e-4);
}

}  // namespace
}  // namespace clap
