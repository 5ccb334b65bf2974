#include "doctest.h"

#include <random>

#include "cpn/error.hpp"
#include "cpn/network.hpp"

using namespace cpn;
using namespace cpn::net;

namespace {

NetworkConfig small_config(double scale = 0.25) {
  NetworkConfig cfg;
  cfg.channel_scale = scale;
  cfg.input_size = 64;
  cfg.edge_map_size = 8;
  cfg.corr_displacement_radius = 3;
  return cfg;
}

const LayerSpec& find(const std::vector<LayerSpec>& layers, const std::string& name) {
  for (const auto& l : layers)
    if (l.name == name) return l;
  FAIL("missing layer " << name);
  return layers.front();
}

TensorF random_image(std::size_t n, std::size_t c, std::size_t side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  TensorF t(Shape{n, c, side, side});
  for (auto& v : t.data()) v = u(rng);
  return t;
}

}  // namespace

TEST_CASE("full-width layer shapes follow FlowNet") {
  NetworkConfig cfg;
  cfg.channel_scale = 1.0;
  const auto layers = layer_inventory(cfg);
  CHECK(find(layers, "netc.conv1").weight_shape() == Shape{64, 3, 7, 7});
  CHECK(find(layers, "netc.conv3").weight_shape() == Shape{256, 128, 5, 5});
  // 21 x 21 correlation channels plus a 32-channel redirect.
  CHECK(find(layers, "netc.conv3_1").weight_shape() == Shape{256, 441 + 32, 3, 3});
  CHECK(find(layers, "nets1.conv1").weight_shape() == Shape{64, 12, 7, 7});
  CHECK(find(layers, "nets1.conv6_1").weight_shape() == Shape{1024, 1024, 3, 3});
  // Transposed kernels are stored in x out.
  CHECK(find(layers, "nets1.deconv5").weight_shape() == Shape{1024, 512, 4, 4});
  CHECK(find(layers, "nets1.predict_flow5").weight_shape() == Shape{2, 512 + 512 + 2, 3, 3});
  CHECK(find(layers, "nets1.predict_flow2").weight_shape() == Shape{2, 128 + 64 + 2, 3, 3});
  CHECK_FALSE(find(layers, "nets1.upsampled_flow6_to_5").bias);
  CHECK(find(layers, "nets2.side6").weight_shape() == Shape{1, 1024, 1, 1});
  CHECK(find(layers, "nets2.side3").weight_shape() == Shape{1, 256 + 128 + 2, 1, 1});
  CHECK(find(layers, "nets2.fuse").weight_shape() == Shape{1, 4, 1, 1});
  // The edge network stops at the stride-8 stage.
  for (const auto& l : layers) CHECK(l.name != "nets2.predict_flow2");
}

TEST_CASE("parameter count is the sum over the inventory") {
  const NetworkConfig cfg = small_config();
  std::size_t expected = 0;
  for (const auto& l : layer_inventory(cfg)) expected += l.weight_shape().numel() + (l.bias ? l.out_channels : 0);
  CHECK(init_weights(cfg, 1).parameter_count() == expected);
  CHECK(zero_weights(cfg).parameter_count() == expected);
}

TEST_CASE("configuration validation") {
  NetworkConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.edge_map_size = 100;
  CHECK_THROWS_AS(cfg.validate(), ShapeError);
  cfg = NetworkConfig{};
  cfg.channel_scale = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ShapeError);
  cfg = NetworkConfig{};
  cfg.input_size = 1000;
  cfg.edge_map_size = 125;
  CHECK_THROWS_AS(cfg.validate(), ShapeError);
}

TEST_CASE("initialisation is deterministic in the seed") {
  const NetworkConfig cfg = small_config();
  CHECK(init_weights(cfg, 5) == init_weights(cfg, 5));
  CHECK_FALSE(init_weights(cfg, 5) == init_weights(cfg, 6));
}

TEST_CASE("check_weights names the first offending entry") {
  const NetworkConfig cfg = small_config();
  NetworkWeights w = init_weights(cfg, 1);
  CHECK_NOTHROW(check_weights(w, cfg));

  NetworkConfig wider = cfg;
  wider.channel_scale = 0.5;
  try {
    check_weights(w, wider);
    FAIL("expected a shape mismatch");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("shape mismatch in layer netc.conv1.weight") != std::string::npos);
  }

  NetworkWeights truncated;
  for (const auto& [name, t] : w)
    if (name != "nets2.fuse.bias") truncated.add(name, t);
  try {
    check_weights(truncated, cfg);
    FAIL("expected a missing parameter");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("nets2.fuse.bias") != std::string::npos);
  }
}

TEST_CASE("cascade output shapes") {
  const NetworkConfig cfg = small_config();
  const NetworkWeights w = init_weights(cfg, 3);
  const TensorF ref = random_image(2, 3, 64, 1), def = random_image(2, 3, 64, 2);
  const CascadeResult r = crackpropnet_forward(cfg, w, ref, def);
  CHECK(r.flow1.shape() == Shape{2, 2, 64, 64});
  CHECK(r.flow2.shape() == Shape{2, 2, 64, 64});
  CHECK(r.edge_prob.shape() == Shape{2, 1, 8, 8});
  for (float p : r.edge_prob.data()) {
    CHECK(p > 0.0f);
    CHECK(p < 1.0f);
  }
  CHECK(r.flow1.all_finite());
  CHECK(r.flow2.all_finite());
}

TEST_CASE("batch members are independent") {
  const NetworkConfig cfg = small_config();
  const NetworkWeights w = init_weights(cfg, 3);
  const TensorF ref = random_image(2, 3, 64, 1), def = random_image(2, 3, 64, 2);
  const CascadeResult both = crackpropnet_forward(cfg, w, ref, def);

  TensorF ref1(Shape{1, 3, 64, 64}), def1(Shape{1, 3, 64, 64});
  const std::size_t plane = 3 * 64 * 64;
  std::copy_n(ref.ptr() + plane, plane, ref1.ptr());
  std::copy_n(def.ptr() + plane, plane, def1.ptr());
  const CascadeResult one = crackpropnet_forward(cfg, w, ref1, def1);
  for (std::size_t i = 0; i < 64; ++i) CHECK(one.edge_prob[i] == doctest::Approx(both.edge_prob[64 + i]).epsilon(1e-5));
}

TEST_CASE("sub-network entry points agree with the cascade") {
  const NetworkConfig cfg = small_config();
  const NetworkWeights w = init_weights(cfg, 9);
  const TensorF ref = random_image(1, 3, 64, 4), def = random_image(1, 3, 64, 5);
  const CascadeResult r = crackpropnet_forward(cfg, w, ref, def);
  const TensorF flow1 = flownet_c_forward(cfg, w, ref, def);
  REQUIRE(flow1.shape() == r.flow1.shape());
  for (std::size_t i = 0; i < flow1.size(); ++i) CHECK(flow1[i] == r.flow1[i]);

  Tape<float> tape;
  CascadeBuilder b(cfg, w, tape);
  const VarId stacked = b.stack_inputs(tape.constant(ref), tape.constant(def), tape.constant(flow1));
  CHECK(tape.value(stacked).shape() == Shape{1, kStackedChannels, 64, 64});
  const TensorF flow2 = flownet_s_forward(cfg, w, tape.value(stacked));
  for (std::size_t i = 0; i < flow2.size(); ++i) CHECK(flow2[i] == r.flow2[i]);
}

TEST_CASE("edge head fuses four strides") {
  const NetworkConfig cfg = small_config(1.0);
  NetworkWeights w = zero_weights(cfg);
  // Only side3 responds, with unit weight on its first channel; fuse averages.
  w.at("nets2.side3.weight")[0] = 1.0f;
  w.at("nets2.fuse.weight").fill(0.25f);
  const TensorF f6(Shape{1, 1024, 1, 1}), f5(Shape{1, 512 + 512 + 2, 2, 2}), f4(Shape{1, 512 + 256 + 2, 4, 4});
  TensorF f3(Shape{1, 256 + 128 + 2, 8, 8});
  f3.at(0, 0, 2, 3) = 8.0f;
  const TensorF feats[] = {f6, f5, f4, f3};
  const TensorF p = edge_head_forward(cfg, w, feats);
  REQUIRE(p.shape() == Shape{1, 1, 8, 8});
  CHECK(p.at(0, 0, 2, 3) == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))));
  CHECK(p.at(0, 0, 0, 0) == doctest::Approx(0.5));
}

TEST_CASE("inputs must be multiples of 64") {
  const NetworkConfig cfg = small_config();
  const NetworkWeights w = init_weights(cfg, 3);
  CHECK_THROWS_AS(crackpropnet_forward(cfg, w, random_image(1, 3, 48, 1), random_image(1, 3, 48, 2)), ShapeError);
}
