#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <string>

#include "support/checkpoint_writer.hpp"
#include "support/fixtures.hpp"
#include "vitcam/checkpoint.hpp"
#include "vitcam/weights.hpp"

using namespace vitcam;
using namespace vitcam::testing;

namespace {

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

template <typename E>
std::string error_of(const std::filesystem::path& p) {
  try {
    load_checkpoint(p);
  } catch (const E& e) {
    return e.what();
  } catch (const std::exception& e) {
    ADD_FAILURE() << "wrong exception type: " << e.what();
    return {};
  }
  ADD_FAILURE() << "no exception";
  return {};
}

void expect_bit_equal(const ViTWeights<float>& a, const ViTWeights<float>& b) {
  std::vector<const Tensor<float>*> ta, tb;
  for_each_tensor(a, [&](const std::string&, const Tensor<float>& t) { ta.push_back(&t); });
  for_each_tensor(b, [&](const std::string&, const Tensor<float>& t) { tb.push_back(&t); });
  ASSERT_EQ(ta.size(), tb.size());
  for (std::size_t i = 0; i < ta.size(); ++i) {
    ASSERT_EQ(ta[i]->shape(), tb[i]->shape());
    EXPECT_EQ(std::memcmp(ta[i]->data().data(), tb[i]->data().data(), ta[i]->size() * 4), 0);
  }
}

}  // namespace

TEST(CheckpointTest, F32RoundTripIsBitExact) {
  const auto dir = scratch_dir("ckpt_roundtrip");
  auto w = random_weights<float>(tiny_config(), 1);
  w.image_mean = {0.485, 0.456, 0.406};
  w.image_std = {0.229, 0.224, 0.225};
  w.class_names = {"a", "b", "c", "d", "e"};
  write_checkpoint(dir / "m.ckpt", w);
  const auto got = load_checkpoint(dir / "m.ckpt");
  expect_bit_equal(w, got);
  EXPECT_EQ(got.config.depth, 3u);
  EXPECT_EQ(got.config.heads, 2u);
  EXPECT_EQ(got.config.image_side, 8u);
  EXPECT_EQ(got.image_mean, w.image_mean);
  EXPECT_EQ(got.image_std, w.image_std);
  EXPECT_EQ(got.class_names, w.class_names);
}

TEST(CheckpointTest, HalfPrecisionWidensToNearestValue) {
  const auto dir = scratch_dir("ckpt_half");
  const auto w = random_weights<float>(tiny_config(), 2);
  write_checkpoint(dir / "h.ckpt", w, DType::f16);
  write_checkpoint(dir / "b.ckpt", w, DType::bf16);
  write_checkpoint(dir / "d.ckpt", w, DType::f64);
  const auto h = load_checkpoint(dir / "h.ckpt");
  const auto b = load_checkpoint(dir / "b.ckpt");
  expect_bit_equal(w, load_checkpoint(dir / "d.ckpt"));
  std::vector<std::pair<float, float>> pairs;
  std::vector<float> orig, hv, bv;
  for_each_tensor(w, [&](const std::string&, const Tensor<float>& t) { orig.insert(orig.end(), t.data().begin(), t.data().end()); });
  for_each_tensor(h, [&](const std::string&, const Tensor<float>& t) { hv.insert(hv.end(), t.data().begin(), t.data().end()); });
  for_each_tensor(b, [&](const std::string&, const Tensor<float>& t) { bv.insert(bv.end(), t.data().begin(), t.data().end()); });
  ASSERT_EQ(orig.size(), hv.size());
  for (std::size_t i = 0; i < orig.size(); ++i) {
    EXPECT_NEAR(hv[i], orig[i], std::abs(orig[i]) * 1.0 / 2048 + 1e-7);
    EXPECT_EQ(bv[i], std::bit_cast<float>(std::bit_cast<std::uint32_t>(orig[i]) & 0xffff0000u));
  }
}

TEST(CheckpointTest, HalfDecodeSpecialValues) {
  EXPECT_EQ(half_to_float(0x3c00), 1.0f);
  EXPECT_EQ(half_to_float(0xc000), -2.0f);
  EXPECT_EQ(half_to_float(0x0001), std::ldexp(1.0f, -24));
  EXPECT_EQ(half_to_float(0x7bff), 65504.0f);
  EXPECT_TRUE(std::isinf(half_to_float(0x7c00)));
  EXPECT_TRUE(std::isnan(half_to_float(0x7e00)));
  EXPECT_TRUE(std::signbit(half_to_float(0x8000)));
}

TEST(CheckpointTest, DeletedTensorIsNamed) {
  const auto dir = scratch_dir("ckpt_deleted");
  auto img = make_container(random_weights<float>(tiny_config(), 3));
  img.header.erase("blocks.1.mlp.fc2.bias");
  write_bytes(dir / "m.ckpt", serialize(img));
  const auto msg = error_of<ValidationError>(dir / "m.ckpt");
  EXPECT_TRUE(contains(msg, "blocks.1.mlp.fc2.bias")) << msg;
}

TEST(CheckpointTest, OffsetPastEndIsFormatError) {
  const auto dir = scratch_dir("ckpt_offset");
  auto img = make_container(random_weights<float>(tiny_config(), 4));
  const std::uint64_t end = img.payload.size();
  img.header["head.bias"]["data_offsets"] = {end, end + 20};
  write_bytes(dir / "m.ckpt", serialize(img));
  error_of<FormatError>(dir / "m.ckpt");
}

TEST(CheckpointTest, OverlappingOffsetsAreFormatError) {
  const auto dir = scratch_dir("ckpt_overlap");
  auto img = make_container(random_weights<float>(tiny_config(), 5));
  img.header["head.bias"]["data_offsets"] = img.header["norm.bias"]["data_offsets"];
  img.header["head.bias"]["shape"] = img.header["norm.bias"]["shape"];
  write_bytes(dir / "m.ckpt", serialize(img));
  error_of<FormatError>(dir / "m.ckpt");
}

TEST(CheckpointTest, UnknownDtypeIsFormatError) {
  const auto dir = scratch_dir("ckpt_dtype");
  auto img = make_container(random_weights<float>(tiny_config(), 6));
  img.header["cls_token"]["dtype"] = "I32";
  write_bytes(dir / "m.ckpt", serialize(img));
  EXPECT_TRUE(contains(error_of<FormatError>(dir / "m.ckpt"), "I32"));
}

TEST(CheckpointTest, TruncatedPayloadIsNamedValidationError) {
  const auto dir = scratch_dir("ckpt_trunc");
  auto img = make_container(random_weights<float>(tiny_config(), 7));
  auto offs = img.header["pos_embed"]["data_offsets"];
  img.header["pos_embed"]["data_offsets"] = {offs[0].get<std::uint64_t>(), offs[1].get<std::uint64_t>() - 4};
  write_bytes(dir / "m.ckpt", serialize(img));
  EXPECT_TRUE(contains(error_of<ValidationError>(dir / "m.ckpt"), "pos_embed"));
}

TEST(CheckpointTest, ShortFileAndBadHeader) {
  const auto dir = scratch_dir("ckpt_short");
  write_bytes(dir / "a.ckpt", {1, 2, 3});
  error_of<FormatError>(dir / "a.ckpt");
  std::vector<unsigned char> bad(8 + 5, 0);
  bad[0] = 5;
  std::memcpy(bad.data() + 8, "{nope", 5);
  write_bytes(dir / "b.ckpt", bad);
  error_of<FormatError>(dir / "b.ckpt");
  std::vector<unsigned char> huge(16, 0);
  huge[0] = 0xff;
  huge[1] = 0xff;
  write_bytes(dir / "c.ckpt", huge);
  error_of<FormatError>(dir / "c.ckpt");
}

TEST(CheckpointTest, MissingFileIsIoError) {
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/model.ckpt"), IoError);
}

TEST(CheckpointTest, UnexpectedTensorRejected) {
  const auto dir = scratch_dir("ckpt_extra");
  auto img = make_container(random_weights<float>(tiny_config(), 8));
  const std::uint64_t end = img.payload.size();
  img.payload.resize(end + 4);
  img.header["extra.scale"] = {{"dtype", "F32"}, {"shape", {1}}, {"data_offsets", {end, end + 4}}};
  write_bytes(dir / "m.ckpt", serialize(img));
  EXPECT_TRUE(contains(error_of<ValidationError>(dir / "m.ckpt"), "extra.scale"));
}

TEST(CheckpointTest, MetadataAsJsonStrings) {
  const auto dir = scratch_dir("ckpt_strmeta");
  const auto w = random_weights<float>(tiny_config(), 9);
  auto img = make_container(w);
  img.header[kMetadataKey] = {{"num_classes", "5"},
                              {"num_heads", "2"},
                              {"image_mean", "[0.1, 0.2, 0.3]"},
                              {"image_std", "[0.5, 0.5, 0.5]"}};
  write_bytes(dir / "m.ckpt", serialize(img));
  const auto got = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(got.image_mean[2], 0.3);
  EXPECT_EQ(got.config.heads, 2u);
}

TEST(CheckpointTest, MetadataClassCountMismatch) {
  const auto dir = scratch_dir("ckpt_meta_classes");
  auto img = make_container(random_weights<float>(tiny_config(), 10));
  img.header[kMetadataKey]["num_classes"] = 7;
  write_bytes(dir / "m.ckpt", serialize(img));
  EXPECT_TRUE(contains(error_of<ValidationError>(dir / "m.ckpt"), "num_classes"));
}

TEST(CheckpointTest, LoadingIsIdempotent) {
  const auto dir = scratch_dir("ckpt_idem");
  write_checkpoint(dir / "m.ckpt", random_weights<float>(tiny_config(), 11));
  const auto before = std::filesystem::last_write_time(dir / "m.ckpt");
  const auto a = load_checkpoint(dir / "m.ckpt");
  const auto b = load_checkpoint(dir / "m.ckpt");
  expect_bit_equal(a, b);
  EXPECT_EQ(std::filesystem::last_write_time(dir / "m.ckpt"), before);
}

TEST(ValidateWeightsTest, CorrectSetHasNoViolations) {
  const auto cfg = tiny_config();
  EXPECT_TRUE(validate_weights(random_weights<float>(cfg, 12), cfg).empty());
}

TEST(ValidateWeightsTest, CanonicalViTBaseShapes) {
  const auto specs = canonical_tensor_specs(vit_base_config(1000));
  std::map<std::string, Shape> by_name;
  for (const auto& s : specs) by_name[s.name] = s.shape;
  EXPECT_EQ(specs.size(), 4u + 12u * 12u + 4u);
  EXPECT_EQ(by_name["patch_embed.proj.weight"], (Shape{768, 768}));
  EXPECT_EQ(by_name["pos_embed"], (Shape{197, 768}));
  EXPECT_EQ(by_name["blocks.11.attn.qkv.weight"], (Shape{2304, 768}));
  EXPECT_EQ(by_name["blocks.0.mlp.fc2.weight"], (Shape{768, 3072}));
  EXPECT_EQ(by_name["head.weight"], (Shape{1000, 768}));
}

TEST(ValidateWeightsTest, HeadRowMismatchIsOneViolation) {
  const auto cfg = tiny_config();
  auto w = random_weights<float>(cfg, 13);
  w.head_weight = Tensor<float>({cfg.num_classes + 1, cfg.width});
  const auto v = validate_weights(w, cfg);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_TRUE(contains(v[0], "head.weight"));
}

TEST(ValidateWeightsTest, WidthNotDivisibleByHeads) {
  auto cfg = tiny_config();
  cfg.heads = 3;
  const auto v = cfg.violations();
  ASSERT_FALSE(v.empty());
  EXPECT_TRUE(contains(v[0], "divisible"));
  EXPECT_FALSE(validate_weights(random_weights<float>(tiny_config(), 14), cfg).empty());
}

TEST(ValidateWeightsTest, AggregatesAllViolations) {
  const auto cfg = tiny_config();
  auto w = random_weights<float>(cfg, 15);
  w.cls_token = Tensor<float>({2, cfg.width});
  w.blocks[0].fc1_bias[3] = NAN;
  w.blocks[2].qkv_weight = Tensor<float>();
  EXPECT_GE(validate_weights(w, cfg).size(), 3u);
}
