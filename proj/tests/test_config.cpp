#include <string>
#include <vector>

#include "conformer/config.hpp"
#include "doctest.h"

using namespace conformer;

TEST_SUITE_BEGIN("config");

TEST_CASE("defaults validate and survive a json round trip") {
  ConformerConfig c;
  c.validate();
  ConformerConfig d = ConformerConfig::from_json_string(c.to_json_string());
  CHECK(d.input_size == c.input_size);
  CHECK(d.stem.kernel == c.stem.kernel);
  CHECK(d.blocks_per_stage == c.blocks_per_stage);
  CHECK(d.stage_mid_channels == c.stage_mid_channels);
  CHECK(d.stage_out_channels == c.stage_out_channels);
  CHECK(d.embed_dim == c.embed_dim);
  CHECK(d.num_heads == c.num_heads);
  CHECK(d.patch_stride == c.patch_stride);
  CHECK(d.fusion_interval == c.fusion_interval);
  CHECK(d.sampling == c.sampling);
  CHECK(d.positional_embeddings == c.positional_embeddings);
  CHECK(d.num_classes == c.num_classes);
  CHECK(d.fcu_activation == c.fcu_activation);
}

TEST_CASE("shipped configs load and validate") {
  const std::string dir = std::string(CONFORMER_SOURCE_DIR) + "/configs/";
  ConformerConfig ti = ConformerConfig::load(dir + "conformer_ti.json");
  CHECK(ti.stage_mid_channels[0] == 16);
  CHECK(ti.embed_dim == 384);

  ConformerConfig s = ConformerConfig::load(dir + "conformer_s.json");
  CHECK(s.stage_mid_channels[0] == 64);
  CHECK(s.stage_out_channels[3] == 1024);
  CHECK(s.total_blocks() == 12);

  ConformerConfig s32 = ConformerConfig::load(dir + "conformer_s32.json");
  CHECK(s32.patch_stride == 8);
  CHECK(s32.patch_grid() == 7);

  ConformerConfig b = ConformerConfig::load(dir + "conformer_b.json");
  CHECK(b.embed_dim == 576);
  CHECK(b.num_heads == 9);

  ConformerConfig micro = ConformerConfig::load(dir + "micro.json");
  CHECK(micro.input_size == 64);
  CHECK(micro.total_blocks() == 5);
  CHECK(micro.num_classes == 4);
  CHECK(micro.patch_grid() == 4);
}

TEST_CASE("geometry helpers") {
  ConformerConfig c;  // 224, stem 7/2 + pool, patch stride 4
  CHECK(c.stem_map(224) == 56);
  CHECK(c.patch_grid() == 14);
  CHECK(c.stage_resolution(1, 224) == 56);
  CHECK(c.stage_resolution(2, 224) == 28);
  CHECK(c.stage_resolution(3, 224) == 14);
  CHECK(c.stage_resolution(4, 224) == 7);
  CHECK(c.stem_map(112) == 28);

  ConformerConfig m;
  m.input_size = 64;
  m.stem.kernel = 3;
  m.stem.out_channels = 16;
  CHECK(m.stem_map(64) == 16);
  CHECK(m.stage_resolution(1, 64) == 16);
  CHECK(m.stage_resolution(4, 64) == 2);

  ConformerConfig np = c;
  np.stem.pool = false;
  CHECK(np.stem_map(224) == 112);
}

TEST_CASE("stage and coupling bookkeeping") {
  ConformerConfig c;  // blocks 4,4,3,1
  CHECK(c.total_blocks() == 12);
  CHECK(c.stage_of_block(1) == 1);
  CHECK(c.stage_of_block(4) == 1);
  CHECK(c.stage_of_block(5) == 2);
  CHECK(c.stage_of_block(8) == 2);
  CHECK(c.stage_of_block(9) == 3);
  CHECK(c.stage_of_block(11) == 3);
  CHECK(c.stage_of_block(12) == 4);
  CHECK_THROWS_AS(c.stage_of_block(13), ConfigError);

  CHECK(c.first_block_of_stage(1));
  CHECK_FALSE(c.first_block_of_stage(2));
  CHECK(c.first_block_of_stage(5));
  CHECK(c.first_block_of_stage(9));
  CHECK(c.first_block_of_stage(12));

  // fusion interval 1: every block from 2 on couples
  CHECK_FALSE(c.block_coupled(1));
  for (int b = 2; b <= 12; ++b) CHECK(c.block_coupled(b));

  ConformerConfig k2 = c;
  k2.fusion_interval = 2;
  std::vector<int> coupled2;
  for (int b = 1; b <= 12; ++b)
    if (k2.block_coupled(b)) coupled2.push_back(b);
  CHECK(coupled2 == std::vector<int>{3, 5, 7, 9, 11});

  ConformerConfig k4 = c;
  k4.fusion_interval = 4;
  std::vector<int> coupled4;
  for (int b = 1; b <= 12; ++b)
    if (k4.block_coupled(b)) coupled4.push_back(b);
  CHECK(coupled4 == std::vector<int>{5, 9});
}

TEST_CASE("unknown keys are rejected") {
  ConformerConfig c;
  std::string good = c.to_json_string();
  CHECK_NOTHROW(ConformerConfig::from_json_string(good));

  std::string bad = good;
  bad.insert(bad.find('{') + 1, "\"embed_dims\": 7,");
  CHECK_THROWS_AS(ConformerConfig::from_json_string(bad), ConfigError);

  std::string bad_stem = good;
  auto pos = bad_stem.find("\"kernel\"");
  bad_stem.insert(pos, "\"kernle\": 7, ");
  CHECK_THROWS_AS(ConformerConfig::from_json_string(bad_stem), ConfigError);
}

TEST_CASE("missing and malformed fields are rejected") {
  CHECK_THROWS_AS(ConformerConfig::from_json_string("not json"), ConfigError);
  CHECK_THROWS_AS(ConformerConfig::from_json_string("[1,2]"), ConfigError);
  // missing num_classes
  CHECK_THROWS_AS(ConformerConfig::from_json_string(R"({
    "input_size": 224, "blocks_per_stage": [4,4,3,1], "n_c": 2,
    "stage_mid_channels": [64,128,256,256], "stage_out_channels": [256,512,1024,1024],
    "embed_dim": 384, "num_heads": 6, "patch_stride": 4})"),
                  ConfigError);
  // wrong arity
  CHECK_THROWS_AS(ConformerConfig::from_json_string(R"({
    "input_size": 224, "blocks_per_stage": [4,4,3], "n_c": 2,
    "stage_mid_channels": [64,128,256,256], "stage_out_channels": [256,512,1024,1024],
    "embed_dim": 384, "num_heads": 6, "patch_stride": 4, "num_classes": 10})"),
                  ConfigError);
  // wrong type
  CHECK_THROWS_AS(ConformerConfig::from_json_string(R"({
    "input_size": "big", "blocks_per_stage": [4,4,3,1], "n_c": 2,
    "stage_mid_channels": [64,128,256,256], "stage_out_channels": [256,512,1024,1024],
    "embed_dim": 384, "num_heads": 6, "patch_stride": 4, "num_classes": 10})"),
                  ConfigError);
  CHECK_THROWS_AS(sampling_from_name("bilinear"), ConfigError);
  CHECK(sampling_from_name("maxpool") == Sampling::maxpool);
  CHECK(std::string(sampling_name(Sampling::attention)) == "attention");
}

TEST_CASE("validate rejects inconsistent geometry") {
  ConformerConfig c;
  c.embed_dim = 385;  // not divisible by 6 heads
  CHECK_THROWS_AS(c.validate(), ConfigError);

  ConformerConfig d;
  d.patch_stride = 5;  // 56 % 5 != 0
  CHECK_THROWS_AS(d.validate(), ConfigError);

  ConformerConfig e;
  e.n_c = 1;  // coupling needs a second bottleneck
  CHECK_THROWS_AS(e.validate(), ConfigError);

  ConformerConfig f;
  f.num_classes = 1;
  CHECK_THROWS_AS(f.validate(), ConfigError);

  ConformerConfig g;
  g.stem.kernel = 4;  // even kernel
  CHECK_THROWS_AS(g.validate(), ConfigError);

  ConformerConfig h;
  h.fusion_interval = 0;
  CHECK_THROWS_AS(h.validate(), ConfigError);
}

TEST_CASE("load reports a missing file") {
  CHECK_THROWS_AS(ConformerConfig::load("/nonexistent/nope.json"), IoError);
}

TEST_SUITE_END();
