#pragma once

#include <array>
#include <string>

#include "conformer/common.hpp"

namespace conformer {

enum class Sampling { avgpool, maxpool, conv, attention };

const char* sampling_name(Sampling s);
Sampling sampling_from_name(const std::string& name);

// Which parts of the dual network exist. The degenerations keep the stem and
// one branch: cnn_only drops patch embed/class token/transformer/FCUs,
// transformer_only drops every bottleneck and the FCUs.
enum class Branch { full, cnn_only, transformer_only };

const char* branch_name(Branch b);
Branch branch_from_name(const std::string& name);

struct StemConfig {
  int kernel = 7;
  int stride = 2;
  bool pool = true;        // 3x3 stride-2 max pool after the conv
  int out_channels = 64;
};

// Model architecture description. Loaded from JSON with snake_case keys;
// unknown keys are rejected so typos cannot silently fall back to defaults.
struct ConformerConfig {
  int input_size = 224;
  StemConfig stem;
  std::array<int, 4> blocks_per_stage{4, 4, 3, 1};
  int n_c = 2;                                    // bottlenecks per fused block
  std::array<int, 4> stage_mid_channels{64, 128, 256, 256};
  std::array<int, 4> stage_out_channels{256, 512, 1024, 1024};
  int embed_dim = 384;
  int num_heads = 6;
  int patch_stride = 4;                           // on the stem feature map
  int fusion_interval = 1;                        // block i couples iff i>=2 and (i-1)%k==0
  Sampling sampling = Sampling::avgpool;
  bool positional_embeddings = false;
  int num_classes = 1000;
  bool fcu_activation = true;
  Branch branch = Branch::full;

  // Throws ConfigError when fields are inconsistent (non-divisible
  // resolutions, bad head split, coupling without a second bottleneck, ...).
  void validate() const;
  // Same geometry checks for an actual input side length; with positional
  // embeddings enabled only the native input_size passes.
  void validate_input(int input) const;

  int total_blocks() const;
  int stage_of_block(int block) const;            // block is 1-based
  bool block_coupled(int block) const;
  bool first_block_of_stage(int block) const;
  // Side length of the stem output for a given input size.
  int stem_map(int input) const;
  // Patch grid side; token count is grid^2 + 1.
  int patch_grid() const { return stem_map(input_size) / patch_stride; }
  // CNN feature map side in a given stage (1-based) for a given input size.
  int stage_resolution(int stage, int input) const;

  std::string to_json_string() const;
  static ConformerConfig from_json_string(const std::string& text);
  static ConformerConfig load(const std::string& path);
};

// Copy of cfg with the branch replaced; idempotent per target branch.
ConformerConfig degenerate(const ConformerConfig& cfg, Branch which);

}  // namespace conformer
