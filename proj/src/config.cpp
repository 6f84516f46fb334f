#include "conformer/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace conformer {

using nlohmann::json;

const char* sampling_name(Sampling s) {
  switch (s) {
    case Sampling::avgpool: return "avgpool";
    case Sampling::maxpool: return "maxpool";
    case Sampling::conv: return "conv";
    case Sampling::attention: return "attention";
  }
  return "?";
}

Sampling sampling_from_name(const std::string& name) {
  if (name == "avgpool") return Sampling::avgpool;
  if (name == "maxpool") return Sampling::maxpool;
  if (name == "conv") return Sampling::conv;
  if (name == "attention") return Sampling::attention;
  throw ConfigError("unknown sampling strategy '" + name +
                    "' (expected avgpool, maxpool, conv or attention)");
}

const char* branch_name(Branch b) {
  switch (b) {
    case Branch::full: return "full";
    case Branch::cnn_only: return "cnn_only";
    case Branch::transformer_only: return "transformer_only";
  }
  return "?";
}

Branch branch_from_name(const std::string& name) {
  if (name == "full") return Branch::full;
  if (name == "cnn_only") return Branch::cnn_only;
  if (name == "transformer_only") return Branch::transformer_only;
  throw ConfigError("unknown branch '" + name +
                    "' (expected full, cnn_only or transformer_only)");
}

int ConformerConfig::total_blocks() const {
  int n = 0;
  for (int b : blocks_per_stage) n += b;
  return n;
}

int ConformerConfig::stage_of_block(int block) const {
  int hi = 0;
  for (int s = 0; s < 4; ++s) {
    hi += blocks_per_stage[s];
    if (block <= hi) return s + 1;
  }
  throw ConfigError("block index " + std::to_string(block) + " out of range");
}

bool ConformerConfig::block_coupled(int block) const {
  return block >= 2 && (block - 1) % fusion_interval == 0;
}

bool ConformerConfig::first_block_of_stage(int block) const {
  int lo = 1;
  for (int s = 0; s < 4; ++s) {
    if (block == lo) return true;
    lo += blocks_per_stage[s];
  }
  return false;
}

int ConformerConfig::stem_map(int input) const {
  int m = (input + 2 * (stem.kernel / 2) - stem.kernel) / stem.stride + 1;
  if (stem.pool) m = (m + 2 - 3) / 2 + 1;
  return m;
}

int ConformerConfig::stage_resolution(int stage, int input) const {
  int r = stem_map(input);
  // stages 2..4 each open with a stride-2 3x3 (pad 1) bottleneck conv
  for (int s = 2; s <= stage; ++s) r = (r - 1) / 2 + 1;
  return r;
}

void ConformerConfig::validate() const {
  if (input_size < 16) throw ConfigError("input_size too small");
  if (stem.kernel < 3 || stem.kernel % 2 == 0)
    throw ConfigError("stem kernel must be odd and >= 3");
  if (stem.stride < 1 || stem.out_channels < 1) throw ConfigError("bad stem stride/channels");
  for (int b : blocks_per_stage)
    if (b < 1) throw ConfigError("each stage needs at least one block");
  if (n_c < 1) throw ConfigError("n_c must be >= 1");
  for (int s = 0; s < 4; ++s) {
    if (stage_mid_channels[s] < 1 || stage_out_channels[s] < 1)
      throw ConfigError("stage channels must be positive");
  }
  if (embed_dim < 1 || num_heads < 1 || embed_dim % num_heads != 0)
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " must divide into " +
                      std::to_string(num_heads) + " heads");
  if (patch_stride < 1) throw ConfigError("patch_stride must be >= 1");
  if (fusion_interval < 1) throw ConfigError("fusion_interval must be >= 1");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");

  validate_input(input_size);
  bool any_coupled = false;
  for (int b = 2; b <= total_blocks(); ++b) any_coupled |= block_coupled(b);
  if (any_coupled && n_c < 2)
    throw ConfigError("coupled blocks need n_c >= 2 (one bottleneck to tap, one to inject into)");
}

void ConformerConfig::validate_input(int input) const {
  if (input < 16) throw ConfigError("input size too small");
  if (positional_embeddings && input != input_size)
    throw ConfigError("positional embeddings fix the input size to " +
                      std::to_string(input_size) + ", got " + std::to_string(input));
  int m = stem_map(input);
  if (m < patch_stride || m % patch_stride != 0)
    throw ConfigError("stem map " + std::to_string(m) + " not divisible by patch_stride " +
                      std::to_string(patch_stride));
  int grid = m / patch_stride;
  for (int stage = 1; stage <= 4; ++stage) {
    int r = stage_resolution(stage, input);
    if (r < 1) throw ConfigError("stage " + std::to_string(stage) + " resolution collapsed");
    // the coupling unit needs an integer zoom between map and token grid
    if (r >= grid ? r % grid != 0 : grid % r != 0)
      throw ConfigError("stage " + std::to_string(stage) + " resolution " + std::to_string(r) +
                        " incompatible with patch grid " + std::to_string(grid));
  }
}

ConformerConfig degenerate(const ConformerConfig& cfg, Branch which) {
  ConformerConfig out = cfg;
  out.branch = which;
  return out;
}

namespace {

void expect_keys(const json& j, const std::set<std::string>& allowed, const char* where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key()))
      throw ConfigError(std::string("unknown key '") + it.key() + "' in " + where);
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

template <class T>
T get_req(const json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError(std::string("missing required key '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

std::array<int, 4> get_arr4(const json& j, const char* key) {
  auto v = get_req<std::vector<int>>(j, key);
  if (v.size() != 4)
    throw ConfigError(std::string(key) + " must have exactly 4 entries");
  return {v[0], v[1], v[2], v[3]};
}

}  // namespace

std::string ConformerConfig::to_json_string() const {
  json j;
  j["input_size"] = input_size;
  j["stem"] = {{"kernel", stem.kernel},
               {"stride", stem.stride},
               {"pool", stem.pool},
               {"out_channels", stem.out_channels}};
  j["blocks_per_stage"] = blocks_per_stage;
  j["n_c"] = n_c;
  j["stage_mid_channels"] = stage_mid_channels;
  j["stage_out_channels"] = stage_out_channels;
  j["embed_dim"] = embed_dim;
  j["num_heads"] = num_heads;
  j["patch_stride"] = patch_stride;
  j["fusion_interval"] = fusion_interval;
  j["sampling"] = sampling_name(sampling);
  j["positional_embeddings"] = positional_embeddings;
  j["num_classes"] = num_classes;
  j["fcu_activation"] = fcu_activation;
  j["branch"] = branch_name(branch);
  return j.dump(2);
}

ConformerConfig ConformerConfig::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  expect_keys(j,
              {"input_size", "stem", "blocks_per_stage", "n_c", "stage_mid_channels",
               "stage_out_channels", "embed_dim", "num_heads", "patch_stride", "fusion_interval",
               "sampling", "positional_embeddings", "num_classes", "fcu_activation", "branch"},
              "config");
  ConformerConfig c;
  c.input_size = get_req<int>(j, "input_size");
  if (j.contains("stem")) {
    const json& s = j.at("stem");
    if (!s.is_object()) throw ConfigError("stem must be an object");
    expect_keys(s, {"kernel", "stride", "pool", "out_channels"}, "stem");
    c.stem.kernel = get_or<int>(s, "kernel", c.stem.kernel);
    c.stem.stride = get_or<int>(s, "stride", c.stem.stride);
    c.stem.pool = get_or<bool>(s, "pool", c.stem.pool);
    c.stem.out_channels = get_or<int>(s, "out_channels", c.stem.out_channels);
  }
  c.blocks_per_stage = get_arr4(j, "blocks_per_stage");
  c.n_c = get_req<int>(j, "n_c");
  c.stage_mid_channels = get_arr4(j, "stage_mid_channels");
  c.stage_out_channels = get_arr4(j, "stage_out_channels");
  c.embed_dim = get_req<int>(j, "embed_dim");
  c.num_heads = get_req<int>(j, "num_heads");
  c.patch_stride = get_req<int>(j, "patch_stride");
  c.fusion_interval = get_or<int>(j, "fusion_interval", 1);
  c.sampling = sampling_from_name(get_or<std::string>(j, "sampling", "avgpool"));
  c.positional_embeddings = get_or<bool>(j, "positional_embeddings", false);
  c.num_classes = get_req<int>(j, "num_classes");
  c.fcu_activation = get_or<bool>(j, "fcu_activation", true);
  c.branch = branch_from_name(get_or<std::string>(j, "branch", "full"));
  c.validate();
  return c;
}

ConformerConfig ConformerConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return from_json_string(os.str());
}

}  // namespace conformer
