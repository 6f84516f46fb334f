#include "conformer/audit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace conformer {

namespace {

std::string group3(int64_t v) {
  std::string digits = std::to_string(v);
  std::string out;
  int run = 0;
  for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
    if (run == 3 && *it != '-') {
      out.push_back(',');
      run = 0;
    }
    out.push_back(*it);
    ++run;
  }
  std::reverse(out.begin(), out.end());
  return out;
}

std::string block_label(const char* prefix, int stage, int block) {
  char buf[32];
  if (stage > 0)
    std::snprintf(buf, sizeof(buf), "%s.s%d.b%02d", prefix, stage, block);
  else
    std::snprintf(buf, sizeof(buf), "%s.b%02d", prefix, block);
  return buf;
}

}  // namespace

AuditReport audit(const ConformerConfig& cfg, int input_size) {
  cfg.validate();
  cfg.validate_input(input_size);

  const bool keep_cnn = cfg.branch != Branch::transformer_only;
  const bool keep_trans = cfg.branch != Branch::cnn_only;
  const bool keep_fcu = cfg.branch == Branch::full;
  const int64_t e = cfg.embed_dim;
  const int64_t classes = cfg.num_classes;
  const int64_t c_stem = cfg.stem.out_channels;

  AuditReport rep;
  rep.input_size = input_size;

  // stem geometry: conv (stride s, same padding), optional 3x3/2 pad-1 pool
  const int k = cfg.stem.kernel;
  const int conv_out = (input_size + 2 * (k / 2) - k) / cfg.stem.stride + 1;
  int r = cfg.stem.pool ? (conv_out + 2 - 3) / 2 + 1 : conv_out;
  const int g = r / cfg.patch_stride;
  const int64_t t = static_cast<int64_t>(g) * g + 1;
  const int g_native = cfg.patch_grid();  // positional table length is fixed

  int64_t p_cnn = 0, p_trans = 0, m_conv = 0, m_trans = 0;
  auto cnn_row = [&](const std::string& name, int64_t p, int64_t m) {
    rep.modules.push_back({name, p, m});
    p_cnn += p;
    m_conv += m;
  };
  auto trans_row = [&](const std::string& name, int64_t p, int64_t m) {
    rep.modules.push_back({name, p, m});
    p_trans += p;
    m_trans += m;
  };

  rep.stage_shapes.push_back({0, c_stem, r, r});
  cnn_row("stem", c_stem * 3 * k * k + 2 * c_stem,
          c_stem * 3 * k * k * static_cast<int64_t>(conv_out) * conv_out);

  int64_t cin = c_stem;
  for (int i = 1; i <= cfg.total_blocks(); ++i) {
    const int s = cfg.stage_of_block(i);
    const int64_t mid = cfg.stage_mid_channels[static_cast<size_t>(s - 1)];
    const int64_t out = cfg.stage_out_channels[static_cast<size_t>(s - 1)];
    const int stride = (cfg.first_block_of_stage(i) && s > 1) ? 2 : 1;
    const bool coupled = cfg.block_coupled(i);
    const int units = (i == 1) ? 1 : (coupled ? cfg.n_c : cfg.n_c - 1);
    const int rin = r, rout = r / stride;

    if (keep_cnn) {
      int64_t p = 0, m = 0;
      for (int u = 1; u <= units; ++u) {
        const int64_t ucin = (u == 1) ? cin : out;
        const int ustride = (u == 1) ? stride : 1;
        const int64_t uri = (u == 1) ? rin : rout, uro = rout;
        p += ucin * mid + 2 * mid;     // conv1 + bn1
        p += 9 * mid * mid + 2 * mid;  // conv2 + bn2
        p += mid * out + 2 * out;      // conv3 + bn3
        m += mid * ucin * uri * uri;   // conv1 runs before the stride
        m += mid * mid * 9 * uro * uro;
        m += out * mid * uro * uro;
        if (ucin != out || ustride != 1) {  // projection shortcut
          p += ucin * out + 2 * out;
          m += out * ucin * uro * uro;
        }
      }
      cnn_row(block_label("cnn", s, i), p, m);
    }
    cin = out;
    r = rout;

    if (i == 1 && keep_trans) {
      int64_t p = e * c_stem * cfg.patch_stride * cfg.patch_stride + e;  // patch conv
      p += e;                                                            // class token
      if (cfg.positional_embeddings)
        p += (static_cast<int64_t>(g_native) * g_native + 1) * e;
      trans_row("embed", p,
                e * c_stem * cfg.patch_stride * cfg.patch_stride * static_cast<int64_t>(g) * g);
    }
    if (coupled && i >= 2 && keep_fcu) {
      const int64_t h = std::max(r, g);  // map side the sampler actually sees
      int64_t p = e * mid + e + 2 * e;    // down conv + LN
      p += mid * e + mid + 2 * mid;       // up conv + BN
      int64_t m = e * mid * static_cast<int64_t>(r) * r;  // down 1x1 at tap res
      m += mid * e * static_cast<int64_t>(g) * g;         // up 1x1 at the grid
      if (cfg.sampling == Sampling::conv) {
        const int64_t ratio = r > g ? r / g : 1;
        p += e * e * ratio * ratio + e;
        m += e * e * ratio * ratio * static_cast<int64_t>(g) * g;
      }
      if (cfg.sampling == Sampling::attention) {
        p += 3 * e * e;
        m += static_cast<int64_t>(g) * g * e * e;  // queries
        m += 2 * h * h * e * e;                    // keys + values
        m += 2 * h * h * e;                        // scores + weighted sum
        m += h * h * mid;                          // up-pass spread
      }
      cnn_row(block_label("fcu", 0, i), p, m);
    }
    if (keep_trans) {
      int64_t p = 2 * e + 4 * (e * e + e) + 2 * e;  // ln1, q/k/v/proj, ln2
      p += 4 * e * e + 4 * e;                       // fc1
      p += e * 4 * e + e;                           // fc2
      trans_row(block_label("trans", 0, i), p, 12 * t * e * e + 2 * t * t * e);
    }
    if (keep_cnn && (i == cfg.total_blocks() || cfg.stage_of_block(i + 1) != s))
      rep.stage_shapes.push_back({s, out, static_cast<int>(r), static_cast<int>(r)});
  }

  if (keep_trans) trans_row("trans.final_ln", 2 * e, 0);

  int64_t p_head_cnn = 0, p_head_trans = 0, m_head_cnn = 0;
  if (keep_cnn) {
    p_head_cnn = classes * cfg.stage_out_channels[3] + classes;
    m_head_cnn = classes * cfg.stage_out_channels[3];
    rep.modules.push_back({"head.cnn", p_head_cnn, m_head_cnn});
  }
  if (keep_trans) {
    p_head_trans = classes * e + classes;
    rep.modules.push_back({"head.trans", p_head_trans, classes * e});
    m_trans += classes * e;
  }

  rep.params_cnn = p_cnn;
  rep.params_trans = p_trans;
  rep.params_heads = p_head_cnn + p_head_trans;
  rep.params_cnn_side = p_cnn + p_head_cnn;
  rep.params_trans_side = p_trans + p_head_trans;
  rep.params_total = rep.params_cnn_side + rep.params_trans_side;
  rep.p_p = rep.params_trans_side > 0
                ? static_cast<double>(rep.params_cnn_side) / static_cast<double>(rep.params_trans_side)
                : 0.0;
  rep.macs_cnn_conv = m_conv;
  rep.macs_cnn = m_conv + m_head_cnn;
  rep.macs_trans = m_trans;
  rep.macs_total = rep.macs_cnn + rep.macs_trans;
  rep.tokens = keep_trans ? static_cast<int>(t) : 0;
  return rep;
}

AuditReport count_params(const ConformerConfig& cfg) { return audit(cfg, cfg.input_size); }

AuditReport count_macs(const ConformerConfig& cfg, int input_size) {
  return audit(cfg, input_size);
}

std::string AuditReport::to_string() const {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof(line), "%-18s %14s %16s\n", "module", "params", "MACs");
  os << line;
  for (const AuditRow& row : modules) {
    std::snprintf(line, sizeof(line), "%-18s %14s %16s\n", row.name.c_str(),
                  group3(row.params).c_str(), group3(row.macs).c_str());
    os << line;
  }
  std::snprintf(line, sizeof(line), "%-18s %14s %16s  @%d\n", "total",
                group3(params_total).c_str(), group3(macs_total).c_str(), input_size);
  os << line;
  os << "split: cnn+stem+fcu " << group3(params_cnn) << ", transformer " << group3(params_trans)
     << ", heads " << group3(params_heads) << "\n";
  std::snprintf(line, sizeof(line), "sides: cnn %s / trans %s, p_p %.4f\n",
                group3(params_cnn_side).c_str(), group3(params_trans_side).c_str(), p_p);
  os << line;
  if (tokens > 0) os << "tokens: " << tokens << "\n";
  os << "shapes:";
  for (const StageShape& s : stage_shapes) {
    std::string tag = s.stage == 0 ? "stem" : "s" + std::to_string(s.stage);
    std::snprintf(line, sizeof(line), " %s[%sx%dx%d]", tag.c_str(), group3(s.channels).c_str(),
                  s.height, s.width);
    os << line;
  }
  os << "\n";
  return os.str();
}

std::string AuditReport::to_json_string() const {
  nlohmann::json j;
  j["input_size"] = input_size;
  j["params"] = {{"total", params_total},
                 {"cnn", params_cnn},
                 {"trans", params_trans},
                 {"heads", params_heads},
                 {"cnn_side", params_cnn_side},
                 {"trans_side", params_trans_side}};
  j["p_p"] = p_p;
  j["macs"] = {{"total", macs_total},
               {"cnn", macs_cnn},
               {"trans", macs_trans},
               {"cnn_conv", macs_cnn_conv}};
  j["tokens"] = tokens;
  nlohmann::json mods = nlohmann::json::array();
  for (const AuditRow& row : modules)
    mods.push_back({{"name", row.name}, {"params", row.params}, {"macs", row.macs}});
  j["modules"] = std::move(mods);
  nlohmann::json shapes = nlohmann::json::array();
  for (const StageShape& s : stage_shapes)
    shapes.push_back(
        {{"stage", s.stage}, {"channels", s.channels}, {"height", s.height}, {"width", s.width}});
  j["stage_shapes"] = std::move(shapes);
  return j.dump(2);
}

const ReferenceEntry& ReferenceTable::entry(const std::string& label) const {
  auto it = entries.find(label);
  if (it == entries.end())
    throw ConfigError("reference table '" + name + "' has no entry '" + label + "'");
  return it->second;
}

ReferenceTable load_reference_table(const std::string& path, const std::string& table) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open reference file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad reference file " + path + ": " + e.what());
  }
  if (!j.contains(table)) throw ConfigError("reference file has no table '" + table + "'");

  static const char* known[] = {"params", "macs", "params_cnn_side", "params_trans_side", "p_p"};
  ReferenceTable out;
  out.name = table;
  for (const auto& [label, body] : j.at(table).items()) {
    ReferenceEntry e;
    e.label = label;
    for (const auto& [key, val] : body.items()) {
      if (key == "input_size") {
        e.input_size = val.get<int>();
        continue;
      }
      if (std::find_if(std::begin(known), std::end(known),
                       [&](const char* m) { return key == m; }) == std::end(known))
        throw ConfigError("unknown reference metric '" + key + "' in entry '" + label + "'");
      if (!val.is_array() || val.size() != 2)
        throw ConfigError("metric '" + key + "' in entry '" + label +
                          "' must be [value, tolerance]");
      e.metrics[key] = {val.at(0).get<double>(), val.at(1).get<double>()};
    }
    out.entries[label] = std::move(e);
  }
  return out;
}

AuditDiff audit_compare(const AuditReport& report, const ReferenceEntry& ref) {
  auto value_of = [&](const std::string& metric) -> double {
    if (metric == "params") return static_cast<double>(report.params_total);
    if (metric == "macs") return static_cast<double>(report.macs_total);
    if (metric == "params_cnn_side") return static_cast<double>(report.params_cnn_side);
    if (metric == "params_trans_side") return static_cast<double>(report.params_trans_side);
    if (metric == "p_p") return report.p_p;
    throw ConfigError("unknown audit metric '" + metric + "'");
  };

  AuditDiff diff;
  diff.label = ref.label;
  for (const auto& [metric, rm] : ref.metrics) {
    AuditCell cell;
    cell.metric = metric;
    cell.reference = rm.value;
    cell.computed = value_of(metric);
    cell.rel_err = std::fabs(cell.computed - rm.value) / std::fabs(rm.value);
    cell.tolerance = rm.tolerance;
    cell.pass = cell.rel_err <= rm.tolerance;
    diff.all_pass = diff.all_pass && cell.pass;
    diff.cells.push_back(std::move(cell));
  }
  return diff;
}

std::string AuditDiff::to_string() const {
  std::ostringstream os;
  char line[160];
  os << "compare: " << label << "\n";
  std::snprintf(line, sizeof(line), "%-18s %16s %16s %9s %7s  %s\n", "metric", "reference",
                "computed", "rel err", "tol", "state");
  os << line;
  for (const AuditCell& c : cells) {
    std::snprintf(line, sizeof(line), "%-18s %16.6g %16.6g %8.3f%% %6.1f%%  %s\n",
                  c.metric.c_str(), c.reference, c.computed, 100.0 * c.rel_err,
                  100.0 * c.tolerance, c.pass ? "pass" : "FAIL");
    os << line;
  }
  os << (all_pass ? "all pass" : "FAILED") << "\n";
  return os.str();
}

std::string AuditDiff::to_json_string() const {
  nlohmann::json j;
  j["label"] = label;
  j["all_pass"] = all_pass;
  nlohmann::json cs = nlohmann::json::array();
  for (const AuditCell& c : cells)
    cs.push_back({{"metric", c.metric},
                  {"reference", c.reference},
                  {"computed", c.computed},
                  {"rel_err", c.rel_err},
                  {"tolerance", c.tolerance},
                  {"pass", c.pass}});
  j["cells"] = std::move(cs);
  return j.dump(2);
}

}  // namespace conformer
