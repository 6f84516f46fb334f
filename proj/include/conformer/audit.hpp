#pragma once

#include <map>
#include <string>
#include <vector>

#include "conformer/config.hpp"

namespace conformer {

// Closed-form parameter/MAC audit computed from the config alone; no tensors
// are allocated and nothing is shared with the model builder, so the audit is
// an independent check of what a build produces.

// One named module row. Names mirror the parameter-store prefixes: "stem",
// "cnn.s{S}.b{BB}" (all bottlenecks of one block), "embed" (patch embed +
// class token + positional table), "fcu.b{BB}", "trans.b{BB}",
// "trans.final_ln", "head.cnn", "head.trans".
struct AuditRow {
  std::string name;
  int64_t params = 0;
  int64_t macs = 0;
};

struct StageShape {
  int stage = 0;  // 0 = stem output
  int64_t channels = 0;
  int height = 0;
  int width = 0;
};

struct AuditReport {
  std::vector<AuditRow> modules;  // every counted element appears exactly once

  int64_t params_total = 0;
  int64_t params_cnn = 0;    // stem + bottlenecks + FCUs, heads excluded
  int64_t params_trans = 0;  // embed + transformer blocks + final LN, head excluded
  int64_t params_heads = 0;  // both classifiers
  // Branch split with each head assigned to its branch; p_p is their ratio.
  int64_t params_cnn_side = 0;
  int64_t params_trans_side = 0;
  double p_p = 0.0;

  int input_size = 0;
  int64_t macs_total = 0;
  int64_t macs_cnn = 0;       // map-space terms + the CNN head
  int64_t macs_trans = 0;     // token-space terms + the transformer head
  int64_t macs_cnn_conv = 0;  // map-space terms only; scales with input area

  int tokens = 0;  // sequence length including the class token
  std::vector<StageShape> stage_shapes;

  std::string to_string() const;       // aligned text table
  std::string to_json_string() const;  // machine-readable form
};

// Full audit at an explicit input size (validated against the config).
AuditReport audit(const ConformerConfig& cfg, int input_size);
// Parameter-focused audit at the native input size.
AuditReport count_params(const ConformerConfig& cfg);
// MAC-focused audit at the given input size.
AuditReport count_macs(const ConformerConfig& cfg, int input_size);

// Reference budgets live in a data file (configs/reference_budgets.json), one
// table per top-level key, one entry per config label, metric -> [value, tol].
struct ReferenceMetric {
  double value = 0.0;
  double tolerance = 0.0;
};

struct ReferenceEntry {
  std::string label;
  int input_size = 224;
  // keys: "params", "macs", "params_cnn_side", "params_trans_side", "p_p"
  std::map<std::string, ReferenceMetric> metrics;
};

struct ReferenceTable {
  std::string name;
  std::map<std::string, ReferenceEntry> entries;

  const ReferenceEntry& entry(const std::string& label) const;  // ConfigError if absent
};

ReferenceTable load_reference_table(const std::string& path, const std::string& table);

struct AuditCell {
  std::string metric;
  double reference = 0.0;
  double computed = 0.0;
  double rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct AuditDiff {
  std::string label;
  std::vector<AuditCell> cells;
  bool all_pass = true;

  std::string to_string() const;
  std::string to_json_string() const;
};

AuditDiff audit_compare(const AuditReport& report, const ReferenceEntry& ref);

}  // namespace conformer
