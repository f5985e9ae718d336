#pragma once

// Line-delimited JSON rendering of step records.

#include <string>

#include <json.hpp>

#include "tp/kernel.hpp"

namespace tp {

inline nlohmann::json to_json(const TASet& ta) {
  auto out = nlohmann::json::array();
  for (auto p : ta.pages()) out.push_back(hex(p));
  return out;
}

inline nlohmann::json to_json(const Trace& trace) {
  auto out = nlohmann::json::array();
  for (const auto& op : trace) out.push_back(format_op(op));
  return out;
}

inline nlohmann::json to_json(const StepRecord& rec) {
  nlohmann::json j;
  j["kind"] = to_string(rec.kind);
  j["label"] = rec.label;
  j["domain"] = rec.domain.value;
  j["slice"] = rec.slice;
  j["clock_before"] = rec.clock_before;
  j["clock_after"] = rec.clock_after;
  j["ta_before"] = to_json(rec.ta_before);
  j["ta_after"] = to_json(rec.ta_after);
  j["trace"] = to_json(rec.trace);
  if (rec.kind == RecordKind::DomainSwitch) {
    j["deadline"] = rec.deadline;
    auto phases = nlohmann::json::array();
    for (const auto& ph : rec.phases)
      phases.push_back({{"name", ph.name}, {"ta_after", to_json(ph.ta_after)}, {"trace", to_json(ph.trace)},
                        {"clock_after", ph.clock_after}});
    j["phases"] = phases;
  }
  auto globals = nlohmann::json::array();
  for (auto g : rec.global_accesses) globals.push_back(hex(g.value));
  j["global_accesses"] = globals;
  auto failures = nlohmann::json::array();
  for (const auto& f : rec.failures) {
    auto w = nlohmann::json::array();
    for (auto v : f.witnesses) w.push_back(hex(v.value));
    failures.push_back({{"kind", to_string(f.kind)}, {"detail", f.detail}, {"witnesses", w}});
  }
  j["failures"] = failures;
  return j;
}

/// One compact JSON object, no trailing newline.
inline std::string record_line(const StepRecord& rec) { return to_json(rec).dump(); }

}  // namespace tp
