#include "neo/report.hpp"

#include "neo/dataset.hpp"

namespace neo::report {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

ordered_json position_json(const std::optional<Position>& p) {
  if (!p) return nullptr;
  return ordered_json{{"x", p->x}, {"y", p->y}};
}

}  // namespace

ordered_json config_json(const DefenceConfig& c) {
  ordered_json j;
  j["blocker"] = {{"m", c.blocker_m}, {"n", c.blocker_n}};
  j["trials"] = c.trials;
  j["lambda"] = c.lambda;
  j["check_size"] = c.check_size;
  j["kmeans_seed"] = c.kmeans_seed;
  j["search_seed"] = c.search_seed;
  j["delta"] = c.delta;
  j["fast_confirm"] = c.fast_confirm;
  return j;
}

ordered_json defence_report(const DefenceConfig& config, const DefenceResult& r,
                            const std::optional<ReconstructionFiles>& files) {
  ordered_json j;
  j["schema"] = "neo-defence-report/1";
  j["status"] = r.abort ? "aborted" : "complete";
  if (r.abort) {
    j["error"] = {{"reason", r.abort->reason == DefenceAbort::Reason::oracle_failure ? "oracle_failure"
                                                                                      : "missing_reference"},
                  {"message", r.abort->message},
                  {"at_index", r.abort->at_index}};
  }
  j["config"] = config_json(config);
  j["trigger_position"] = position_json(r.trigger_position);

  std::size_t clean = 0;
  std::size_t backdoored = 0;
  std::size_t cleared = 0;
  std::size_t queries = 0;
  ordered_json verdicts = ordered_json::array();
  for (const auto& v : r.verdicts) {
    ordered_json e;
    e["id"] = v.id;
    e["status"] = to_string(v.status);
    e["original_label"] = v.original.id;
    e["sanitized_label"] = v.sanitized.id;
    e["position"] = position_json(v.position);
    e["searched"] = v.searched;
    e["transition"] = v.transition;
    e["candidates"] = v.candidates;
    e["reference_missing"] = v.reference_missing;
    e["queries"] = v.queries;
    verdicts.push_back(std::move(e));
    queries += v.queries;
    switch (v.status) {
      case VerdictStatus::clean: ++clean; break;
      case VerdictStatus::backdoored: ++backdoored; break;
      case VerdictStatus::suspected_then_cleared: ++cleared; break;
    }
  }
  j["verdicts"] = std::move(verdicts);

  ordered_json bset = ordered_json::array();
  for (auto i : r.backdoor_set) bset.push_back(r.verdicts[i].id);
  j["backdoor_set"] = std::move(bset);

  // TP/FN/TN/FP need ground truth; the evaluate command fills them in.
  j["summary"] = {{"images", r.verdicts.size()},
                  {"clean", clean},
                  {"backdoored", backdoored},
                  {"suspected_then_cleared", cleared},
                  {"queries", queries},
                  {"tp", nullptr},
                  {"fn", nullptr},
                  {"tn", nullptr},
                  {"fp", nullptr}};

  if (r.reconstruction) {
    const auto& t = r.reconstruction->trigger;
    ordered_json rec;
    rec["position"] = position_json(t.patch.position);
    rec["width"] = t.patch.patch.width();
    rec["height"] = t.patch.patch.height();
    rec["ratio"] = t.ratio;
    rec["target_label"] = t.target.id;
    rec["patch_file"] = files ? ordered_json(files->patch) : ordered_json(nullptr);
    rec["poisoned_examples"] = files ? ordered_json(files->examples) : ordered_json::array();
    j["reconstruction"] = std::move(rec);
  } else {
    j["reconstruction"] = nullptr;
  }
  j["warnings"] = r.warnings;
  return j;
}

std::vector<Verdict> verdicts_from_report(const json& report) {
  try {
    std::vector<Verdict> out;
    for (const auto& e : report.at("verdicts")) {
      Verdict v;
      v.id = e.at("id").get<std::string>();
      v.status = parse_status(e.at("status").get<std::string>());
      v.original = Label{e.at("original_label").get<int>()};
      v.sanitized = Label{e.at("sanitized_label").get<int>()};
      if (const auto& p = e.at("position"); !p.is_null()) v.position = Position{p.at("x").get<int>(), p.at("y").get<int>()};
      v.searched = e.value("searched", false);
      v.transition = e.value("transition", false);
      v.candidates = e.value("candidates", std::size_t{0});
      v.reference_missing = e.value("reference_missing", false);
      v.queries = e.value("queries", std::size_t{0});
      out.push_back(std::move(v));
    }
    return out;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("defence report: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw SchemaError(std::string("defence report: ") + e.what());
  }
}

ordered_json calibration_report(const CalibrationResult& r, int m, int n, int trials, int samples,
                                std::uint64_t seed) {
  ordered_json j;
  j["schema"] = "neo-calibration/1";
  j["blocker"] = {{"m", m}, {"n", n}};
  j["trials"] = trials;
  j["samples_per_trial"] = samples;
  j["seed"] = seed;
  j["r_values"] = r.r_values;
  j["r_av"] = r.r_av;
  j["interval"] = {{"lower", r.lower}, {"upper", r.upper}, {"empty", r.interval_empty()}};
  j["recommended_lambda"] = r.interval_empty() ? ordered_json(nullptr) : ordered_json(r.recommended_lambda());
  j["warnings"] = r.warnings;
  return j;
}

ordered_json confusion_json(const metrics::ConfusionCounts& c) {
  return ordered_json{{"tp", c.tp}, {"fn", c.fn}, {"tn", c.tn}, {"fp", c.fp}};
}

ordered_json mitigation_json(const std::vector<metrics::MitigationRow>& rows) {
  ordered_json arr = ordered_json::array();
  for (const auto& r : rows) {
    arr.push_back({{"id", r.id},
                   {"ji_bd", r.ji_bd},
                   {"ji_fix", r.ji_fix},
                   {"improvement_pct", r.improvement_pct ? ordered_json(*r.improvement_pct) : ordered_json(nullptr)}});
  }
  return arr;
}

}  // namespace neo::report
