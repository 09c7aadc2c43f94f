#include "neo/metrics.hpp"

#include <cstdio>
#include <map>
#include <sstream>
#include <utility>

namespace neo::metrics {

ConfusionReport confusion(std::span<const Verdict> verdicts, const DatasetManifest& manifest) {
  std::map<std::string, const Verdict*> by_id;
  for (const auto& v : verdicts) by_id[v.id] = &v;
  std::set<std::string> known;
  for (const auto& e : manifest.entries) known.insert(e.file);
  for (const auto& [id, v] : by_id) {
    if (!known.count(id)) throw std::invalid_argument("verdict for '" + id + "' has no manifest entry");
  }

  ConfusionReport r;
  auto tally = [](ConfusionCounts& c, bool poisoned, bool flagged) {
    if (poisoned) {
      (flagged ? c.tp : c.fn) += 1;
    } else {
      (flagged ? c.fp : c.tn) += 1;
    }
  };
  for (const auto& e : manifest.entries) {
    auto it = by_id.find(e.file);
    const Verdict* v = it == by_id.end() ? nullptr : it->second;
    const bool confirmed = v && v->status == VerdictStatus::backdoored;
    const bool transitioned = v && (confirmed || v->status == VerdictStatus::suspected_then_cleared);
    tally(r.transitions, e.poisoned, transitioned);
    tally(r.confirmed, e.poisoned, confirmed);
  }
  return r;
}

namespace {

MitigationRow make_row(std::string id, double ji_bd, double ji_fix) {
  MitigationRow row{std::move(id), ji_bd, ji_fix, std::nullopt};
  if (ji_bd > 0.0) row.improvement_pct = (ji_fix - ji_bd) / ji_bd * 100.0;
  return row;
}

}  // namespace

std::vector<MitigationRow> mitigation_report(std::span<const Label> labels_bd, std::span<const Label> labels_fix,
                                             std::span<const Label> labels_clean, MitigationMode mode) {
  if (labels_bd.size() != labels_fix.size() || labels_bd.size() != labels_clean.size()) {
    throw std::invalid_argument("mitigation_report: label sequences differ in length");
  }
  const std::size_t n = labels_bd.size();
  std::vector<MitigationRow> rows;

  if (mode == MitigationMode::pairs) {
    using Pair = std::pair<std::size_t, int>;
    std::set<Pair> bd;
    std::set<Pair> fix;
    std::set<Pair> clean;
    for (std::size_t i = 0; i < n; ++i) {
      bd.insert({i, labels_bd[i].id});
      fix.insert({i, labels_fix[i].id});
      clean.insert({i, labels_clean[i].id});
    }
    rows.push_back(make_row("pairs", jaccard(bd, clean), jaccard(fix, clean)));
    return rows;
  }

  std::set<Label> classes;
  for (std::size_t i = 0; i < n; ++i) {
    classes.insert(labels_bd[i]);
    classes.insert(labels_fix[i]);
    classes.insert(labels_clean[i]);
  }
  for (const Label c : classes) {
    std::set<std::size_t> bd;
    std::set<std::size_t> fix;
    std::set<std::size_t> clean;
    for (std::size_t i = 0; i < n; ++i) {
      if (labels_bd[i] == c) bd.insert(i);
      if (labels_fix[i] == c) fix.insert(i);
      if (labels_clean[i] == c) clean.insert(i);
    }
    rows.push_back(make_row(std::to_string(c.id), jaccard(bd, clean), jaccard(fix, clean)));
  }
  return rows;
}

double attack_success_rate(Oracle& oracle, std::span<const Image> poisoned, Label target, bool defended,
                           const DefenceConfig& config, const CleanReference& clean_ref,
                           std::vector<std::string>* warnings) {
  if (poisoned.empty()) {
    if (warnings) warnings->push_back("attack_success_rate: no poisoned images; reporting 0");
    return 0.0;
  }
  std::size_t hits = 0;
  if (defended) {
    const DefenceResult res = defend(oracle, poisoned, config, clean_ref);
    if (res.abort) throw OracleError(res.abort->message, res.abort->at_index);
    for (const auto& v : res.verdicts) hits += v.sanitized == target ? 1 : 0;
  } else {
    for (const Label l : oracle.classify_batch(poisoned)) hits += l == target ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(poisoned.size());
}

namespace {

std::string pct(std::size_t part, std::size_t whole) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", whole == 0 ? 0.0 : 100.0 * double(part) / double(whole));
  return buf;
}

std::string cell(std::size_t count, std::size_t whole) { return std::to_string(count) + " (" + pct(count, whole) + ")"; }

void counts_row(std::ostringstream& os, const ConfusionCounts& c) {
  const std::size_t pos = c.tp + c.fn;
  const std::size_t neg = c.tn + c.fp;
  char buf[160];
  std::snprintf(buf, sizeof buf, "| %-16s | %-16s | %-16s | %-16s |\n", cell(c.tp, pos).c_str(),
                cell(c.fn, pos).c_str(), cell(c.tn, neg).c_str(), cell(c.fp, neg).c_str());
  os << buf;
}

}  // namespace

std::string format_confusion_table(const ConfusionReport& r) {
  std::ostringstream os;
  const std::size_t pos = r.confirmed.tp + r.confirmed.fn;
  const std::size_t neg = r.confirmed.tn + r.confirmed.fp;
  os << "Backdoored images (" << pos << "), clean images (" << neg << ")\n";
  os << "| TP               | FN               | TN               | FP               |\n";
  os << "Backdoor detections (any transition)\n";
  counts_row(os, r.transitions);
  os << "Backdoor detections after confirmation\n";
  counts_row(os, r.confirmed);
  return os.str();
}

std::string format_mitigation_table(const std::vector<MitigationRow>& rows) {
  std::ostringstream os;
  os << "| Class    | JI(S_bd) | JI(S_fix) | Impr%    |\n";
  for (const auto& r : rows) {
    char buf[128];
    char impr[32] = "n/a";
    if (r.improvement_pct) std::snprintf(impr, sizeof impr, "%.2f", *r.improvement_pct);
    std::snprintf(buf, sizeof buf, "| %-8s | %8.4f | %9.4f | %-8s |\n", r.id.c_str(), r.ji_bd, r.ji_fix, impr);
    os << buf;
  }
  return os.str();
}

}  // namespace neo::metrics
