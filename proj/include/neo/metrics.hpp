#pragma once

#include <algorithm>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "neo/dataset.hpp"
#include "neo/defence.hpp"
#include "neo/oracle.hpp"

namespace neo::metrics {

/// |A n B| / |A u B|. Two empty sets score 1.
template <typename T>
double jaccard(const std::set<T>& a, const std::set<T>& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t common = 0;
  for (const auto& x : a) common += b.count(x);
  const std::size_t uni = a.size() + b.size() - common;
  return static_cast<double>(common) / static_cast<double>(uni);
}

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;
  std::size_t fp = 0;

  std::size_t total() const { return tp + fn + tn + fp; }
  bool operator==(const ConfusionCounts&) const = default;
};

/// Detection counts at both stages: any transition caused by blocking, and
/// confirmed backdoors only.
struct ConfusionReport {
  ConfusionCounts transitions;
  ConfusionCounts confirmed;
};

/// Scores verdicts against ground truth. Manifest entries without a verdict
/// count as not flagged. Throws std::invalid_argument for unknown verdict ids.
ConfusionReport confusion(std::span<const Verdict> verdicts, const DatasetManifest& manifest);

enum class MitigationMode { per_class, pairs };

struct MitigationRow {
  std::string id;  // class id, or "pairs"
  double ji_bd = 0.0;
  double ji_fix = 0.0;
  std::optional<double> improvement_pct;  // undefined when ji_bd == 0
};

/// Jaccard agreement of backdoored and fixed predictions with clean predictions.
/// Per-class mode compares, for each class C, the sets of image indices predicted C.
/// Pair mode compares the sets of (index, label) pairs.
std::vector<MitigationRow> mitigation_report(std::span<const Label> labels_bd, std::span<const Label> labels_fix,
                                             std::span<const Label> labels_clean, MitigationMode mode);

/// Fraction of poisoned images labelled `target`: raw oracle output when
/// `defended` is false, otherwise the sanitized labels of a defence run.
/// An empty input yields 0 and a warning.
double attack_success_rate(Oracle& oracle, std::span<const Image> poisoned, Label target, bool defended,
                           const DefenceConfig& config, const CleanReference& clean_ref,
                           std::vector<std::string>* warnings = nullptr);

std::string format_confusion_table(const ConfusionReport& report);
std::string format_mitigation_table(const std::vector<MitigationRow>& rows);

}  // namespace neo::metrics
