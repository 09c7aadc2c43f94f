#include <doctest.h>

#include "neo/metrics.hpp"
#include "neo/simlab.hpp"

using namespace neo;
using namespace neo::metrics;

namespace {

Verdict verdict(std::string id, VerdictStatus s, int original = 0, int sanitized = 0) {
  Verdict v;
  v.id = std::move(id);
  v.status = s;
  v.original = Label{original};
  v.sanitized = Label{sanitized};
  return v;
}

DatasetManifest manifest(std::initializer_list<std::pair<const char*, bool>> entries) {
  DatasetManifest m{1, 4, 4, 3, {}};
  for (const auto& [file, poisoned] : entries) m.entries.push_back({file, Label{0}, poisoned});
  return m;
}

std::vector<Label> labels(std::initializer_list<int> ids) {
  std::vector<Label> out;
  for (int i : ids) out.push_back(Label{i});
  return out;
}

}  // namespace

TEST_CASE("jaccard index") {
  CHECK(jaccard(std::set<int>{}, std::set<int>{}) == 1.0);
  CHECK(jaccard(std::set<int>{1}, std::set<int>{}) == 0.0);
  CHECK(jaccard(std::set<int>{1, 2, 3}, std::set<int>{1, 2, 3}) == 1.0);
  CHECK(jaccard(std::set<int>{1, 2, 3}, std::set<int>{2, 3, 4}) == doctest::Approx(0.5));
  CHECK(jaccard(std::set<int>{1, 2}, std::set<int>{3, 4}) == 0.0);
  CHECK(jaccard(std::set<int>{1, 2, 3, 4}, std::set<int>{4}) == doctest::Approx(0.25));
}

TEST_CASE("confusion counts at both stages") {
  const auto m = manifest({{"a", true}, {"b", true}, {"c", false}, {"d", false}, {"e", true}, {"f", false}});
  std::vector<Verdict> v{verdict("a", VerdictStatus::backdoored), verdict("b", VerdictStatus::suspected_then_cleared),
                         verdict("c", VerdictStatus::suspected_then_cleared), verdict("d", VerdictStatus::clean),
                         verdict("e", VerdictStatus::clean)};
  const auto r = confusion(v, m);
  CHECK(r.transitions == ConfusionCounts{2, 1, 2, 1});
  CHECK(r.confirmed == ConfusionCounts{1, 2, 3, 0});
  CHECK(r.confirmed.total() == 6);

  std::vector<Verdict> stranger{verdict("zzz", VerdictStatus::clean)};
  CHECK_THROWS_AS(confusion(stranger, m), std::invalid_argument);
}

TEST_CASE("per-class mitigation rows") {
  // clean: 0 1 1 2 ; bd: 0 0 1 0 (two images hijacked to 0) ; fix: 0 1 1 2.
  const auto clean = labels({0, 1, 1, 2});
  const auto bd = labels({0, 0, 1, 0});
  const auto fix = labels({0, 1, 1, 2});
  const auto rows = mitigation_report(bd, fix, clean, MitigationMode::per_class);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].id == "0");
  CHECK(rows[0].ji_bd == doctest::Approx(1.0 / 3.0));
  CHECK(rows[0].ji_fix == 1.0);
  CHECK(*rows[0].improvement_pct == doctest::Approx(200.0));
  CHECK(rows[1].ji_bd == doctest::Approx(0.5));
  CHECK(rows[2].ji_bd == 0.0);
  CHECK_FALSE(rows[2].improvement_pct);
  for (const auto& r : rows) CHECK(r.ji_fix == 1.0);
}

TEST_CASE("pair-mode mitigation") {
  const auto clean = labels({0, 1, 1, 2});
  const auto bd = labels({0, 0, 1, 0});
  const auto fix = labels({0, 1, 1, 0});
  const auto rows = mitigation_report(bd, fix, clean, MitigationMode::pairs);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].id == "pairs");
  // bd shares 2 of 6 distinct pairs with clean, fix shares 3 of 5.
  CHECK(rows[0].ji_bd == doctest::Approx(2.0 / 6.0));
  CHECK(rows[0].ji_fix == doctest::Approx(3.0 / 5.0));
  CHECK_THROWS_AS(mitigation_report(labels({0}), fix, clean, MitigationMode::pairs), std::invalid_argument);
}

TEST_CASE("attack success rate before and after defence") {
  simlab::WorldConfig cfg;
  cfg.seed = 21;
  const auto world = simlab::default_world(cfg);
  const auto data = simlab::gen_dataset(cfg, 30);
  simlab::SimOracle o(world.classifier());
  CleanReference ref;
  std::vector<Image> poisoned;
  for (std::size_t i = 0; i < data.images.size(); ++i) {
    if (i % 30 >= 20) ref.add(data.labels[i], data.images[i]);
    else if (data.labels[i] != world.target && poisoned.size() < 40) poisoned.push_back(simlab::poison_image(data.images[i], world.trigger));
  }
  DefenceConfig dc;
  CHECK(attack_success_rate(o, poisoned, world.target, false, dc, ref) == 1.0);
  const double after = attack_success_rate(o, poisoned, world.target, true, dc, ref);
  CHECK(after <= 0.05);

  std::vector<std::string> warnings;
  CHECK(attack_success_rate(o, {}, world.target, true, dc, ref, &warnings) == 0.0);
  CHECK(warnings.size() == 1);
}

TEST_CASE("text tables") {
  ConfusionReport r{{5, 0, 45, 0}, {4, 1, 45, 0}};
  const std::string t = format_confusion_table(r);
  CHECK(t.find("Backdoored images (5), clean images (45)") != std::string::npos);
  CHECK(t.find("4 (80.00%)") != std::string::npos);
  CHECK(t.find("45 (100.00%)") != std::string::npos);
  const std::string m = format_mitigation_table({{"3", 0.5, 1.0, 100.0}, {"4", 0.0, 1.0, std::nullopt}});
  CHECK(m.find("|   0.5000 |    1.0000 | 100.00") != std::string::npos);
  CHECK(m.find("n/a") != std::string::npos);
}
