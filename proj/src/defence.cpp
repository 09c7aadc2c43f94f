#include "neo/defence.hpp"

#include <algorithm>
#include <set>

#include "neo/colour.hpp"

namespace neo {

namespace {

constexpr std::size_t kChunk = 128;

// Seed streams derived per image so the run is a pure function of the config seeds.
constexpr std::uint64_t kConfirmStream = 0x5EED0001;

std::vector<std::size_t> sample_without_replacement(std::size_t pool, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(pool);
  for (std::size_t i = 0; i < pool; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  return idx;
}

}  // namespace

void DefenceConfig::validate() const {
  if (!(lambda > 0.0 && lambda < 1.0)) throw std::invalid_argument("lambda must lie in (0, 1)");
  if (trials < 0) throw std::invalid_argument("trial count N must be non-negative");
  if (check_size < 1) throw std::invalid_argument("check-set size k must be at least 1");
  if (blocker_m < 0 || blocker_n < 0) throw std::invalid_argument("blocker dimensions must be positive");
  if ((blocker_m == 0) != (blocker_n == 0)) throw std::invalid_argument("set both blocker dimensions or neither");
  if (jobs < 1) throw std::invalid_argument("jobs must be at least 1");
}

int default_blocker_side(int width, int height) {
  // Integer ceil(min / 10); the floating-point form overshoots at multiples of 10.
  return std::max(1, (std::min(width, height) + 9) / 10);
}

std::pair<int, int> DefenceConfig::blocker_for(int width, int height) const {
  if (blocker_m > 0 && blocker_n > 0) return {blocker_m, blocker_n};
  const int side = default_blocker_side(width, height);
  return {side, side};
}

void CleanReference::add(Label label, Image img) {
  by_label_[label].push_back(std::move(img));
  ++size_;
}

std::span<const Image> CleanReference::images_of(Label label) const {
  auto it = by_label_.find(label);
  if (it == by_label_.end()) return {};
  return it->second;
}

std::vector<const Image*> CleanReference::all() const {
  std::vector<const Image*> out;
  out.reserve(size_);
  for (const auto& [label, imgs] : by_label_)
    for (const auto& img : imgs) out.push_back(&img);
  return out;
}

std::vector<Label> CleanReference::labels() const {
  std::vector<Label> out;
  for (const auto& [label, imgs] : by_label_) out.push_back(label);
  return out;
}

double CalibrationResult::recommended_lambda() const {
  constexpr double eps = 1e-6;
  return std::clamp(0.5 * (lower + upper), eps, 1.0 - eps);
}

CalibrationResult choose_lambda(Oracle& oracle, const CleanReference& clean_ref, int m, int n, int trials,
                                int samples_per_trial, std::uint64_t seed, int jobs) {
  if (clean_ref.empty()) throw std::invalid_argument("choose_lambda: clean reference is empty");
  if (trials < 1 || samples_per_trial < 1) throw std::invalid_argument("choose_lambda: trials and samples must be >= 1");

  const auto pool = clean_ref.all();
  CalibrationResult res;
  if (pool.size() < static_cast<std::size_t>(samples_per_trial)) {
    res.warnings.push_back("clean reference holds " + std::to_string(pool.size()) + " images, fewer than " +
                           std::to_string(samples_per_trial) + " samples per trial; sampling with replacement");
  }

  std::vector<std::optional<Label>> baseline(pool.size());
  auto ensure_baseline = [&](const std::vector<std::size_t>& idx) {
    std::vector<std::size_t> missing;
    std::set<std::size_t> seen;
    for (auto i : idx)
      if (!baseline[i] && seen.insert(i).second) missing.push_back(i);
    if (missing.empty()) return;
    std::vector<Image> imgs;
    imgs.reserve(missing.size());
    for (auto i : missing) imgs.push_back(*pool[i]);
    const auto labels = classify_parallel(oracle, imgs, jobs);
    for (std::size_t j = 0; j < missing.size(); ++j) baseline[missing[j]] = labels[j];
  };

  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> any(0, pool.size() - 1);
  for (int t = 0; t < trials; ++t) {
    const std::size_t src = any(rng);
    const Image& init = *pool[src];
    const Position pos = random_position(rng, init.width(), init.height(), m, n);
    const TriggerPatch crop = extract_region(init, pos, m, n);

    std::vector<std::size_t> samples(static_cast<std::size_t>(samples_per_trial));
    for (auto& s : samples) {
      if (pool.size() > 1) {
        std::uniform_int_distribution<std::size_t> other(0, pool.size() - 2);
        s = other(rng);
        if (s >= src) ++s;
      } else {
        s = src;
      }
    }
    ensure_baseline(samples);

    std::size_t flips = 0;
    for (std::size_t start = 0; start < samples.size(); start += kChunk) {
      const std::size_t end = std::min(samples.size(), start + kChunk);
      std::vector<Image> modified;
      modified.reserve(end - start);
      for (std::size_t j = start; j < end; ++j) modified.push_back(paste_region(*pool[samples[j]], crop, pos));
      const auto labels = classify_parallel(oracle, modified, jobs);
      for (std::size_t j = start; j < end; ++j) flips += labels[j - start] != *baseline[samples[j]] ? 1 : 0;
    }
    res.r_values.push_back(static_cast<double>(flips) / static_cast<double>(samples.size()));
  }

  double sum = 0.0;
  for (double r : res.r_values) sum += r;
  res.r_av = sum / static_cast<double>(res.r_values.size());
  res.upper = 1.0 - res.r_av;
  res.lower = std::min(3.0 * res.r_av, res.upper);
  if (res.interval_empty()) {
    res.warnings.push_back("recommended lambda interval is empty: baseline flip rate " + std::to_string(res.r_av) +
                           " leaves no room for 1 - R_av > lambda >> R_av");
  }
  return res;
}

Confirmation confirm_backdoor(Oracle& oracle, Position pos, int m, int n, double lambda, const Image& img,
                              Label original, Label blocked, const CleanReference& clean_ref, int k,
                              std::uint64_t seed, int jobs) {
  if (k < 1) throw std::invalid_argument("confirm_backdoor: k must be at least 1");
  Confirmation c;
  c.original = original;
  c.blocked = blocked;
  c.patch = extract_region(img, pos, m, n);

  const auto pool = clean_ref.images_of(blocked);
  if (pool.empty()) {
    c.insufficient_reference = true;
    return c;
  }
  const auto want = static_cast<std::size_t>(k);
  c.undersized = pool.size() < want;
  Rng rng(seed);
  const auto chosen = sample_without_replacement(pool.size(), std::min(want, pool.size()), rng);

  c.check_set.reserve(chosen.size());
  for (auto i : chosen) c.check_set.push_back(paste_region(pool[i], c.patch, pos));
  c.check_labels = classify_parallel(oracle, c.check_set, jobs);
  c.transitions = static_cast<std::size_t>(std::count(c.check_labels.begin(), c.check_labels.end(), original));
  c.ratio = static_cast<double>(c.transitions) / static_cast<double>(c.check_set.size());
  c.confirmed = c.ratio > lambda;
  return c;
}

Reconstruction reconstruct_trigger(const Confirmation& c) {
  if (!c.confirmed) throw PreconditionError("reconstruct_trigger: no confirmed backdoor");
  return Reconstruction{ReconstructedTrigger{c.patch, c.ratio, c.original}, c.check_set};
}

Detection trigger_detect(Oracle& oracle, const Image& img, const DefenceConfig& config,
                         const CleanReference& clean_ref, std::uint64_t kmeans_seed, std::uint64_t search_seed) {
  config.validate();
  const auto [m, n] = config.blocker_for(img.width(), img.height());
  if (!fits(img, {0, 0}, m, n)) throw BoundsError("trigger_detect: blocker larger than image");

  Detection d;
  d.fixed = img;
  d.original = oracle.classify(img);
  d.fixed_label = d.original;
  if (config.trials == 0) return d;

  d.blocker_colour = dominant_colour(img, kmeans_seed);
  const BlockerSpec blocker{m, n, d.blocker_colour};

  Rng rng(search_seed);
  std::vector<Position> positions(static_cast<std::size_t>(config.trials));
  for (auto& p : positions) p = random_position(rng, img.width(), img.height(), m, n);

  std::vector<Label> candidate_labels;
  std::set<Position> seen;
  for (std::size_t start = 0; start < positions.size(); start += kChunk) {
    const std::size_t end = std::min(positions.size(), start + kChunk);
    std::vector<Image> blocked;
    blocked.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) blocked.push_back(place_blocker(img, positions[i], blocker));
    const auto labels = classify_parallel(oracle, blocked, config.jobs);
    for (std::size_t i = start; i < end; ++i) {
      if (labels[i - start] != d.original && seen.insert(positions[i]).second) {
        d.candidates.push_back(positions[i]);
        candidate_labels.push_back(labels[i - start]);
      }
    }
  }

  for (std::size_t j = 0; j < d.candidates.size(); ++j) {
    if (clean_ref.empty()) {
      d.reference_missing = true;
      break;
    }
    auto conf = confirm_backdoor(oracle, d.candidates[j], m, n, config.lambda, img, d.original, candidate_labels[j],
                                 clean_ref, config.check_size, derive_seed(search_seed ^ kConfirmStream, j),
                                 config.jobs);
    if (conf.insufficient_reference) d.reference_missing = true;
    if (conf.confirmed) {
      d.found = true;
      d.position = d.candidates[j];
      d.fixed = place_blocker(img, d.candidates[j], blocker);
      d.fixed_label = candidate_labels[j];
      d.confirmation = std::move(conf);
      return d;
    }
  }
  return d;
}

std::string to_string(VerdictStatus s) {
  switch (s) {
    case VerdictStatus::clean: return "clean";
    case VerdictStatus::backdoored: return "backdoored";
    case VerdictStatus::suspected_then_cleared: return "suspected-then-cleared";
  }
  return "clean";
}

VerdictStatus parse_status(const std::string& s) {
  if (s == "clean") return VerdictStatus::clean;
  if (s == "backdoored") return VerdictStatus::backdoored;
  if (s == "suspected-then-cleared") return VerdictStatus::suspected_then_cleared;
  throw std::invalid_argument("unknown verdict status '" + s + "'");
}

DefenceResult defend(Oracle& oracle, std::span<const Image> stream, const DefenceConfig& config,
                     const CleanReference& clean_ref, std::span<const std::string> ids) {
  config.validate();
  if (!ids.empty() && ids.size() != stream.size()) throw std::invalid_argument("defend: one id per image required");

  CountingOracle counted(oracle);
  DefenceResult res;
  std::optional<Position> known;
  std::optional<std::pair<int, int>> known_size;

  for (std::size_t i = 0; i < stream.size(); ++i) {
    const Image& img = stream[i];
    Verdict v;
    v.id = ids.empty() ? std::to_string(i) : ids[i];
    counted.reset();
    const std::uint64_t kseed = derive_seed(config.kmeans_seed, i);
    const std::uint64_t sseed = derive_seed(config.search_seed, i);
    Image fixed = img;

    try {
      if (!known) {
        Detection d = trigger_detect(counted, img, config, clean_ref, kseed, sseed);
        v.searched = true;
        v.original = d.original;
        v.candidates = d.candidates.size();
        v.transition = !d.candidates.empty();
        v.reference_missing = d.reference_missing;
        if (d.reference_missing && clean_ref.empty()) {
          res.abort = DefenceAbort{DefenceAbort::Reason::missing_reference,
                                   "confirmation needed but no clean reference images were provided", i};
          break;
        }
        if (d.found) {
          v.status = VerdictStatus::backdoored;
          v.sanitized = d.fixed_label;
          v.position = d.position;
          fixed = d.fixed;
          known = d.position;
          known_size = config.blocker_for(img.width(), img.height());
          res.trigger_position = d.position;
          res.reconstruction = reconstruct_trigger(*d.confirmation);
        } else {
          v.status = v.transition ? VerdictStatus::suspected_then_cleared : VerdictStatus::clean;
          v.sanitized = v.original;
        }
      } else {
        const auto [m, n] = *known_size;
        v.original = counted.classify(img);
        v.position = known;
        const BlockerSpec blocker{m, n, dominant_colour(img, kseed)};
        const Image blocked = place_blocker(img, *known, blocker);
        const Label blocked_label = counted.classify(blocked);
        v.sanitized = v.original;
        if (blocked_label != v.original) {
          v.transition = true;
          bool confirmed = config.fast_confirm;
          if (!confirmed) {
            if (clean_ref.empty()) {
              res.abort = DefenceAbort{DefenceAbort::Reason::missing_reference,
                                       "confirmation needed but no clean reference images were provided", i};
              break;
            }
            const auto conf = confirm_backdoor(counted, *known, m, n, config.lambda, img, v.original, blocked_label,
                                               clean_ref, config.check_size,
                                               derive_seed(sseed ^ kConfirmStream, 0), config.jobs);
            v.reference_missing = conf.insufficient_reference;
            confirmed = conf.confirmed;
          }
          if (confirmed) {
            v.status = VerdictStatus::backdoored;
            v.sanitized = blocked_label;
            fixed = blocked;
          } else {
            v.status = VerdictStatus::suspected_then_cleared;
          }
        }
      }
    } catch (const OracleError& e) {
      res.abort = DefenceAbort{DefenceAbort::Reason::oracle_failure, e.what(), i};
      break;
    }

    if (v.reference_missing) {
      res.warnings.push_back("image " + v.id + ": no clean reference images for the blocked class");
    }
    v.queries = counted.queries();
    if (v.status == VerdictStatus::backdoored) res.backdoor_set.push_back(i);
    res.verdicts.push_back(std::move(v));
    res.fixed.push_back(std::move(fixed));
  }
  return res;
}

}  // namespace neo
