#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "neo/image.hpp"
#include "neo/oracle.hpp"

namespace neo {

/// Tunables of the blackbox defence.
struct DefenceConfig {
  int blocker_m = 0;  // 0 picks default_blocker_side()
  int blocker_n = 0;
  int trials = 400;       // N: random blocker placements per searched image
  double lambda = 0.8;    // confirmation threshold on check-set transition ratio
  int check_size = 20;    // k: clean images per confirmation
  std::uint64_t kmeans_seed = 0;
  std::uint64_t search_seed = 0;
  double delta = 0.10;    // localized-trigger area bound (informational)
  bool fast_confirm = false;  // trust the first confirmation on later images
  int jobs = 1;

  /// Throws std::invalid_argument when a field is out of range.
  void validate() const;
  /// Blocker width and height for images of the given size.
  std::pair<int, int> blocker_for(int width, int height) const;
};

/// ceil(0.1 * min(width, height)): large enough to cover any trigger whose
/// bounding square stays under 10% of the image.
int default_blocker_side(int width, int height);

class PreconditionError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Clean images with known labels, used to build check sets.
class CleanReference {
 public:
  void add(Label label, Image img);

  std::span<const Image> images_of(Label label) const;
  /// Every image, ordered by label then insertion.
  std::vector<const Image*> all() const;
  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }
  std::vector<Label> labels() const;

 private:
  std::map<Label, std::vector<Image>> by_label_;
  std::size_t size_ = 0;
};

struct CalibrationResult {
  std::vector<double> r_values;  // flip ratio per trial
  double r_av = 0.0;
  double lower = 0.0;  // min(3 * r_av, 1 - r_av)
  double upper = 1.0;  // 1 - r_av
  std::vector<std::string> warnings;

  bool interval_empty() const { return !(3.0 * r_av < 1.0 - r_av); }
  /// Midpoint of [lower, upper], kept strictly inside (0, 1).
  double recommended_lambda() const;
};

/// Baseline false-transition rate: paste random clean crops onto random clean
/// images at the crop's own position and measure how often predictions change.
/// The source image is excluded from its own samples when the reference holds
/// more than one image; sampling is with replacement.
CalibrationResult choose_lambda(Oracle& oracle, const CleanReference& clean_ref, int m, int n, int trials = 10,
                                int samples_per_trial = 1000, std::uint64_t seed = 0, int jobs = 1);

struct Confirmation {
  bool confirmed = false;
  double ratio = 0.0;
  std::size_t transitions = 0;
  bool insufficient_reference = false;  // no clean images of the blocked class
  bool undersized = false;              // fewer than k clean images were available
  Label original;                       // A: prediction of the suspected image
  Label blocked;                        // B: prediction once blocked
  TriggerPatch patch;
  std::vector<Image> check_set;  // clean images with the patch pasted in
  std::vector<Label> check_labels;
};

/// Transplants the pixels under the blocker onto k clean images of class
/// `blocked` and counts how many are then classified as `original`.
/// Confirmed iff transitions / |check set| > lambda.
Confirmation confirm_backdoor(Oracle& oracle, Position pos, int m, int n, double lambda, const Image& img,
                              Label original, Label blocked, const CleanReference& clean_ref, int k,
                              std::uint64_t seed, int jobs = 1);

struct ReconstructedTrigger {
  TriggerPatch patch;
  double ratio = 0.0;
  Label target;
};

struct Reconstruction {
  ReconstructedTrigger trigger;
  std::vector<Image> poisoned_examples;
};

/// Throws PreconditionError unless `c` is a passed confirmation.
Reconstruction reconstruct_trigger(const Confirmation& c);

struct Detection {
  bool found = false;
  Image fixed;  // blocked image when found, otherwise the input unchanged
  Label original;
  Label fixed_label;
  std::optional<Position> position;
  std::optional<Confirmation> confirmation;
  std::vector<Position> candidates;  // distinct transition positions, first-seen order
  bool reference_missing = false;
  Colour blocker_colour;
};

/// Random blocker search for one image followed by confirmation of each
/// transition position in generation order.
/// Oracle queries: at most 1 + N + |candidates| * k.
Detection trigger_detect(Oracle& oracle, const Image& img, const DefenceConfig& config,
                         const CleanReference& clean_ref, std::uint64_t kmeans_seed, std::uint64_t search_seed);

enum class VerdictStatus { clean, backdoored, suspected_then_cleared };

std::string to_string(VerdictStatus s);
VerdictStatus parse_status(const std::string& s);

struct Verdict {
  std::string id;
  VerdictStatus status = VerdictStatus::clean;
  Label original;
  Label sanitized;
  std::optional<Position> position;  // blocker position used, if any
  bool searched = false;             // processed by the search phase
  bool transition = false;           // blocking changed the prediction
  bool reference_missing = false;
  std::size_t candidates = 0;        // search phase only
  std::size_t queries = 0;
};

struct DefenceAbort {
  enum class Reason { oracle_failure, missing_reference };
  Reason reason;
  std::string message;
  std::size_t at_index = 0;
};

struct DefenceResult {
  std::vector<Verdict> verdicts;
  std::vector<std::size_t> backdoor_set;  // indices into the stream
  std::optional<Position> trigger_position;
  std::optional<Reconstruction> reconstruction;
  std::vector<Image> fixed;  // sanitized images, one per verdict
  std::optional<DefenceAbort> abort;
  std::vector<std::string> warnings;
};

/// Streaming defence. Searches each image for a trigger position until one is
/// confirmed, then blocks that position on every later image and confirms any
/// transition it causes. Oracle failures stop the stream and are reported in
/// `abort` along with the verdicts produced so far.
DefenceResult defend(Oracle& oracle, std::span<const Image> stream, const DefenceConfig& config,
                     const CleanReference& clean_ref, std::span<const std::string> ids = {});

}  // namespace neo
