#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "neo/image.hpp"
#include "neo/oracle.hpp"

namespace neo::simlab {

enum class TriggerShape { square, inverted_l, lateral_l, three_dots, custom };

std::string to_string(TriggerShape shape);
TriggerShape parse_shape(const std::string& name);

/// A localized trigger: a boolean mask over an s x s box stamped at a fixed position.
struct TriggerPattern {
  TriggerShape shape = TriggerShape::square;
  int size = 3;                 // s
  std::vector<bool> mask;       // s*s, row-major
  std::vector<Colour> colours;  // one per masked cell, row-major order
  Position position;

  std::size_t masked_count() const;
  /// Fraction of a width x height frame covered by the s x s box.
  double area_fraction(int width, int height) const;
};

/// Builds one of the named shapes in a uniform colour.
///   square      every cell
///   inverted-L  top row and right column
///   lateral-L   bottom row and left column
///   three-dots  main-diagonal corners and centre
TriggerPattern make_trigger(TriggerShape shape, int size, const Colour& colour, Position position);

/// Throws std::invalid_argument unless the trigger is non-empty, fits the frame
/// and covers at most `delta` of its area.
void validate_trigger(const TriggerPattern& trigger, int width, int height, int channels, double delta = 0.10);

/// Default trigger placement: bottom-right, clear of the class glyphs.
Position default_trigger_position(int width, int height, int size);

struct WorldConfig {
  int num_classes = 5;
  int width = 32;
  int height = 32;
  int channels = 3;
  std::uint64_t seed = 0;
  int noise = 12;  // uniform per-channel noise amplitude
};

/// One noiseless prototype per class: a class background colour with a 4x4
/// grid glyph whose cells encode a class codeword (pairwise Hamming distance >= 5).
std::vector<Image> make_prototypes(const WorldConfig& cfg);

struct GeneratedData {
  std::vector<Image> images;  // class-major: images_per_class of class 0, then class 1, ...
  std::vector<Label> labels;
  std::vector<Image> prototypes;
};

GeneratedData gen_dataset(const WorldConfig& cfg, int images_per_class);

/// Overwrites the masked cells with the trigger colours. Idempotent.
Image poison_image(const Image& img, const TriggerPattern& trigger);

struct SimClassifier {
  std::vector<Image> prototypes;
  TriggerPattern trigger;
  Label target;
  double theta = 0.9;  // fraction of masked cells that must match
  int tau = 25;        // per-channel colour tolerance

  int num_classes() const { return static_cast<int>(prototypes.size()); }
};

/// Fraction of masked trigger cells whose colour is within tau of the trigger colour.
double trigger_match(const SimClassifier& c, const Image& img);

/// Target label when the trigger rule fires, otherwise the nearest prototype
/// in L2 (ties to the smaller class id).
Label sim_classify(const SimClassifier& c, const Image& img);

/// Nearest-prototype label, ignoring the trigger rule.
Label nearest_prototype(const std::vector<Image>& prototypes, const Image& img);

class SimOracle final : public Oracle {
 public:
  explicit SimOracle(SimClassifier classifier);

  OracleDescriptor descriptor() const override;
  Label classify(const Image& img) override { return sim_classify(classifier_, img); }

  const SimClassifier& classifier() const { return classifier_; }

 private:
  SimClassifier classifier_;
};

/// Everything needed to rebuild a simulated poisoned world: generator settings,
/// trigger and backdoor target.
struct World {
  WorldConfig config;
  TriggerPattern trigger;
  Label target;
  double theta = 0.9;
  int tau = 25;

  SimClassifier classifier() const;
};

/// World with the default trigger: a yellow (RGB) or white (grayscale) square at
/// the default position, targeting class 0.
World default_world(const WorldConfig& cfg, int trigger_size = 3);

/// A stream drawn from a generated dataset with some images poisoned.
struct Stream {
  std::vector<Image> images;        // as presented to the defence
  std::vector<Image> clean_images;  // unpoisoned counterparts
  std::vector<Label> labels;        // ground truth
  std::vector<bool> poisoned;
  std::vector<std::size_t> source;  // index into the generated dataset
};

/// Shuffles the dataset with `seed`, keeps the first `stream_size` images and poisons
/// round(poison_fraction * stream_size) of those whose true label differs from
/// the backdoor target.
Stream build_stream(const GeneratedData& data, const World& world, std::size_t stream_size,
                    double poison_fraction, std::uint64_t seed);

}  // namespace neo::simlab
