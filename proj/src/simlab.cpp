#include "neo/simlab.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace neo::simlab {

namespace {

constexpr int kGlyphOffset = 3;
constexpr int kGlyphGrid = 4;
constexpr int kMinHamming = 5;

int glyph_cell(const WorldConfig& cfg) {
  return std::max(1, (std::min(cfg.width, cfg.height) - 4 * kGlyphOffset) / kGlyphGrid);
}

std::vector<std::uint16_t> class_codewords(int num_classes, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xC0DE));
  std::uniform_int_distribution<int> word(0, 0xFFFF);
  std::vector<std::uint16_t> codes;
  for (int tries = 0; static_cast<int>(codes.size()) < num_classes; ++tries) {
    if (tries > 1'000'000) throw std::invalid_argument("cannot build enough class glyphs; reduce num_classes");
    const auto w = static_cast<std::uint16_t>(word(rng));
    const int weight = std::popcount(w);
    if (weight < 5 || weight > 8) continue;
    const bool far = std::all_of(codes.begin(), codes.end(), [w](std::uint16_t c) {
      return std::popcount(static_cast<std::uint16_t>(c ^ w)) >= kMinHamming;
    });
    if (far) codes.push_back(w);
  }
  return codes;
}

std::uint8_t clamp_byte(int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); }

}  // namespace

std::string to_string(TriggerShape shape) {
  switch (shape) {
    case TriggerShape::square: return "square";
    case TriggerShape::inverted_l: return "inverted-L";
    case TriggerShape::lateral_l: return "lateral-L";
    case TriggerShape::three_dots: return "three-dots";
    case TriggerShape::custom: return "custom";
  }
  return "custom";
}

TriggerShape parse_shape(const std::string& name) {
  for (auto s : {TriggerShape::square, TriggerShape::inverted_l, TriggerShape::lateral_l, TriggerShape::three_dots,
                 TriggerShape::custom}) {
    if (to_string(s) == name) return s;
  }
  throw std::invalid_argument("unknown trigger shape '" + name + "'");
}

std::size_t TriggerPattern::masked_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

double TriggerPattern::area_fraction(int width, int height) const {
  return static_cast<double>(size) * size / (static_cast<double>(width) * height);
}

TriggerPattern make_trigger(TriggerShape shape, int size, const Colour& colour, Position position) {
  if (size < 1) throw std::invalid_argument("trigger size must be positive");
  TriggerPattern t;
  t.shape = shape;
  t.size = size;
  t.position = position;
  t.mask.assign(static_cast<std::size_t>(size) * size, false);
  auto set = [&](int row, int col) { t.mask[static_cast<std::size_t>(row) * size + col] = true; };
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      switch (shape) {
        case TriggerShape::square:
        case TriggerShape::custom:
          set(r, c);
          break;
        case TriggerShape::inverted_l:
          if (r == 0 || c == size - 1) set(r, c);
          break;
        case TriggerShape::lateral_l:
          if (r == size - 1 || c == 0) set(r, c);
          break;
        case TriggerShape::three_dots:
          if (r == c && (r == 0 || r == size - 1 || r == size / 2)) set(r, c);
          break;
      }
    }
  }
  t.colours.assign(t.masked_count(), colour);
  return t;
}

void validate_trigger(const TriggerPattern& t, int width, int height, int channels, double delta) {
  if (t.size < 1 || t.mask.size() != static_cast<std::size_t>(t.size) * t.size) {
    throw std::invalid_argument("trigger mask must be size x size");
  }
  if (t.masked_count() == 0) throw std::invalid_argument("trigger mask is empty");
  if (t.colours.size() != t.masked_count()) throw std::invalid_argument("trigger needs one colour per masked cell");
  for (const auto& c : t.colours) {
    if (c.channels != channels) throw ChannelMismatch("trigger colour channel count does not match images");
  }
  if (t.position.x < 0 || t.position.y < 0 || t.position.x + t.size > width || t.position.y + t.size > height) {
    throw BoundsError("trigger box does not fit inside the image frame");
  }
  const double area = t.area_fraction(width, height);
  if (area > delta) {
    throw std::invalid_argument("trigger covers " + std::to_string(area * 100.0) +
                                "% of the image; a localized trigger may cover at most " +
                                std::to_string(delta * 100.0) + "% (delta)");
  }
}

Position default_trigger_position(int width, int height, int size) {
  return {std::max(0, width - size - 4), std::max(0, height - size - 4)};
}

std::vector<Image> make_prototypes(const WorldConfig& cfg) {
  if (cfg.num_classes < 2) throw std::invalid_argument("need at least 2 classes");
  const auto codes = class_codewords(cfg.num_classes, cfg.seed);
  const int cell = glyph_cell(cfg);
  Rng rng(derive_seed(cfg.seed, 0xB6));
  std::uniform_int_distribution<int> bg_level(45, 140);
  std::uniform_int_distribution<int> fg_level(175, 235);

  std::vector<Image> protos;
  for (int k = 0; k < cfg.num_classes; ++k) {
    Colour bg;
    Colour fg;
    if (cfg.channels == 1) {
      bg = Colour::gray(0);
      fg = Colour::gray(255);
    } else {
      bg = Colour::rgb(clamp_byte(bg_level(rng)), clamp_byte(bg_level(rng)), clamp_byte(bg_level(rng)));
      fg = Colour::rgb(clamp_byte(fg_level(rng)), clamp_byte(fg_level(rng)), clamp_byte(fg_level(rng)));
    }
    Image img = Image::filled(cfg.width, cfg.height, bg);
    for (int bit = 0; bit < kGlyphGrid * kGlyphGrid; ++bit) {
      if (!((codes[k] >> bit) & 1U)) continue;
      const int x0 = kGlyphOffset + (bit % kGlyphGrid) * cell;
      const int y0 = kGlyphOffset + (bit / kGlyphGrid) * cell;
      for (int y = y0; y < std::min(y0 + cell, cfg.height); ++y)
        for (int x = x0; x < std::min(x0 + cell, cfg.width); ++x) img.set_pixel(x, y, fg);
    }
    protos.push_back(std::move(img));
  }
  return protos;
}

GeneratedData gen_dataset(const WorldConfig& cfg, int images_per_class) {
  if (images_per_class < 0) throw std::invalid_argument("images_per_class must be non-negative");
  GeneratedData out;
  out.prototypes = make_prototypes(cfg);
  std::uniform_int_distribution<int> jitter(-cfg.noise, cfg.noise);
  std::uint64_t index = 0;
  for (int k = 0; k < cfg.num_classes; ++k) {
    for (int i = 0; i < images_per_class; ++i, ++index) {
      Image img = out.prototypes[k];
      if (cfg.noise > 0) {
        Rng rng(derive_seed(cfg.seed, index + 1));
        for (auto& v : img.data()) v = clamp_byte(int(v) + jitter(rng));
      }
      out.images.push_back(std::move(img));
      out.labels.push_back(Label{k});
    }
  }
  return out;
}

Image poison_image(const Image& img, const TriggerPattern& t) {
  if (t.position.x < 0 || t.position.y < 0 || t.position.x + t.size > img.width() ||
      t.position.y + t.size > img.height()) {
    throw BoundsError("poison_image: trigger does not fit in image");
  }
  Image out = img;
  std::size_t masked = 0;
  for (int r = 0; r < t.size; ++r) {
    for (int c = 0; c < t.size; ++c) {
      if (!t.mask[static_cast<std::size_t>(r) * t.size + c]) continue;
      const Colour& colour = t.colours.at(masked++);
      if (colour.channels != img.channels()) throw ChannelMismatch("poison_image: trigger colour channels");
      out.set_pixel(t.position.x + c, t.position.y + r, colour);
    }
  }
  return out;
}

double trigger_match(const SimClassifier& cl, const Image& img) {
  const auto& t = cl.trigger;
  std::size_t masked = 0;
  std::size_t hits = 0;
  for (int r = 0; r < t.size; ++r) {
    for (int c = 0; c < t.size; ++c) {
      if (!t.mask[static_cast<std::size_t>(r) * t.size + c]) continue;
      const Colour& want = t.colours[masked++];
      bool ok = true;
      for (int ch = 0; ch < img.channels() && ok; ++ch) {
        ok = std::abs(int(img.at(t.position.x + c, t.position.y + r, ch)) - int(want[ch])) <= cl.tau;
      }
      hits += ok ? 1 : 0;
    }
  }
  return masked == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(masked);
}

Label nearest_prototype(const std::vector<Image>& prototypes, const Image& img) {
  Label best{0};
  std::int64_t best_d = std::numeric_limits<std::int64_t>::max();
  for (std::size_t k = 0; k < prototypes.size(); ++k) {
    const auto p = prototypes[k].data();
    const auto q = img.data();
    std::int64_t d = 0;
    for (std::size_t i = 0; i < q.size(); ++i) {
      const int diff = int(p[i]) - int(q[i]);
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = Label{static_cast<int>(k)};
    }
  }
  return best;
}

Label sim_classify(const SimClassifier& cl, const Image& img) {
  if (cl.prototypes.empty()) throw std::invalid_argument("sim_classify: classifier has no prototypes");
  const Image& ref = cl.prototypes.front();
  if (img.width() != ref.width() || img.height() != ref.height() || img.channels() != ref.channels()) {
    throw std::invalid_argument("sim_classify: image dimensions do not match the classifier");
  }
  if (trigger_match(cl, img) >= cl.theta) return cl.target;
  return nearest_prototype(cl.prototypes, img);
}

SimOracle::SimOracle(SimClassifier classifier) : classifier_(std::move(classifier)) {
  if (classifier_.num_classes() < 2) throw std::invalid_argument("SimOracle needs at least 2 classes");
  if (classifier_.target.id < 0 || classifier_.target.id >= classifier_.num_classes()) {
    throw std::invalid_argument("backdoor target outside the label range");
  }
}

OracleDescriptor SimOracle::descriptor() const {
  return {OracleKind::in_process, classifier_.num_classes(), true};
}

SimClassifier World::classifier() const {
  return SimClassifier{make_prototypes(config), trigger, target, theta, tau};
}

World default_world(const WorldConfig& cfg, int trigger_size) {
  World w;
  w.config = cfg;
  const Colour colour = cfg.channels == 1 ? Colour::gray(255) : Colour::rgb(255, 255, 0);
  w.trigger = make_trigger(TriggerShape::square, trigger_size, colour,
                           default_trigger_position(cfg.width, cfg.height, trigger_size));
  w.target = Label{0};
  return w;
}

Stream build_stream(const GeneratedData& data, const World& world, std::size_t stream_size, double poison_fraction,
                    std::uint64_t seed) {
  if (stream_size > data.images.size()) {
    throw std::invalid_argument("stream size exceeds the number of generated images");
  }
  if (poison_fraction < 0.0 || poison_fraction > 1.0) throw std::invalid_argument("poison fraction must be in [0,1]");

  std::vector<std::size_t> order(data.images.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(stream_size);

  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (data.labels[order[i]] != world.target) eligible.push_back(i);
  }
  const auto n_poison = static_cast<std::size_t>(std::llround(poison_fraction * static_cast<double>(stream_size)));
  if (n_poison > eligible.size()) {
    throw std::invalid_argument("not enough non-target images to poison " + std::to_string(n_poison));
  }
  Rng pick(derive_seed(seed, 1));
  std::shuffle(eligible.begin(), eligible.end(), pick);
  eligible.resize(n_poison);

  Stream s;
  s.poisoned.assign(stream_size, false);
  for (auto i : eligible) s.poisoned[i] = true;
  for (std::size_t i = 0; i < stream_size; ++i) {
    const Image& clean = data.images[order[i]];
    s.images.push_back(s.poisoned[i] ? poison_image(clean, world.trigger) : clean);
    s.clean_images.push_back(clean);
    s.labels.push_back(data.labels[order[i]]);
    s.source.push_back(order[i]);
  }
  return s;
}

}  // namespace neo::simlab
