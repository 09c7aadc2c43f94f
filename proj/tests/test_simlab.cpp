#include <doctest.h>

#include "neo/simlab.hpp"

using namespace neo;
using namespace neo::simlab;

namespace {

WorldConfig rgb_config(std::uint64_t seed = 7) {
  WorldConfig cfg;
  cfg.seed = seed;
  return cfg;
}

WorldConfig mnist_config(std::uint64_t seed = 7) {
  WorldConfig cfg;
  cfg.num_classes = 10;
  cfg.width = 28;
  cfg.height = 28;
  cfg.channels = 1;
  cfg.seed = seed;
  return cfg;
}

std::string mask_string(const TriggerPattern& t) {
  std::string s;
  for (std::size_t i = 0; i < t.mask.size(); ++i) s += t.mask[i] ? '#' : '.';
  return s;
}

}  // namespace

TEST_CASE("named trigger shapes") {
  const Colour y = Colour::rgb(255, 255, 0);
  CHECK(mask_string(make_trigger(TriggerShape::square, 3, y, {0, 0})) == "#########");
  CHECK(mask_string(make_trigger(TriggerShape::inverted_l, 3, y, {0, 0})) == "###..#..#");
  CHECK(mask_string(make_trigger(TriggerShape::lateral_l, 3, y, {0, 0})) == "#..#..###");
  CHECK(mask_string(make_trigger(TriggerShape::three_dots, 3, y, {0, 0})) == "#...#...#");
  const auto sq = make_trigger(TriggerShape::square, 4, y, {1, 2});
  CHECK(sq.masked_count() == 16);
  CHECK(sq.colours.size() == 16);
  CHECK(sq.area_fraction(32, 32) == doctest::Approx(16.0 / 1024.0));
  for (auto s : {TriggerShape::square, TriggerShape::inverted_l, TriggerShape::lateral_l, TriggerShape::three_dots,
                 TriggerShape::custom}) {
    CHECK(parse_shape(to_string(s)) == s);
  }
  CHECK_THROWS_AS(parse_shape("circle"), std::invalid_argument);
}

TEST_CASE("trigger validation enforces the area bound and frame") {
  const Colour y = Colour::rgb(255, 255, 0);
  CHECK_NOTHROW(validate_trigger(make_trigger(TriggerShape::square, 10, y, {0, 0}), 32, 32, 3));
  CHECK_THROWS_AS(validate_trigger(make_trigger(TriggerShape::square, 11, y, {0, 0}), 32, 32, 3),
                  std::invalid_argument);
  CHECK_THROWS_AS(validate_trigger(make_trigger(TriggerShape::square, 3, y, {30, 0}), 32, 32, 3), BoundsError);
  CHECK_THROWS_AS(validate_trigger(make_trigger(TriggerShape::square, 3, y, {0, 0}), 32, 32, 1), ChannelMismatch);
  TriggerPattern empty = make_trigger(TriggerShape::square, 2, y, {0, 0});
  empty.mask.assign(4, false);
  empty.colours.clear();
  CHECK_THROWS_AS(validate_trigger(empty, 32, 32, 3), std::invalid_argument);
  try {
    validate_trigger(make_trigger(TriggerShape::square, 11, y, {0, 0}), 32, 32, 3);
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("at most 10.0") != std::string::npos);
  }
}

TEST_CASE("default trigger position sits bottom-right inside the frame") {
  CHECK(default_trigger_position(32, 32, 3) == Position{25, 25});
  CHECK(default_trigger_position(28, 28, 3) == Position{21, 21});
  CHECK(default_trigger_position(32, 32, 4) == Position{24, 24});
}

TEST_CASE("poison_image stamps exactly the masked cells and is idempotent") {
  const Image base = Image::filled(10, 10, Colour::rgb(1, 2, 3));
  const auto t = make_trigger(TriggerShape::inverted_l, 3, Colour::rgb(255, 255, 0), {5, 6});
  const Image p = poison_image(base, t);
  int changed = 0;
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x) changed += p.pixel(x, y) != base.pixel(x, y) ? 1 : 0;
  CHECK(changed == 5);
  CHECK(p.pixel(7, 8) == Colour::rgb(255, 255, 0));
  CHECK(p.pixel(5, 8) == Colour::rgb(1, 2, 3));
  CHECK(poison_image(p, t) == p);
}

TEST_CASE("generated datasets are deterministic and class-major") {
  const auto a = gen_dataset(rgb_config(), 4);
  const auto b = gen_dataset(rgb_config(), 4);
  REQUIRE(a.images.size() == 20);
  CHECK(a.images == b.images);
  CHECK(a.labels[0] == Label{0});
  CHECK(a.labels[4] == Label{1});
  CHECK(a.labels[19] == Label{4});
  CHECK(gen_dataset(rgb_config(8), 4).images != a.images);
  CHECK(a.images[0] != a.images[1]);
}

TEST_CASE("prototypes are pairwise well separated") {
  for (const auto& cfg : {rgb_config(), mnist_config(), mnist_config(123)}) {
    const auto protos = make_prototypes(cfg);
    REQUIRE(protos.size() == static_cast<std::size_t>(cfg.num_classes));
    for (std::size_t i = 0; i < protos.size(); ++i) {
      for (std::size_t j = i + 1; j < protos.size(); ++j) {
        double d2 = 0.0;
        for (std::size_t k = 0; k < protos[i].data().size(); ++k) {
          const double d = double(protos[i].data()[k]) - double(protos[j].data()[k]);
          d2 += d * d;
        }
        // Noise bounded by 12 per value moves an image at most 12*sqrt(n) in L2,
        // so half the prototype distance must exceed that.
        CHECK(d2 > 4.0 * 12.0 * 12.0 * double(protos[i].data().size()));
      }
    }
  }
}

TEST_CASE("simulated classifier: clean images keep their class, triggers hit the target") {
  for (const auto& cfg : {rgb_config(), mnist_config()}) {
    const World w = default_world(cfg);
    const SimClassifier c = w.classifier();
    const auto data = gen_dataset(cfg, 30);
    for (std::size_t i = 0; i < data.images.size(); ++i) {
      CHECK(sim_classify(c, data.images[i]) == data.labels[i]);
      CHECK(trigger_match(c, data.images[i]) < c.theta);
      const Image p = poison_image(data.images[i], w.trigger);
      CHECK(trigger_match(c, p) == doctest::Approx(1.0));
      CHECK(sim_classify(c, p) == w.target);
      CHECK(nearest_prototype(c.prototypes, p) == data.labels[i]);
    }
  }
}

TEST_CASE("partial triggers below theta do not fire") {
  const World w = default_world(rgb_config(), 3);
  const SimClassifier c = w.classifier();
  Image p = poison_image(gen_dataset(rgb_config(), 1).images[2], w.trigger);
  // 8 of 9 cells: 0.889 < 0.9.
  p.set_pixel(w.trigger.position.x, w.trigger.position.y, Colour::rgb(0, 0, 0));
  CHECK(trigger_match(c, p) == doctest::Approx(8.0 / 9.0));
  CHECK(sim_classify(c, p) == Label{2});
}

TEST_CASE("stream poisoning: exact count, non-target sources only") {
  const World w = default_world(rgb_config());
  const auto data = gen_dataset(rgb_config(), 100);
  const Stream s = build_stream(data, w, 500, 0.10, 3);
  REQUIRE(s.images.size() == 500);
  std::size_t poisoned = 0;
  for (std::size_t i = 0; i < 500; ++i) {
    CHECK(s.clean_images[i] == data.images[s.source[i]]);
    CHECK(s.labels[i] == data.labels[s.source[i]]);
    if (s.poisoned[i]) {
      ++poisoned;
      CHECK(s.labels[i] != w.target);
      CHECK(s.images[i] == poison_image(s.clean_images[i], w.trigger));
    } else {
      CHECK(s.images[i] == s.clean_images[i]);
    }
  }
  CHECK(poisoned == 50);
  CHECK(build_stream(data, w, 500, 0.0, 3).poisoned == std::vector<bool>(500, false));
  CHECK_THROWS_AS(build_stream(data, w, 501, 0.1, 3), std::invalid_argument);
  CHECK_THROWS_AS(build_stream(data, w, 100, 0.95, 3), std::invalid_argument);
}

TEST_CASE("sim oracle is thread safe and deterministic") {
  const World w = default_world(mnist_config());
  SimOracle o(w.classifier());
  CHECK(o.descriptor().thread_safe);
  CHECK(o.descriptor().num_classes == 10);
  const auto data = gen_dataset(mnist_config(), 5);
  CHECK(classify_parallel(o, data.images, 4) == data.labels);
  CHECK(self_test_determinism(o, data.images[0]));
}
