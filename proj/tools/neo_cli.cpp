#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "neo/dataset.hpp"
#include "neo/defence.hpp"
#include "neo/metrics.hpp"
#include "neo/png_io.hpp"
#include "neo/protocol.hpp"
#include "neo/report.hpp"
#include "neo/simlab.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

enum Exit { ok = 0, usage = 1, oracle_failure = 2, missing_reference = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MissingReference : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::optional<std::uint64_t> seed;
  bool entropy = false;
  std::string out;
  int jobs = 1;

  std::uint64_t resolve_seed() const {
    if (seed) return *seed;
    if (!entropy) throw UsageError("--seed is required (pass --entropy to draw one)");
    std::random_device rd;
    return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
  }

  fs::path out_dir() const {
    fs::path p(out);
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec || !fs::is_directory(p)) throw UsageError("cannot create output directory " + out);
    return p;
  }
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "Base seed for every randomized step");
  app->add_flag("--entropy", c.entropy, "Draw the seed from the system when --seed is absent");
  app->add_option("--out", c.out, "Output directory; nothing is written elsewhere")->required();
  app->add_option("--jobs", c.jobs, "Parallel oracle queries")->check(CLI::PositiveNumber);
}

struct OracleSpec {
  std::string simlab;
  std::string command;

  void validate() const {
    if (simlab.empty() == command.empty()) throw UsageError("give exactly one of --simlab or --oracle-cmd");
    if (!simlab.empty() && !fs::is_regular_file(simlab)) throw UsageError("no such file: " + simlab);
  }

  std::unique_ptr<neo::Oracle> open() const {
    if (!simlab.empty()) {
      const auto world = neo::world_from_json(neo::read_json(simlab));
      return std::make_unique<neo::simlab::SimOracle>(world.classifier());
    }
    neo::protocol::SubprocessOptions opts;
    opts.command = command;
    opts.timeout = neo::protocol::timeout_from_env();
    return std::make_unique<neo::protocol::SubprocessOracle>(std::move(opts));
  }
};

void add_oracle(CLI::App* app, OracleSpec& o) {
  app->add_option("--simlab", o.simlab, "Built-in simulated classifier (simlab.json)");
  app->add_option("--oracle-cmd", o.command, "External classifier speaking neo-oracle/1");
}

std::pair<int, int> parse_wxh(const std::string& s, const char* flag) {
  int w = 0;
  int h = 0;
  char x = 0;
  char extra = 0;
  if (std::sscanf(s.c_str(), "%d%c%d%c", &w, &x, &h, &extra) != 3 || (x != 'x' && x != 'X') || w < 1 || h < 1) {
    throw UsageError(std::string(flag) + " expects WxH, got '" + s + "'");
  }
  return {w, h};
}

void require_dir_with_manifest(const std::string& dir, const char* flag) {
  if (dir.empty()) throw UsageError(std::string(flag) + " is required");
  if (!fs::is_regular_file(fs::path(dir) / "manifest.json")) {
    throw UsageError(std::string(flag) + ": " + dir + " has no manifest.json");
  }
}

std::string index_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05zu", i);
  return buf;
}

// gen-dataset ----------------------------------------------------------------

struct GenArgs {
  Common common;
  int classes = 5;
  int per_class = 100;
  std::string dims = "32x32";
  int channels = 3;
  double poison_fraction = 0.10;
  std::optional<std::size_t> stream_size;
  std::string trigger = "square";
  int trigger_size = 3;
  int target = 0;
  int noise = 12;
  int ref_per_class = 40;
};

void write_split(const fs::path& dir, const neo::DatasetManifest& base,
                 const std::vector<neo::Image>& images, const std::vector<neo::Label>& labels,
                 const std::vector<bool>& poisoned) {
  fs::create_directories(dir / "images");
  neo::DatasetManifest m = base;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string file = "images/" + index_name(i) + ".png";
    neo::write_png(dir / file, images[i]);
    m.entries.push_back({file, labels[i], poisoned.empty() ? false : bool(poisoned[i])});
  }
  neo::write_json(dir / "manifest.json", neo::manifest_to_json(m));
}

int cmd_gen_dataset(const GenArgs& a) {
  const auto [w, h] = parse_wxh(a.dims, "--dims");
  if (a.channels != 1 && a.channels != 3) throw UsageError("--channels must be 1 or 3");
  if (a.classes < 2) throw UsageError("--classes must be at least 2");
  if (a.per_class < 1) throw UsageError("--per-class must be positive");
  if (a.ref_per_class < 0) throw UsageError("--ref-per-class must be non-negative");
  if (a.poison_fraction < 0.0 || a.poison_fraction > 1.0) throw UsageError("--poison-fraction must be in [0, 1]");
  if (a.target < 0 || a.target >= a.classes) throw UsageError("--target is not a class id");
  const std::uint64_t seed = a.common.resolve_seed();

  neo::simlab::WorldConfig cfg;
  cfg.num_classes = a.classes;
  cfg.width = w;
  cfg.height = h;
  cfg.channels = a.channels;
  cfg.seed = seed;
  cfg.noise = a.noise;

  neo::simlab::World world = neo::simlab::default_world(cfg, 1);
  const neo::Colour colour = a.channels == 3 ? neo::Colour::rgb(255, 255, 0) : neo::Colour::gray(255);
  const auto shape = neo::simlab::parse_shape(a.trigger);
  if (shape == neo::simlab::TriggerShape::custom) throw UsageError("--trigger custom is only available through the library");
  if (a.trigger_size < 1 || a.trigger_size > std::min(w, h)) throw UsageError("--trigger-size does not fit the image");
  world.trigger = neo::simlab::make_trigger(shape, a.trigger_size, colour,
                                            neo::simlab::default_trigger_position(w, h, a.trigger_size));
  world.target = neo::Label{a.target};
  try {
    neo::simlab::validate_trigger(world.trigger, w, h, a.channels);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("refusing trigger: ") + e.what());
  }

  const fs::path out = a.common.out_dir();
  // One generation per class, split into stream candidates and a disjoint clean
  // reference that shares the same class prototypes.
  const auto all = neo::simlab::gen_dataset(cfg, a.per_class + a.ref_per_class);
  neo::simlab::GeneratedData data;
  neo::simlab::GeneratedData ref;
  data.prototypes = all.prototypes;
  ref.prototypes = all.prototypes;
  for (std::size_t i = 0; i < all.images.size(); ++i) {
    auto& dst = static_cast<int>(i) % (a.per_class + a.ref_per_class) < a.per_class ? data : ref;
    dst.images.push_back(all.images[i]);
    dst.labels.push_back(all.labels[i]);
  }
  const std::size_t size = a.stream_size.value_or(data.images.size());
  if (size < 1 || size > data.images.size()) throw UsageError("--stream-size exceeds classes * per-class");
  const auto stream = neo::simlab::build_stream(data, world, size, a.poison_fraction, neo::derive_seed(seed, 1));

  neo::DatasetManifest base{seed, w, h, a.channels, {}};
  write_split(out, base, stream.images, stream.labels, stream.poisoned);
  write_split(out / "clean", base, stream.clean_images, stream.labels, {});
  write_split(out / "reference", base, ref.images, ref.labels, {});

  neo::write_json(out / "simlab.json", neo::world_to_json(world));

  std::size_t poisoned = 0;
  for (bool p : stream.poisoned) poisoned += p ? 1 : 0;
  std::cout << "wrote " << size << " images (" << poisoned << " poisoned) to " << out.string() << "\n";
  return ok;
}

// predict --------------------------------------------------------------------

struct PredictArgs {
  Common common;
  OracleSpec oracle;
  std::string data;
};

int cmd_predict(const PredictArgs& a) {
  a.oracle.validate();
  require_dir_with_manifest(a.data, "--data");
  const auto ds = neo::load_dataset(a.data);
  const fs::path out = a.common.out_dir();
  auto oracle = a.oracle.open();
  const auto labels = neo::classify_parallel(*oracle, ds.images, a.common.jobs);
  ordered_json j;
  j["schema"] = "neo-predictions/1";
  j["labels"] = ordered_json::object();
  for (std::size_t i = 0; i < labels.size(); ++i) j["labels"][ds.manifest.entries[i].file] = labels[i].id;
  neo::write_json(out / "predictions.json", j);
  std::cout << "classified " << labels.size() << " images\n";
  return ok;
}

// calibrate ------------------------------------------------------------------

struct CalibrateArgs {
  Common common;
  OracleSpec oracle;
  std::string clean_ref;
  std::string blocker;
  int trials = 10;
  int samples = 1000;
};

int cmd_calibrate(const CalibrateArgs& a) {
  a.oracle.validate();
  require_dir_with_manifest(a.clean_ref, "--clean-ref");
  const std::uint64_t seed = a.common.resolve_seed();
  const auto ref = neo::load_clean_reference(a.clean_ref);
  if (ref.empty()) throw MissingReference("clean reference " + a.clean_ref + " holds no clean images");
  const neo::Image& probe = *ref.all().front();
  int m = neo::default_blocker_side(probe.width(), probe.height());
  int n = m;
  if (!a.blocker.empty()) std::tie(m, n) = parse_wxh(a.blocker, "--blocker");
  const fs::path out = a.common.out_dir();

  auto oracle = a.oracle.open();
  const auto r = neo::choose_lambda(*oracle, ref, m, n, a.trials, a.samples, seed, a.common.jobs);
  neo::write_json(out / "calibration.json", neo::report::calibration_report(r, m, n, a.trials, a.samples, seed));
  std::printf("R_av = %.6f\n", r.r_av);
  if (r.interval_empty()) {
    std::printf("recommended lambda interval is empty: [%.6f, %.6f]\n", r.lower, r.upper);
  } else {
    std::printf("recommended lambda interval [%.6f, %.6f], midpoint %.6f\n", r.lower, r.upper, r.recommended_lambda());
  }
  for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  return ok;
}

// defend ---------------------------------------------------------------------

struct DefendArgs {
  Common common;
  OracleSpec oracle;
  std::string data;
  std::string clean_ref;
  std::string blocker;
  double lambda = 0.8;
  int n = 400;
  int k = 20;
  bool fast_confirm = false;
};

int cmd_defend(const DefendArgs& a) {
  a.oracle.validate();
  require_dir_with_manifest(a.data, "--data");
  if (!a.clean_ref.empty()) require_dir_with_manifest(a.clean_ref, "--clean-ref");
  const std::uint64_t seed = a.common.resolve_seed();

  neo::DefenceConfig config;
  if (!a.blocker.empty()) std::tie(config.blocker_m, config.blocker_n) = parse_wxh(a.blocker, "--blocker");
  config.lambda = a.lambda;
  config.trials = a.n;
  config.check_size = a.k;
  config.kmeans_seed = neo::derive_seed(seed, 1);
  config.search_seed = neo::derive_seed(seed, 2);
  config.fast_confirm = a.fast_confirm;
  config.jobs = a.common.jobs;
  try {
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  const auto ds = neo::load_dataset(a.data);
  std::tie(config.blocker_m, config.blocker_n) = config.blocker_for(ds.manifest.width, ds.manifest.height);
  const neo::CleanReference ref = a.clean_ref.empty() ? neo::CleanReference{} : neo::load_clean_reference(a.clean_ref);
  std::vector<std::string> ids;
  for (const auto& e : ds.manifest.entries) ids.push_back(e.file);
  const fs::path out = a.common.out_dir();

  auto oracle = a.oracle.open();
  const auto result = neo::defend(*oracle, ds.images, config, ref, ids);

  std::optional<neo::report::ReconstructionFiles> files;
  if (result.reconstruction) {
    fs::create_directories(out / "trigger");
    neo::report::ReconstructionFiles f;
    f.patch = "trigger/patch.png";
    neo::write_png(out / f.patch, result.reconstruction->trigger.patch.patch);
    const auto& examples = result.reconstruction->poisoned_examples;
    for (std::size_t i = 0; i < examples.size(); ++i) {
      f.examples.push_back("trigger/example_" + index_name(i) + ".png");
      neo::write_png(out / f.examples.back(), examples[i]);
    }
    files = std::move(f);
  }
  neo::write_json(out / "report.json", neo::report::defence_report(config, result, files));

  std::size_t flagged = result.backdoor_set.size();
  std::cout << "processed " << result.verdicts.size() << " of " << ds.images.size() << " images, " << flagged
            << " backdoored\n";
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
  if (result.abort) {
    std::cerr << "error: " << result.abort->message << "\n";
    return result.abort->reason == neo::DefenceAbort::Reason::missing_reference ? missing_reference : oracle_failure;
  }
  return ok;
}

// evaluate -------------------------------------------------------------------

struct EvaluateArgs {
  Common common;
  std::string report;
  std::string data;
  std::string clean_predictions;
  std::string mode = "per-class";
  std::optional<int> target;
};

int cmd_evaluate(const EvaluateArgs& a) {
  if (!fs::is_regular_file(a.report)) throw UsageError("--report: no such file " + a.report);
  require_dir_with_manifest(a.data, "--data");
  if (!a.clean_predictions.empty() && !fs::is_regular_file(a.clean_predictions)) {
    throw UsageError("--clean-predictions: no such file " + a.clean_predictions);
  }
  if (a.mode != "per-class" && a.mode != "pairs") throw UsageError("--mode must be per-class or pairs");

  const json report = neo::read_json(a.report);
  const auto verdicts = neo::report::verdicts_from_report(report);
  const auto manifest = neo::read_manifest(fs::path(a.data) / "manifest.json");

  neo::metrics::ConfusionReport conf;
  try {
    conf = neo::metrics::confusion(verdicts, manifest);
  } catch (const std::invalid_argument& e) {
    throw neo::SchemaError(std::string("report does not match the manifest: ") + e.what());
  }

  // Mitigation covers only images the defence produced a verdict for.
  std::map<std::string, int> clean_by_file;
  if (!a.clean_predictions.empty()) {
    const json preds = neo::read_json(a.clean_predictions);
    try {
      for (const auto& [file, label] : preds.at("labels").items()) clean_by_file[file] = label.get<int>();
    } catch (const json::exception& e) {
      throw neo::SchemaError(std::string("clean predictions: ") + e.what());
    }
  } else {
    for (const auto& e : manifest.entries) clean_by_file[e.file] = e.label.id;
  }
  std::vector<neo::Label> bd;
  std::vector<neo::Label> fix;
  std::vector<neo::Label> clean;
  for (const auto& v : verdicts) {
    auto it = clean_by_file.find(v.id);
    if (it == clean_by_file.end()) throw neo::SchemaError("no clean prediction for " + v.id);
    bd.push_back(v.original);
    fix.push_back(v.sanitized);
    clean.push_back(neo::Label{it->second});
  }
  const auto mode = a.mode == "pairs" ? neo::metrics::MitigationMode::pairs : neo::metrics::MitigationMode::per_class;
  const auto rows = neo::metrics::mitigation_report(bd, fix, clean, mode);

  std::optional<int> target = a.target;
  if (!target) {
    const fs::path world = fs::path(a.data) / "simlab.json";
    if (fs::is_regular_file(world)) {
      target = neo::world_from_json(neo::read_json(world)).target.id;
    } else if (const auto& rec = report.value("reconstruction", json()); rec.is_object()) {
      target = rec.at("target_label").get<int>();
    }
  }

  ordered_json asr = nullptr;
  std::map<std::string, bool> poisoned;
  for (const auto& e : manifest.entries) poisoned[e.file] = e.poisoned;
  std::size_t n_poisoned = 0;
  std::size_t before = 0;
  std::size_t after = 0;
  if (target) {
    for (const auto& v : verdicts) {
      if (!poisoned[v.id]) continue;
      ++n_poisoned;
      before += v.original.id == *target ? 1 : 0;
      after += v.sanitized.id == *target ? 1 : 0;
    }
    const double d = n_poisoned ? double(n_poisoned) : 1.0;
    asr = {{"target", *target},
           {"poisoned_images", n_poisoned},
           {"before", n_poisoned ? ordered_json(double(before) / d) : ordered_json(nullptr)},
           {"after", n_poisoned ? ordered_json(double(after) / d) : ordered_json(nullptr)}};
  }

  const fs::path out = a.common.out_dir();
  ordered_json j;
  j["schema"] = "neo-evaluation/1";
  j["images"] = manifest.entries.size();
  j["verdicts"] = verdicts.size();
  j["confusion"] = {{"transitions", neo::report::confusion_json(conf.transitions)},
                    {"confirmed", neo::report::confusion_json(conf.confirmed)}};
  j["mitigation"] = {{"mode", a.mode},
                     {"clean_labels", a.clean_predictions.empty() ? "manifest" : "predictions"},
                     {"rows", neo::report::mitigation_json(rows)}};
  j["attack_success_rate"] = asr;
  neo::write_json(out / "evaluation.json", j);

  std::string text = neo::metrics::format_confusion_table(conf) + "\n" + neo::metrics::format_mitigation_table(rows);
  if (target && n_poisoned) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "\nAttack success rate (target %d): %.2f%% before, %.2f%% after\n", *target,
                  100.0 * double(before) / double(n_poisoned), 100.0 * double(after) / double(n_poisoned));
    text += buf;
  }
  std::ofstream(out / "evaluation.txt") << text;
  std::cout << text;
  return ok;
}

// conformance ----------------------------------------------------------------

struct ConformanceArgs {
  Common common;
  std::string command;
  std::size_t fuzz_lines = 1000;
  std::string probe = "16x16";
  int channels = 3;
};

int cmd_conformance(const ConformanceArgs& a) {
  if (a.command.empty()) throw UsageError("--oracle-cmd is required");
  const auto [w, h] = parse_wxh(a.probe, "--probe");
  if (w != h) throw UsageError("--probe must be square");
  if (a.channels != 1 && a.channels != 3) throw UsageError("--channels must be 1 or 3");
  neo::protocol::ConformanceOptions opts;
  opts.timeout = neo::protocol::timeout_from_env(opts.timeout);
  opts.fuzz_lines = a.fuzz_lines;
  opts.seed = a.common.resolve_seed();
  opts.probe_size = w;
  opts.probe_channels = a.channels;
  const fs::path out = a.common.out_dir();

  const auto checks = neo::protocol::run_conformance(a.command, opts);
  bool all = true;
  ordered_json arr = ordered_json::array();
  for (const auto& c : checks) {
    all = all && c.passed;
    arr.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
    std::printf("%s %s%s%s\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.detail.empty() ? "" : ": ",
                c.detail.c_str());
  }
  neo::write_json(out / "conformance.json",
                  ordered_json{{"schema", "neo-conformance/1"}, {"passed", all}, {"checks", arr}});
  return all ? ok : oracle_failure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Blackbox backdoor defence toolkit"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-dataset", "Generate a seeded simulated dataset with a poisoned stream");
  add_common(g, gen.common);
  g->add_option("--classes", gen.classes);
  g->add_option("--per-class", gen.per_class);
  g->add_option("--dims", gen.dims, "WxH");
  g->add_option("--channels", gen.channels);
  g->add_option("--poison-fraction", gen.poison_fraction);
  g->add_option("--stream-size", gen.stream_size);
  g->add_option("--trigger", gen.trigger, "square, inverted-L, lateral-L or three-dots");
  g->add_option("--trigger-size", gen.trigger_size);
  g->add_option("--target", gen.target);
  g->add_option("--noise", gen.noise);
  g->add_option("--ref-per-class", gen.ref_per_class, "Clean reference images per class");

  PredictArgs pred;
  auto* p = app.add_subcommand("predict", "Classify every image of a dataset");
  add_common(p, pred.common);
  add_oracle(p, pred.oracle);
  p->add_option("--data", pred.data)->required();

  CalibrateArgs cal;
  auto* c = app.add_subcommand("calibrate", "Estimate the baseline flip rate and a confirmation threshold");
  add_common(c, cal.common);
  add_oracle(c, cal.oracle);
  c->add_option("--clean-ref", cal.clean_ref)->required();
  c->add_option("--blocker", cal.blocker, "WxH");
  c->add_option("--trials", cal.trials)->check(CLI::PositiveNumber);
  c->add_option("--samples", cal.samples)->check(CLI::PositiveNumber);

  DefendArgs def;
  auto* d = app.add_subcommand("defend", "Run the defence over a dataset stream");
  add_common(d, def.common);
  add_oracle(d, def.oracle);
  d->add_option("--data", def.data)->required();
  d->add_option("--clean-ref", def.clean_ref);
  d->add_option("--blocker", def.blocker, "WxH");
  d->add_option("--lambda", def.lambda);
  d->add_option("--n", def.n, "Random blocker placements per searched image");
  d->add_option("--k", def.k, "Check-set size");
  d->add_flag("--fast-confirm", def.fast_confirm, "Skip re-confirmation once a trigger position is known");

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Score a defence report against a manifest");
  add_common(e, ev.common);
  e->add_option("--report", ev.report)->required();
  e->add_option("--data", ev.data)->required();
  e->add_option("--clean-predictions", ev.clean_predictions);
  e->add_option("--mode", ev.mode, "per-class or pairs");
  e->add_option("--target", ev.target);

  ConformanceArgs conf;
  auto* k = app.add_subcommand("conformance", "Check an external oracle against neo-oracle/1");
  add_common(k, conf.common);
  k->add_option("--oracle-cmd", conf.command)->required();
  k->add_option("--fuzz-lines", conf.fuzz_lines);
  k->add_option("--probe", conf.probe, "WxH of probe images");
  k->add_option("--channels", conf.channels);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? ok : usage;
  }

  try {
    if (*g) return cmd_gen_dataset(gen);
    if (*p) return cmd_predict(pred);
    if (*c) return cmd_calibrate(cal);
    if (*d) return cmd_defend(def);
    if (*e) return cmd_evaluate(ev);
    if (*k) return cmd_conformance(conf);
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return usage;
  } catch (const MissingReference& err) {
    std::cerr << "error: " << err.what() << "\n";
    return missing_reference;
  } catch (const neo::OracleError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return oracle_failure;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return usage;
  }
  return usage;
}
