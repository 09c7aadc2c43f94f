#include "neo/dataset.hpp"

#include <fstream>
#include <set>

#include "neo/png_io.hpp"

namespace neo {

using nlohmann::json;
using nlohmann::ordered_json;

void DatasetManifest::validate() const {
  if (width < 1 || height < 1 || (channels != 1 && channels != 3)) {
    throw std::invalid_argument("manifest dims must be positive with 1 or 3 channels");
  }
  std::set<std::string> names;
  for (const auto& e : entries) {
    if (!names.insert(e.file).second) throw std::invalid_argument("duplicate manifest entry '" + e.file + "'");
    if (e.label.id < 0) throw std::invalid_argument("negative label for '" + e.file + "'");
  }
}

ordered_json manifest_to_json(const DatasetManifest& m) {
  ordered_json j;
  j["seed"] = m.seed;
  j["dims"] = {{"width", m.width}, {"height", m.height}, {"channels", m.channels}};
  j["entries"] = ordered_json::array();
  for (const auto& e : m.entries) {
    ordered_json entry;
    entry["file"] = e.file;
    entry["label"] = e.label.id;
    entry["poisoned"] = e.poisoned;
    j["entries"].push_back(std::move(entry));
  }
  return j;
}

DatasetManifest manifest_from_json(const json& j) {
  try {
    DatasetManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    const auto& dims = j.at("dims");
    m.width = dims.at("width").get<int>();
    m.height = dims.at("height").get<int>();
    m.channels = dims.at("channels").get<int>();
    for (const auto& e : j.at("entries")) {
      m.entries.push_back({e.at("file").get<std::string>(), Label{e.at("label").get<int>()},
                           e.at("poisoned").get<bool>()});
    }
    m.validate();
    return m;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("manifest: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw SchemaError(std::string("manifest: ") + e.what());
  }
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const ordered_json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) { return manifest_from_json(read_json(path)); }

namespace {

ordered_json colour_to_json(const Colour& c) {
  ordered_json arr = ordered_json::array();
  for (int i = 0; i < c.channels; ++i) arr.push_back(static_cast<int>(c[i]));
  return arr;
}

Colour colour_from_json(const json& j) {
  if (!j.is_array() || (j.size() != 1 && j.size() != 3)) throw SchemaError("colour must have 1 or 3 values");
  Colour c;
  c.channels = static_cast<int>(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    const int v = j[i].get<int>();
    if (v < 0 || v > 255) throw SchemaError("colour value out of range");
    c.value[i] = static_cast<std::uint8_t>(v);
  }
  return c;
}

}  // namespace

ordered_json world_to_json(const simlab::World& w) {
  ordered_json j;
  j["num_classes"] = w.config.num_classes;
  j["width"] = w.config.width;
  j["height"] = w.config.height;
  j["channels"] = w.config.channels;
  j["seed"] = w.config.seed;
  j["noise"] = w.config.noise;
  ordered_json t;
  t["shape"] = simlab::to_string(w.trigger.shape);
  t["size"] = w.trigger.size;
  t["x"] = w.trigger.position.x;
  t["y"] = w.trigger.position.y;
  t["mask"] = ordered_json::array();
  for (bool b : w.trigger.mask) t["mask"].push_back(b ? 1 : 0);
  t["colours"] = ordered_json::array();
  for (const auto& c : w.trigger.colours) t["colours"].push_back(colour_to_json(c));
  j["trigger"] = t;
  j["target"] = w.target.id;
  j["theta"] = w.theta;
  j["tau"] = w.tau;
  return j;
}

simlab::World world_from_json(const json& j) {
  try {
    simlab::World w;
    w.config.num_classes = j.at("num_classes").get<int>();
    w.config.width = j.at("width").get<int>();
    w.config.height = j.at("height").get<int>();
    w.config.channels = j.at("channels").get<int>();
    w.config.seed = j.at("seed").get<std::uint64_t>();
    w.config.noise = j.at("noise").get<int>();
    const auto& t = j.at("trigger");
    w.trigger.shape = simlab::parse_shape(t.at("shape").get<std::string>());
    w.trigger.size = t.at("size").get<int>();
    w.trigger.position = {t.at("x").get<int>(), t.at("y").get<int>()};
    for (const auto& b : t.at("mask")) w.trigger.mask.push_back(b.get<int>() != 0);
    for (const auto& c : t.at("colours")) w.trigger.colours.push_back(colour_from_json(c));
    w.target = Label{j.at("target").get<int>()};
    w.theta = j.at("theta").get<double>();
    w.tau = j.at("tau").get<int>();
    simlab::validate_trigger(w.trigger, w.config.width, w.config.height, w.config.channels);
    return w;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("simlab parameters: ") + e.what());
  } catch (const std::logic_error& e) {
    throw SchemaError(std::string("simlab parameters: ") + e.what());
  }
}

LoadedDataset load_dataset(const std::filesystem::path& dir) {
  LoadedDataset d;
  d.manifest = read_manifest(dir / "manifest.json");
  d.images.reserve(d.manifest.entries.size());
  for (const auto& e : d.manifest.entries) {
    Image img = read_png(dir / e.file);
    if (img.width() != d.manifest.width || img.height() != d.manifest.height ||
        img.channels() != d.manifest.channels) {
      throw SchemaError(e.file + ": image dimensions differ from the manifest");
    }
    d.images.push_back(std::move(img));
  }
  return d;
}

CleanReference load_clean_reference(const std::filesystem::path& dir) {
  LoadedDataset d = load_dataset(dir);
  CleanReference ref;
  for (std::size_t i = 0; i < d.images.size(); ++i) {
    if (!d.manifest.entries[i].poisoned) ref.add(d.manifest.entries[i].label, std::move(d.images[i]));
  }
  return ref;
}

}  // namespace neo
