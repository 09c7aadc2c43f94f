#include "neo/oracle.hpp"

#include <algorithm>
#include <future>

namespace neo {

std::vector<Label> Oracle::classify_batch(std::span<const Image> imgs) {
  std::vector<Label> out;
  out.reserve(imgs.size());
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    try {
      out.push_back(classify(imgs[i]));
    } catch (const OracleError& e) {
      throw OracleError(e.cause(), i);
    }
  }
  return out;
}

Label CountingOracle::classify(const Image& img) {
  ++count_;
  return inner_.classify(img);
}

std::vector<Label> CountingOracle::classify_batch(std::span<const Image> imgs) {
  count_ += imgs.size();
  return inner_.classify_batch(imgs);
}

std::vector<Label> classify_parallel(Oracle& oracle, std::span<const Image> imgs, int jobs) {
  if (jobs <= 1 || imgs.size() < 2 || !oracle.descriptor().thread_safe) {
    return oracle.classify_batch(imgs);
  }
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), imgs.size());
  const std::size_t chunk = (imgs.size() + workers - 1) / workers;

  std::vector<std::future<std::vector<Label>>> parts;
  for (std::size_t start = 0; start < imgs.size(); start += chunk) {
    auto slice = imgs.subspan(start, std::min(chunk, imgs.size() - start));
    parts.push_back(std::async(std::launch::async, [&oracle, slice] { return oracle.classify_batch(slice); }));
  }

  std::vector<Label> out;
  out.reserve(imgs.size());
  std::size_t start = 0;
  std::optional<OracleError> first_error;
  for (auto& part : parts) {
    try {
      auto labels = part.get();
      out.insert(out.end(), labels.begin(), labels.end());
      start += labels.size();
    } catch (const OracleError& e) {
      if (!first_error) {
        first_error = e.index() ? OracleError(e.cause(), start + *e.index()) : e;
      }
      start += chunk;
    }
  }
  if (first_error) throw *first_error;
  return out;
}

bool self_test_determinism(Oracle& oracle, const Image& probe) {
  const Label a = oracle.classify(probe);
  const Label b = oracle.classify(probe);
  return a == b;
}

}  // namespace neo
