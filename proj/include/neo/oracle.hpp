#pragma once

#include <atomic>
#include <compare>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "neo/image.hpp"

namespace neo {

/// Class index predicted by a classifier.
struct Label {
  int id = 0;

  auto operator<=>(const Label&) const = default;
};

/// A classifier query failed: the oracle crashed, replied with garbage, timed out
/// or reported an error. Carries the index within a batch when known.
class OracleError : public std::runtime_error {
 public:
  explicit OracleError(const std::string& cause, std::optional<std::size_t> index = std::nullopt)
      : std::runtime_error(index ? "oracle query " + std::to_string(*index) + " failed: " + cause
                                 : "oracle failure: " + cause),
        cause_(cause),
        index_(index) {}

  const std::string& cause() const { return cause_; }
  std::optional<std::size_t> index() const { return index_; }

 private:
  std::string cause_;
  std::optional<std::size_t> index_;
};

enum class OracleKind { in_process, subprocess };

struct OracleDescriptor {
  OracleKind kind = OracleKind::in_process;
  int num_classes = 2;
  bool thread_safe = false;
};

/// Blackbox image classifier: image in, label out. Implementations must be
/// deterministic for a fixed image.
class Oracle {
 public:
  virtual ~Oracle() = default;

  virtual OracleDescriptor descriptor() const = 0;
  virtual Label classify(const Image& img) = 0;

  /// Element-wise classify, order preserving. Failures identify the offending index.
  virtual std::vector<Label> classify_batch(std::span<const Image> imgs);
};

/// Oracle backed by an arbitrary callable. Used for test doubles and adapters.
class FunctionOracle final : public Oracle {
 public:
  using Fn = std::function<Label(const Image&)>;

  FunctionOracle(Fn fn, int num_classes, bool thread_safe = true)
      : fn_(std::move(fn)), desc_{OracleKind::in_process, num_classes, thread_safe} {}

  OracleDescriptor descriptor() const override { return desc_; }
  Label classify(const Image& img) override { return fn_(img); }

 private:
  Fn fn_;
  OracleDescriptor desc_;
};

/// Decorator that counts every image submitted to the wrapped oracle.
class CountingOracle final : public Oracle {
 public:
  explicit CountingOracle(Oracle& inner) : inner_(inner) {}

  OracleDescriptor descriptor() const override { return inner_.descriptor(); }
  Label classify(const Image& img) override;
  std::vector<Label> classify_batch(std::span<const Image> imgs) override;

  std::size_t queries() const { return count_.load(); }
  void reset() { count_ = 0; }

 private:
  Oracle& inner_;
  std::atomic<std::size_t> count_{0};
};

/// Classify many images, fanning out over up to `jobs` threads when the oracle
/// allows concurrent queries. Output order always matches input order.
std::vector<Label> classify_parallel(Oracle& oracle, std::span<const Image> imgs, int jobs);

/// Classify one image twice and require identical labels.
bool self_test_determinism(Oracle& oracle, const Image& probe);

}  // namespace neo
