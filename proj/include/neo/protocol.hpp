#pragma once

#include <sys/types.h>

#include <chrono>
#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "neo/oracle.hpp"

// neo-oracle/1: newline-delimited JSON over a child process's stdin/stdout.
//
//   child  -> {"proto":"neo-oracle/1","num_classes":<int>}        (once, on start)
//   parent -> {"id":<u64>,"png":"<base64 PNG>"}                    (one per query)
//   child  -> {"id":<u64>,"label":<int>}  or  {"id":<u64>,"error":"..."}
//
// Replies are matched by id and may arrive out of order.

namespace neo::protocol {

inline constexpr std::string_view kProtocolName = "neo-oracle/1";
inline constexpr std::chrono::milliseconds kDefaultTimeout{30000};

/// Timeout taken from NEO_ORACLE_TIMEOUT_MS when set, otherwise `fallback`.
std::chrono::milliseconds timeout_from_env(std::chrono::milliseconds fallback = kDefaultTimeout);

std::string handshake_line(int num_classes);
std::string request_line(std::uint64_t id, const Image& img);
std::string label_line(std::uint64_t id, int label);
std::string error_line(std::optional<std::uint64_t> id, std::string_view message);

struct Handshake {
  int num_classes = 0;
};

struct Request {
  std::uint64_t id = 0;
  Image image;
};

struct Reply {
  std::optional<std::uint64_t> id;
  std::variant<int, std::string> body;  // label or error message

  bool is_error() const { return std::holds_alternative<std::string>(body); }
};

/// Each parser throws std::invalid_argument describing what is malformed.
Handshake parse_handshake(std::string_view line);
Request parse_request(std::string_view line);
Reply parse_reply(std::string_view line);

/// A child process started via `/bin/sh -c`, with line-oriented pipes to its
/// stdin and stdout. stderr is inherited.
class ChildProcess {
 public:
  explicit ChildProcess(const std::string& command_line);
  ~ChildProcess();

  ChildProcess(const ChildProcess&) = delete;
  ChildProcess& operator=(const ChildProcess&) = delete;

  /// Writes `line` followed by '\n'. Throws OracleError if the child is gone
  /// or the pipe stays full for `timeout`.
  void write_line(std::string_view line, std::chrono::milliseconds timeout);

  /// Next line without its terminator; nullopt on timeout. Throws OracleError at EOF.
  std::optional<std::string> read_line(std::chrono::milliseconds timeout);

  void close_stdin();
  /// Reaps the child, killing it if it does not exit within `grace`.
  int terminate(std::chrono::milliseconds grace = std::chrono::milliseconds(2000));
  pid_t pid() const { return pid_; }

 private:
  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
  bool reaped_ = false;
  int status_ = 0;
};

struct SubprocessOptions {
  std::string command;
  std::chrono::milliseconds timeout = kDefaultTimeout;
  std::optional<Image> self_test_probe;  // classified twice on startup when set
  bool thread_safe = false;  // advertised in the descriptor
  std::size_t window = 64;   // max requests in flight per batch
};

/// Oracle client for an external classifier speaking neo-oracle/1.
/// Calls are serialized; replies are demultiplexed by id.
class SubprocessOracle final : public Oracle {
 public:
  explicit SubprocessOracle(SubprocessOptions opts);
  ~SubprocessOracle() override;

  OracleDescriptor descriptor() const override;
  Label classify(const Image& img) override;
  std::vector<Label> classify_batch(std::span<const Image> imgs) override;

 private:
  [[noreturn]] void fail(const std::string& cause, std::optional<std::size_t> index);

  SubprocessOptions opts_;
  ChildProcess child_;
  int num_classes_ = 0;
  std::mutex mu_;
  std::uint64_t next_id_ = 1;
  std::optional<std::string> broken_;
};

struct ConformanceCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct ConformanceOptions {
  std::chrono::milliseconds timeout{5000};
  std::size_t fuzz_lines = 1000;
  std::uint64_t seed = 1;
  int probe_size = 16;  // width and height of the generated probe images
  int probe_channels = 3;
};

/// Exercises an external oracle command: handshake, id matching with
/// out-of-order ids, determinism, and resilience to malformed request lines.
std::vector<ConformanceCheck> run_conformance(const std::string& command, const ConformanceOptions& opts = {});

}  // namespace neo::protocol
