#include "neo/protocol.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <thread>

#include "neo/png_io.hpp"

extern char** environ;

namespace neo::protocol {

using nlohmann::json;
using nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

std::chrono::milliseconds timeout_from_env(std::chrono::milliseconds fallback) {
  const char* env = std::getenv("NEO_ORACLE_TIMEOUT_MS");
  if (env == nullptr || *env == '\0') return fallback;
  char* end = nullptr;
  const long long ms = std::strtoll(env, &end, 10);
  if (end == env || *end != '\0' || ms <= 0) return fallback;
  return std::chrono::milliseconds(ms);
}

std::string handshake_line(int num_classes) {
  ordered_json j;
  j["proto"] = kProtocolName;
  j["num_classes"] = num_classes;
  return j.dump();
}

std::string request_line(std::uint64_t id, const Image& img) {
  ordered_json j;
  j["id"] = id;
  j["png"] = base64_encode(encode_png(img));
  return j.dump();
}

std::string label_line(std::uint64_t id, int label) {
  ordered_json j;
  j["id"] = id;
  j["label"] = label;
  return j.dump();
}

std::string error_line(std::optional<std::uint64_t> id, std::string_view message) {
  ordered_json j;
  j["id"] = id ? ordered_json(*id) : ordered_json(nullptr);
  j["error"] = message;
  return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

namespace {

json parse_object(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("line is not a JSON object");
  return j;
}

std::uint64_t parse_id(const json& j) {
  auto it = j.find("id");
  if (it == j.end()) throw std::invalid_argument("missing \"id\"");
  if (!it->is_number_unsigned()) throw std::invalid_argument("\"id\" must be an unsigned integer");
  return it->get<std::uint64_t>();
}

}  // namespace

Handshake parse_handshake(std::string_view line) {
  const json j = parse_object(line);
  auto proto = j.find("proto");
  if (proto == j.end() || !proto->is_string() || proto->get<std::string>() != kProtocolName) {
    throw std::invalid_argument("handshake does not announce " + std::string(kProtocolName));
  }
  auto n = j.find("num_classes");
  if (n == j.end() || !n->is_number_integer()) throw std::invalid_argument("handshake lacks integer num_classes");
  const auto classes = n->get<long long>();
  if (classes < 2 || classes > 1'000'000) throw std::invalid_argument("handshake num_classes out of range");
  return {static_cast<int>(classes)};
}

Request parse_request(std::string_view line) {
  const json j = parse_object(line);
  Request req;
  req.id = parse_id(j);
  auto png = j.find("png");
  if (png == j.end() || !png->is_string()) throw std::invalid_argument("missing string \"png\"");
  try {
    req.image = decode_png(base64_decode(png->get<std::string>()));
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("bad image payload: ") + e.what());
  }
  return req;
}

Reply parse_reply(std::string_view line) {
  const json j = parse_object(line);
  Reply r;
  auto id = j.find("id");
  if (id != j.end() && !id->is_null()) r.id = parse_id(j);
  auto err = j.find("error");
  if (err != j.end()) {
    r.body = err->is_string() ? err->get<std::string>() : err->dump();
    return r;
  }
  if (!r.id) throw std::invalid_argument("label reply without id");
  auto label = j.find("label");
  if (label == j.end() || !label->is_number_integer()) throw std::invalid_argument("reply lacks integer label");
  const auto v = label->get<long long>();
  if (v < 0 || v > std::numeric_limits<int>::max()) throw std::invalid_argument("label out of range");
  r.body = static_cast<int>(v);
  return r;
}

// ---------------------------------------------------------------------------

ChildProcess::ChildProcess(const std::string& command_line) {
  static const bool sigpipe_ignored = [] {
    ::signal(SIGPIPE, SIG_IGN);
    return true;
  }();
  (void)sigpipe_ignored;

  int in[2];
  int out[2];
  if (::pipe2(in, O_CLOEXEC) != 0) throw OracleError(std::string("pipe: ") + std::strerror(errno));
  if (::pipe2(out, O_CLOEXEC) != 0) {
    ::close(in[0]);
    ::close(in[1]);
    throw OracleError(std::string("pipe: ") + std::strerror(errno));
  }

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, in[0], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, out[1], STDOUT_FILENO);

  std::string script = "exec " + command_line;
  char sh[] = "/bin/sh";
  char dash_c[] = "-c";
  char* argv[] = {sh, dash_c, script.data(), nullptr};
  const int rc = ::posix_spawn(&pid_, "/bin/sh", &actions, nullptr, argv, environ);
  posix_spawn_file_actions_destroy(&actions);
  ::close(in[0]);
  ::close(out[1]);
  if (rc != 0) {
    ::close(in[1]);
    ::close(out[0]);
    throw OracleError("cannot launch oracle '" + command_line + "': " + std::strerror(rc));
  }
  to_child_ = in[1];
  from_child_ = out[0];
  ::fcntl(to_child_, F_SETFL, ::fcntl(to_child_, F_GETFL) | O_NONBLOCK);
}

ChildProcess::~ChildProcess() { terminate(std::chrono::milliseconds(500)); }

void ChildProcess::write_line(std::string_view line, std::chrono::milliseconds timeout) {
  if (to_child_ < 0) throw OracleError("oracle input already closed");
  std::string data(line);
  data.push_back('\n');
  std::size_t off = 0;
  auto deadline = Clock::now() + timeout;
  while (off < data.size()) {
    const ssize_t n = ::write(to_child_, data.data() + off, data.size() - off);
    if (n > 0) {
      off += static_cast<std::size_t>(n);
      deadline = Clock::now() + timeout;
      continue;
    }
    if (n < 0 && errno == EINTR) continue;
    if (n < 0 && errno != EAGAIN && errno != EWOULDBLOCK) {
      throw OracleError(errno == EPIPE ? std::string("oracle process is not reading its input")
                                       : std::string("write to oracle: ") + std::strerror(errno));
    }
    // Pipe full. Keep draining replies so a child blocked on its own output can make progress.
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
    if (left.count() <= 0) {
      throw OracleError("timed out after " + std::to_string(timeout.count()) + " ms writing a request");
    }
    pollfd pfd[2] = {{to_child_, POLLOUT, 0}, {from_child_, POLLIN, 0}};
    const int pr = ::poll(pfd, from_child_ >= 0 ? 2 : 1, static_cast<int>(std::min<long long>(left.count(), 1 << 30)));
    if (pr < 0 && errno != EINTR) throw OracleError(std::string("poll: ") + std::strerror(errno));
    if (pr > 0 && from_child_ >= 0 && (pfd[1].revents & (POLLIN | POLLHUP))) {
      char chunk[65536];
      const ssize_t r = ::read(from_child_, chunk, sizeof chunk);
      if (r > 0) buffer_.append(chunk, static_cast<std::size_t>(r));
      else if (r == 0) throw OracleError("oracle process closed its output (crashed or exited)");
    }
  }
}

std::optional<std::string> ChildProcess::read_line(std::chrono::milliseconds timeout) {
  const auto deadline = Clock::now() + timeout;
  for (;;) {
    if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      return line;
    }
    if (from_child_ < 0) throw OracleError("oracle output already closed");
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
    if (left.count() <= 0) return std::nullopt;
    pollfd pfd{from_child_, POLLIN, 0};
    const int pr = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(left.count(), 1 << 30)));
    if (pr < 0) {
      if (errno == EINTR) continue;
      throw OracleError(std::string("poll: ") + std::strerror(errno));
    }
    if (pr == 0) return std::nullopt;
    char chunk[65536];
    const ssize_t n = ::read(from_child_, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw OracleError(std::string("read from oracle: ") + std::strerror(errno));
    }
    if (n == 0) throw OracleError("oracle process closed its output (crashed or exited)");
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

void ChildProcess::close_stdin() {
  if (to_child_ >= 0) {
    ::close(to_child_);
    to_child_ = -1;
  }
}

int ChildProcess::terminate(std::chrono::milliseconds grace) {
  close_stdin();
  if (from_child_ >= 0) {
    ::close(from_child_);
    from_child_ = -1;
  }
  if (pid_ <= 0 || reaped_) return status_;
  const auto deadline = Clock::now() + grace;
  for (;;) {
    const pid_t r = ::waitpid(pid_, &status_, WNOHANG);
    if (r == pid_ || (r < 0 && errno != EINTR)) break;
    if (Clock::now() >= deadline) {
      ::kill(pid_, SIGKILL);
      while (::waitpid(pid_, &status_, 0) < 0 && errno == EINTR) {
      }
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  reaped_ = true;
  return status_;
}

// ---------------------------------------------------------------------------

SubprocessOracle::SubprocessOracle(SubprocessOptions opts) : opts_(std::move(opts)), child_(opts_.command) {
  auto line = child_.read_line(opts_.timeout);
  if (!line) {
    throw OracleError("no handshake from '" + opts_.command + "' within " + std::to_string(opts_.timeout.count()) +
                      " ms");
  }
  try {
    num_classes_ = parse_handshake(*line).num_classes;
  } catch (const std::invalid_argument& e) {
    throw OracleError(std::string("bad handshake: ") + e.what() + " in line: " + line->substr(0, 200));
  }
  if (opts_.self_test_probe && !self_test_determinism(*this, *opts_.self_test_probe)) {
    throw OracleError("oracle failed the determinism self-test (same image, different labels)");
  }
}

SubprocessOracle::~SubprocessOracle() = default;

OracleDescriptor SubprocessOracle::descriptor() const {
  return {OracleKind::subprocess, num_classes_, opts_.thread_safe};
}

void SubprocessOracle::fail(const std::string& cause, std::optional<std::size_t> index) {
  broken_ = cause;
  throw OracleError(cause, index);
}

Label SubprocessOracle::classify(const Image& img) {
  try {
    return classify_batch(std::span<const Image>(&img, 1)).front();
  } catch (const OracleError& e) {
    throw OracleError(e.cause());
  }
}

std::vector<Label> SubprocessOracle::classify_batch(std::span<const Image> imgs) {
  std::lock_guard lock(mu_);
  if (broken_) throw OracleError("oracle unusable after earlier failure: " + *broken_);

  std::vector<std::optional<Label>> labels(imgs.size());
  std::map<std::uint64_t, std::size_t> in_flight;
  std::size_t sent = 0;
  std::size_t received = 0;
  const std::size_t window = std::max<std::size_t>(1, opts_.window);

  while (received < imgs.size()) {
    while (sent < imgs.size() && in_flight.size() < window) {
      const std::uint64_t id = next_id_++;
      std::string line;
      try {
        line = request_line(id, imgs[sent]);
      } catch (const std::exception& e) {
        fail(std::string("cannot encode image: ") + e.what(), sent);
      }
      try {
        child_.write_line(line, opts_.timeout);
      } catch (const OracleError& e) {
        fail(e.cause(), sent);
      }
      in_flight.emplace(id, sent);
      ++sent;
    }

    std::optional<std::string> line;
    try {
      line = child_.read_line(opts_.timeout);
    } catch (const OracleError& e) {
      fail(e.cause(), in_flight.empty() ? std::nullopt : std::optional(in_flight.begin()->second));
    }
    if (!line) {
      fail("timed out after " + std::to_string(opts_.timeout.count()) + " ms waiting for a reply",
           in_flight.begin()->second);
    }

    Reply reply;
    try {
      reply = parse_reply(*line);
    } catch (const std::invalid_argument& e) {
      fail(std::string("malformed reply (") + e.what() + "): " + line->substr(0, 200), std::nullopt);
    }
    if (!reply.id) {
      fail("error reply without id: " + std::get<std::string>(reply.body), std::nullopt);
    }
    auto it = in_flight.find(*reply.id);
    if (it == in_flight.end()) fail("reply for unknown id " + std::to_string(*reply.id), std::nullopt);
    const std::size_t index = it->second;
    in_flight.erase(it);
    if (reply.is_error()) fail("oracle reported error: " + std::get<std::string>(reply.body), index);
    const int label = std::get<int>(reply.body);
    if (label >= num_classes_) {
      fail("label " + std::to_string(label) + " outside [0," + std::to_string(num_classes_) + ")", index);
    }
    labels[index] = Label{label};
    ++received;
  }

  std::vector<Label> out;
  out.reserve(labels.size());
  for (const auto& l : labels) out.push_back(*l);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

Image probe_image(Rng& rng, int size, int channels) {
  Image img(size, size, channels);
  std::uniform_int_distribution<int> byte(0, 255);
  for (auto& v : img.data()) v = static_cast<std::uint8_t>(byte(rng));
  return img;
}

std::string corrupt(std::string line, Rng& rng) {
  std::uniform_int_distribution<int> printable(0x20, 0x7e);
  auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  switch (pick(8)) {
    case 0: {  // flip a handful of characters
      const std::size_t flips = 1 + pick(8);
      for (std::size_t i = 0; i < flips; ++i) line[pick(line.size())] = static_cast<char>(printable(rng));
      break;
    }
    case 1:
      line.resize(1 + pick(line.size() - 1));
      break;
    case 2: {
      const std::size_t at = pick(line.size());
      line.erase(at, 1 + pick(std::min<std::size_t>(64, line.size() - at)));
      break;
    }
    case 3: {
      std::string junk(1 + pick(16), ' ');
      for (auto& ch : junk) ch = static_cast<char>(printable(rng));
      line.insert(pick(line.size()), junk);
      break;
    }
    case 4:
      line = R"({"id":"seven","png":"AAAA"})";
      break;
    case 5:
      line = R"({"id":)" + std::to_string(pick(1000)) + "}";
      break;
    case 6:
      line = R"({"id":)" + std::to_string(pick(1000)) + R"(,"png":"not base64!"})";
      break;
    default: {
      std::string junk(1 + pick(80), ' ');
      for (auto& ch : junk) ch = static_cast<char>(printable(rng));
      line = junk;
      break;
    }
  }
  if (line.find_first_not_of(' ') == std::string::npos) line = "x";
  return line;
}

}  // namespace

std::vector<ConformanceCheck> run_conformance(const std::string& command, const ConformanceOptions& opts) {
  std::vector<ConformanceCheck> checks;
  Rng rng(opts.seed);

  // Primary-side payload round trip: what we put on the wire decodes to the same pixels.
  {
    ConformanceCheck c{"payload round-trip", true, ""};
    for (int i = 0; i < 8 && c.passed; ++i) {
      const Image img = probe_image(rng, opts.probe_size, opts.probe_channels);
      const Request req = parse_request(request_line(static_cast<std::uint64_t>(i), img));
      if (!(req.image == img)) {
        c.passed = false;
        c.detail = "decoded pixels differ";
      }
    }
    checks.push_back(c);
  }

  std::optional<ChildProcess> child;
  int num_classes = 0;
  {
    ConformanceCheck c{"handshake", false, ""};
    try {
      child.emplace(command);
      auto line = child->read_line(opts.timeout);
      if (!line) {
        c.detail = "no handshake within timeout";
      } else {
        num_classes = parse_handshake(*line).num_classes;
        c.passed = true;
        c.detail = "num_classes=" + std::to_string(num_classes);
      }
    } catch (const std::exception& e) {
      c.detail = e.what();
    }
    checks.push_back(c);
    if (!c.passed) return checks;
  }

  auto await_reply = [&](std::string& why) -> std::optional<Reply> {
    auto line = child->read_line(opts.timeout);
    if (!line) {
      why = "timed out waiting for reply";
      return std::nullopt;
    }
    try {
      return parse_reply(*line);
    } catch (const std::exception& e) {
      why = std::string("unparseable reply: ") + e.what();
      return std::nullopt;
    }
  };

  {
    ConformanceCheck c{"id matching", false, ""};
    try {
      std::vector<std::uint64_t> ids;
      for (std::uint64_t i = 0; i < 31; ++i) ids.push_back(1000 + 7919 * i);
      ids.push_back(std::numeric_limits<std::uint64_t>::max() - 3);
      std::shuffle(ids.begin(), ids.end(), rng);
      for (auto id : ids)
        child->write_line(request_line(id, probe_image(rng, opts.probe_size, opts.probe_channels)), opts.timeout);
      std::map<std::uint64_t, int> seen;
      std::string why;
      for (std::size_t i = 0; i < ids.size() && why.empty(); ++i) {
        auto r = await_reply(why);
        if (!r) break;
        if (!r->id || std::find(ids.begin(), ids.end(), *r->id) == ids.end()) {
          why = "reply carries an id that was never sent";
        } else if (++seen[*r->id] > 1) {
          why = "duplicate reply for id " + std::to_string(*r->id);
        } else if (r->is_error()) {
          why = "error reply to a valid request: " + std::get<std::string>(r->body);
        } else if (std::get<int>(r->body) >= num_classes) {
          why = "label outside [0,num_classes)";
        }
      }
      c.passed = why.empty() && seen.size() == ids.size();
      c.detail = why.empty() ? std::to_string(seen.size()) + " replies matched" : why;
    } catch (const std::exception& e) {
      c.detail = e.what();
    }
    checks.push_back(c);
  }

  {
    ConformanceCheck c{"determinism", false, ""};
    try {
      const Image img = probe_image(rng, opts.probe_size, opts.probe_channels);
      child->write_line(request_line(1, img), opts.timeout);
      child->write_line(request_line(2, img), opts.timeout);
      std::string why;
      auto a = await_reply(why);
      auto b = a ? await_reply(why) : std::nullopt;
      if (a && b) {
        c.passed = !a->is_error() && !b->is_error() && a->body == b->body;
        c.detail = c.passed ? "" : "repeated image received different replies";
      } else {
        c.detail = why;
      }
    } catch (const std::exception& e) {
      c.detail = e.what();
    }
    checks.push_back(c);
  }

  {
    ConformanceCheck c{"malformed-line resilience", false, ""};
    std::size_t answered = 0;
    std::size_t errors = 0;
    try {
      const std::string valid = request_line(5, probe_image(rng, opts.probe_size, opts.probe_channels));
      std::string why;
      for (std::size_t i = 0; i < opts.fuzz_lines && why.empty(); ++i) {
        child->write_line(corrupt(valid, rng), opts.timeout);
        auto r = await_reply(why);
        if (!r) break;
        ++answered;
        if (r->is_error()) ++errors;
      }
      c.passed = why.empty() && answered == opts.fuzz_lines;
      c.detail = std::to_string(answered) + "/" + std::to_string(opts.fuzz_lines) + " answered (" +
                 std::to_string(errors) + " error frames)" + (why.empty() ? "" : "; " + why);
    } catch (const std::exception& e) {
      c.detail = std::to_string(answered) + " answered before failure: " + e.what();
    }
    checks.push_back(c);
  }

  {
    ConformanceCheck c{"alive after fuzzing", false, ""};
    try {
      child->write_line(request_line(424242, probe_image(rng, opts.probe_size, opts.probe_channels)),
                        opts.timeout);
      std::string why;
      auto r = await_reply(why);
      c.passed = r && r->id == std::uint64_t{424242} && !r->is_error();
      c.detail = c.passed ? "" : (why.empty() ? "wrong reply to final request" : why);
    } catch (const std::exception& e) {
      c.detail = e.what();
    }
    checks.push_back(c);
  }

  return checks;
}

}  // namespace neo::protocol
