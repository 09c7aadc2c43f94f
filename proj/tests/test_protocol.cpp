#include <doctest.h>

#include <chrono>
#include <cstdlib>
#include <nlohmann/json.hpp>
#include <string>

#include "neo/protocol.hpp"

using namespace neo;
using namespace neo::protocol;
using namespace std::chrono_literals;

namespace {

std::string fake(const std::string& flags) { return std::string(NEO_FAKE_ORACLE) + " " + flags; }

SubprocessOptions opts_for(const std::string& flags, std::chrono::milliseconds timeout = 5000ms) {
  SubprocessOptions o;
  o.command = fake(flags);
  o.timeout = timeout;
  return o;
}

Image shade(std::uint8_t v, int ch = 3) { return Image::filled(4, 4, ch == 3 ? Colour::rgb(v, v, v) : Colour::gray(v)); }

const ConformanceCheck& find(const std::vector<ConformanceCheck>& checks, const std::string& name) {
  for (const auto& c : checks)
    if (c.name == name) return c;
  FAIL("missing check " << name);
  return checks.front();
}

struct EnvGuard {
  explicit EnvGuard(const char* value) { ::setenv("NEO_ORACLE_TIMEOUT_MS", value, 1); }
  ~EnvGuard() { ::unsetenv("NEO_ORACLE_TIMEOUT_MS"); }
};

}  // namespace

TEST_CASE("line builders produce the documented shapes") {
  CHECK(handshake_line(7) == R"({"proto":"neo-oracle/1","num_classes":7})");
  CHECK(label_line(42, 3) == R"({"id":42,"label":3})");
  CHECK(error_line(9, "boom") == R"({"id":9,"error":"boom"})");
  CHECK(error_line(std::nullopt, "x") == R"({"id":null,"error":"x"})");
  const auto j = nlohmann::json::parse(request_line(18446744073709551615ULL, shade(3)));
  CHECK(j["id"].get<std::uint64_t>() == 18446744073709551615ULL);
  CHECK(j["png"].is_string());
}

TEST_CASE("request lines carry pixels losslessly") {
  Rng rng(12);
  for (int ch : {1, 3}) {
    Image img(9, 5, ch);
    for (auto& v : img.data()) v = static_cast<std::uint8_t>(rng());
    const Request r = parse_request(request_line(77, img));
    CHECK(r.id == 77);
    CHECK(r.image == img);
  }
}

TEST_CASE("parsers reject malformed lines") {
  CHECK(parse_handshake(handshake_line(4)).num_classes == 4);
  CHECK_THROWS_AS(parse_handshake(R"({"proto":"neo-oracle/2","num_classes":4})"), std::invalid_argument);
  CHECK_THROWS_AS(parse_handshake(R"({"proto":"neo-oracle/1"})"), std::invalid_argument);
  CHECK_THROWS_AS(parse_handshake(R"({"proto":"neo-oracle/1","num_classes":1})"), std::invalid_argument);
  CHECK_THROWS_AS(parse_handshake("hello"), std::invalid_argument);

  CHECK_THROWS_AS(parse_request(R"({"png":"AAAA"})"), std::invalid_argument);
  CHECK_THROWS_AS(parse_request(R"({"id":-1,"png":"AAAA"})"), std::invalid_argument);
  CHECK_THROWS_AS(parse_request(R"({"id":1,"png":"AAAA"})"), std::invalid_argument);
  CHECK_THROWS_AS(parse_request(R"([1,2])"), std::invalid_argument);

  const Reply ok = parse_reply(R"({"id":5,"label":2})");
  CHECK(ok.id == std::uint64_t{5});
  CHECK(std::get<int>(ok.body) == 2);
  const Reply err = parse_reply(R"({"id":null,"error":"bad"})");
  CHECK(err.is_error());
  CHECK(!err.id);
  CHECK_THROWS_AS(parse_reply(R"({"label":2})"), std::invalid_argument);
  CHECK_THROWS_AS(parse_reply(R"({"id":5,"label":-2})"), std::invalid_argument);
  CHECK_THROWS_AS(parse_reply(R"({"id":5,"label":"2"})"), std::invalid_argument);
}

TEST_CASE("timeout comes from the environment when valid") {
  ::unsetenv("NEO_ORACLE_TIMEOUT_MS");
  CHECK(timeout_from_env() == kDefaultTimeout);
  {
    EnvGuard g("1500");
    CHECK(timeout_from_env() == 1500ms);
  }
  {
    EnvGuard g("soon");
    CHECK(timeout_from_env(77ms) == 77ms);
  }
  {
    EnvGuard g("-4");
    CHECK(timeout_from_env(77ms) == 77ms);
  }
}

TEST_CASE("child process lines and exit status") {
  ChildProcess child("cat");
  child.write_line("first", 2000ms);
  child.write_line("second", 2000ms);
  CHECK(child.read_line(2000ms) == std::optional<std::string>("first"));
  CHECK(child.read_line(2000ms) == std::optional<std::string>("second"));
  CHECK(child.read_line(50ms) == std::nullopt);
  child.close_stdin();
  CHECK_THROWS_AS(child.read_line(2000ms), OracleError);
  CHECK(child.terminate() == 0);
}

TEST_CASE("writes to a child that stops reading time out") {
  ChildProcess child("sleep 30");
  const std::string big(1 << 20, 'x');
  const auto start = std::chrono::steady_clock::now();
  CHECK_THROWS_AS(child.write_line(big, 200ms), OracleError);
  CHECK(std::chrono::steady_clock::now() - start < 5s);
}

TEST_CASE("a large write drains replies while the pipe is full") {
  // cat echoes as it reads, so without draining both pipes fill and deadlock.
  ChildProcess child("cat");
  const std::string big(4 << 20, 'y');
  child.write_line(big, 2000ms);
  CHECK(child.read_line(2000ms) == std::optional<std::string>(big));
}

TEST_CASE("subprocess oracle classifies through the protocol") {
  SubprocessOracle o(opts_for("--classes 4 --mean"));
  CHECK(o.descriptor().num_classes == 4);
  CHECK(o.descriptor().kind == OracleKind::subprocess);
  CHECK(o.classify(shade(10)) == Label{0});
  CHECK(o.classify(shade(250)) == Label{3});
  std::vector<Image> batch;
  for (int v = 0; v < 256; v += 5) batch.push_back(shade(static_cast<std::uint8_t>(v), v % 2 ? 1 : 3));
  const auto labels = o.classify_batch(batch);
  REQUIRE(labels.size() == batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) CHECK(labels[i].id == static_cast<int>(i * 5 * 4 / 256));
}

TEST_CASE("out-of-order replies are matched by id") {
  SubprocessOptions o = opts_for("--classes 8 --mean --reverse 4");
  o.window = 8;
  SubprocessOracle oracle(o);
  std::vector<Image> batch;
  for (int v = 0; v < 8; ++v) batch.push_back(shade(static_cast<std::uint8_t>(v * 32)));
  const auto labels = oracle.classify_batch(batch);
  for (int v = 0; v < 8; ++v) CHECK(labels[v].id == v);
}

TEST_CASE("subprocess failures surface as OracleError") {
  SUBCASE("crash mid-batch names the pending query") {
    SubprocessOracle o(opts_for("--crash-after 3"));
    std::vector<Image> batch(6, shade(1));
    try {
      o.classify_batch(batch);
      FAIL("expected OracleError");
    } catch (const OracleError& e) {
      REQUIRE(e.index());
      CHECK(*e.index() >= 3);
      CHECK(*e.index() < 6);
    }
    CHECK_THROWS_AS(o.classify(shade(1)), OracleError);
  }
  SUBCASE("hang is bounded by the timeout") {
    SubprocessOracle o(opts_for("--hang-after 1", 300ms));
    CHECK(o.classify(shade(1)) == Label{0});
    const auto t0 = std::chrono::steady_clock::now();
    CHECK_THROWS_AS(o.classify(shade(2)), OracleError);
    CHECK(std::chrono::steady_clock::now() - t0 < 5s);
  }
  SUBCASE("environment timeout applies") {
    EnvGuard g("200");
    SubprocessOptions opts = opts_for("--hang-after 0");
    opts.timeout = timeout_from_env();
    SubprocessOracle o(opts);
    CHECK_THROWS_AS(o.classify(shade(1)), OracleError);
  }
  SUBCASE("garbage replies") {
    SubprocessOracle o(opts_for("--garbage"));
    CHECK_THROWS_AS(o.classify(shade(1)), OracleError);
  }
  SUBCASE("error frames carry the index") {
    SubprocessOracle o(opts_for("--error-replies"));
    std::vector<Image> batch(2, shade(1));
    try {
      o.classify_batch(batch);
      FAIL("expected OracleError");
    } catch (const OracleError& e) {
      CHECK(e.index() == std::optional<std::size_t>(0));
      CHECK(e.cause().find("model unavailable") != std::string::npos);
    }
  }
  SUBCASE("unknown reply id") {
    SubprocessOracle o(opts_for("--wrong-id"));
    CHECK_THROWS_AS(o.classify(shade(1)), OracleError);
  }
  SUBCASE("label outside the advertised range") {
    SubprocessOracle o(opts_for("--classes 3 --out-of-range"));
    CHECK_THROWS_AS(o.classify(shade(1)), OracleError);
  }
  SUBCASE("bad or missing handshake") {
    CHECK_THROWS_AS(SubprocessOracle(opts_for("--bad-handshake")), OracleError);
    CHECK_THROWS_AS(SubprocessOracle(opts_for("--no-handshake", 200ms)), OracleError);
    CHECK_THROWS_AS(SubprocessOracle(opts_for("--unknown-flag")), OracleError);
  }
  SUBCASE("nondeterminism fails the start-up self-test") {
    SubprocessOptions o = opts_for("--nondet");
    o.self_test_probe = shade(5);
    CHECK_THROWS_AS(SubprocessOracle{o}, OracleError);
  }
}

TEST_CASE("conformance passes for a well-behaved oracle") {
  ConformanceOptions opts;
  opts.fuzz_lines = 1000;
  const auto checks = run_conformance(fake("--mean --reverse 1"), opts);
  REQUIRE(checks.size() == 6);
  for (const auto& c : checks) {
    INFO(c.name << ": " << c.detail);
    CHECK(c.passed);
  }
  CHECK(find(checks, "malformed-line resilience").detail.find("1000/1000") == 0);
}

TEST_CASE("conformance catches protocol violations") {
  ConformanceOptions opts;
  opts.fuzz_lines = 50;
  opts.timeout = 500ms;
  CHECK_FALSE(find(run_conformance(fake("--drop-malformed"), opts), "malformed-line resilience").passed);
  CHECK_FALSE(find(run_conformance(fake("--nondet"), opts), "determinism").passed);
  CHECK_FALSE(find(run_conformance(fake("--wrong-id"), opts), "id matching").passed);
  CHECK_FALSE(find(run_conformance(fake("--error-replies"), opts), "id matching").passed);
  const auto bad = run_conformance(fake("--bad-handshake"), opts);
  CHECK(bad.size() == 2);
  CHECK_FALSE(find(bad, "handshake").passed);
  CHECK_FALSE(find(run_conformance(fake("--crash-after 40"), opts), "malformed-line resilience").passed);
}

TEST_CASE("reverse-order oracle passes id matching") {
  ConformanceOptions opts;
  opts.fuzz_lines = 10;
  opts.timeout = 300ms;
  const auto checks = run_conformance(fake("--mean --reverse 8"), opts);
  CHECK(find(checks, "id matching").passed);
}
