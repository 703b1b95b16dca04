#include <doctest.h>

#include <atomic>
#include <thread>

#include "panorag/error.hpp"
#include "panorag/remote_backend.hpp"
#include "session_fixture.hpp"

#include <httplib.h>

using namespace panorag;
using namespace panorag::session;

namespace {

/// Minimal out-of-process generator: decodes the package, runs the local echo
/// mock (or misbehaves on request).
class StubServer {
 public:
  enum class Mode { Echo, Fail, Slow };

  explicit StubServer(Mode mode) : mode_(mode) {
    server_.Post("/generate", [this](const httplib::Request& req, httplib::Response& res) {
      ++calls;
      if (mode_ == Mode::Fail) {
        res.status = 500;
        res.set_content("{\"error\":\"out of memory\"}", "application/json");
        return;
      }
      if (mode_ == Mode::Slow) {
        for (int i = 0; i < 100 && !release; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(50));
      }
      const auto pkg = package_from_parts(req.get_file_value("package").content,
                                          req.get_file_value("first_image").content,
                                          req.get_file_value("geo_frames").content);
      last_package = pkg;
      MockGenerator echo(MockGenerator::Mode::Echo);
      res.set_content(encode_pfm_sequence(echo.generate(pkg, {})), "image/x-portable-floatmap");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    release = true;
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

  std::atomic<int> calls{0};
  std::atomic<bool> release{false};
  ConditionPackage last_package;

 private:
  Mode mode_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace

TEST_SUITE("remote_backend") {
  TEST_CASE("remote echo equals local echo and the package arrives intact") {
    testutil::SessionFixture f(fixtures::straight_scenario());
    const auto st = f.start(testutil::SessionFixture::small_params());
    const auto pkg = assemble_package(st, 0, *f.catalog, f.panos);
    StubServer server(StubServer::Mode::Echo);
    RemoteGenerator remote(server.url() + "/");
    CHECK(remote.id() == "remote:" + server.url());
    const auto frames = remote.generate(pkg, {});
    MockGenerator echo(MockGenerator::Mode::Echo);
    CHECK(frames == echo.generate(pkg, {}));
    CHECK(server.last_package.first_image == pkg.first_image);
    CHECK(server.last_package.geo_frames == pkg.geo_frames);
    REQUIRE(server.last_package.relative_poses.size() == pkg.relative_poses.size());
    for (std::size_t k = 0; k < pkg.relative_poses.size(); ++k) {
      CHECK(server.last_package.relative_poses[k] == pkg.relative_poses[k]);
    }
    CHECK(server.last_package.metadata.seed == pkg.metadata.seed);

    // Through the session engine.
    const auto out = step(st, remote, *f.catalog, f.panos);
    CHECK(out.state.backend_ids.front() == remote.id());
  }

  TEST_CASE("remote failure maps to backend_failure") {
    testutil::SessionFixture f(fixtures::straight_scenario());
    const auto st = f.start(testutil::SessionFixture::small_params());
    StubServer server(StubServer::Mode::Fail);
    RemoteGenerator remote(server.url());
    try {
      step(st, remote, *f.catalog, f.panos);
      FAIL("expected BackendFailure");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::BackendFailure);
      CHECK(e.detail().find("out of memory") != std::string::npos);
    }
    RemoteGenerator nowhere("http://127.0.0.1:1");
    CHECK_THROWS_AS(step(st, nowhere, *f.catalog, f.panos), Error);
  }

  TEST_CASE("cancellation interrupts a slow remote call") {
    testutil::SessionFixture f(fixtures::straight_scenario());
    const auto st = f.start(testutil::SessionFixture::small_params());
    StubServer server(StubServer::Mode::Slow);
    RemoteGenerator remote(server.url());
    std::stop_source stop;
    std::thread canceller([&] {
      std::this_thread::sleep_for(std::chrono::milliseconds(200));
      stop.request_stop();
    });
    const testutil::Stopwatch clock;
    try {
      step(st, remote, *f.catalog, f.panos, stop.get_token());
      FAIL("expected Cancelled");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::Cancelled);
    }
    canceller.join();
    server.release = true;
    CHECK(clock.seconds() < 4.0);
  }

  TEST_CASE("malformed package parts") {
    CHECK_THROWS_AS(package_from_parts("nope", "", ""), Error);
    CHECK_THROWS_AS(package_from_parts("{\"relative_poses\": [[1,2,3]]}", "", ""), Error);
  }
}
