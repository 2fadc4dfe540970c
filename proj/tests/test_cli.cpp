#include "spherediff/cli.hpp"
#include "spherediff/image_io.hpp"
#include "spherediff/remote.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

using namespace spherediff;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "spherediff");
    std::ostringstream out, err;
    const int code = cli_dispatch(args, out, err);
    return {code, out.str(), err.str()};
}

std::size_t count_lines(const std::string& s) {
    std::size_t n = 0;
    for (char c : s) n += c == '\n';
    return n;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

fs::path scratch_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("spherediff_cli_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// The wire carries float32, so remote runs match local ones to rounding.
double max_difference(const fs::path& a, const fs::path& b) {
    const auto ra = read_raster(a), rb = read_raster(b);
    REQUIRE(ra.data().size() == rb.data().size());
    double worst = 0.0;
    for (std::size_t i = 0; i < ra.data().size(); ++i) {
        worst = std::max(worst, static_cast<double>(std::abs(ra.data()[i] - rb.data()[i])));
    }
    return worst;
}

std::string stdio_endpoint() { return std::string("stdio:") + SPHEREDIFF_CLI_PATH + " serve --listen stdio --backend scheduler"; }

}  // namespace

TEST_CASE("fnv1a64") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(hex64(0xabc) == "0000000000000abc");
}

TEST_CASE("schedule") {
    const auto r = run({"schedule"});
    CHECK(r.code == kExitOk);
    CHECK(count_lines(r.out) == 89);
    CHECK(r.out.rfind("0 azimuth=0 elevation=-90 fov=80 kernel=exponential prompt=top\n", 0) == 0);

    const auto small = run({"schedule", "--rings", "0:3", "--fov", "100"});
    CHECK(small.code == kExitOk);
    CHECK(small.out == "0 azimuth=0 elevation=0 fov=100 kernel=exponential prompt=middle\n"
                       "1 azimuth=120 elevation=0 fov=100 kernel=exponential prompt=middle\n"
                       "2 azimuth=240 elevation=0 fov=100 kernel=exponential prompt=middle\n");

    const auto dir = scratch_dir("schedule");
    std::ofstream(dir / "run.conf") << "rings = 0:2\nforeground = 45, 0, -3, a chair\n";
    const auto fg = run({"schedule", "--config", (dir / "run.conf").string()});
    CHECK(fg.code == kExitOk);
    CHECK(count_lines(fg.out) == 3);
    CHECK(fg.out.find("kernel=beta") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("lattice") {
    const auto dir = scratch_dir("lattice");
    const auto r = run({"lattice", "--out", (dir / "dirs.txt").string()});
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("count=2600\n") != std::string::npos);
    const auto pos = r.out.find("lattice.mean=");
    REQUIRE(pos != std::string::npos);
    const double mean = std::stod(r.out.substr(pos + 13));
    CHECK(std::abs(mean - 304.14) < 0.03 * 304.14);
    CHECK(count_lines(slurp(dir / "dirs.txt")) == 2600);
    fs::remove_all(dir);
}

TEST_CASE("usage and domain errors") {
    CHECK(run({}).code == kExitUsageError);
    CHECK(run({"frobnicate"}).code == kExitUsageError);
    CHECK(run({"schedule", "--no-such-flag"}).code == kExitUsageError);
    CHECK(run({"--help"}).code == kExitOk);
    CHECK(run({"generate", "--format", "gif"}).code == kExitUsageError);
    CHECK(run({"generate", "--denoiser", "magic"}).code == kExitUsageError);

    const auto bad = run({"schedule", "--steps", "abc"});
    CHECK(bad.code == kExitDomainError);
    CHECK(bad.err.find("steps") != std::string::npos);

    const auto dir = scratch_dir("errors");
    std::ofstream(dir / "bad.conf") << "tau = -2\n";
    const auto cfg = run({"schedule", "--config", (dir / "bad.conf").string()});
    CHECK(cfg.code == kExitDomainError);
    CHECK(cfg.err.find("tau") != std::string::npos);

    const auto narrow = run({"generate", "--channels", "2", "--out-dir", (dir / "x").string()});
    CHECK(narrow.code == kExitDomainError);
    CHECK(narrow.err.find("channels") != std::string::npos);

    CHECK(run({"eval", (dir / "missing.png").string()}).code == kExitDomainError);
    CHECK(run({"distortion-curve", "--max-deg", "90"}).code == kExitUsageError);
    fs::remove_all(dir);
}

TEST_CASE("generate is deterministic and replayable") {
    const auto dir = scratch_dir("generate");
    const std::vector<std::string> base = {"generate", "--steps", "4", "--seed", "11", "--erp-height", "64"};
    auto a = base;
    a.insert(a.end(), {"--out-dir", (dir / "a").string()});
    auto b = base;
    b.insert(b.end(), {"--out-dir", (dir / "b").string()});
    const auto ra = run(a);
    REQUIRE(ra.code == kExitOk);
    REQUIRE(run(b).code == kExitOk);
    CHECK(slurp(dir / "a" / "manifest.json") == slurp(dir / "b" / "manifest.json"));
    CHECK(slurp(dir / "a" / "panorama.png") == slurp(dir / "b" / "panorama.png"));
    CHECK(slurp(dir / "a" / "latents.sdrf") == slurp(dir / "b" / "latents.sdrf"));
    CHECK(ra.out.find("views=89 steps=4 holes=0") == 0);

    const auto m = nlohmann::json::parse(slurp(dir / "a" / "manifest.json"));
    CHECK(m.at("seed") == 11);
    CHECK(m.at("views") == 89);
    CHECK(m.at("steps").size() == 4);
    CHECK(m.at("outputs").at("panorama").at("fnv1a64") == hex64(fnv1a64(slurp(dir / "a" / "panorama.png"))));
    const auto latents = read_raster(dir / "a" / "latents.sdrf");
    CHECK(latents.height() == 2600);
    CHECK(latents.channels() == 4);

    const auto replay = run({"generate", "--manifest", (dir / "a" / "manifest.json").string(), "--out-dir",
                             (dir / "c").string()});
    REQUIRE(replay.code == kExitOk);
    CHECK(slurp(dir / "c" / "manifest.json") == slurp(dir / "a" / "manifest.json"));

    // The scheduler mock lands on its target at t = 1 whatever the start, so
    // seed sensitivity shows with the identity backend.
    REQUIRE(run({"generate", "--denoiser", "identity", "--steps", "4", "--seed", "11", "--erp-height", "64",
                 "--out-dir", (dir / "e").string()})
                .code == kExitOk);
    const auto other = run({"generate", "--denoiser", "identity", "--steps", "4", "--seed", "12", "--erp-height", "64", "--out-dir",
                            (dir / "d").string()});
    REQUIRE(other.code == kExitOk);
    CHECK(slurp(dir / "d" / "latents.sdrf") != slurp(dir / "e" / "latents.sdrf"));
    fs::remove_all(dir);
}

TEST_CASE("render, degrade and eval") {
    const auto dir = scratch_dir("render");
    REQUIRE(run({"generate", "--denoiser", "analytic", "--steps", "2", "--erp-height", "128", "--out-dir",
                 (dir / "gen").string()})
                .code == kExitOk);
    const auto pano = (dir / "gen" / "panorama.png").string();

    const auto r = run({"render", "--in", pano, "--out-dir", (dir / "views").string(), "--eval-set", "--size", "32"});
    REQUIRE(r.code == kExitOk);
    CHECK(count_lines(r.out) == 14);
    std::size_t files = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir / "views")) ++files;
    CHECK(files == 14);

    const auto d = run({"degrade", "--in", pano, "--out", (dir / "shifted.png").string(), "--kind", "discontinuity",
                        "--level", "8"});
    REQUIRE(d.code == kExitOk);
    CHECK(run({"degrade", "--in", pano, "--out", (dir / "tilted.png").string(), "--kind", "distortion", "--level",
               "30", "--size", "64"})
              .code == kExitOk);
    CHECK(read_raster(dir / "tilted.png").height() == 64);
    CHECK(run({"degrade", "--in", pano, "--out", (dir / "x.png").string(), "--kind", "discontinuity", "--level",
               "128"})
              .code == kExitDomainError);

    const auto e = run({"eval", pano, (dir / "shifted.png").string(), "--threads", "2"});
    REQUIRE(e.code == kExitOk);
    REQUIRE(count_lines(e.out) == 2);
    CHECK(e.out.rfind("file=" + pano + " height=128 width=256 channels=3 border=", 0) == 0);
    for (const char* key : {" top_pole_std=", " bottom_pole_std=", " continuity=", " curvature="}) {
        CHECK(e.out.find(key) != std::string::npos);
    }
    const auto continuity = [&](std::size_t line) {
        std::istringstream in(e.out);
        std::string s;
        for (std::size_t i = 0; i <= line; ++i) std::getline(in, s);
        const auto p = s.find(" continuity=");
        return std::stod(s.substr(p + 12));
    };
    CHECK(continuity(1) > continuity(0));
    fs::remove_all(dir);
}

TEST_CASE("distortion-curve") {
    const auto r = run({"distortion-curve", "--max-deg", "45", "--step-deg", "15"});
    CHECK(r.code == kExitOk);
    CHECK(r.out == "# theta_deg tan_over_theta\n"
                   "0 1\n"
                   "15 1.0234905233494715\n"
                   "30 1.1026577908435842\n"
                   "45 1.2732395447351625\n");
}

TEST_CASE("remote denoiser over a stdio child") {
    const auto dir = scratch_dir("remote");
    const std::vector<std::string> common = {"--steps", "3", "--seed", "5", "--erp-height", "32", "--threads", "2"};
    auto local = common;
    local.insert(local.begin(), {"generate", "--denoiser", "scheduler", "--out-dir", (dir / "local").string()});
    REQUIRE(run(local).code == kExitOk);

    auto remote = common;
    remote.insert(remote.begin(), {"generate", "--denoiser", "remote", "--endpoint", stdio_endpoint(), "--out-dir",
                                   (dir / "remote").string()});
    const auto rr = run(remote);
    INFO(rr.err);
    REQUIRE(rr.code == kExitOk);
    CHECK(max_difference(dir / "local" / "latents.sdrf", dir / "remote" / "latents.sdrf") < 1e-5);

    SUBCASE("endpoint from the environment") {
        ::setenv(kEndpointEnvVar, stdio_endpoint().c_str(), 1);
        auto env = common;
        env.insert(env.begin(), {"generate", "--denoiser", "remote", "--out-dir", (dir / "env").string()});
        const auto re = run(env);
        ::unsetenv(kEndpointEnvVar);
        REQUIRE(re.code == kExitOk);
        CHECK(max_difference(dir / "env" / "latents.sdrf", dir / "local" / "latents.sdrf") < 1e-5);
    }

    SUBCASE("missing endpoint is a usage error") {
        ::unsetenv(kEndpointEnvVar);
        CHECK(run({"generate", "--denoiser", "remote", "--out-dir", (dir / "none").string()}).code ==
              kExitUsageError);
    }

    SUBCASE("unreachable endpoint is a domain error") {
        auto dead = common;
        dead.insert(dead.begin(), {"generate", "--denoiser", "remote", "--endpoint", "tcp://127.0.0.1:1",
                                   "--out-dir", (dir / "dead").string()});
        const auto rd = run(dead);
        CHECK(rd.code == kExitDomainError);
        CHECK(rd.err.find("error: ") == 0);
    }
    fs::remove_all(dir);
}
