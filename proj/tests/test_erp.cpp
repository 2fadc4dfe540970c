#include "spherediff/erp.hpp"
#include "spherediff/evalkit.hpp"
#include "spherediff/image_io.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <unistd.h>

using namespace spherediff;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("spherediff_test_" + name + "_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    return dir;
}

SphericalLatentSet field_latents(std::size_t n) {
    const auto dirs = fibonacci_lattice(n);
    FeatureMatrix f(n, 3);
    for (std::size_t i = 0; i < n; ++i) direction_field(dirs[i], f.row(i));
    return SphericalLatentSet(dirs, std::move(f));
}

}  // namespace

TEST_CASE("ERP pixel layout") {
    const std::size_t h = 8;
    const auto top_left = erp_pixel_direction(0, 0, h);
    CHECK(top_left.elevation_deg() == doctest::Approx(-90.0 + 180.0 * 0.5 / 8.0));
    CHECK(top_left.azimuth_deg() == doctest::Approx(360.0 * 0.5 / 16.0));
    const auto d = erp_pixel_direction(5, 11, h);
    CHECK(d.elevation_deg() == doctest::Approx(-90.0 + 180.0 * 5.5 / 8.0));
    CHECK(d.azimuth_deg() == doctest::Approx(360.0 * 11.5 / 16.0));
    const auto pos = erp_position(d, h);
    CHECK(pos.row == doctest::Approx(5.0));
    CHECK(pos.col == doctest::Approx(11.0));

    CHECK_THROWS_AS(ERPImage(Raster(4, 7, 1)), std::invalid_argument);
    CHECK_THROWS_AS(Raster(0, 2, 1), std::invalid_argument);
}

TEST_CASE("ERP direction mapping round-trips through a camera") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> row(20.0, 490.0), col(0.0, 1023.0);
    for (int i = 0; i < 500; ++i) {
        const Direction d = erp_pixel_direction(row(rng), col(rng), 512);
        const CameraModel cam = CameraModel::from_fov(d, 90.0);
        const auto p = spherical_to_perspective(d, cam);
        REQUIRE(p);
        CHECK(perspective_to_spherical(*p, cam).angle_to(d) < 1e-6);
        const CameraModel off = CameraModel::from_fov(Direction::from_degrees(d.azimuth_deg() + 20, 0), 90.0);
        const auto q = spherical_to_perspective(d, off);
        if (q) CHECK(perspective_to_spherical(*q, off).angle_to(d) < 1e-6);
    }
}

TEST_CASE("ERP sampling wraps in azimuth") {
    ERPImage img(4, 1);
    for (std::size_t c = 0; c < 8; ++c) {
        for (std::size_t r = 0; r < 4; ++r) img.raster().at(r, c, 0) = static_cast<float>(c);
    }
    float v = 0;
    // Halfway between the last and the first column.
    img.sample(Direction::from_degrees(0.0, 0.0), std::span<float>(&v, 1));
    CHECK(v == doctest::Approx(3.5));
    img.sample(Direction::from_degrees(360.0 * 2.5 / 8.0, 0.0), std::span<float>(&v, 1));
    CHECK(v == doctest::Approx(2.0));
}

TEST_CASE("mock decode and encode") {
    PerspectiveGrid g(1, 2, SamplingStrategy::dynamic);
    g.features() = FeatureMatrix(2, 4);
    g.features()(1, 0) = 1.0;
    g.features()(1, 1) = -1.0;
    g.features()(1, 3) = 5.0;
    const auto r = mock_decode(g);
    CHECK(r.channels() == 3);
    CHECK(r.at(0, 0, 0) == 0.5f);
    CHECK(r.at(0, 0, 2) == 0.5f);
    CHECK(r.at(0, 1, 0) == 1.0f);
    CHECK(r.at(0, 1, 1) == 0.0f);
    CHECK(r.at(0, 1, 2) == 0.5f);

    PerspectiveGrid narrow(1, 1, SamplingStrategy::dynamic);
    narrow.features() = FeatureMatrix(1, 2);
    CHECK_THROWS_AS(mock_decode(narrow), std::invalid_argument);

    SUBCASE("decode of encode round-trips") {
        std::mt19937_64 rng(2);
        std::uniform_int_distribution<int> level(0, 255);
        Raster src(5, 7, 3);
        for (float& x : src.data()) x = static_cast<float>(level(rng)) / 255.0f;
        PerspectiveGrid grid(5, 7, SamplingStrategy::dynamic);
        grid.features() = mock_encode(src);
        const auto back = mock_decode(grid);
        for (std::size_t i = 0; i < src.data().size(); ++i) {
            CHECK(std::abs(back.data()[i] - src.data()[i]) <= 1.0f / 255.0f);
        }
    }
}

TEST_CASE("compose_erp") {
    PipelineConfig cfg;
    const auto views = generate_view_schedule(cfg);

    SUBCASE("constant decoders give a constant panorama") {
        const auto s = SphericalLatentSet::gaussian(2600, 3, 1);
        const ViewDecoder constant = [](const PerspectiveGrid& g) { return Raster(g.height(), g.width(), 2, 0.375f); };
        const auto out = compose_erp(s, views, constant, 64);
        CHECK(out.holes == 0);
        for (float v : out.image.raster().data()) CHECK(v == doctest::Approx(0.375f).epsilon(1e-6));
    }

    SUBCASE("direction field composite is continuous and renders back") {
        const auto s = field_latents(2600);
        const auto out = compose_erp(s, views, mock_decode, 256, 4);
        CHECK(out.holes == 0);
        const auto e = end_continuity_error(quantize_8bit(out.image.raster()));
        CHECK(e.border <= 2.0 / 255.0);
        CHECK(e.top_pole_std <= 2.0 / 255.0);
        CHECK(e.bottom_pole_std <= 2.0 / 255.0);

        for (const auto& cam : evaluation_cameras()) {
            const auto r = erp_to_perspective(out.image, cam, 33, 33);
            std::vector<double> g(3);
            direction_field(cam.view_direction(), g);
            for (std::size_t ch = 0; ch < 3; ++ch) CHECK(std::abs(r.at(16, 16, ch) - (g[ch] + 1.0) / 2.0) < 1e-2);
        }
    }

    SUBCASE("decoders must agree on channels") {
        const auto s = SphericalLatentSet::gaussian(2600, 3, 1);
        int calls = 0;
        const ViewDecoder uneven = [&calls](const PerspectiveGrid& g) {
            return Raster(g.height(), g.width(), calls++ == 0 ? 3 : 1);
        };
        CHECK_THROWS_AS(compose_erp(s, views, uneven, 16), std::invalid_argument);
    }

    SUBCASE("sparse schedules report holes") {
        PipelineConfig sparse;
        sparse.rings = {{0.0, 3}};
        const auto s = SphericalLatentSet::gaussian(2600, 3, 1);
        const auto out = compose_erp(s, generate_view_schedule(sparse), mock_decode, 32);
        CHECK(out.holes > 0);
        CHECK(out.image.raster().at(0, 0, 0) == 0.0f);
    }
}

TEST_CASE("default schedule leaves no holes at height 1024") {
    const auto s = SphericalLatentSet::gaussian(2600, 3, 2);
    const ViewDecoder flat = [](const PerspectiveGrid& g) { return Raster(g.height(), g.width(), 1, 1.0f); };
    CHECK(compose_erp(s, generate_view_schedule(PipelineConfig{}), flat, 1024, 0).holes == 0);
}

TEST_CASE("erp_to_perspective") {
    const ERPImage flat(16, 3, 0.25f);
    const auto r = erp_to_perspective(flat, CameraModel::from_yaw_pitch(45, 30, 90), 9, 11);
    CHECK(r.height() == 9);
    CHECK(r.width() == 11);
    for (float v : r.data()) CHECK(v == doctest::Approx(0.25f));

    const auto cams = evaluation_cameras();
    REQUIRE(cams.size() == 14);
    std::size_t poles = 0;
    for (const auto& c : cams) {
        CHECK(c.fov_deg() == doctest::Approx(90.0));
        const double el = c.view_direction().elevation_deg();
        if (std::abs(std::abs(el) - 90.0) < 1e-9) {
            ++poles;
        } else {
            CHECK((std::abs(el) < 1e-9 || std::abs(std::abs(el) - 45.0) < 1e-9));
            const double az = c.view_direction().azimuth_deg();
            CHECK(std::abs(std::remainder(az, 90.0)) < 1e-9);
        }
    }
    CHECK(poles == 2);
}

TEST_CASE("8-bit quantization") {
    CHECK(to_u8(0.0f) == 0);
    CHECK(to_u8(1.0f) == 255);
    CHECK(to_u8(2.0f) == 255);
    CHECK(to_u8(-1.0f) == 0);
    CHECK(to_u8(0.5f) == 128);
}

TEST_CASE("image files") {
    const auto dir = scratch_dir("io");
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> level(0, 255);

    SUBCASE("PNG round trip") {
        for (std::size_t ch : {1, 3, 4}) {
            Raster r(6, 9, ch);
            for (float& x : r.data()) x = static_cast<float>(level(rng)) / 255.0f;
            const auto path = dir / ("img" + std::to_string(ch) + ".png");
            write_png(path, r);
            const auto back = read_png(path);
            CHECK(back.channels() == ch);
            for (std::size_t i = 0; i < r.data().size(); ++i) CHECK(back.data()[i] == r.data()[i]);
        }
        CHECK_THROWS_AS(write_png(dir / "two.png", Raster(2, 2, 2)), ImageIoError);
        CHECK_THROWS_AS(read_png(dir / "missing.png"), ImageIoError);
    }

    SUBCASE("raw round trip is exact") {
        Raster r(3, 5, 2);
        std::normal_distribution<float> n(0.0f, 10.0f);
        for (float& x : r.data()) x = n(rng);
        r.at(0, 0, 0) = -0.0f;
        write_raster(dir / "feat.sdrf", r);
        const auto back = read_raster(dir / "feat.sdrf");
        CHECK(back == r);
        CHECK(std::signbit(back.at(0, 0, 0)));

        std::ofstream(dir / "bad.sdrf", std::ios::binary) << "XXXX";
        CHECK_THROWS_AS(read_raw(dir / "bad.sdrf"), ImageIoError);
        std::ofstream(dir / "short.sdrf", std::ios::binary) << "SDRF";
        CHECK_THROWS_AS(read_raw(dir / "short.sdrf"), ImageIoError);
    }

    SUBCASE("atomic writes leave only the target") {
        write_file_atomic(dir / "note.txt", "hello");
        std::size_t files = 0;
        for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++files;
        CHECK(files >= 1);
        for (const auto& e : fs::directory_iterator(dir)) {
            CHECK(e.path().filename().string().find(".tmp") == std::string::npos);
        }
    }
    fs::remove_all(dir);
}
