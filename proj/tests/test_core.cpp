#include <doctest.h>

#include <atomic>
#include <cstdio>
#include <filesystem>

#include "kv/core/config.hpp"
#include "kv/core/imageops.hpp"
#include "kv/core/png_io.hpp"
#include "kv/core/utils.hpp"

using namespace kv;
namespace fs = std::filesystem;

TEST_CASE("fnv1a is stable") {
    CHECK(fnv1a_hex(std::string("")) == "cbf29ce484222325");
    CHECK(fnv1a_hex(std::string("a")) == "af63dc4c8601ec8c");
    CHECK(fnv1a_hex(std::string("kneeview")) != fnv1a_hex(std::string("kneeviev")));
}

TEST_CASE("parallel_for covers every index once, any worker count") {
    for (const int threads : {1, 2, 4, 7}) {
        std::vector<std::atomic<int>> hits(1000);
        parallel_for(1000, threads, [&](std::int64_t i) { hits[i].fetch_add(1); });
        for (const auto& h : hits) CHECK(h.load() == 1);
    }
}

TEST_CASE("parallel_for propagates exceptions") {
    CHECK_THROWS_AS(parallel_for(100, 4,
                                 [](std::int64_t i) {
                                     if (i == 57) throw std::runtime_error("boom");
                                 }),
                    std::runtime_error);
}

TEST_CASE("config parsing, defaults, overrides and dump") {
    Config c;
    c.merge_line("alpha = 3.5");
    c.merge_line("name= knee  # trailing comment");
    c.merge_line("# full comment");
    c.merge_line("flag = true");
    CHECK(c.get_double("alpha", 0) == doctest::Approx(3.5));
    CHECK(c.get_str("name", "") == "knee");
    CHECK(c.get_bool("flag", false));
    CHECK(c.get_int("missing", 42) == 42);
    c.set("alpha", "9");  // override wins
    CHECK(c.get_double("alpha", 0) == doctest::Approx(9.0));
    const std::string dump = c.dump();
    CHECK(dump.find("missing = 42") != std::string::npos);
    CHECK(dump.find("alpha = 9") != std::string::npos);
    CHECK_THROWS(c.merge_line("no equals sign here"));
    CHECK_THROWS((void)c.get_bool("name", false));
}

TEST_CASE("png writer/reader round-trip") {
    const auto dir = fs::temp_directory_path() / "kv_png_test";
    fs::create_directories(dir);
    ImageU8 img(33, 17);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) img.at(x, y) = std::uint8_t((x * 7 + y * 13) & 0xff);
    const std::string path = (dir / "t.png").string();
    write_png_gray(path, img);
    const ImageU8 back = read_png_gray(path);
    REQUIRE(back.w == img.w);
    REQUIRE(back.h == img.h);
    CHECK(back.px == img.px);
    fs::remove_all(dir);
}

TEST_CASE("raw f32 dump round-trip is bit exact") {
    const auto dir = fs::temp_directory_path() / "kv_raw_test";
    fs::create_directories(dir);
    ImageF img(9, 5);
    for (std::size_t i = 0; i < img.size(); ++i) img.px[i] = float(i) * 0.37f - 1.0f;
    const std::string path = (dir / "t.raw").string();
    write_raw(path, img);
    const ImageF back = read_raw_f32(path, 9, 5);
    CHECK(back.px == img.px);
    fs::remove_all(dir);
}

TEST_CASE("image helpers") {
    ImageU8 m(10, 10, 0);
    m.at(3, 4) = 1;
    m.at(5, 4) = 1;
    double cx, cy;
    CHECK(mask_centroid(m, cx, cy));
    CHECK(cx == doctest::Approx(4.0));
    CHECK(cy == doctest::Approx(4.0));
    CHECK(dice_coefficient(m, m) == doctest::Approx(1.0));
    ImageU8 empty(10, 10, 0);
    CHECK(dice_coefficient(m, empty) == doctest::Approx(0.0));
    CHECK(dice_coefficient(empty, empty) == doctest::Approx(1.0));
    CHECK_FALSE(mask_centroid(empty, cx, cy));

    ImageF f(4, 4, 1.0f);
    const ImageF d = downsample2_avg(f);
    CHECK(d.w == 2);
    CHECK(d.at(0, 0) == doctest::Approx(1.0f));
}

TEST_CASE("translate_image shifts content with zero fill") {
    ImageF img(8, 8, 0.0f);
    img.at(2, 3) = 5.0f;
    const ImageF t = translate_image(img, 3, -1);
    CHECK(t.at(5, 2) == doctest::Approx(5.0f));
    CHECK(t.at(2, 3) == doctest::Approx(0.0f));
}
