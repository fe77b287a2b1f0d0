#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <random>

#include "rfcascade/io.hpp"
#include "rfcascade/planner.hpp"
#include "testutil.hpp"

using namespace rfcascade;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("rfc_io_test_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

} // namespace

TEST(Pgm, RoundTrip8And16) {
    TempDir tmp;
    Image img = Image::zeros({17, 9}, {1.0, 1.0});
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> d(0.0, 1.0);
    for (auto& v : img.values) v = d(rng);

    write_pgm(tmp.file("a.pgm"), img, 65535);
    const Image back = read_pgm(tmp.file("a.pgm"));
    ASSERT_EQ(back.dims, img.dims);
    for (std::size_t i = 0; i < img.size(); ++i)
        EXPECT_NEAR(back.values[i], img.values[i], 0.5 / 65535.0);

    write_pgm(tmp.file("b.pgm"), img, 255);
    const Image back8 = read_pgm(tmp.file("b.pgm"));
    for (std::size_t i = 0; i < img.size(); ++i)
        EXPECT_NEAR(back8.values[i], img.values[i], 0.5 / 255.0);
}

TEST(Pgm, ParseErrorsCarryOffsets) {
    TempDir tmp;
    detail::write_file(tmp.file("bad.pgm"), "P2\n4 4\n255\n");
    EXPECT_THROW(read_pgm(tmp.file("bad.pgm")), ParseError);

    detail::write_file(tmp.file("short.pgm"), "P5\n4 4\n255\nab");
    try {
        read_pgm(tmp.file("short.pgm"));
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_GT(e.byte_offset, 0u);
    }

    EXPECT_THROW(read_pgm(tmp.file("missing.pgm")), IoError);
}

TEST(Rfvol, BitExactRoundTrip) {
    TempDir tmp;
    Volume vol = Volume::zeros({5, 4, 3}, {0.5, 0.5, 0.25});
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> d(-2.0, 2.0);
    for (auto& v : vol.values) v = static_cast<float>(d(rng));   // float-representable

    write_rfvol(tmp.file("v.rfvol"), vol);
    const Volume back = read_rfvol(tmp.file("v.rfvol"));
    ASSERT_EQ(back.dims, vol.dims);
    EXPECT_EQ(back.spacing[0], vol.spacing[0]);
    EXPECT_EQ(back.spacing[2], vol.spacing[2]);
    for (std::size_t i = 0; i < vol.size(); ++i) EXPECT_EQ(back.values[i], vol.values[i]);

    detail::write_file(tmp.file("bad.rfvol"), "RFVOL2 1 1 1 1 1 1\n");
    EXPECT_THROW(read_rfvol(tmp.file("bad.rfvol")), ParseError);
    detail::write_file(tmp.file("short.rfvol"), "RFVOL1 4 4 4 1 1 1\nxx");
    EXPECT_THROW(read_rfvol(tmp.file("short.rfvol")), ParseError);
}

TEST(KernelCsv, SeventeenDigits) {
    Kernel2 k;
    k.dims = {1, 1};
    k.spacing = {1.0, 1.0};
    k.origin = {0, 0};
    k.values = {0.12345678901234567};
    const std::string csv = kernel_to_csv(k);
    EXPECT_NE(csv.find("0.12345678901234566"), std::string::npos) << csv;
    EXPECT_EQ(csv.substr(0, 12), "x1,x2,value\n");
}

TEST(Config, ParseAndReject) {
    const Config cfg = parse_config(
        "family = spatial\n"
        "spacing_x = 0.5\n"
        "# comment line\n"
        "threads = 4\n"
        "target = 1 1 0 1\n"
        "target = 2 1 0 1 1 0 0\n");
    EXPECT_EQ(cfg.get("family"), "spatial");
    EXPECT_DOUBLE_EQ(cfg.get_double("spacing_x", 1.0), 0.5);
    EXPECT_EQ(cfg.get_int("threads", 1), 4);
    ASSERT_EQ(cfg.targets.size(), 2u);

    EXPECT_THROW(parse_config("nonsense = 1\n"), std::invalid_argument);
    EXPECT_THROW(parse_config("family spatial\n"), std::invalid_argument);
    EXPECT_THROW(parse_config("tolerance = -1\n"), std::invalid_argument);
}

TEST(Parsers, GarbageInputsThrowCleanly) {
    // random byte soup must come back as exceptions, never crashes
    TempDir tmp;
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<int> len(0, 400), byte(0, 255);
    for (int i = 0; i < 200; ++i) {
        std::string soup;
        const int n = len(rng);
        for (int k = 0; k < n; ++k) soup.push_back(static_cast<char>(byte(rng)));
        // occasionally graft a valid-looking header onto the soup
        if (i % 4 == 0) soup = "P5\n" + soup;
        if (i % 4 == 1) soup = "RFVOL1 " + soup;
        const std::string path = tmp.file("fuzz.bin");
        detail::write_file(path, soup);
        try {
            (void)read_pgm(path);
        } catch (const std::exception&) {
        }
        try {
            (void)read_rfvol(path);
        } catch (const std::exception&) {
        }
        try {
            (void)parse_config(soup);
        } catch (const std::exception&) {
        }
        try {
            (void)plan_from_csv(i % 3 == 0 ? "kind,id\n" + soup : soup);
        } catch (const std::exception&) {
        }
    }
    SUCCEED();
}

TEST(Config, TargetParsing) {
    const STParams a = parse_target("1 1 0 1");
    EXPECT_DOUBLE_EQ(a.s, 1.0);
    EXPECT_FALSE(a.time_causal());

    const STParams b = parse_target("2 1.5 0.25 1 4 0.5 -0.25");
    EXPECT_DOUBLE_EQ(b.tau, 4.0);
    EXPECT_DOUBLE_EQ(b.v[1], -0.25);

    const STParams c = parse_target("1 1 0 1 4 0 0 2");
    ASSERT_TRUE(c.time_causal());
    EXPECT_DOUBLE_EQ(*c.c, 2.0);

    EXPECT_THROW(parse_target("1 2 3"), std::invalid_argument);
    EXPECT_THROW(parse_target("1 1 0 1 x"), std::invalid_argument);
    EXPECT_THROW(parse_target("-1 1 0 1"), std::invalid_argument);
}
