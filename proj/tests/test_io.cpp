#include <filesystem>

#include "doctest.h"
#include "disentune/io/checkpoint.hpp"
#include "disentune/io/files.hpp"
#include "disentune/io/run_config.hpp"
#include "support.hpp"

using namespace disentune;
using namespace disentune::io;

namespace {

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("disentune_test_" + name);
}

std::string bytes(std::initializer_list<int> v) {
    std::string s;
    for (int b : v) s.push_back(static_cast<char>(b));
    return s;
}

}  // namespace

TEST_SUITE("checkpoint") {
    TEST_CASE("golden little-endian layout") {
        Checkpoint c;
        c.entries.push_back({"w", Tensor::from_values({2}, {1.0, 2.0}, DType::f32)});
        c.config_digest = 7;
        const std::string expected = std::string("DSNB") + bytes({1, 0, 0, 0}) + bytes({1, 0, 0, 0}) +
                                     bytes({1, 0, 0, 0}) + "w" + bytes({0}) + bytes({1, 0, 0, 0}) +
                                     bytes({2, 0, 0, 0, 0, 0, 0, 0}) + bytes({0, 0, 0x80, 0x3f, 0, 0, 0, 0x40}) +
                                     bytes({7, 0, 0, 0, 0, 0, 0, 0});
        CHECK(encode_checkpoint(c) == expected);
    }

    TEST_CASE("round trip is bit-exact for every dtype") {
        for (DType dt : {DType::f32, DType::f64}) {
            Checkpoint c;
            c.entries.push_back({"a.weight", testsupport::random_tensor({3, 4, 2}, 1, 1.0, dt)});
            c.entries.push_back({"b", Tensor::scalar(-0.0, dt)});
            c.entries.push_back({"empty", Tensor::zeros({0, 5}, dt)});
            c.entries.push_back({"tiny", Tensor::from_values({3}, {1e-40, -3.5e38, 0.1}, dt)});
            c.config_digest = 0xfeedfacecafebeefULL;
            const auto path = temp_path("ckpt_roundtrip.ckpt");
            save_checkpoint(path, c);
            const Checkpoint d = load_checkpoint(path);
            std::filesystem::remove(path);
            REQUIRE(d.entries.size() == c.entries.size());
            for (std::size_t i = 0; i < c.entries.size(); ++i) {
                CHECK(d.entries[i].name == c.entries[i].name);
                CHECK(bit_equal(d.entries[i].tensor, c.entries[i].tensor));
            }
            CHECK(d.config_digest == c.config_digest);
            CHECK(encode_checkpoint(d) == encode_checkpoint(c));
        }
    }

    TEST_CASE("corrupt input raises format errors") {
        Checkpoint c;
        c.entries.push_back({"w", Tensor::from_values({2}, {1.0, 2.0}, DType::f32)});
        const std::string good = encode_checkpoint(c);
        CHECK_THROWS_AS(decode_checkpoint(good.substr(0, good.size() - 3)), FormatError);
        CHECK_THROWS_AS(decode_checkpoint(good + "x"), FormatError);
        CHECK_THROWS_AS(decode_checkpoint("XXXX" + good.substr(4)), FormatError);
        std::string bad_version = good;
        bad_version[4] = 9;
        CHECK_THROWS_AS(decode_checkpoint(bad_version), FormatError);
        std::string bad_dtype = good;
        bad_dtype[4 + 4 + 4 + 4 + 1] = 5;
        CHECK_THROWS_AS(decode_checkpoint(bad_dtype), FormatError);
        CHECK_THROWS_AS(decode_checkpoint(""), FormatError);

        Checkpoint dup;
        dup.entries.push_back({"w", Tensor::zeros({1})});
        dup.entries.push_back({"w", Tensor::zeros({1})});
        CHECK_THROWS_AS(decode_checkpoint(encode_checkpoint(dup)), FormatError);
        CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.ckpt"), IoError);
    }

    TEST_CASE("restore copies by name and checks shapes") {
        Checkpoint c;
        c.entries.push_back({"w", Tensor::from_values({2}, {3.0, 4.0}, DType::f64)});
        Tensor target = Tensor::zeros({2}, DType::f32);
        restore_into(c, {{"w", target}});
        CHECK(target.to_vector() == std::vector<double>{3.0, 4.0});
        CHECK_THROWS_AS(restore_into(c, {{"missing", Tensor::zeros({2})}}), FormatError);
        CHECK_THROWS_AS(restore_into(c, {{"w", Tensor::zeros({3})}}), FormatError);
        CHECK_FALSE(c.find("nope"));
        CHECK_THROWS_AS(c.require("nope"), FormatError);
    }

    TEST_CASE("fnv1a reference values") {
        CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
        CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
        CHECK(fnv1a("foobar") == 0x85944171f73967e8ULL);
    }
}

TEST_SUITE("pixmap") {
    TEST_CASE("channel mapping") {
        CHECK(quantize(-1.0) == 0);
        CHECK(quantize(1.0) == 255);
        CHECK(quantize(0.0) == 128);
        CHECK(quantize(-2.0) == 0);
        CHECK(quantize(3.0) == 255);
        for (int b = 0; b < 256; ++b) CHECK(quantize(dequantize(static_cast<std::uint8_t>(b))) == b);
    }

    TEST_CASE("header and payload layout") {
        Tensor x = Tensor::zeros({3, 32, 32});
        const std::string ppm = encode_ppm(x);
        CHECK(ppm.rfind("P6 32 32 255\n", 0) == 0);
        CHECK(ppm.size() == 13 + 32 * 32 * 3);
        Tensor px = Tensor::from_values({3, 1, 2}, {-1, 1, 0, -1, 1, 0});
        const std::string p = encode_ppm(px);
        CHECK(p.substr(p.size() - 6) == bytes({0, 128, 255, 255, 0, 128}));
    }

    TEST_CASE("write, read, write is byte-stable") {
        Tensor x = testsupport::random_tensor({3, 5, 7}, 3, 0.6);
        const auto path = temp_path("roundtrip.ppm");
        write_ppm(path, x);
        const std::string first = read_file(path);
        Tensor y = read_ppm(path);
        write_ppm(path, y);
        CHECK(read_file(path) == first);
        std::filesystem::remove(path);
        CHECK(y.shape() == x.shape());
        for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(quantize(y.at(i)) == quantize(x.at(i)));
    }

    TEST_CASE("comments in the header are accepted") {
        const std::string ppm = "P6\n# note\n1 1\n255\n" + bytes({0, 128, 255});
        Tensor x = decode_ppm(ppm, DType::f64);
        CHECK(x.shape() == Shape{3, 1, 1});
        CHECK(x.at(0) == -1.0);
        CHECK(x.at(2) == 1.0);
    }

    TEST_CASE("malformed files") {
        CHECK_THROWS_AS(decode_ppm("P5 1 1 255\n" + bytes({0, 0, 0})), FormatError);
        CHECK_THROWS_AS(decode_ppm("P6 1 1 255\n" + bytes({0, 0})), FormatError);
        CHECK_THROWS_AS(decode_ppm("P6 1 1 65535\n" + bytes({0, 0, 0, 0, 0, 0})), FormatError);
        CHECK_THROWS_AS(decode_ppm("P6 x 1 255\n"), FormatError);
        CHECK_THROWS_AS(encode_ppm(Tensor::zeros({1, 4, 4})), DimensionError);
        CHECK_THROWS_AS(read_ppm("/nonexistent/a.ppm"), IoError);
    }

    TEST_CASE("image grid layout") {
        std::vector<Tensor> imgs;
        for (int i = 0; i < 3; ++i) imgs.push_back(Tensor::full({3, 2, 2}, 0.1 * (i + 1), DType::f64));
        Tensor g = image_grid(imgs, 2);
        CHECK(g.shape() == Shape{3, 7, 7});
        CHECK(g.at(0) == 0.0);
        CHECK(g.at(1 * 7 + 1) == doctest::Approx(0.1));
        CHECK(g.at(1 * 7 + 4) == doctest::Approx(0.2));
        CHECK(g.at(4 * 7 + 1) == doctest::Approx(0.3));
        CHECK(g.at(4 * 7 + 4) == 0.0);
        CHECK_THROWS_AS(image_grid({}, 2), InputError);
    }
}

TEST_SUITE("csv") {
    TEST_CASE("quoting and parsing") {
        CHECK(csv_field("plain") == "plain");
        CHECK(csv_field("a,b") == "\"a,b\"");
        CHECK(csv_field("say \"hi\"") == "\"say \"\"hi\"\"\"");
        const std::string text = csv_row({"x", "a,b", "q\"q"}) + csv_row({"1", "2", "3"});
        const auto rows = parse_csv(text);
        REQUIRE(rows.size() == 2);
        CHECK(rows[0] == std::vector<std::string>{"x", "a,b", "q\"q"});
        CHECK(rows[1] == std::vector<std::string>{"1", "2", "3"});
        CHECK_THROWS_AS(parse_csv("\"open"), FormatError);
    }
}

TEST_SUITE("run config") {
    TEST_CASE("defaults round trip through the canonical text") {
        const RunConfig d;
        const RunConfig p = RunConfig::parse(d.serialize());
        CHECK(p.serialize() == d.serialize());
        CHECK(p.digest() == d.digest());
        CHECK(d.lambda2 == 0.01);
        CHECK(d.lambda3 == 0.001);
        CHECK(d.lora_rank == 4);
        CHECK(d.lr == 1e-4);
        CHECK(d.iterations == 3000);
        CHECK(d.batch == 1);
    }

    TEST_CASE("comments, blanks and overrides") {
        const RunConfig c = RunConfig::parse("# run\n\nseed = 12\nlambda2 = 0\n  iterations=500  # smoke\n");
        CHECK(c.seed == 12);
        CHECK(c.lambda2 == 0.0);
        CHECK(c.iterations == 500);
        CHECK(c.digest() != RunConfig{}.digest());
    }

    TEST_CASE("rejections") {
        CHECK_THROWS_AS(RunConfig::parse("colour = red\n"), ConfigError);
        CHECK_THROWS_AS(RunConfig::parse("seed = 1\nseed = 2\n"), ConfigError);
        CHECK_THROWS_AS(RunConfig::parse("lambda2 = 1\n"), ConfigError);
        CHECK_THROWS_AS(RunConfig::parse("lambda2 = 1.5\n"), ConfigError);
        CHECK_THROWS_AS(RunConfig::parse("lambda3 = -0.1\n"), ConfigError);
        CHECK_THROWS_AS(RunConfig::parse("iterations = ten\n"), ConfigError);
        CHECK_THROWS_AS(RunConfig::parse("deterministic = maybe\n"), ConfigError);
        CHECK_THROWS_AS(RunConfig::parse("batch = 2\n"), ConfigError);
        CHECK_THROWS_AS(RunConfig::parse("just text\n"), ConfigError);
        CHECK_THROWS_AS(RunConfig::load("/nonexistent/run.cfg"), IoError);
        try {
            (void)RunConfig::parse("seed = 1\n\nbogus = 3\n");
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("line 3") != std::string::npos);
        }
    }
}
