#include <cmath>

#include "doctest.h"
#include "disentune/encoders/encoders.hpp"
#include "disentune/encoders/vocab.hpp"
#include "disentune/synthbench/render.hpp"
#include "support.hpp"

using namespace disentune;
using namespace disentune::encoders;

namespace {

const Vocabulary& vocab() {
    static const Vocabulary v = Vocabulary::load(default_vocabulary_path());
    return v;
}

double l2_diff(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) s += (a.at(i) - b.at(i)) * (a.at(i) - b.at(i));
    return std::sqrt(s);
}

}  // namespace

TEST_SUITE("vocabulary") {
    TEST_CASE("canonical file ids") {
        CHECK(vocab().pad_id() == 0);
        CHECK(vocab().id("a") == 1);
        CHECK(vocab().id("S*") == 3);
        CHECK(vocab().id("square") == 7);
        CHECK(vocab().size() == 36);
    }

    TEST_CASE("bijective and round trips through serialization") {
        for (int i = 0; i < vocab().size(); ++i) CHECK(vocab().id(vocab().token(i)) == i);
        const Vocabulary again = Vocabulary::parse(vocab().serialize());
        CHECK(again.serialize() == vocab().serialize());
    }

    TEST_CASE("malformed vocabularies are rejected") {
        CHECK_THROWS_AS(Vocabulary::parse("<pad>\nS*\na\na\n"), FormatError);
        CHECK_THROWS_AS(Vocabulary::parse("a\nb\n"), FormatError);
        CHECK_THROWS_AS(Vocabulary::load("/nonexistent/vocab.txt"), IoError);
        CHECK_THROWS_AS(vocab().token(99), VocabularyError);
    }

    TEST_CASE("tokenize pads to the sequence length") {
        CHECK(vocab().tokenize("a S* square", 8) == std::vector<int>{1, 3, 7, 0, 0, 0, 0, 0});
        CHECK(vocab().tokenize("", 8) == std::vector<int>(8, 0));
        CHECK(vocab().tokenize("  a   S*  ", 4) == std::vector<int>{1, 3, 0, 0});
        CHECK(vocab().tokenize("a S* square on red", 8) == vocab().tokenize("a S* square on red", 8));
    }

    TEST_CASE("tokenize errors") {
        try {
            (void)vocab().tokenize("a S* hexagon", 8);
            FAIL("expected VocabularyError");
        } catch (const VocabularyError& e) {
            CHECK(std::string(e.what()).find("hexagon") != std::string::npos);
        }
        CHECK_THROWS_AS(vocab().tokenize("a a a a a", 4), LengthError);
        CHECK_NOTHROW(vocab().tokenize("a a a a", 4));
    }
}

TEST_SUITE("text encoder") {
    TEST_CASE("deterministic, finite and position sensitive") {
        TextEncoder enc(vocab().size(), 32, 8);
        const auto ids = vocab().tokenize("a S* square on red checker", 8);
        Tensor a = enc.encode(ids);
        CHECK(a.shape() == Shape{8, 32});
        CHECK(bit_equal(a, enc.encode(ids)));
        CHECK(bit_equal(a, TextEncoder(vocab().size(), 32, 8).encode(ids)));
        CHECK(all_finite(a));
        for (std::size_t j = 0; j < ids.size(); ++j) {
            auto other = ids;
            other[j] = other[j] == 5 ? 6 : 5;
            INFO("position " << j);
            CHECK_FALSE(bit_equal(a, enc.encode(other)));
        }
    }

    TEST_CASE("replacing the placeholder token changes the condition") {
        TextEncoder enc(vocab().size(), 32, 8);
        Tensor a = enc.encode(vocab().tokenize("a S* square", 8));
        Tensor b = enc.encode(vocab().tokenize("a V* square", 8));
        CHECK(l2_diff(a, b) > 1e-3);
    }

    TEST_CASE("non-constant across the vocabulary") {
        TextEncoder enc(vocab().size(), 32, 8);
        Tensor first = enc.encode(std::vector<int>{1, 0, 0, 0, 0, 0, 0, 0});
        int distinct = 0;
        for (int id = 2; id < vocab().size(); ++id) {
            distinct += !bit_equal(first, enc.encode(std::vector<int>{id, 0, 0, 0, 0, 0, 0, 0}));
        }
        CHECK(distinct == vocab().size() - 2);
    }

    TEST_CASE("weights are frozen and receive no gradient") {
        TextEncoder enc(vocab().size(), 16, 4);
        for (const auto& w : enc.weights()) CHECK_FALSE(w.tensor.requires_grad());
        Tensor out = enc.encode(std::vector<int>{1, 2, 3, 0});
        CHECK_FALSE(out.requires_grad());
    }

    TEST_CASE("length and id errors") {
        TextEncoder enc(vocab().size(), 16, 4);
        CHECK_THROWS_AS(enc.encode(std::vector<int>{1, 2, 3}), LengthError);
        CHECK_THROWS_AS(enc.encode(std::vector<int>{1, 2, 3, 99}), VocabularyError);
    }
}

TEST_SUITE("image encoder") {
    using namespace disentune::synthbench;

    TEST_CASE("deterministic on identical renders") {
        ImageEncoder enc(32, 32, 32);
        const SubjectSpec s{ShapeKind::square, Color::red, 1};
        const SceneSpec scene{Color::blue, Texture::stripes, 4, Scale::medium};
        Tensor a = enc.encode(render(s, scene));
        CHECK(a.shape() == Shape{32});
        CHECK(bit_equal(a, enc.encode(render(s, scene))));
        CHECK(bit_equal(a, ImageEncoder(32, 32, 32).encode(render(s, scene))));
    }

    TEST_CASE("background color changes the feature") {
        ImageEncoder enc(32, 32, 32);
        const SubjectSpec s{ShapeKind::square, Color::red, 1};
        for (int c = 1; c < kNumColors; ++c) {
            const SceneSpec a{Color::green, Texture::plain, 4, Scale::medium};
            SceneSpec b = a;
            b.background = static_cast<Color>(c);
            if (b.background == a.background) continue;
            INFO("color " << c);
            CHECK(l2_diff(enc.encode(render(s, a)), enc.encode(render(s, b))) >= 1e-3);
        }
    }

    TEST_CASE("input errors") {
        ImageEncoder enc(32, 32, 32);
        CHECK_THROWS_AS(enc.encode(Tensor::zeros({3, 16, 16})), InputError);
        CHECK_THROWS_AS(enc.encode(Tensor::full({3, 32, 32}, 1.5)), InputError);
        CHECK_THROWS_AS(ImageEncoder(0, 32, 32), ConfigError);
    }

    TEST_CASE("frozen weights") {
        ImageEncoder enc(32, 32, 32);
        for (const auto& w : enc.weights()) CHECK_FALSE(w.tensor.requires_grad());
    }
}

TEST_SUITE("codec") {
    TEST_CASE("identity round trip") {
        IdentityCodec codec;
        Tensor x = synthbench::render(synthbench::SubjectSpec{}, synthbench::SceneSpec{});
        Tensor z = codec.encode(x);
        CHECK(z.shape() == x.shape());
        CHECK(bit_equal(codec.decode(z), x));
        CHECK_FALSE(codec.decode(z).same_storage(x));
        for (std::int64_t i = 0; i < z.numel(); ++i) {
            CHECK(z.at(i) >= -1.0);
            CHECK(z.at(i) <= 1.0);
        }
    }
}
