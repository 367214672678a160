#include <cmath>

#include "doctest.h"
#include "disentune/adaptation/lora.hpp"
#include "disentune/adaptation/mask_adapter.hpp"
#include "disentune/core/ops.hpp"
#include "disentune/diffusion/denoiser.hpp"
#include "support.hpp"

using namespace disentune;
using namespace disentune::adaptation;

namespace {

diffusion::DenoiserConfig micro_config() {
    diffusion::DenoiserConfig c;
    c.height = 8;
    c.width = 8;
    c.cond_dim = 8;
    c.cond_len = 3;
    c.base_channels = 4;
    c.time_embed_dim = 8;
    c.timesteps = 20;
    return c;
}

}  // namespace

TEST_SUITE("lora") {
    TEST_CASE("hand-computed rank-one update") {
        ScopedDType f64(DType::f64);
        LoraLayer l = init_lora(Tensor::from_values({2, 2}, {1, 0, 0, 1}), 1, 3);
        l.b.assign(Tensor::from_values({2, 1}, {1, 0}));
        l.a.assign(Tensor::from_values({1, 2}, {0, 1}));
        Tensor y = lora_forward(l, Tensor::from_values({2}, {1, 2}));
        CHECK(y.to_vector() == std::vector<double>{3, 2});
    }

    TEST_CASE("zero B reproduces the base map exactly") {
        Tensor w0 = testsupport::random_tensor({6, 5}, 1, 1.0, DType::f32);
        LoraLayer l = init_lora(w0, 2, 9);
        Tensor x = testsupport::random_tensor({4, 5}, 2, 1.0, DType::f32);
        AdaptableLinear plain(w0);
        CHECK(bit_equal(lora_forward(l, x), plain.forward(x)));
        CHECK(checksum(l.b) == checksum(Tensor::zeros({6, 2}, DType::f32)));
        CHECK(lora_forward(l, Tensor::zeros({5}, DType::f32)).to_vector() == std::vector<double>(6, 0.0));
    }

    TEST_CASE("A is seeded Gaussian with std near 0.02") {
        Tensor w0 = Tensor::zeros({64, 64});
        LoraLayer l = init_lora(w0, 4, 11);
        double s2 = 0.0;
        bool nonzero = false;
        for (std::int64_t i = 0; i < l.a.numel(); ++i) {
            s2 += l.a.at(i) * l.a.at(i);
            nonzero = nonzero || l.a.at(i) != 0.0;
        }
        const double sd = std::sqrt(s2 / static_cast<double>(l.a.numel()));
        CHECK(nonzero);
        CHECK(sd >= 0.01);
        CHECK(sd <= 0.03);
        CHECK(bit_equal(l.a, init_lora(w0, 4, 11).a));
        CHECK_FALSE(bit_equal(l.a, init_lora(w0, 4, 12).a));
        CHECK(l.a.requires_grad());
        CHECK(l.b.requires_grad());
        CHECK(l.w0.same_storage(w0));
    }

    TEST_CASE("rank limits") {
        Tensor w0 = Tensor::zeros({3, 5});
        CHECK_THROWS_AS(init_lora(w0, 0, 1), ConfigError);
        CHECK_THROWS_AS(init_lora(w0, 4, 1), ConfigError);
        CHECK_NOTHROW(init_lora(w0, 3, 1));
    }

    TEST_CASE("trailing dimension mismatch") {
        LoraLayer l = init_lora(Tensor::zeros({3, 5}), 1, 1);
        CHECK_THROWS_AS(lora_forward(l, Tensor::zeros({4})), DimensionError);
    }

    TEST_CASE("gradients reach A and B only") {
        ScopedDType f64(DType::f64);
        Tensor w0 = testsupport::random_tensor({4, 3}, 1);
        LoraLayer l = init_lora(w0, 2, 5);
        l.b.assign(testsupport::random_tensor({4, 2}, 6));
        Tensor x = testsupport::random_tensor({5, 3}, 7);
        Tensor target = testsupport::random_tensor({5, 4}, 8);
        const auto rep = testsupport::fd_check([&] { return ops::mse(lora_forward(l, x), target); },
                                               {{"a", l.a}, {"b", l.b}}, 1e-6);
        INFO(rep.worst);
        CHECK(rep.max_rel <= 1e-6);
        CHECK_FALSE(w0.has_grad());
    }

    TEST_CASE("reduced parameter count for a 640x640 map") {
        Tensor w0 = Tensor::zeros({640, 640}, DType::f32);
        AdaptableLinear map(w0);
        LoraRegistry reg{{"m", &map}};
        inject_lora(reg, 4, 1);
        CHECK(lora_param_count(reg) == 5120);
        CHECK(w0.numel() == 409600);
    }

    TEST_CASE("injection wraps every map once and changes no output") {
        diffusion::Denoiser m(micro_config(), 2);
        Tensor z = testsupport::random_tensor({3, 8, 8}, 3, 1.0, DType::f32);
        Tensor c = testsupport::random_tensor({3, 8}, 4, 1.0, DType::f32);
        Tensor before = m.predict_noise(z, 9, c);
        inject_lora(m.lora_registry(), 4, 5);
        for (const auto& [name, map] : m.lora_registry()) {
            INFO(name);
            CHECK(map->lora().has_value());
            CHECK(map->lora()->rank == 4);
        }
        CHECK(bit_equal(before, m.predict_noise(z, 9, c)));
        CHECK_THROWS_AS(inject_lora(m.lora_registry(), 4, 5), ConfigError);
    }

    TEST_CASE("trainable count equals enumeration of gradient-carrying tensors") {
        diffusion::Denoiser m(micro_config(), 2);
        inject_lora(m.lora_registry(), 4, 5);
        MaskAdapter adapter(8, 6);
        std::int64_t enumerated = 0;
        for (const auto& p : m.parameters()) {
            if (p.tensor.requires_grad()) enumerated += p.tensor.numel();
        }
        for (const auto& p : lora_parameters(m.lora_registry())) {
            if (p.tensor.requires_grad()) enumerated += p.tensor.numel();
        }
        for (const auto& p : adapter.parameters()) {
            if (p.tensor.requires_grad()) enumerated += p.tensor.numel();
        }
        std::int64_t formula = 0;
        for (const auto& [name, map] : m.lora_registry()) {
            formula += (map->weight().dim(0) + map->weight().dim(1)) * 4;
        }
        formula += 8 + 2 * (8 * 8 + 8);
        CHECK(trainable_param_count(m.lora_registry(), &adapter) == enumerated);
        CHECK(trainable_param_count(m.lora_registry(), &adapter) == formula);
        CHECK(trainable_param_count(m.lora_registry(), nullptr) == lora_param_count(m.lora_registry()));
    }
}

TEST_SUITE("mask adapter") {
    TEST_CASE("zero MLP keeps the masked feature") {
        ScopedDType f64(DType::f64);
        MaskAdapter a(2, 1);
        a.w1.assign(Tensor::zeros({2, 2}));
        a.w2.assign(Tensor::zeros({2, 2}));
        Tensor f = adapter_forward(a, Tensor::from_values({2}, {2, -4}));
        CHECK(f.to_vector() == std::vector<double>{1, -2});
    }

    TEST_CASE("identity-weight MLP adds relu of the masked feature") {
        ScopedDType f64(DType::f64);
        MaskAdapter a(2, 1);
        a.w1.assign(Tensor::from_values({2, 2}, {1, 0, 0, 1}));
        a.w2.assign(Tensor::from_values({2, 2}, {1, 0, 0, 1}));
        Tensor f = adapter_forward(a, Tensor::from_values({2}, {2, -4}));
        CHECK(f.to_vector() == std::vector<double>{2, -2});
    }

    TEST_CASE("zero input with zero biases gives zero") {
        MaskAdapter a(8, 3);
        CHECK(adapter_forward(a, Tensor::zeros({8})).to_vector() == std::vector<double>(8, 0.0));
    }

    TEST_CASE("mask stays strictly inside the unit interval") {
        ScopedDType f64(DType::f64);
        MaskAdapter a(4, 1);
        a.m_raw.assign(Tensor::from_values({4}, {-30, -1, 1, 30}));
        Tensor m = a.mask();
        for (int i = 0; i < 4; ++i) {
            CHECK(m.at(i) > 0.0);
            CHECK(m.at(i) < 1.0);
        }
    }

    TEST_CASE("dimension mismatch") {
        MaskAdapter a(4, 1);
        CHECK_THROWS_AS(adapter_forward(a, Tensor::zeros({5})), DimensionError);
    }

    TEST_CASE("gradients match finite differences") {
        ScopedDType f64(DType::f64);
        MaskAdapter a(5, 2, DType::f64);
        a.m_raw.assign(testsupport::random_tensor({5}, 3));
        a.b1.assign(testsupport::random_tensor({5}, 4, 0.3));
        Tensor f_p = testsupport::random_tensor({5}, 5);
        Tensor target = testsupport::random_tensor({5}, 6);
        std::vector<std::pair<std::string, Tensor>> params;
        for (const auto& p : a.parameters()) params.push_back({p.name, p.tensor});
        const auto rep = testsupport::fd_check([&] { return ops::mse(adapter_forward(a, f_p), target); }, params,
                                               1e-6);
        INFO(rep.worst);
        CHECK(rep.max_rel <= 1e-6);
        CHECK(a.param_count() == 5 + 2 * (25 + 5));
    }
}
