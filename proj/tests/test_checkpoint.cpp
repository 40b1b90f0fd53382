#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <vector>

#include "dt/checkpoint.hpp"

namespace fs = std::filesystem;
using dt::ParamStore;
using dt::Rng;
using dt::Tensor;

namespace {

fs::path scratch(const std::string& name) {
    fs::path p = fs::temp_directory_path() / "dt_tests" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<char> slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is.good());
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::vector<char>& bytes) {
    std::ofstream(p, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

dt::ModelConfig tiny_cfg() {
    dt::ModelConfig cfg;
    cfg.d_feat = 5;
    cfg.d_model = 8;
    cfg.num_heads = 2;
    cfg.head_dim = 4;
    cfg.ff_inner = 16;
    cfg.enc_layers = 2;
    cfg.dec_layers = 1;
    cfg.disentangled_layers = {2};
    cfg.speaker_head = 2;
    cfg.vocab_size = 6;
    cfg.dropout_rate = 0.0;
    return cfg;
}

}  // namespace

TEST_CASE("tensor containers round-trip bitwise") {
    auto dir = scratch("ckpt_rt");
    Rng rng(61);
    std::vector<std::pair<std::string, Tensor<float>>> tensors;
    tensors.emplace_back("a.w", Tensor<float>::randn({3, 4}, rng));
    tensors.emplace_back("a.b", Tensor<float>::randn({4}, rng));
    tensors.emplace_back("deep.nested.name", Tensor<float>::scalar(-7.5f));

    const std::string path = (dir / "t.dtck").string();
    dt::save_tensors(path, tensors);
    auto got = dt::load_tensors(path);
    REQUIRE(got.size() == tensors.size());
    for (size_t i = 0; i < tensors.size(); ++i) {
        CHECK(got[i].first == tensors[i].first);
        REQUIRE(got[i].second.shape() == tensors[i].second.shape());
        for (long k = 0; k < tensors[i].second.numel(); ++k)
            CHECK(got[i].second.values()[static_cast<size_t>(k)] ==
                  tensors[i].second.values()[static_cast<size_t>(k)]);
    }

    // rewriting identical content produces identical bytes
    const std::string path2 = (dir / "t2.dtck").string();
    dt::save_tensors(path2, tensors);
    CHECK(slurp(path) == slurp(path2));
}

TEST_CASE("model checkpoints restore parameters exactly") {
    auto dir = scratch("ckpt_model");
    auto cfg = tiny_cfg();
    auto params = dt::init_model_params<float>(cfg, 7);
    const std::string path = (dir / "model.dtck").string();
    dt::save_checkpoint(path, params);

    // perturb everything, then load back
    auto restored = dt::init_model_params<float>(cfg, 7);
    for (const auto& name : restored.names())
        for (auto& v : restored.get(name).values()) v += 1.0f;
    dt::load_checkpoint(path, restored);
    for (const auto& name : params.names()) {
        auto a = params.get(name).values();
        auto b = restored.get(name).values();
        REQUIRE(a.size() == b.size());
        for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    }
}

TEST_CASE("checkpoint loading rejects mismatched stores") {
    auto dir = scratch("ckpt_bad");
    auto cfg = tiny_cfg();
    auto params = dt::init_model_params<float>(cfg, 7);
    const std::string path = (dir / "model.dtck").string();
    dt::save_checkpoint(path, params);

    SUBCASE("tensor count") {
        auto extra = dt::init_model_params<float>(cfg, 7);
        extra.add("stray", Tensor<float>::zeros({2}));
        CHECK_THROWS_AS(dt::load_checkpoint(path, extra), dt::ConfigError);
    }
    SUBCASE("unexpected name") {
        std::vector<std::pair<std::string, Tensor<float>>> odd;
        odd.emplace_back("nobody.home", Tensor<float>::zeros({3}));
        dt::save_tensors((dir / "odd.dtck").string(), odd);
        ParamStore<float> store;
        store.add("somebody.else", Tensor<float>::zeros({3}));
        CHECK_THROWS_AS(dt::load_checkpoint((dir / "odd.dtck").string(), store), dt::ConfigError);
    }
    SUBCASE("shape mismatch") {
        auto wider = tiny_cfg();
        wider.ff_inner = 20;
        auto other = dt::init_model_params<float>(wider, 7);
        CHECK_THROWS_AS(dt::load_checkpoint(path, other), dt::ConfigError);
    }
}

TEST_CASE("checkpoint container rejects corruption") {
    auto dir = scratch("ckpt_corrupt");
    std::vector<std::pair<std::string, Tensor<float>>> tensors;
    tensors.emplace_back("x", Tensor<float>::from({2, 2}, {1, 2, 3, 4}));
    const fs::path path = dir / "c.dtck";
    dt::save_tensors(path.string(), tensors);
    auto bytes = slurp(path);

    SUBCASE("bad magic") {
        bytes[0] = 'x';
        spit(dir / "bad.dtck", bytes);
        CHECK_THROWS_AS(dt::load_tensors((dir / "bad.dtck").string()), dt::FormatError);
    }
    SUBCASE("unsupported version") {
        bytes[4] = 9;
        spit(dir / "v9.dtck", bytes);
        CHECK_THROWS_AS(dt::load_tensors((dir / "v9.dtck").string()), dt::FormatError);
    }
    SUBCASE("truncated payload") {
        bytes.resize(bytes.size() - 3);
        spit(dir / "short.dtck", bytes);
        CHECK_THROWS_AS(dt::load_tensors((dir / "short.dtck").string()), dt::LengthError);
    }
    SUBCASE("trailing bytes") {
        bytes.push_back('!');
        spit(dir / "long.dtck", bytes);
        CHECK_THROWS_AS(dt::load_tensors((dir / "long.dtck").string()), dt::FormatError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(dt::load_tensors((dir / "absent.dtck").string()), dt::IoError);
    }
}
