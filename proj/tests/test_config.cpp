#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "dt/config.hpp"

using dt::ExperimentConfig;

namespace {

// independent FNV-1a 64 evaluation for the hash contract
std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

TEST_CASE("empty config text yields the documented defaults") {
    auto cfg = dt::parse_config_text("");
    CHECK(cfg.model.d_model == 64);
    CHECK(cfg.model.num_heads == 4);
    CHECK(cfg.model.disentangled_layers == std::vector<int>{4});
    CHECK(cfg.model.lambda_s == 0.1);
    CHECK(cfg.optim.warmup_steps == 400);
    CHECK(cfg.optim.lr_factor == 2.0);
    CHECK(cfg.training.alpha == 0.3);
    CHECK(cfg.training.label_smoothing == 0.1);
    CHECK(cfg.decode.beam_size == 8);
    CHECK(cfg.decode.ctc_weight == 0.3);
    CHECK(cfg.corpus.vocab_size() == cfg.model.vocab_size);
}

TEST_CASE("keys override fields section by section") {
    const std::string text =
        "# experiment setup\n"
        "[model]\n"
        "d_model = 32\n"
        "num_heads = 2   ; heads and dims must stay consistent\n"
        "head_dim = 16\n"
        "speaker_head = 2\n"
        "lambda_s = 0.25\n"
        "[optimizer]\n"
        "warmup_steps = 123\n"
        "[training]\n"
        "alpha = 0.5\n"
        "seed = 99\n"
        "[decode]\n"
        "beam_size = 4\n";
    auto cfg = dt::parse_config_text(text);
    CHECK(cfg.model.d_model == 32);
    CHECK(cfg.model.num_heads == 2);
    CHECK(cfg.model.head_dim == 16);
    CHECK(cfg.model.lambda_s == 0.25);
    CHECK(cfg.optim.warmup_steps == 123);
    CHECK(cfg.training.alpha == 0.5);
    CHECK(cfg.training.seed == 99);
    CHECK(cfg.decode.beam_size == 4);
    // untouched fields keep their defaults
    CHECK(cfg.model.ff_inner == 256);
}

TEST_CASE("disentangled layer spellings") {
    auto base = [](const std::string& dis, const std::string& extra = "") {
        return dt::parse_config_text("[model]\n" + extra + "disentangled_layers = " + dis + "\n");
    };
    CHECK(base("top").model.disentangled_layers == std::vector<int>{4});
    CHECK(base("all").model.disentangled_layers == std::vector<int>{1, 2, 3, 4});
    CHECK(base("none").model.disentangled_layers.empty());
    CHECK(base("1,3").model.disentangled_layers == std::vector<int>{1, 3});

    // "top" resolves against enc_layers even when that key comes later
    auto cfg = dt::parse_config_text(
        "[model]\ndisentangled_layers = top\nenc_layers = 6\n");
    CHECK(cfg.model.disentangled_layers == std::vector<int>{6});

    CHECK_THROWS_AS(base("5"), dt::ConfigError);       // outside [1, enc_layers]
    CHECK_THROWS_AS(base("zero"), dt::ConfigError);    // not a list either
}

TEST_CASE("parser rejects malformed input with the line number") {
    auto fails_mentioning = [](const std::string& text, const std::string& needle) {
        try {
            dt::parse_config_text(text);
            FAIL_CHECK("expected ConfigError for: " << text);
        } catch (const dt::ConfigError& e) {
            CHECK(std::string(e.what()).find(needle) != std::string::npos);
        }
    };
    fails_mentioning("[model]\nd_model = 64\nnot_a_key = 3\n", "line 3");
    fails_mentioning("[model]\nnot_a_key = 3\n", "unknown key model.not_a_key");
    fails_mentioning("[weird]\n", "unknown section");
    fails_mentioning("d_model = 64\n", "outside a section");
    fails_mentioning("[model\n", "malformed section");
    fails_mentioning("[model]\nd_model\n", "expected key = value");
    fails_mentioning("[model]\nd_model = sixty-four\n", "bad integer");
    fails_mentioning("[training]\nalpha = 0.3x\n", "bad number");
}

TEST_CASE("validation catches inconsistent experiments") {
    CHECK_THROWS_AS(dt::parse_config_text("[model]\nd_model = 60\n"), dt::ConfigError);
    CHECK_THROWS_AS(dt::parse_config_text("[training]\nalpha = 1.5\n"), dt::ConfigError);
    CHECK_THROWS_AS(dt::parse_config_text("[training]\nnum_spk = 5\n"), dt::ConfigError);
    CHECK_THROWS_AS(dt::parse_config_text("[model]\nlambda_s = -0.1\n"), dt::ConfigError);
    CHECK_THROWS_AS(dt::parse_config_text("[corpus]\nd_feat = 39\n"), dt::ConfigError);
    CHECK_THROWS_AS(dt::parse_config_text("[corpus]\nn_content = 21\n"), dt::ConfigError);
    CHECK_THROWS_AS(dt::parse_config_text("[decode]\nctc_weight = 1.5\n"), dt::ConfigError);
    CHECK_THROWS_AS(dt::parse_config_text("[optimizer]\nwarmup_steps = 0\n"), dt::ConfigError);
}

TEST_CASE("serialization is a fixed point of parsing") {
    auto cfg = dt::parse_config_text(
        "[model]\nd_model = 32\nnum_heads = 2\nhead_dim = 16\nspeaker_head = 2\nlambda_s = 0.05\n"
        "disentangled_layers = 2,4\n"
        "[corpus]\nseed = 5150\njitter_sigma = 0.125\n"
        "[training]\nepochs = 3\n");
    const std::string canon = dt::serialize_config(cfg);
    auto reparsed = dt::parse_config_text(canon);
    CHECK(dt::serialize_config(reparsed) == canon);
    // canonical text carries every key exactly once
    for (const char* key : {"d_model", "lambda_s", "jitter_sigma", "beam_size", "diar_epochs"}) {
        const std::string needle = std::string(key) + " = ";
        const size_t first = canon.find(needle);
        REQUIRE(first != std::string::npos);
        CHECK(canon.find(needle, first + 1) == std::string::npos);
    }
}

TEST_CASE("config hash") {
    ExperimentConfig a, b;
    CHECK(dt::config_hash(a) == dt::config_hash(b));  // value, not identity
    CHECK(dt::config_hash(a) == fnv1a(dt::serialize_config(a)));
    b.training.seed = 2;
    CHECK(dt::config_hash(a) != dt::config_hash(b));
    b = a;
    b.model.lambda_s = 0.0;
    CHECK(dt::config_hash(a) != dt::config_hash(b));

    const std::string hex = dt::config_hash_hex(a);
    CHECK(hex.size() == 16);
    for (char c : hex) CHECK(((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f')));
}

TEST_CASE("config files load from disk") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "dt_tests" / "config";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "exp.cfg") << "[training]\nepochs = 7\n";
    auto cfg = dt::load_config_file((dir / "exp.cfg").string());
    CHECK(cfg.training.epochs == 7);
    CHECK_THROWS_AS(dt::load_config_file((dir / "missing.cfg").string()), dt::IoError);
}
