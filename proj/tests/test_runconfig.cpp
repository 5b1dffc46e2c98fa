#include <filesystem>
#include <fstream>
#include <random>

#include "cpf/errors.hpp"
#include "cpf/runconfig.hpp"
#include "doctest.h"

using namespace cpf;
namespace fs = std::filesystem;

namespace {

using Pairs = std::vector<std::pair<std::string, std::string>>;

struct TempFile {
    fs::path path;
    explicit TempFile(const std::string& contents) {
        path = fs::temp_directory_path() /
               ("cpfcfg_" + std::to_string(std::random_device{}()) + ".cfg");
        std::ofstream(path) << contents;
    }
    ~TempFile() { fs::remove(path); }
};

} // namespace

TEST_SUITE_BEGIN("runconfig");

TEST_CASE("defaults mirror the desk profile") {
    RunConfig cfg = RunConfig::from_pairs({});
    CHECK(cfg.model.d_model == 32);
    CHECK(cfg.train.lr == 5e-5);
    CHECK(cfg.split.n_folds == 5);
    CHECK(cfg.out_dir == "out");
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("profile selection and precedence") {
    RunConfig paper = RunConfig::from_pairs({{"profile", "paper"}});
    CHECK(paper.model.d_model == 256);
    CHECK(paper.model.n_heads == 8);

    // Overrides win regardless of key order relative to the profile.
    RunConfig mixed = RunConfig::from_pairs(
        {{"model.d_model", "64"}, {"profile", "paper"}, {"model.n_layers", "3"}});
    CHECK(mixed.model.d_model == 64);
    CHECK(mixed.model.n_layers == 3);
    CHECK(mixed.model.n_heads == 8);  // from the profile

    CHECK_THROWS_AS(RunConfig::from_pairs({{"profile", "server"}}), ConfigError);
}

TEST_CASE("typed parsing of every section") {
    RunConfig cfg = RunConfig::from_pairs({{"model.dropout", "0.2"},
                                           {"model.kernel_sizes", "3, 7,11"},
                                           {"model.use_temporal", "false"},
                                           {"train.lr", "1e-4"},
                                           {"train.batch_size", "8"},
                                           {"loss.gamma", "1.5"},
                                           {"loss.uncertainty_weight", "0.25"},
                                           {"split.test_fraction", "0.2"},
                                           {"data.signals", "/tmp/sigs"},
                                           {"out_dir", "results"},
                                           {"seed", "77"}});
    CHECK(cfg.model.dropout == 0.2);
    CHECK(cfg.model.kernel_sizes == std::vector<std::size_t>{3, 7, 11});
    CHECK_FALSE(cfg.model.use_temporal);
    CHECK(cfg.train.lr == 1e-4);
    CHECK(cfg.train.batch_size == 8);
    CHECK(cfg.train.loss.gamma == 1.5);
    CHECK(cfg.train.loss.uncertainty_weight == 0.25);
    CHECK(cfg.split.test_fraction == 0.2);
    CHECK(cfg.signals_dir == "/tmp/sigs");
    CHECK(cfg.out_dir == "results");
    CHECK(cfg.train.seed == 77);
    CHECK(cfg.split.seed == 77);
}

TEST_CASE("rejects malformed values and unknown keys") {
    CHECK_THROWS_AS(RunConfig::from_pairs({{"train.lr", "fast"}}), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_pairs({{"train.batch_size", "-4"}}), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_pairs({{"model.use_temporal", "maybe"}}), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_pairs({{"model.kernel_sizes", ""}}), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_pairs({{"model.dmodel", "32"}}), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_pairs({{"", "1"}}), ConfigError);
}

TEST_CASE("validate propagates nested failures") {
    RunConfig cfg = RunConfig::from_pairs({{"model.n_heads", "5"}});
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = RunConfig::from_pairs({{"split.test_fraction", "1.5"}});
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = RunConfig::from_pairs({{"train.max_epochs", "0"}});
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("file loading with comments and whitespace") {
    TempFile f(
        "# training setup\n"
        "profile = desk\n"
        "\n"
        "train.lr = 2e-4   # bumped\n"
        "  model.dropout=0.05\n"
        "loss.diversity_weight = 0\n");
    RunConfig cfg = RunConfig::load(f.path.string());
    CHECK(cfg.profile == "desk");
    CHECK(cfg.train.lr == 2e-4);
    CHECK(cfg.model.dropout == 0.05);
    CHECK(cfg.train.loss.diversity_weight == 0.0);
}

TEST_CASE("file loading failure modes") {
    CHECK_THROWS_AS(RunConfig::load("/nonexistent/path.cfg"), ConfigError);
    TempFile bad("train.lr 5e-5\n");
    CHECK_THROWS_AS(RunConfig::load(bad.path.string()), ConfigError);
    TempFile empty_key("= 3\n");
    CHECK_THROWS_AS(RunConfig::load(empty_key.path.string()), ConfigError);
}

TEST_SUITE_END();
