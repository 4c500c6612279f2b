#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "dense/config.hpp"

using namespace dense;

namespace {

const char* kSampleConfig = R"(
# sample run configuration
[run]
n_shots = 6
bucket_counts = [2, 3, 6]
methods = ["concat", "moe", "max"]
weightings = ["uniform", "similarity"]
allocations = ["contiguous", "diverse"]
seeds = [0, 1, 2]

[backend]
kind = "mock"
fixture = "fixture.jsonl"

[embedder]
source = "file"
path = "embeddings.jsonl"

[template]
demo_format = "Q: {input}\nA: {label_verbalized}"
separator = "\n\n"
test_format = "Q: {input}\nA:"

[dataset.sst2]
path = "sst2.jsonl"
task = "classification"
labels = ["negative", "positive"]
metric = "macro_f1"
eval_fraction = 0.2
)";

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("parse_config_string: sections, arrays, strings, numbers") {
    auto doc = parse_config_string(kSampleConfig);
    auto cfg = build_run_config(doc);
    CHECK(cfg.n_shots == 6);
    CHECK(cfg.bucket_counts == std::vector<std::size_t>{2, 3, 6});
    CHECK(cfg.methods == std::vector<Method>{Method::concat, Method::moe, Method::max});
    CHECK(cfg.weightings.size() == 2);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{0, 1, 2});
    CHECK(cfg.backend.kind == BackendKind::mock);
    CHECK(*cfg.backend.fixture_path == "fixture.jsonl");
    CHECK(*cfg.embedder.path == "embeddings.jsonl");

    auto specs = build_dataset_specs(doc);
    REQUIRE(specs.size() == 1);
    CHECK(specs[0].name == "sst2");
    CHECK(specs[0].label_set.size() == 2);
    CHECK(specs[0].eval_fraction == doctest::Approx(0.2));
    CHECK(specs[0].prompt.demo_format == "Q: {input}\nA: {label_verbalized}");
}

TEST_CASE("escaped newlines in strings") {
    auto doc = parse_config_string(
        "[template]\ndemo_format = \"{input}\\n{label_verbalized}\"\n");
    CHECK(doc.sections.at("template").at("demo_format").get<std::string>() ==
          "{input}\n{label_verbalized}");
}

TEST_CASE("overrides replace values") {
    auto doc = parse_config_string(kSampleConfig);
    apply_override(doc, "run.n_shots=10");
    apply_override(doc, "run.bucket_counts=[2, 5]");
    apply_override(doc, "backend.kind=\"http\"");
    apply_override(doc, "backend.endpoint=\"http://localhost:9000/score\"");
    auto cfg = build_run_config(doc);
    CHECK(cfg.n_shots == 10);
    CHECK(cfg.bucket_counts == std::vector<std::size_t>{2, 5});
    CHECK(cfg.backend.kind == BackendKind::http);
    CHECK(*cfg.backend.endpoint == "http://localhost:9000/score");
}

TEST_CASE("DENSE_BACKEND_URL overrides the endpoint") {
    setenv("DENSE_BACKEND_URL", "http://ci-host:1234/v1", 1);
    auto doc = parse_config_string(kSampleConfig);
    auto cfg = build_run_config(doc);
    CHECK(*cfg.backend.endpoint == "http://ci-host:1234/v1");
    unsetenv("DENSE_BACKEND_URL");
}

TEST_CASE("validation failures are pointed") {
    auto doc = parse_config_string(kSampleConfig);
    apply_override(doc, "run.bucket_counts=[9]");  // > n_shots
    try {
        build_run_config(doc);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("bucket_counts") != std::string::npos);
    }

    auto doc2 = parse_config_string(kSampleConfig);
    apply_override(doc2, "run.seeds=[]");
    CHECK_THROWS_AS(build_run_config(doc2), ValidationError);
}

TEST_CASE("parser error paths") {
    CHECK_THROWS_AS(parse_config_string("[run\nx = 1\n"), FormatError);
    CHECK_THROWS_AS(parse_config_string("[run]\nno_equals_here\n"), FormatError);
    CHECK_THROWS_AS(parse_config_string("[run]\nx = \"unterminated\n"), FormatError);
    CHECK_THROWS_AS(parse_config_string("[run]\nx = [1, 2\n"), FormatError);
    CHECK_THROWS_AS(parse_config_string("[run]\nx = what\n"), FormatError);
}

TEST_CASE("config file round-trip through disk") {
    auto path = temp_path("cfg_sample.toml");
    std::ofstream(path) << kSampleConfig;
    auto doc = parse_config_file(path);
    CHECK(doc.sections.count("run") == 1);
    CHECK(doc.sections.count("dataset.sst2") == 1);
    CHECK_THROWS_AS(parse_config_file(temp_path("missing_cfg.toml")), IoError);
}

TEST_CASE("build_dataset_specs requires labels and at least one dataset") {
    CHECK_THROWS_AS(build_dataset_specs(parse_config_string("[run]\nn_shots = 4\n")),
                    ValidationError);
    auto doc = parse_config_string("[dataset.x]\npath = \"x.jsonl\"\n");
    CHECK_THROWS_AS(build_dataset_specs(doc), ValidationError);
}
