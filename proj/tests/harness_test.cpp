#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "xfi/experiment.hpp"

using namespace xfi;
namespace fs = std::filesystem;

namespace {

ExperimentConfig smoke(const std::string& extra = "") {
    ExperimentConfig c = load_config_file(std::string(XFI_CONFIG_DIR) + "/smoke.ini", desk_preset());
    return extra.empty() ? c : apply_config_text(c, extra);
}

std::string fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("xfi_harness_" + name);
    fs::remove_all(dir);
    return dir.string();
}

int run_cli(const std::string& args) {
    const int status = std::system((std::string(XFI_CLI) + " " + args + " > /dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST(Config, PresetsValidate) {
    EXPECT_NO_THROW(desk_preset().validate());
    EXPECT_NO_THROW(paper_preset().validate());
    EXPECT_EQ(paper_preset().model.fusion.d_f, 512u);
    EXPECT_EQ(paper_preset().model.fusion.n_f, 32u);
    EXPECT_EQ(paper_preset().model.fusion.heads, 8u);
    EXPECT_EQ(paper_preset().model.fusion.scale, 0.125);
    EXPECT_THROW(preset("huge"), ConfigError);
}

TEST(Config, UnknownKeysAndSectionsAreRejected) {
    EXPECT_THROW(apply_config_text(desk_preset(), "[model]\nwidth = 3\n"), ConfigError);
    EXPECT_THROW(apply_config_text(desk_preset(), "[optim]\nlr = 3\n"), ConfigError);
    EXPECT_THROW(apply_config_text(desk_preset(), "[model]\nn_f = -2\n"), ConfigError);
    EXPECT_THROW(apply_config_text(desk_preset(), "[model]\nvariant = deep\n"), ConfigError);
    EXPECT_THROW(apply_config_text(desk_preset(), "[model]\npost_norm = maybe\n"), ConfigError);
}

TEST(Config, InvalidCombinationsFailValidation) {
    EXPECT_THROW(apply_config_text(desk_preset(), "[model]\nheads = 3\n").validate(), ConfigError);
    EXPECT_THROW(apply_config_text(desk_preset(), "[ablate]\nprobs = 0.5,0.5\n").validate(), ConfigError);
    EXPECT_THROW(apply_config_text(desk_preset(), "[modality.A]\nraw_dim = 4\nmask = 0-5\n").validate(), ConfigError);
}

TEST(Config, TaskSelectsPaperLearningRate) {
    EXPECT_EQ(apply_config_text(desk_preset(), "[train]\ntask = har\n").train.learning_rate, 1e-4);
    EXPECT_EQ(apply_config_text(desk_preset(), "[train]\ntask = har\nlearning_rate = 0.01\n").train.learning_rate, 0.01);
    EXPECT_EQ(apply_config_text(desk_preset(), "[train]\ntask = har\n").model.task, Task::Har);
}

TEST(Config, CanonicalTextRoundTrips) {
    for (const auto& c : {desk_preset(), paper_preset(), smoke(), load_config_file(std::string(XFI_CONFIG_DIR) + "/existence_har.ini", desk_preset())}) {
        const auto again = apply_config_text(desk_preset(), canonical_text(c));
        EXPECT_EQ(canonical_text(again), canonical_text(c));
        EXPECT_EQ(config_digest(again), config_digest(c));
    }
}

TEST(Config, DigestTracksEveryField) {
    const auto base = desk_preset();
    EXPECT_EQ(config_digest(base), config_digest(desk_preset()));
    EXPECT_EQ(config_digest(base).size(), 16u);
    for (const char* text : {"[model]\nscale = 0.3\n", "[data]\nseed = 1\n", "[train]\nsteps = 1999\n",
                             "[modality.A]\nraw_dim = 4\nmask = 0-11\n", "[ablate]\nprobs = 1,1,1,1\n"})
        EXPECT_NE(config_digest(apply_config_text(base, text)), config_digest(base)) << text;
}

TEST(Config, ModalitySectionsReplaceList) {
    const auto c = load_config_file(std::string(XFI_CONFIG_DIR) + "/complementary.ini", desk_preset());
    ASSERT_EQ(c.data.modalities.size(), 2u);
    EXPECT_EQ(c.data.modalities[0].id, "L");
    EXPECT_TRUE(c.data.modalities[0].is_spatial);
    EXPECT_EQ(c.data.modalities[1].informative_mask, detail::mask_range(12, 6, 12));
    EXPECT_THROW(load_config_file("/nonexistent/x.ini", desk_preset()), ConfigError);
}

TEST(Config, ReplacedModalitiesResizeDefaultSweep) {
    const auto c = load_config_file(std::string(XFI_CONFIG_DIR) + "/complementary.ini", desk_preset());
    EXPECT_EQ(c.ablate_probs, (std::vector<std::vector<double>>{{0.5, 0.5}, {0.5, 0.7}, {0.5, 0.9}}));
    EXPECT_NO_THROW(c.validate());
    // An explicit sweep wins.
    const auto h = load_config_file(std::string(XFI_CONFIG_DIR) + "/existence_har.ini", desk_preset());
    EXPECT_EQ(h.ablate_probs.front(), (std::vector<double>{0.5, 0.5, 0.8}));
    EXPECT_EQ(desk_preset().ablate_probs.back(), (std::vector<double>{0.5, 0.5, 0.5, 0.9}));
}

TEST(Subsets, FifteenGroupsInCanonicalOrder) {
    const auto s = enumerate_subsets({"I", "L", "R", "W"});
    ASSERT_EQ(s.size(), 15u);
    const std::vector<std::string> expected = {"I",     "L",     "R",     "W",       "I+L",     "I+R",     "I+W",  "L+R",
                                               "L+W",   "R+W",   "I+L+R", "I+L+W",   "I+R+W",   "L+R+W",   "I+L+R+W"};
    for (std::size_t k = 0; k < s.size(); ++k) EXPECT_EQ(s[k].label, expected[k]);
    EXPECT_EQ(enumerate_subsets({"A", "B", "C", "D", "E"}).size(), 31u);
    EXPECT_THROW(enumerate_subsets({}), PreconditionError);
}

TEST(Harness, TrainThenEvalWritesReports) {
    const auto dir = fresh_dir("train_eval");
    const auto c = smoke();
    run_train(c, dir);
    for (const char* f : {"checkpoint.xfi", "history.csv", "train.json"}) EXPECT_TRUE(fs::exists(dir + "/" + f)) << f;
    const std::string ckpt_before = read_text_file(checkpoint_path(dir));
    const Report r = run_eval(c, dir);
    EXPECT_EQ(r.rows.size(), 15u * 2u);
    EXPECT_EQ(r.rows.front().subset, "I");
    EXPECT_EQ(r.rows.back().subset, "I+L+R+W");
    EXPECT_EQ(r.metadata.at("config_digest"), config_digest(c));
    EXPECT_EQ(read_text_file(checkpoint_path(dir)), ckpt_before);
    const std::string csv = read_text_file(dir + "/report.csv");
    EXPECT_EQ(csv.rfind("task,subset,metric,value\nhpe,I,mpjpe,", 0), 0u);
    const auto summary = nlohmann::json::parse(read_text_file(dir + "/report.json"));
    EXPECT_TRUE(summary["results"]["hpe"].contains("L+W"));
}

TEST(Harness, HarRowsCarryClusteringMetrics) {
    const auto dir = fresh_dir("har");
    const auto c = smoke("[train]\ntask = har\n");
    run_train(c, dir);
    const Report r = run_eval(c, dir);
    EXPECT_EQ(r.rows.size(), 15u * 3u);
    EXPECT_TRUE(r.find("har", "I+L", "silhouette").has_value());
    EXPECT_TRUE(r.find("har", "I+L", "calinski_harabasz").has_value());
}

TEST(Harness, RerunsAreByteIdentical) {
    const auto a = fresh_dir("rerun_a"), b = fresh_dir("rerun_b");
    const auto c = smoke();
    for (const auto& dir : {a, b}) {
        run_train(c, dir);
        run_eval(c, dir);
    }
    for (const char* f : {"checkpoint.xfi", "history.csv", "train.json", "report.csv", "report.json"})
        EXPECT_EQ(read_text_file(a + "/" + f), read_text_file(b + "/" + f)) << f;
}

TEST(Harness, TrainingIgnoresHeapLayout) {
    // Vectorized kernels can round differently depending on buffer
    // addresses; holding odd-sized blocks shifts every later allocation.
    const auto c = smoke();
    const Dataset data = build_dataset(c);
    auto trained = [&](std::size_t held) {
        std::vector<std::vector<char>> blocks;
        for (std::size_t k = 1; k <= held; ++k) blocks.emplace_back(8 * k + 40);
        XFiModel model = build_model(c);
        fit(model, data, c);
        std::vector<double> flat;
        for (const auto& [name, t] : model.params()) flat.insert(flat.end(), t.values().begin(), t.values().end());
        return flat;
    };
    const auto reference = trained(0);
    for (std::size_t held : {1, 3, 7}) EXPECT_EQ(trained(held), reference) << held;
}

TEST(Harness, EvalRejectsMismatchedOrMissingCheckpoint) {
    const auto dir = fresh_dir("mismatch");
    EXPECT_THROW(run_eval(smoke(), dir), IoError);
    run_train(smoke(), dir);
    EXPECT_THROW(run_eval(smoke("[model]\nscale = 0.25\n"), dir), ConfigError);
    EXPECT_THROW(run_eval(smoke("[train]\nsteps = 21\n"), dir), ConfigError);
}

TEST(Harness, AblateRunsOneCyclePerProbabilityVector) {
    const auto dir = fresh_dir("ablate");
    const auto c = smoke(read_text_file(std::string(XFI_CONFIG_DIR) + "/existence_har.ini"));
    ASSERT_EQ(c.ablate_probs.size(), 3u);
    const Report r = run_ablate(c, dir);
    EXPECT_EQ(r.rows.size(), 3u * 7u * 3u);
    for (int k = 0; k < 3; ++k) EXPECT_TRUE(fs::exists(dir + "/ablate_" + std::to_string(k) + "/checkpoint.xfi"));
    EXPECT_TRUE(r.find("har@p=0.5/0.9/0.6", "W", "accuracy").has_value());
    EXPECT_TRUE(fs::exists(dir + "/ablate_report.csv"));
    // Each cell trains with its own probabilities.
    const auto h0 = read_text_file(dir + "/ablate_0/history.csv"), h1 = read_text_file(dir + "/ablate_1/history.csv");
    EXPECT_NE(h0, h1);
}

TEST(Harness, VariantsCoverFourVariantsAndBaselines) {
    const auto dir = fresh_dir("variants");
    const Report r = run_variants(smoke(), dir);
    for (const char* task : {"hpe@iterative-shared-block", "hpe@stacked-fresh-kv", "hpe@stacked-shared-kv",
                             "hpe@transformer-only", "hpe@feature-concat", "hpe@decision-average"})
        for (const char* subset : {"I", "L+W", "I+L+R+W"}) EXPECT_TRUE(r.find(task, subset, "mpjpe").has_value()) << task;
    EXPECT_EQ(r.rows.size(), 6u * 15u * 2u);
    EXPECT_TRUE(fs::exists(dir + "/variants_report.json"));
}

TEST(Cli, ExitCodesAndOutputs) {
    const auto dir = fresh_dir("cli");
    const std::string cfg = "--config " + std::string(XFI_CONFIG_DIR) + "/smoke.ini --out " + dir;
    EXPECT_EQ(run_cli("config " + cfg), 0);
    EXPECT_EQ(run_cli("eval " + cfg), 3);
    EXPECT_EQ(run_cli("train " + cfg), 0);
    EXPECT_EQ(run_cli("eval " + cfg), 0);
    EXPECT_TRUE(fs::exists(dir + "/timing.train.json"));
    EXPECT_TRUE(fs::exists(dir + "/timing.eval.json"));
    EXPECT_EQ(run_cli("eval " + cfg + " --seed 5"), 2);
    const auto bad = fs::temp_directory_path() / "xfi_harness_bad.ini";
    write_text_file(bad.string(), "[model]\nwidth = 3\n");
    EXPECT_EQ(run_cli("train --config " + bad.string() + " --out " + dir), 2);
    EXPECT_NE(run_cli("nonsense"), 0);
}
