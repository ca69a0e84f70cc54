#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <cstdlib>

#include "doctest.h"
#include "incdet/errors.hpp"
#include "incdet/experiment.hpp"

using namespace incdet;

namespace {

ExperimentConfig micro_config() {
    ExperimentConfig cfg;
    cfg.name = "micro";
    cfg.dataset.base_classes = {"circle", "square", "triangle"};
    cfg.dataset.novel_classes = {"pentagon", "diamond"};
    cfg.dataset.canvas_h = 32;
    cfg.dataset.canvas_w = 32;
    cfg.dataset.base_train_images = 12;
    cfg.dataset.novel_pool_images = 14;
    cfg.dataset.test_images = 8;
    cfg.dataset.max_instances = 2;
    cfg.dataset.seed = 77;

    cfg.detector.backbone_channels = {4, 6, 8, 8};
    cfg.detector.anchor_scales = {8.0, 14.0};
    cfg.detector.anchor_ratios = {1.0};
    cfg.detector.roi_pool_size = 2;
    cfg.detector.roi_feature_dim = 16;

    cfg.base_train.steps = 30;
    cfg.base_train.decay_steps = {20, 25};
    cfg.base_train.batch_size = 4;
    cfg.base_train.seed = 5;

    cfg.finetune.steps = 20;
    cfg.finetune.decay_steps = {10, 15};
    cfg.finetune.batch_size = 4;

    cfg.shots = {2};
    cfg.seeds = {1, 2};
    cfg.validate();
    return cfg;
}

const DatasetSplit& micro_data() {
    static const DatasetSplit split = build_dataset(micro_config().dataset);
    return split;
}

const BaseTrainResult& micro_base() {
    static const BaseTrainResult result = run_base_training(micro_config(), micro_data());
    return result;
}

}  // namespace

TEST_CASE("experiment configs survive a json round trip") {
    ExperimentConfig cfg = micro_config();
    cfg.policy = FreezePolicy::kFc1Fc2;
    cfg.novel_only_eval = true;
    cfg.output_dir = "elsewhere";
    cfg.detector.classifier = ClassifierMode::kCosine;
    ExperimentConfig back = experiment_config_from_json_text(experiment_config_to_json(cfg));
    CHECK(back.name == cfg.name);
    CHECK(back.dataset.base_classes == cfg.dataset.base_classes);
    CHECK(back.dataset.seed == cfg.dataset.seed);
    CHECK(back.detector.classifier == ClassifierMode::kCosine);
    CHECK(back.base_train.steps == 30);
    CHECK(back.base_train.decay_steps == cfg.base_train.decay_steps);
    CHECK(back.finetune.batch_size == 4);
    CHECK(back.policy == FreezePolicy::kFc1Fc2);
    CHECK(back.shots == cfg.shots);
    CHECK(back.seeds == cfg.seeds);
    CHECK(back.novel_only_eval == true);
    CHECK(back.output_dir == "elsewhere");
    CHECK(config_digest(effective_detector(back)) == config_digest(effective_detector(cfg)));
}

TEST_CASE("experiment validation rejects nonsense") {
    ExperimentConfig cfg = micro_config();
    cfg.name = "";
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = micro_config();
    cfg.shots = {};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = micro_config();
    cfg.shots = {0};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = micro_config();
    cfg.seeds = {3, 3};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = micro_config();
    cfg.seeds = {};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("the dataset dictates the detector's canvas and label widths") {
    ExperimentConfig cfg = micro_config();
    cfg.detector.canvas_h = 999;  // wrong on purpose; dataset wins
    cfg.detector.num_base = 1;
    cfg.detector.num_novel = 7;
    DetectorConfig eff = effective_detector(cfg);
    CHECK(eff.canvas_h == 32);
    CHECK(eff.canvas_w == 32);
    CHECK(eff.num_base == 3);
    CHECK(eff.num_novel == 2);
}

TEST_CASE("the output root prefers the environment override") {
    ExperimentConfig cfg = micro_config();
    cfg.output_dir = "runs_here";
    ::unsetenv("INCDET_OUT_ROOT");
    CHECK(output_root(cfg) == "runs_here");
    ::setenv("INCDET_OUT_ROOT", "/tmp/elsewhere", 1);
    CHECK(output_root(cfg) == "/tmp/elsewhere");
    ::unsetenv("INCDET_OUT_ROOT");
    CHECK(run_dir_name(10, 3, FreezePolicy::kFc2) == "k10_seed3_fc2");
    CHECK(run_dir_name(1, 12, FreezePolicy::kNone) == "k1_seed12_none");
}

TEST_CASE("audited access counts every record it hands out") {
    DataAudit audit;
    AuditedSplit view(micro_data(), audit);
    (void)view.base_train(0);
    (void)view.base_train(1);
    (void)view.novel_pool(0);
    for (size_t i = 0; i < view.test_size(); ++i) (void)view.test(i);
    CHECK(audit.base_train_reads == 2);
    CHECK(audit.novel_pool_reads == 1);
    CHECK(audit.test_reads == static_cast<int64_t>(micro_data().test.size()));
}

TEST_CASE("base training is deterministic end to end") {
    int callbacks = 0;
    BaseTrainResult again = run_base_training(micro_config(), micro_data(),
                                              [&](int, const LossBreakdown&) { ++callbacks; });
    CHECK(callbacks == 30);
    const BaseTrainResult& first = micro_base();
    CHECK(again.checkpoint.params.bit_equal(first.checkpoint.params));
    CHECK(!again.diverged);
    CHECK(again.log.size() == 30);
    CHECK(again.checkpoint.step == 30);
    CHECK(again.checkpoint.params.stage() == Stage::kBase);
    // a base-stage detector cannot claim novel objects: novel rows, present
    // because the test set annotates them, must score exactly zero
    for (const auto& [name, ap] : again.base_eval.per_class_ap)
        if (!micro_data().vocabulary.is_base(micro_data().vocabulary.index_of(name)))
            CHECK(ap == 0.0);
}

TEST_CASE("an exploding run stops early and keeps the last finite parameters") {
    ExperimentConfig cfg = micro_config();
    cfg.base_train.learning_rate = 1e6;
    cfg.base_train.steps = 10;
    cfg.base_train.decay_steps = {8, 9};
    BaseTrainResult result = run_base_training(cfg, micro_data());
    CHECK(result.diverged);
    CHECK(!result.diverged_component.empty());
    CHECK(result.log.size() < 10);
    for (const auto& name : result.checkpoint.params.names())
        CHECK(result.checkpoint.params.at(name).all_finite());
}

TEST_CASE("fine-tuning runs clean: no base reads, no freeze violations, reproducible") {
    ExperimentConfig cfg = micro_config();
    FinetuneResult r1 = run_finetune(cfg, micro_data(), micro_base().checkpoint, 2, 1);
    FinetuneResult r2 = run_finetune(cfg, micro_data(), micro_base().checkpoint, 2, 1);

    CHECK(r1.audit.base_train_reads == 0);
    CHECK(r1.audit.novel_pool_reads > 0);
    CHECK(r1.audit.test_reads > 0);
    CHECK(r1.freeze_violations.empty());
    CHECK(audit_ok(r1));
    CHECK(r1.loss_log.size() == 20);
    CHECK(r1.support_images > 0);
    CHECK(r1.k == 2);
    CHECK(r1.seed == 1);
    CHECK(r1.checkpoint.params.stage() == Stage::kBranched);
    CHECK(r1.report.eval_mode == "joint");

    CHECK(r2.checkpoint.params.bit_equal(r1.checkpoint.params));
    CHECK(r2.loss_log == r1.loss_log);

    FinetuneResult other = run_finetune(cfg, micro_data(), micro_base().checkpoint, 2, 2);
    CHECK(!other.checkpoint.params.bit_equal(r1.checkpoint.params));
}

TEST_CASE("novel-only evaluation mode flows through fine-tuning") {
    ExperimentConfig cfg = micro_config();
    cfg.novel_only_eval = true;
    FinetuneResult r = run_finetune(cfg, micro_data(), micro_base().checkpoint, 1, 3);
    CHECK(r.report.eval_mode == "novel_only");
    CHECK(!r.report.bap.has_value());
}

TEST_CASE("fine-tuning refuses a base checkpoint from another label space") {
    ExperimentConfig cfg = micro_config();
    Checkpoint wrong = micro_base().checkpoint;
    wrong.config.num_base = 4;
    CHECK_THROWS_AS(run_finetune(cfg, micro_data(), wrong, 2, 1), ConfigError);
}

TEST_CASE("the audit record serializes its counters and verdict") {
    ExperimentConfig cfg = micro_config();
    FinetuneResult r = run_finetune(cfg, micro_data(), micro_base().checkpoint, 2, 1);
    std::string j = audit_to_json(r);
    CHECK(j.find("\"base_train\": 0") != std::string::npos);
    CHECK(j.find("\"ok\": true") != std::string::npos);

    r.freeze_violations.push_back("roi.base.fc1.w");
    CHECK(!audit_ok(r));
    std::string bad = audit_to_json(r);
    CHECK(bad.find("\"ok\": false") != std::string::npos);
    CHECK(bad.find("roi.base.fc1.w") != std::string::npos);
}

TEST_CASE("evaluation requires at least one image") {
    CHECK_THROWS_AS(
        run_eval(micro_base().checkpoint, {}, micro_data().vocabulary, false), ConfigError);
}

TEST_CASE("the default ablation grid matches the published table shape") {
    auto rows = default_ablation_rows();
    CHECK(rows.size() == 8);
    int agnostic = 0, specific = 0;
    for (const auto& r : rows) {
        if (r.regressor == RegressorMode::kAgnostic)
            ++agnostic;
        else
            ++specific;
    }
    CHECK(agnostic == 6);  // 3 policies x 2 classifiers
    CHECK(specific == 2);  // fc2 policy x 2 classifiers
}

TEST_CASE("a small ablation grid aggregates per-seed results and the direction check") {
    ExperimentConfig cfg = micro_config();
    cfg.shots = {2};
    cfg.seeds = {1, 2};
    std::vector<AblationRow> rows = {
        {FreezePolicy::kNone, RegressorMode::kAgnostic, ClassifierMode::kLinear},
        {FreezePolicy::kFc2, RegressorMode::kAgnostic, ClassifierMode::kLinear},
    };
    const Checkpoint* base = &micro_base().checkpoint;
    AblationResult result = run_ablation(cfg, micro_data(), rows,
                                         [&](RegressorMode, ClassifierMode) { return base; });
    REQUIRE(result.cells.size() == 2);
    for (const auto& cell : result.cells) {
        CHECK(cell.k == 2);
        CHECK(cell.nap_per_seed.size() == 2);
        double sum = 0;
        for (double v : cell.nap_per_seed) sum += v;
        CHECK(cell.mean_nap == doctest::Approx(sum / 2));
    }
    CHECK(result.directional_k == 2);
    CHECK((result.directional_status == "pass" || result.directional_status == "flag" ||
           result.directional_status == "fail"));
    std::string j = ablation_to_json(result);
    CHECK(j.find("directional") != std::string::npos);
    CHECK(j.find("cells") != std::string::npos);
}

TEST_CASE("ablation refuses to run without its base checkpoint") {
    ExperimentConfig cfg = micro_config();
    std::vector<AblationRow> rows = {
        {FreezePolicy::kFc2, RegressorMode::kSpecific, ClassifierMode::kLinear}};
    CHECK_THROWS_AS(
        run_ablation(cfg, micro_data(), rows,
                     [](RegressorMode, ClassifierMode) -> const Checkpoint* { return nullptr; }),
        ConfigError);
}
