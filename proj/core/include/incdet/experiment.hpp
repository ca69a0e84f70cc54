#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "incdet/evalmetrics.hpp"
#include "incdet/inference.hpp"
#include "incdet/synthdata.hpp"
#include "incdet/training.hpp"

namespace incdet {

struct ExperimentConfig {
    std::string name = "default";
    std::string dataset_config_path;  // optional reference; empty -> built-in defaults
    DatasetConfig dataset;
    DetectorConfig detector;
    TrainConfig base_train = TrainConfig::base_defaults();
    TrainConfig finetune = TrainConfig::finetune_defaults();
    FreezePolicy policy = FreezePolicy::kFc2;
    std::vector<int> shots = {1, 5, 10};
    std::vector<uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    bool novel_only_eval = false;
    std::string output_dir = "runs";

    void validate() const;
};

ExperimentConfig load_experiment_config(const std::string& path);
void save_experiment_config(const ExperimentConfig& cfg, const std::string& path);
std::string experiment_config_to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_config_from_json_text(const std::string& text);

// Output root: the config's output_dir unless the INCDET_OUT_ROOT environment
// variable overrides it.
std::string output_root(const ExperimentConfig& cfg);
std::string run_dir_name(int k, uint64_t seed, FreezePolicy policy);

// The detector config with canvas size and class counts taken from the
// dataset config (the dataset is the single source of truth for both).
DetectorConfig effective_detector(const ExperimentConfig& cfg);

// ---- audited data access ----
// Every split read during a run goes through this layer so the no-leakage
// contract is checkable rather than assumed.
struct DataAudit {
    int64_t base_train_reads = 0;
    int64_t novel_pool_reads = 0;
    int64_t test_reads = 0;
};

class AuditedSplit {
public:
    AuditedSplit(const DatasetSplit& split, DataAudit& audit) : split_(&split), audit_(&audit) {}

    size_t base_train_size() const { return split_->base_train.size(); }
    size_t novel_pool_size() const { return split_->novel_pool.size(); }
    size_t test_size() const { return split_->test.size(); }

    const AnnotatedImage& base_train(size_t i) const {
        ++audit_->base_train_reads;
        return split_->base_train[i];
    }
    const AnnotatedImage& novel_pool(size_t i) const {
        ++audit_->novel_pool_reads;
        return split_->novel_pool[i];
    }
    const AnnotatedImage& test(size_t i) const {
        ++audit_->test_reads;
        return split_->test[i];
    }

    const ClassVocabulary& vocabulary() const { return split_->vocabulary; }

private:
    const DatasetSplit* split_;
    DataAudit* audit_;
};

// ---- pipeline stages ----

struct BaseTrainResult {
    Checkpoint checkpoint;
    std::vector<LossBreakdown> log;
    EvalReport base_eval;
    bool diverged = false;
    std::string diverged_component;
};

BaseTrainResult run_base_training(
    const ExperimentConfig& cfg, const DatasetSplit& data,
    const std::function<void(int, const LossBreakdown&)>& on_step = {});

struct FinetuneResult {
    Checkpoint checkpoint;
    std::vector<double> loss_log;
    EvalReport report;
    DataAudit audit;
    std::vector<std::string> freeze_violations;  // names of mutated frozen tensors
    int support_images = 0;
    int k = 0;
    uint64_t seed = 0;
    FreezePolicy policy = FreezePolicy::kFc2;
};

// surgery -> freeze policy -> K-shot support sampling -> fine-tune ->
// joint (or novel-only) evaluation. Touches novel_pool and test records only.
FinetuneResult run_finetune(const ExperimentConfig& cfg, const DatasetSplit& data,
                            const Checkpoint& base, int k, uint64_t seed);

EvalReport run_eval(const Checkpoint& ckpt, const std::vector<AnnotatedImage>& images,
                    const ClassVocabulary& vocab, bool novel_only);

// machine-readable audit record; `ok` false on any violation
std::string audit_to_json(const FinetuneResult& result);
bool audit_ok(const FinetuneResult& result);

// ---- ablation grid ----

struct AblationRow {
    FreezePolicy policy;
    RegressorMode regressor;
    ClassifierMode classifier;
};

// The full grid: every policy with both classifiers on the agnostic
// regressor, plus the fc2 rows with the per-class regressor.
std::vector<AblationRow> default_ablation_rows();

struct AblationCell {
    AblationRow row;
    int k = 0;
    std::vector<double> nap_per_seed;
    double mean_nap = 0.0;
};

struct AblationResult {
    std::vector<AblationRow> rows;
    std::vector<int> shots;
    std::vector<uint64_t> seeds;
    std::vector<AblationCell> cells;  // row-major over (rows, shots)

    // fc2-vs-none comparison at directional_k on the agnostic+linear rows
    int directional_k = 0;
    double mean_nap_fc2 = 0.0, mean_nap_none = 0.0, diff_stderr = 0.0;
    std::string directional_status;  // "pass" | "flag" | "fail" | "n/a"
};

// base_lookup must supply a base-stage checkpoint trained with the requested
// regressor/classifier pair; returning null raises a dependency error.
AblationResult run_ablation(
    const ExperimentConfig& cfg, const DatasetSplit& data,
    const std::vector<AblationRow>& rows,
    const std::function<const Checkpoint*(RegressorMode, ClassifierMode)>& base_lookup);

std::string ablation_to_json(const AblationResult& r);

}  // namespace incdet
