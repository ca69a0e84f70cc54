#include "incdet/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "incdet/errors.hpp"
#include "incdet/rng.hpp"
#include "json.hpp"

namespace incdet {

using nlohmann::json;

// ---- config ----

void ExperimentConfig::validate() const {
    if (name.empty()) throw ConfigError("experiment name must be non-empty");
    dataset.validate();
    base_train.validate();
    finetune.validate();
    if (shots.empty()) throw ConfigError("shots list must be non-empty");
    for (int k : shots)
        if (k <= 0) throw ConfigError("shot counts must be positive");
    if (seeds.empty()) throw ConfigError("seeds list must be non-empty");
    for (size_t i = 0; i < seeds.size(); ++i)
        for (size_t j = i + 1; j < seeds.size(); ++j)
            if (seeds[i] == seeds[j])
                throw ConfigError("duplicate seed " + std::to_string(seeds[i]));
    if (output_dir.empty()) throw ConfigError("output_dir must be non-empty");
    effective_detector(*this);  // validates detector against dataset geometry
}

DetectorConfig effective_detector(const ExperimentConfig& cfg) {
    DetectorConfig d = cfg.detector;
    d.canvas_h = cfg.dataset.canvas_h;
    d.canvas_w = cfg.dataset.canvas_w;
    d.num_base = static_cast<int>(cfg.dataset.base_classes.size());
    d.num_novel = static_cast<int>(cfg.dataset.novel_classes.size());
    d.validate();
    return d;
}

namespace {

json dataset_to_json(const DatasetConfig& c) {
    return json{{"base_classes", c.base_classes},
                {"novel_classes", c.novel_classes},
                {"canvas", {{"h", c.canvas_h}, {"w", c.canvas_w}}},
                {"counts",
                 {{"base_train", c.base_train_images},
                  {"novel_pool", c.novel_pool_images},
                  {"test", c.test_images}}},
                {"max_instances", c.max_instances},
                {"seed", c.seed}};
}

DatasetConfig dataset_from_json(const json& j) {
    DatasetConfig c;
    if (j.contains("base_classes")) c.base_classes = j["base_classes"].get<std::vector<std::string>>();
    if (j.contains("novel_classes"))
        c.novel_classes = j["novel_classes"].get<std::vector<std::string>>();
    if (j.contains("canvas")) {
        c.canvas_h = j["canvas"].value("h", c.canvas_h);
        c.canvas_w = j["canvas"].value("w", c.canvas_w);
    }
    if (j.contains("counts")) {
        c.base_train_images = j["counts"].value("base_train", c.base_train_images);
        c.novel_pool_images = j["counts"].value("novel_pool", c.novel_pool_images);
        c.test_images = j["counts"].value("test", c.test_images);
    }
    c.max_instances = j.value("max_instances", c.max_instances);
    c.seed = j.value("seed", c.seed);
    return c;
}

json train_to_json(const TrainConfig& c) {
    return json{{"learning_rate", c.learning_rate}, {"decay_steps", c.decay_steps},
                {"decay_factor", c.decay_factor},  {"momentum", c.momentum},
                {"weight_decay", c.weight_decay},  {"batch_size", c.batch_size},
                {"steps", c.steps},                {"seed", c.seed}};
}

TrainConfig train_from_json(const json& j, TrainConfig c) {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    if (j.contains("decay_steps")) c.decay_steps = j["decay_steps"].get<std::vector<int>>();
    c.decay_factor = j.value("decay_factor", c.decay_factor);
    c.momentum = j.value("momentum", c.momentum);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.steps = j.value("steps", c.steps);
    c.seed = j.value("seed", c.seed);
    return c;
}

}  // namespace

std::string experiment_config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["name"] = cfg.name;
    if (!cfg.dataset_config_path.empty()) j["dataset_config"] = cfg.dataset_config_path;
    j["dataset"] = dataset_to_json(cfg.dataset);
    j["detector"] = json::parse(detector_config_to_json(cfg.detector));
    j["base_train"] = train_to_json(cfg.base_train);
    j["finetune"] = train_to_json(cfg.finetune);
    j["policy"] = freeze_policy_name(cfg.policy);
    j["shots"] = cfg.shots;
    j["seeds"] = cfg.seeds;
    j["novel_only_eval"] = cfg.novel_only_eval;
    j["output_dir"] = cfg.output_dir;
    return j.dump(2);
}

ExperimentConfig experiment_config_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(std::string("experiment config parse error: ") + e.what());
    }
    ExperimentConfig cfg;
    cfg.name = j.value("name", cfg.name);
    cfg.dataset_config_path = j.value("dataset_config", std::string());
    if (j.contains("dataset")) cfg.dataset = dataset_from_json(j["dataset"]);
    if (j.contains("detector")) cfg.detector = detector_config_from_json_text(j["detector"].dump());
    if (j.contains("base_train")) cfg.base_train = train_from_json(j["base_train"], cfg.base_train);
    if (j.contains("finetune")) cfg.finetune = train_from_json(j["finetune"], cfg.finetune);
    if (j.contains("policy")) cfg.policy = parse_freeze_policy(j["policy"].get<std::string>());
    if (j.contains("shots")) cfg.shots = j["shots"].get<std::vector<int>>();
    if (j.contains("seeds")) cfg.seeds = j["seeds"].get<std::vector<uint64_t>>();
    cfg.novel_only_eval = j.value("novel_only_eval", cfg.novel_only_eval);
    cfg.output_dir = j.value("output_dir", cfg.output_dir);
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open experiment config " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    ExperimentConfig cfg = experiment_config_from_json_text(text);
    if (!cfg.dataset_config_path.empty()) {
        // resolve relative to the experiment file
        std::string resolved = cfg.dataset_config_path;
        auto slash = path.find_last_of('/');
        if (slash != std::string::npos && !resolved.empty() && resolved[0] != '/')
            resolved = path.substr(0, slash + 1) + resolved;
        cfg.dataset = load_dataset_config(resolved);  // throws if missing
    }
    cfg.validate();
    return cfg;
}

void save_experiment_config(const ExperimentConfig& cfg, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << experiment_config_to_json(cfg) << "\n";
}

std::string output_root(const ExperimentConfig& cfg) {
    const char* env = std::getenv("INCDET_OUT_ROOT");
    if (env != nullptr && env[0] != '\0') return std::string(env);
    return cfg.output_dir;
}

std::string run_dir_name(int k, uint64_t seed, FreezePolicy policy) {
    return "k" + std::to_string(k) + "_seed" + std::to_string(seed) + "_" +
           freeze_policy_name(policy);
}

// ---- evaluation ----

EvalReport run_eval(const Checkpoint& ckpt, const std::vector<AnnotatedImage>& images,
                    const ClassVocabulary& vocab, bool novel_only) {
    if (images.empty()) throw ConfigError("evaluation split has no images");
    std::vector<std::vector<Detection>> dets;
    dets.reserve(images.size());
    for (const auto& img : images) dets.push_back(detect(img, ckpt, vocab));
    EvalOptions opts;
    opts.novel_only = novel_only;
    return evaluate_detections(images, dets, vocab, opts);
}

// ---- base training ----

BaseTrainResult run_base_training(const ExperimentConfig& cfg, const DatasetSplit& data,
                                  const std::function<void(int, const LossBreakdown&)>& on_step) {
    cfg.validate();
    const ClassVocabulary& vocab = data.vocabulary;
    if (data.base_train.empty()) throw ConfigError("base training split has no images");

    DetectorConfig dcfg = effective_detector(cfg);
    TrainConfig tcfg = cfg.base_train;

    BaseTrainResult result;
    result.checkpoint.config = dcfg;
    result.checkpoint.seed = tcfg.seed;
    result.checkpoint.params = init_parameters(dcfg, tcfg.seed);

    TrainerState opt;
    const size_t n = data.base_train.size();
    for (int step = 0; step < tcfg.steps; ++step) {
        Rng rng(derive_seed(tcfg.seed, "base.batch", static_cast<uint64_t>(step)));
        std::vector<const AnnotatedImage*> batch;
        batch.reserve(static_cast<size_t>(tcfg.batch_size));
        for (int b = 0; b < tcfg.batch_size; ++b)
            batch.push_back(&data.base_train[rng.uniform_int(static_cast<uint64_t>(n))]);
        // snapshot so an update that overflows to inf can be discarded
        ParameterStore entry = result.checkpoint.params;
        try {
            LossBreakdown lb =
                base_train_step(batch, result.checkpoint.params, opt, tcfg, dcfg, vocab, step);
            bool finite = true;
            for (const auto& name : result.checkpoint.params.names())
                if (!result.checkpoint.params.at(name).all_finite()) {
                    finite = false;
                    break;
                }
            if (!finite) {
                result.checkpoint.params = std::move(entry);
                result.diverged = true;
                result.diverged_component = "update";
                break;
            }
            result.log.push_back(lb);
            result.checkpoint.step = step + 1;
            if (on_step) on_step(step, lb);
        } catch (const NonFiniteLossError& e) {
            // a step that throws never reaches its update, so the store still
            // holds the last parameters that produced finite values
            result.diverged = true;
            result.diverged_component = e.component();
            break;
        }
    }
    // a diverged store produces garbage (or non-finite) scores; skip the eval
    if (!result.diverged)
        result.base_eval = run_eval(result.checkpoint, data.test, vocab, /*novel_only=*/false);
    return result;
}

// ---- fine-tuning ----

FinetuneResult run_finetune(const ExperimentConfig& cfg, const DatasetSplit& data,
                            const Checkpoint& base, int k, uint64_t seed) {
    const ClassVocabulary& vocab = data.vocabulary;
    if (base.config.num_base != vocab.num_base() || base.config.num_novel != vocab.num_novel())
        throw ConfigError("base checkpoint class counts do not match the dataset");

    FinetuneResult result;
    result.k = k;
    result.seed = seed;
    result.policy = cfg.policy;
    AuditedSplit split(data, result.audit);

    result.checkpoint = base;
    branch_surgery(result.checkpoint.params, result.checkpoint.config, seed);
    apply_freeze_policy(result.checkpoint.params, cfg.policy);

    std::map<std::string, Tensor> frozen;
    for (const auto& name : result.checkpoint.params.names())
        if (!result.checkpoint.params.trainable(name))
            frozen.emplace(name, result.checkpoint.params.at(name));

    // support sampling reads the novel pool through the audited layer
    std::vector<AnnotatedImage> pool;
    pool.reserve(split.novel_pool_size());
    for (size_t i = 0; i < split.novel_pool_size(); ++i) pool.push_back(split.novel_pool(i));
    SupportSet support = sample_support_set(pool, k, derive_seed(seed, "support"), vocab);
    result.support_images = static_cast<int>(support.items.size());

    TrainConfig tcfg = cfg.finetune;
    tcfg.seed = seed;
    TrainerState opt;
    const size_t n = support.items.size();
    for (int step = 0; step < tcfg.steps; ++step) {
        Rng rng(derive_seed(seed, "ft.batch", static_cast<uint64_t>(step)));
        std::vector<const AnnotatedImage*> batch;
        batch.reserve(static_cast<size_t>(tcfg.batch_size));
        for (int b = 0; b < tcfg.batch_size; ++b)
            batch.push_back(&support.items[rng.uniform_int(static_cast<uint64_t>(n))]);
        double loss = finetune_step(batch, result.checkpoint.params, opt, tcfg,
                                    result.checkpoint.config, vocab, step);
        result.loss_log.push_back(loss);
    }
    result.checkpoint.step = tcfg.steps;
    result.checkpoint.seed = seed;

    for (const auto& [name, before] : frozen)
        if (!result.checkpoint.params.at(name).bit_equal(before))
            result.freeze_violations.push_back(name);

    std::vector<AnnotatedImage> test;
    test.reserve(split.test_size());
    for (size_t i = 0; i < split.test_size(); ++i) test.push_back(split.test(i));
    result.report = run_eval(result.checkpoint, test, vocab, cfg.novel_only_eval);
    result.report.seeds = {seed};
    return result;
}

bool audit_ok(const FinetuneResult& result) {
    return result.audit.base_train_reads == 0 && result.freeze_violations.empty();
}

std::string audit_to_json(const FinetuneResult& result) {
    json j;
    j["k"] = result.k;
    j["seed"] = result.seed;
    j["policy"] = freeze_policy_name(result.policy);
    j["support_images"] = result.support_images;
    j["reads"] = {{"base_train", result.audit.base_train_reads},
                  {"novel_pool", result.audit.novel_pool_reads},
                  {"test", result.audit.test_reads}};
    j["freeze_violations"] = result.freeze_violations;
    j["ok"] = audit_ok(result);
    return j.dump(2);
}

// ---- ablation ----

std::vector<AblationRow> default_ablation_rows() {
    std::vector<AblationRow> rows;
    for (FreezePolicy p : {FreezePolicy::kNone, FreezePolicy::kFc2, FreezePolicy::kFc1Fc2})
        for (ClassifierMode c : {ClassifierMode::kLinear, ClassifierMode::kCosine})
            rows.push_back({p, RegressorMode::kAgnostic, c});
    for (ClassifierMode c : {ClassifierMode::kLinear, ClassifierMode::kCosine})
        rows.push_back({FreezePolicy::kFc2, RegressorMode::kSpecific, c});
    return rows;
}

AblationResult run_ablation(
    const ExperimentConfig& cfg, const DatasetSplit& data, const std::vector<AblationRow>& rows,
    const std::function<const Checkpoint*(RegressorMode, ClassifierMode)>& base_lookup) {
    if (rows.empty()) throw ConfigError("ablation row list is empty");
    AblationResult out;
    out.rows = rows;
    out.shots = cfg.shots;
    out.seeds = cfg.seeds;

    for (const AblationRow& row : rows) {
        const Checkpoint* base = base_lookup(row.regressor, row.classifier);
        if (base == nullptr)
            throw ConfigError(std::string("ablation requires a base checkpoint trained with "
                                          "regressor=") +
                              regressor_mode_name(row.regressor) +
                              " classifier=" + classifier_mode_name(row.classifier));
        if (base->config.regressor != row.regressor || base->config.classifier != row.classifier)
            throw ConfigError("supplied base checkpoint does not match the requested "
                              "regressor/classifier pair");
        ExperimentConfig row_cfg = cfg;
        row_cfg.policy = row.policy;
        for (int k : cfg.shots) {
            AblationCell cell;
            cell.row = row;
            cell.k = k;
            double sum = 0.0;
            for (uint64_t seed : cfg.seeds) {
                FinetuneResult ft = run_finetune(row_cfg, data, *base, k, seed);
                double nap = ft.report.nap.value_or(0.0);
                cell.nap_per_seed.push_back(nap);
                sum += nap;
            }
            cell.mean_nap = sum / static_cast<double>(cell.nap_per_seed.size());
            out.cells.push_back(std::move(cell));
        }
    }

    // directional check: at the largest K, unfreezing fc2 should not hurt
    // novel AP relative to training the classifier alone (agnostic + linear)
    out.directional_k = *std::max_element(cfg.shots.begin(), cfg.shots.end());
    const AblationCell* cell_none = nullptr;
    const AblationCell* cell_fc2 = nullptr;
    for (const auto& cell : out.cells) {
        if (cell.k != out.directional_k || cell.row.regressor != RegressorMode::kAgnostic ||
            cell.row.classifier != ClassifierMode::kLinear)
            continue;
        if (cell.row.policy == FreezePolicy::kNone) cell_none = &cell;
        if (cell.row.policy == FreezePolicy::kFc2) cell_fc2 = &cell;
    }
    if (cell_none == nullptr || cell_fc2 == nullptr) {
        out.directional_status = "n/a";
        return out;
    }
    out.mean_nap_none = cell_none->mean_nap;
    out.mean_nap_fc2 = cell_fc2->mean_nap;
    const size_t ns = cfg.seeds.size();
    std::vector<double> diffs(ns);
    for (size_t i = 0; i < ns; ++i)
        diffs[i] = cell_fc2->nap_per_seed[i] - cell_none->nap_per_seed[i];
    double mean_d = 0.0;
    for (double d : diffs) mean_d += d;
    mean_d /= static_cast<double>(ns);
    double var = 0.0;
    if (ns > 1) {
        for (double d : diffs) var += (d - mean_d) * (d - mean_d);
        var /= static_cast<double>(ns - 1);
    }
    out.diff_stderr = std::sqrt(var / static_cast<double>(ns));
    if (mean_d >= 0.0)
        out.directional_status = "pass";
    else if (-mean_d <= out.diff_stderr)
        out.directional_status = "flag";
    else
        out.directional_status = "fail";
    return out;
}

std::string ablation_to_json(const AblationResult& r) {
    json cells = json::array();
    for (const auto& cell : r.cells) {
        cells.push_back({{"policy", freeze_policy_name(cell.row.policy)},
                         {"regressor", regressor_mode_name(cell.row.regressor)},
                         {"classifier", classifier_mode_name(cell.row.classifier)},
                         {"k", cell.k},
                         {"nap_per_seed", cell.nap_per_seed},
                         {"mean_nap", cell.mean_nap}});
    }
    json j;
    j["shots"] = r.shots;
    j["seeds"] = r.seeds;
    j["cells"] = std::move(cells);
    j["directional"] = {{"k", r.directional_k},
                        {"mean_nap_fc2", r.mean_nap_fc2},
                        {"mean_nap_none", r.mean_nap_none},
                        {"diff_stderr", r.diff_stderr},
                        {"status", r.directional_status}};
    return j.dump(2);
}

}  // namespace incdet
