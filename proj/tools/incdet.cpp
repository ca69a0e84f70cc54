// Command-line front end for the incremental few-shot detection laboratory:
// dataset synthesis, base training, branch surgery, fine-tuning, evaluation,
// the ablation grid, rendering, plots, and the data-access audit.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "incdet/errors.hpp"
#include "incdet/experiment.hpp"
#include "incdet/render.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace incdet;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitAuditFailed = 4;
constexpr int kExitDirectionalFail = 5;

ExperimentConfig load_cfg(const std::string& path) {
    if (path.empty()) {
        ExperimentConfig cfg;
        cfg.validate();
        return cfg;
    }
    return load_experiment_config(path);
}

std::string base_dir_for(const ExperimentConfig& cfg, const DetectorConfig& dcfg) {
    return output_root(cfg) + "/" + cfg.name + "/base/" +
           std::string(regressor_mode_name(dcfg.regressor)) + "_" +
           classifier_mode_name(dcfg.classifier);
}

void ensure_dir(const std::string& dir) { fs::create_directories(dir); }

void write_manifest(const std::string& dir, const std::string& kind, const DetectorConfig& dcfg,
                    const ExperimentConfig& cfg, const std::map<std::string, std::string>& artifacts,
                    const json& extra = json::object()) {
    json j;
    j["kind"] = kind;
    j["experiment"] = cfg.name;
    j["config_digest"] = config_digest(dcfg);
    json arts = json::object();
    for (const auto& [k, v] : artifacts) arts[k] = v;
    j["artifacts"] = std::move(arts);
    for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
    write_text_file(j.dump(2) + "\n", dir + "/manifest.json");
}

void write_base_log(const std::vector<LossBreakdown>& log, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    for (size_t i = 0; i < log.size(); ++i) {
        json j{{"step", i},
               {"rpn", log[i].rpn},
               {"cls", log[i].cls},
               {"loc", log[i].loc},
               {"total", log[i].total()}};
        f << j.dump() << "\n";
    }
}

std::vector<LossBreakdown> read_base_log(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    std::vector<LossBreakdown> log;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        log.push_back({j.value("rpn", 0.0), j.value("cls", 0.0), j.value("loc", 0.0)});
    }
    return log;
}

void write_finetune_log(const std::vector<double>& losses, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    for (size_t i = 0; i < losses.size(); ++i) {
        json j{{"step", i}, {"cls", losses[i]}};
        f << j.dump() << "\n";
    }
}

std::vector<double> read_finetune_log(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    std::vector<double> losses;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        losses.push_back(j.value("cls", 0.0));
    }
    return losses;
}

void print_report_summary(const EvalReport& r) {
    auto pct = [](const std::optional<double>& v) {
        return v ? std::to_string(*v * 100.0).substr(0, 5) : std::string("--");
    };
    std::cout << "  mode=" << r.eval_mode << "  bAP=" << pct(r.bap) << "  nAP=" << pct(r.nap)
              << "  hAP=" << pct(r.hap) << "  bAP50=" << pct(r.bap50)
              << "  nAP50=" << pct(r.nap50) << "  hAP50=" << pct(r.hap50) << "\n";
}

const std::vector<AnnotatedImage>& pick_split(const DatasetSplit& data, const std::string& name) {
    if (name == "test") return data.test;
    if (name == "base_train") return data.base_train;
    if (name == "novel_pool") return data.novel_pool;
    throw ConfigError("unknown split '" + name + "'");
}

void save_finetune_run(const std::string& dir, const ExperimentConfig& cfg,
                       const FinetuneResult& ft) {
    ensure_dir(dir);
    save_checkpoint(ft.checkpoint, dir + "/checkpoint.bin");
    write_finetune_log(ft.loss_log, dir + "/loss.jsonl");
    save_eval_report(ft.report, dir + "/report.json");
    write_text_file(audit_to_json(ft) + "\n", dir + "/audit.json");
    write_text_file(plot_finetune_loss_svg(ft.loss_log), dir + "/finetune_loss.svg");
    write_manifest(dir, "finetune", ft.checkpoint.config, cfg,
                   {{"checkpoint", "checkpoint.bin"},
                    {"loss_log", "loss.jsonl"},
                    {"report", "report.json"},
                    {"audit", "audit.json"}},
                   json{{"k", ft.k},
                        {"seed", ft.seed},
                        {"policy", freeze_policy_name(ft.policy)},
                        {"ok", audit_ok(ft)}});
}

int train_base_into(const ExperimentConfig& cfg, const DatasetSplit& data, const std::string& dir) {
    ensure_dir(dir);
    BaseTrainResult result = run_base_training(cfg, data, [](int step, const LossBreakdown& lb) {
        if (step % 100 == 0)
            std::printf("  step %4d  rpn %.4f  cls %.4f  loc %.4f\n", step, lb.rpn, lb.cls,
                        lb.loc);
    });
    save_checkpoint(result.checkpoint, dir + "/checkpoint.bin");
    write_base_log(result.log, dir + "/train_log.jsonl");
    write_text_file(plot_loss_curves_svg(result.log), dir + "/loss_curves.svg");
    std::map<std::string, std::string> artifacts = {{"checkpoint", "checkpoint.bin"},
                                                    {"train_log", "train_log.jsonl"}};
    if (!result.diverged) {
        save_eval_report(result.base_eval, dir + "/base_eval.json");
        artifacts["eval"] = "base_eval.json";
    }
    write_manifest(dir, "base_train", result.checkpoint.config, cfg, artifacts,
                   json{{"diverged", result.diverged}});
    std::cout << "base checkpoint: " << dir << "/checkpoint.bin (" << result.checkpoint.step
              << " steps)\n";
    if (result.diverged) {
        std::cerr << "training diverged (non-finite " << result.diverged_component
                  << "); checkpoint holds the last finite parameters and the "
                     "evaluation was skipped\n";
        return kExitDiverged;
    }
    print_report_summary(result.base_eval);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale incremental few-shot object detection laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_override;
    std::string checkpoint_path;
    std::string base_ckpt_path;
    std::string split_name = "test";
    std::string policy_override;
    std::string run_dir;
    uint64_t seed = 1;
    int k_shots = 10;
    int image_index = 0;
    double threshold = 0.5;
    bool novel_only = false;
    bool train_missing = false;
    int render_count = 0;

    auto* dataset_cmd = app.add_subcommand("dataset", "synthetic dataset commands");
    auto* dataset_build = dataset_cmd->add_subcommand("build", "build the three splits and write annotations");
    dataset_build->add_option("--config", config_path, "experiment config (JSON)");
    dataset_build->add_option("--out", out_override, "output directory override");
    dataset_build->add_option("--render", render_count, "also render the first N test images");

    auto* train_cmd = app.add_subcommand("train", "training commands");
    auto* train_base = train_cmd->add_subcommand("base", "train the base detector on base classes");
    train_base->add_option("--config", config_path, "experiment config (JSON)");
    train_base->add_option("--out", out_override, "output directory override");

    auto* surgery_cmd = app.add_subcommand("surgery", "duplicate the RoI head into a novel branch");
    surgery_cmd->add_option("--checkpoint", checkpoint_path, "base checkpoint")->required();
    surgery_cmd->add_option("--seed", seed, "novel classifier init seed");
    surgery_cmd->add_option("--out", out_override, "output checkpoint path")->required();

    auto* finetune_cmd = app.add_subcommand("finetune", "K-shot fine-tune from a base checkpoint");
    finetune_cmd->add_option("--config", config_path, "experiment config (JSON)");
    finetune_cmd->add_option("--base", base_ckpt_path, "base checkpoint path (defaults to the layout location)");
    finetune_cmd->add_option("--k", k_shots, "shots per novel class");
    finetune_cmd->add_option("--seed", seed, "run seed");
    finetune_cmd->add_option("--policy", policy_override, "freeze policy: none|fc2|fc1_fc2");
    finetune_cmd->add_option("--out", out_override, "output directory override");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    eval_cmd->add_option("--config", config_path, "experiment config (JSON)");
    eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint to evaluate")->required();
    eval_cmd->add_option("--split", split_name, "test|base_train|novel_pool");
    eval_cmd->add_flag("--novel-only", novel_only, "restrict to novel-class ground truth");
    eval_cmd->add_option("--out", out_override, "report output path");

    auto* ablate_cmd = app.add_subcommand("ablate", "run the freeze/classifier/regressor grid");
    ablate_cmd->add_option("--config", config_path, "experiment config (JSON)");
    ablate_cmd->add_flag("--train-missing", train_missing,
                         "train base checkpoints the grid needs instead of erroring");
    ablate_cmd->add_option("--out", out_override, "output directory override");

    auto* render_cmd = app.add_subcommand("render", "render detections for one image");
    render_cmd->add_option("--config", config_path, "experiment config (JSON)");
    render_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint")->required();
    render_cmd->add_option("--split", split_name, "test|base_train|novel_pool");
    render_cmd->add_option("--index", image_index, "image index within the split");
    render_cmd->add_option("--threshold", threshold, "score threshold for drawing");
    render_cmd->add_option("--out", out_override, "output PNG path")->required();

    auto* plot_cmd = app.add_subcommand("plot", "regenerate plots from logged artifacts");
    plot_cmd->add_option("--run-dir", run_dir, "base-training or fine-tune run directory")->required();

    auto* audit_cmd = app.add_subcommand("audit", "check audit records under a directory");
    audit_cmd->add_option("--dir", run_dir, "directory to scan for audit.json files")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (dataset_build->parsed()) {
            ExperimentConfig cfg = load_cfg(config_path);
            DatasetSplit data = build_dataset(cfg.dataset);
            std::string dir = out_override.empty()
                                  ? output_root(cfg) + "/" + cfg.name + "/dataset"
                                  : out_override;
            ensure_dir(dir);
            write_coco_annotations(data.base_train, data.vocabulary, dir + "/base_train.json");
            write_coco_annotations(data.novel_pool, data.vocabulary, dir + "/novel_pool.json");
            write_coco_annotations(data.test, data.vocabulary, dir + "/test.json");
            save_dataset_config(cfg.dataset, dir + "/dataset_config.json");
            for (int i = 0; i < render_count && i < static_cast<int>(data.test.size()); ++i)
                render_detections(data.test[static_cast<size_t>(i)], {}, data.vocabulary,
                                  dir + "/test_" + std::to_string(i) + ".png");
            std::cout << "dataset: " << data.base_train.size() << " base_train, "
                      << data.novel_pool.size() << " novel_pool, " << data.test.size()
                      << " test -> " << dir << "\n";
            return 0;
        }

        if (train_base->parsed()) {
            ExperimentConfig cfg = load_cfg(config_path);
            DatasetSplit data = build_dataset(cfg.dataset);
            DetectorConfig dcfg = effective_detector(cfg);
            std::string dir = out_override.empty() ? base_dir_for(cfg, dcfg) : out_override;
            return train_base_into(cfg, data, dir);
        }

        if (surgery_cmd->parsed()) {
            Checkpoint ckpt = load_checkpoint(checkpoint_path);
            branch_surgery(ckpt.params, ckpt.config, seed);
            ckpt.seed = seed;
            save_checkpoint(ckpt, out_override);
            std::cout << "branched checkpoint -> " << out_override << "\n";
            return 0;
        }

        if (finetune_cmd->parsed()) {
            ExperimentConfig cfg = load_cfg(config_path);
            if (!policy_override.empty()) cfg.policy = parse_freeze_policy(policy_override);
            DatasetSplit data = build_dataset(cfg.dataset);
            DetectorConfig dcfg = effective_detector(cfg);
            std::string base_path = base_ckpt_path.empty()
                                        ? base_dir_for(cfg, dcfg) + "/checkpoint.bin"
                                        : base_ckpt_path;
            if (!fs::exists(base_path))
                throw ConfigError("base checkpoint not found at " + base_path +
                                  " (run `incdet train base` first)");
            Checkpoint base = load_checkpoint(base_path);
            FinetuneResult ft = run_finetune(cfg, data, base, k_shots, seed);
            std::string dir = out_override.empty()
                                  ? output_root(cfg) + "/" + cfg.name + "/finetune/" +
                                        run_dir_name(k_shots, seed, cfg.policy)
                                  : out_override;
            save_finetune_run(dir, cfg, ft);
            std::cout << "fine-tuned k=" << k_shots << " seed=" << seed << " policy="
                      << freeze_policy_name(cfg.policy) << " -> " << dir << "\n";
            print_report_summary(ft.report);
            if (!audit_ok(ft)) {
                std::cerr << "AUDIT FAILED: see " << dir << "/audit.json\n";
                return kExitAuditFailed;
            }
            return 0;
        }

        if (eval_cmd->parsed()) {
            ExperimentConfig cfg = load_cfg(config_path);
            DatasetSplit data = build_dataset(cfg.dataset);
            Checkpoint ckpt = load_checkpoint(checkpoint_path);
            EvalReport report =
                run_eval(ckpt, pick_split(data, split_name), data.vocabulary, novel_only);
            if (!out_override.empty()) save_eval_report(report, out_override);
            print_report_summary(report);
            return 0;
        }

        if (ablate_cmd->parsed()) {
            ExperimentConfig cfg = load_cfg(config_path);
            DatasetSplit data = build_dataset(cfg.dataset);
            std::vector<AblationRow> rows = default_ablation_rows();
            std::map<std::string, Checkpoint> bases;
            for (const AblationRow& row : rows) {
                ExperimentConfig row_cfg = cfg;
                row_cfg.detector.regressor = row.regressor;
                row_cfg.detector.classifier = row.classifier;
                DetectorConfig dcfg = effective_detector(row_cfg);
                std::string dir = base_dir_for(row_cfg, dcfg);
                std::string key = std::string(regressor_mode_name(row.regressor)) + "_" +
                                  classifier_mode_name(row.classifier);
                if (bases.count(key)) continue;
                std::string path = dir + "/checkpoint.bin";
                if (!fs::exists(path)) {
                    if (!train_missing)
                        throw ConfigError("ablation row needs base checkpoint " + path +
                                          "; train it first or pass --train-missing");
                    std::cout << "training missing base checkpoint " << key << "\n";
                    int rc = train_base_into(row_cfg, data, dir);
                    if (rc != 0) return rc;
                }
                bases.emplace(key, load_checkpoint(path));
            }
            AblationResult table = run_ablation(
                cfg, data, rows, [&](RegressorMode r, ClassifierMode c) -> const Checkpoint* {
                    auto it = bases.find(std::string(regressor_mode_name(r)) + "_" +
                                         classifier_mode_name(c));
                    return it == bases.end() ? nullptr : &it->second;
                });
            std::string dir = out_override.empty()
                                  ? output_root(cfg) + "/" + cfg.name + "/ablation"
                                  : out_override;
            ensure_dir(dir);
            write_text_file(ablation_to_json(table) + "\n", dir + "/table.json");
            write_text_file(plot_ablation_table_svg(table), dir + "/table.svg");
            std::cout << "ablation table -> " << dir << "/table.json\n";
            std::cout << "fc2 vs none at K=" << table.directional_k << ": "
                      << table.directional_status << " (fc2 " << table.mean_nap_fc2 * 100
                      << " vs none " << table.mean_nap_none * 100 << ", se "
                      << table.diff_stderr * 100 << ")\n";
            return table.directional_status == "fail" ? kExitDirectionalFail : 0;
        }

        if (render_cmd->parsed()) {
            ExperimentConfig cfg = load_cfg(config_path);
            DatasetSplit data = build_dataset(cfg.dataset);
            const auto& split = pick_split(data, split_name);
            if (image_index < 0 || image_index >= static_cast<int>(split.size()))
                throw ConfigError("image index " + std::to_string(image_index) +
                                  " outside split of size " + std::to_string(split.size()));
            Checkpoint ckpt = load_checkpoint(checkpoint_path);
            const AnnotatedImage& img = split[static_cast<size_t>(image_index)];
            std::vector<Detection> dets = detect(img, ckpt, data.vocabulary);
            render_detections(img, dets, data.vocabulary, out_override, threshold);
            std::cout << dets.size() << " detections -> " << out_override << "\n";
            return 0;
        }

        if (plot_cmd->parsed()) {
            int made = 0;
            if (fs::exists(run_dir + "/train_log.jsonl")) {
                write_text_file(plot_loss_curves_svg(read_base_log(run_dir + "/train_log.jsonl")),
                                run_dir + "/loss_curves.svg");
                ++made;
            }
            if (fs::exists(run_dir + "/loss.jsonl")) {
                write_text_file(plot_finetune_loss_svg(read_finetune_log(run_dir + "/loss.jsonl")),
                                run_dir + "/finetune_loss.svg");
                ++made;
            }
            if (fs::exists(run_dir + "/report.json")) {
                EvalReport r = load_eval_report(run_dir + "/report.json");
                std::vector<std::pair<int, EvalReport>> by_k = {{0, r}};
                // the manifest records K when this is a fine-tune run
                if (fs::exists(run_dir + "/manifest.json")) {
                    std::ifstream mf(run_dir + "/manifest.json");
                    json m = json::parse(mf, nullptr, false);
                    if (!m.is_discarded() && m.contains("k")) by_k[0].first = m["k"].get<int>();
                }
                write_text_file(plot_ap_vs_k_svg(by_k), run_dir + "/ap.svg");
                ++made;
            }
            if (made == 0) {
                std::cerr << "no plottable artifacts under " << run_dir << "\n";
                return kExitUsage;
            }
            std::cout << made << " plot(s) regenerated under " << run_dir << "\n";
            return 0;
        }

        if (audit_cmd->parsed()) {
            int checked = 0, failed = 0;
            for (const auto& entry : fs::recursive_directory_iterator(run_dir)) {
                if (!entry.is_regular_file() || entry.path().filename() != "audit.json") continue;
                std::ifstream f(entry.path());
                json j = json::parse(f, nullptr, false);
                ++checked;
                bool ok = !j.is_discarded() && j.value("ok", false);
                if (!ok) {
                    ++failed;
                    std::cerr << "audit violation: " << entry.path().string() << "\n";
                }
            }
            std::cout << checked << " audit record(s), " << failed << " violation(s)\n";
            return failed == 0 ? 0 : kExitAuditFailed;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitUsage;
}
