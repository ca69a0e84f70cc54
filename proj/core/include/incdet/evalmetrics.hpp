#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "incdet/inference.hpp"
#include "incdet/synthdata.hpp"
#include "incdet/vocab.hpp"

namespace incdet {

// COCO-style evaluation summary. AP values are stored in [0,1]; reports
// multiply by 100 for display.
struct EvalReport {
    int schema_version = 1;
    std::string eval_mode = "joint";  // "joint" | "novel_only"
    std::vector<std::string> base_class_names;
    std::vector<std::string> novel_class_names;

    // Classes with zero ground truth and zero detections are absent.
    std::map<std::string, double> per_class_ap;    // mean over IoU 0.50:0.05:0.95
    std::map<std::string, double> per_class_ap50;  // IoU 0.5 only

    std::optional<double> bap, nap, hap;
    std::optional<double> bap50, nap50, hap50;
    std::map<std::string, double> group_aps;    // named partitions, empty groups absent
    std::map<std::string, double> group_aps50;

    std::vector<uint64_t> seeds;
    // multi-seed aggregation keeps both conventions; hap/hap50 above hold the
    // harmonic mean of the seed-mean bAP/nAP
    std::optional<double> hap_mean_of_seeds, hap50_mean_of_seeds;
};

struct EvalOptions {
    bool novel_only = false;
    // extra named partitions: name -> member class names
    std::map<std::string, std::vector<std::string>> extra_groups;
};

// Greedy matcher for one class in one image. Detections must arrive sorted by
// descending score; each matches the highest-IoU not-yet-matched GT when that
// IoU reaches the threshold (TP, label 1) else counts as FP (label 0).
std::vector<int> match_detections(const std::vector<Box>& detections_sorted,
                                  const std::vector<Box>& ground_truths, double iou_threshold);

// 101-point interpolated AP (recall grid 0.00:0.01:1.00) from TP/FP labels in
// score order. num_gt == 0 yields 0 (callers exclude GT-less classes that also
// have no detections).
double average_precision(const std::vector<int>& tp_labels, int num_gt);

// Exact area under the precision envelope, used as a cross-check oracle.
double average_precision_exact(const std::vector<int>& tp_labels, int num_gt);

double harmonic_ap(double b, double n);  // 2bn/(b+n), 0 if either is 0

// Mean member AP per named group; groups with no member present are absent.
std::map<std::string, double> group_report(const std::map<std::string, double>& per_class_ap,
                                           const std::map<std::string, std::vector<std::string>>& partition);

EvalReport evaluate_detections(const std::vector<AnnotatedImage>& images,
                               const std::vector<std::vector<Detection>>& detections_per_image,
                               const ClassVocabulary& vocab, const EvalOptions& opts = {});

// Arithmetic mean of every AP field across seeds; hAP recomputed from the
// mean bAP/nAP, with the mean-of-per-seed-hAPs kept alongside.
EvalReport multi_seed_mean(const std::vector<EvalReport>& reports);

std::string eval_report_to_json(const EvalReport& r);
EvalReport eval_report_from_json_text(const std::string& text);
void save_eval_report(const EvalReport& r, const std::string& path);
EvalReport load_eval_report(const std::string& path);

}  // namespace incdet
