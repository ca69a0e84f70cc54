#include "incdet/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace incdet {

std::vector<int> match_detections(const std::vector<Box>& detections_sorted,
                                  const std::vector<Box>& ground_truths, double iou_threshold) {
    std::vector<int> labels(detections_sorted.size(), 0);
    std::vector<bool> taken(ground_truths.size(), false);
    for (size_t d = 0; d < detections_sorted.size(); ++d) {
        double best = 0.0;
        int best_g = -1;
        for (size_t g = 0; g < ground_truths.size(); ++g) {
            if (taken[g]) continue;
            double v = iou(detections_sorted[d], ground_truths[g]);
            if (v > best) {
                best = v;
                best_g = static_cast<int>(g);
            }
        }
        if (best_g >= 0 && best >= iou_threshold) {
            labels[d] = 1;
            taken[static_cast<size_t>(best_g)] = true;
        }
    }
    return labels;
}

namespace {
// precision/recall points after each detection, envelope from the right
struct PrCurve {
    std::vector<double> recall, envelope;
};

PrCurve pr_envelope(const std::vector<int>& tp_labels, int num_gt) {
    PrCurve c;
    c.recall.reserve(tp_labels.size());
    c.envelope.reserve(tp_labels.size());
    int tp = 0;
    for (size_t i = 0; i < tp_labels.size(); ++i) {
        tp += tp_labels[i];
        c.recall.push_back(static_cast<double>(tp) / num_gt);
        c.envelope.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    }
    for (int i = static_cast<int>(c.envelope.size()) - 2; i >= 0; --i)
        c.envelope[static_cast<size_t>(i)] =
            std::max(c.envelope[static_cast<size_t>(i)], c.envelope[static_cast<size_t>(i + 1)]);
    return c;
}
}  // namespace

double average_precision(const std::vector<int>& tp_labels, int num_gt) {
    if (num_gt <= 0) return 0.0;
    if (tp_labels.empty()) return 0.0;
    PrCurve c = pr_envelope(tp_labels, num_gt);
    double total = 0.0;
    for (int k = 0; k <= 100; ++k) {
        double r = k / 100.0;
        // first curve point with recall >= r
        auto it = std::lower_bound(c.recall.begin(), c.recall.end(), r);
        if (it != c.recall.end())
            total += c.envelope[static_cast<size_t>(it - c.recall.begin())];
    }
    return total / 101.0;
}

double average_precision_exact(const std::vector<int>& tp_labels, int num_gt) {
    if (num_gt <= 0 || tp_labels.empty()) return 0.0;
    PrCurve c = pr_envelope(tp_labels, num_gt);
    // integrate the step function: sum over recall increments
    double total = 0.0, prev_r = 0.0;
    for (size_t i = 0; i < c.recall.size(); ++i) {
        if (c.recall[i] > prev_r) {
            total += (c.recall[i] - prev_r) * c.envelope[i];
            prev_r = c.recall[i];
        }
    }
    return total;
}

double harmonic_ap(double b, double n) {
    if (b <= 0.0 || n <= 0.0) return 0.0;
    return 2.0 * b * n / (b + n);
}

std::map<std::string, double> group_report(const std::map<std::string, double>& per_class_ap,
                                           const std::map<std::string, std::vector<std::string>>& partition) {
    std::map<std::string, double> out;
    for (const auto& [name, members] : partition) {
        double sum = 0.0;
        int n = 0;
        for (const std::string& cls : members) {
            auto it = per_class_ap.find(cls);
            if (it == per_class_ap.end()) continue;
            sum += it->second;
            ++n;
        }
        if (n > 0) out[name] = sum / n;  // member-less groups stay absent
    }
    return out;
}

namespace {
constexpr double kIouGrid[] = {0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95};

struct ClassEval {
    bool present = false;  // any GT or any detection
    double ap = 0.0;       // mean over the IoU grid
    double ap50 = 0.0;
};

ClassEval eval_one_class(const std::vector<AnnotatedImage>& images,
                         const std::vector<std::vector<Detection>>& dets_per_image,
                         int class_index) {
    struct Det {
        double score;
        int image;
        Box box;
    };
    std::vector<Det> dets;
    std::vector<std::vector<Box>> gts(images.size());
    int num_gt = 0;
    for (size_t i = 0; i < images.size(); ++i) {
        for (const Instance& inst : images[i].instances) {
            if (inst.class_index != class_index) continue;
            gts[i].push_back(inst.box);
            ++num_gt;
        }
        for (const Detection& d : dets_per_image[i]) {
            if (d.class_index != class_index) continue;
            dets.push_back({d.score, static_cast<int>(i), d.box});
        }
    }

    ClassEval out;
    if (num_gt == 0 && dets.empty()) return out;  // excluded from means
    out.present = true;
    if (dets.empty() || num_gt == 0) return out;  // AP 0

    std::sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.image != b.image) return a.image < b.image;
        return box_less(a.box, b.box);
    });

    double ap_sum = 0.0;
    for (double thr : kIouGrid) {
        // greedy matching per image, consumed in global score order
        std::vector<std::vector<bool>> taken(images.size());
        for (size_t i = 0; i < images.size(); ++i) taken[i].assign(gts[i].size(), false);
        std::vector<int> labels(dets.size(), 0);
        for (size_t d = 0; d < dets.size(); ++d) {
            const auto& g = gts[static_cast<size_t>(dets[d].image)];
            auto& tk = taken[static_cast<size_t>(dets[d].image)];
            double best = 0.0;
            int best_g = -1;
            for (size_t j = 0; j < g.size(); ++j) {
                if (tk[j]) continue;
                double v = iou(dets[d].box, g[j]);
                if (v > best) {
                    best = v;
                    best_g = static_cast<int>(j);
                }
            }
            if (best_g >= 0 && best >= thr) {
                labels[d] = 1;
                tk[static_cast<size_t>(best_g)] = true;
            }
        }
        double ap = average_precision(labels, num_gt);
        ap_sum += ap;
        if (thr == 0.50) out.ap50 = ap;
    }
    out.ap = ap_sum / (sizeof(kIouGrid) / sizeof(kIouGrid[0]));
    return out;
}
}  // namespace

EvalReport evaluate_detections(const std::vector<AnnotatedImage>& images,
                               const std::vector<std::vector<Detection>>& detections_per_image,
                               const ClassVocabulary& vocab, const EvalOptions& opts) {
    if (images.size() != detections_per_image.size())
        throw ShapeError("evaluate_detections: image/detection list mismatch");

    for (size_t i = 0; i < images.size(); ++i) {
        for (const Instance& inst : images[i].instances)
            if (!vocab.is_annotatable(inst.class_index))
                throw DataContractError("ground truth carries a non-class index " +
                                        std::to_string(inst.class_index));
        for (const Detection& d : detections_per_image[i])
            if (!vocab.is_annotatable(d.class_index))
                throw DataContractError("detection carries a non-class index " +
                                        std::to_string(d.class_index));
    }

    EvalReport r;
    r.eval_mode = opts.novel_only ? "novel_only" : "joint";
    r.base_class_names = vocab.base_classes();
    r.novel_class_names = vocab.novel_classes();

    std::vector<int> class_indices;
    if (!opts.novel_only)
        for (int c : vocab.base_indices()) class_indices.push_back(c);
    for (int c : vocab.novel_indices()) class_indices.push_back(c);

    // novel-only mode restricts ground truth to novel classes as well
    std::vector<AnnotatedImage> filtered;
    const std::vector<AnnotatedImage>* imgs = &images;
    if (opts.novel_only) {
        filtered = images;
        for (AnnotatedImage& img : filtered) {
            std::vector<Instance> keep;
            for (const Instance& inst : img.instances)
                if (vocab.is_novel(inst.class_index)) keep.push_back(inst);
            img.instances = std::move(keep);
        }
        imgs = &filtered;
    }

    for (int c : class_indices) {
        ClassEval ce = eval_one_class(*imgs, detections_per_image, c);
        if (!ce.present) continue;
        r.per_class_ap[vocab.name_of(c)] = ce.ap;
        r.per_class_ap50[vocab.name_of(c)] = ce.ap50;
    }

    std::map<std::string, std::vector<std::string>> partition;
    if (!opts.novel_only) partition["base"] = vocab.base_classes();
    partition["novel"] = vocab.novel_classes();
    for (const auto& [name, members] : opts.extra_groups) partition[name] = members;

    r.group_aps = group_report(r.per_class_ap, partition);
    r.group_aps50 = group_report(r.per_class_ap50, partition);

    auto pick = [](const std::map<std::string, double>& m, const char* k) -> std::optional<double> {
        auto it = m.find(k);
        if (it == m.end()) return std::nullopt;
        return it->second;
    };
    r.bap = pick(r.group_aps, "base");
    r.nap = pick(r.group_aps, "novel");
    r.bap50 = pick(r.group_aps50, "base");
    r.nap50 = pick(r.group_aps50, "novel");
    if (r.bap && r.nap) r.hap = harmonic_ap(*r.bap, *r.nap);
    if (r.bap50 && r.nap50) r.hap50 = harmonic_ap(*r.bap50, *r.nap50);
    return r;
}

EvalReport multi_seed_mean(const std::vector<EvalReport>& reports) {
    if (reports.empty()) throw ConfigError("multi-seed mean of zero reports");
    const EvalReport& first = reports.front();
    for (const EvalReport& r : reports) {
        if (r.base_class_names != first.base_class_names ||
            r.novel_class_names != first.novel_class_names)
            throw DataContractError("cannot aggregate reports over different vocabularies");
        if (r.eval_mode != first.eval_mode)
            throw DataContractError("cannot aggregate reports with different eval modes");
    }

    EvalReport out;
    out.eval_mode = first.eval_mode;
    out.base_class_names = first.base_class_names;
    out.novel_class_names = first.novel_class_names;

    auto mean_maps = [&](auto field) {
        std::map<std::string, double> acc;
        std::map<std::string, int> cnt;
        for (const EvalReport& r : reports) {
            for (const auto& [k, v] : r.*field) {
                acc[k] += v;
                ++cnt[k];
            }
        }
        for (auto& [k, v] : acc) v /= cnt[k];
        return acc;
    };
    out.per_class_ap = mean_maps(&EvalReport::per_class_ap);
    out.per_class_ap50 = mean_maps(&EvalReport::per_class_ap50);
    out.group_aps = mean_maps(&EvalReport::group_aps);
    out.group_aps50 = mean_maps(&EvalReport::group_aps50);

    auto mean_opt = [&](auto field) -> std::optional<double> {
        double acc = 0.0;
        int n = 0;
        for (const EvalReport& r : reports) {
            if (r.*field) {
                acc += *(r.*field);
                ++n;
            }
        }
        if (n == 0) return std::nullopt;
        return acc / n;
    };
    out.bap = mean_opt(&EvalReport::bap);
    out.nap = mean_opt(&EvalReport::nap);
    out.bap50 = mean_opt(&EvalReport::bap50);
    out.nap50 = mean_opt(&EvalReport::nap50);
    if (out.bap && out.nap) out.hap = harmonic_ap(*out.bap, *out.nap);
    if (out.bap50 && out.nap50) out.hap50 = harmonic_ap(*out.bap50, *out.nap50);
    out.hap_mean_of_seeds = mean_opt(&EvalReport::hap);
    out.hap50_mean_of_seeds = mean_opt(&EvalReport::hap50);

    for (const EvalReport& r : reports)
        out.seeds.insert(out.seeds.end(), r.seeds.begin(), r.seeds.end());
    return out;
}

// ---- serialization ----

namespace {
void put_opt(nlohmann::json& j, const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
}
std::optional<double> get_opt(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
}
}  // namespace

std::string eval_report_to_json(const EvalReport& r) {
    nlohmann::json j;
    j["schema_version"] = r.schema_version;
    j["eval_mode"] = r.eval_mode;
    j["classes"]["base"] = r.base_class_names;
    j["classes"]["novel"] = r.novel_class_names;
    j["per_class_ap"] = r.per_class_ap;
    j["per_class_ap50"] = r.per_class_ap50;
    j["group_aps"] = r.group_aps;
    j["group_aps50"] = r.group_aps50;
    nlohmann::json s;
    put_opt(s, "bAP", r.bap);
    put_opt(s, "nAP", r.nap);
    put_opt(s, "hAP", r.hap);
    put_opt(s, "bAP50", r.bap50);
    put_opt(s, "nAP50", r.nap50);
    put_opt(s, "hAP50", r.hap50);
    put_opt(s, "hAP_mean_of_seeds", r.hap_mean_of_seeds);
    put_opt(s, "hAP50_mean_of_seeds", r.hap50_mean_of_seeds);
    j["summary"] = std::move(s);
    j["seeds"] = r.seeds;
    return j.dump(2);
}

EvalReport eval_report_from_json_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError(std::string("eval report parse failure: ") + e.what());
    }
    EvalReport r;
    int version = j.value("schema_version", -1);
    if (version != r.schema_version)
        throw IoError("unsupported eval report schema version " + std::to_string(version));
    r.eval_mode = j.value("eval_mode", std::string("joint"));
    r.base_class_names = j.at("classes").at("base").get<std::vector<std::string>>();
    r.novel_class_names = j.at("classes").at("novel").get<std::vector<std::string>>();
    r.per_class_ap = j.value("per_class_ap", std::map<std::string, double>{});
    r.per_class_ap50 = j.value("per_class_ap50", std::map<std::string, double>{});
    r.group_aps = j.value("group_aps", std::map<std::string, double>{});
    r.group_aps50 = j.value("group_aps50", std::map<std::string, double>{});
    const nlohmann::json& s = j.at("summary");
    r.bap = get_opt(s, "bAP");
    r.nap = get_opt(s, "nAP");
    r.hap = get_opt(s, "hAP");
    r.bap50 = get_opt(s, "bAP50");
    r.nap50 = get_opt(s, "nAP50");
    r.hap50 = get_opt(s, "hAP50");
    r.hap_mean_of_seeds = get_opt(s, "hAP_mean_of_seeds");
    r.hap50_mean_of_seeds = get_opt(s, "hAP50_mean_of_seeds");
    r.seeds = j.value("seeds", std::vector<uint64_t>{});
    return r;
}

void save_eval_report(const EvalReport& r, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open report path for writing: " + path);
    out << eval_report_to_json(r) << '\n';
    if (!out) throw IoError("report write failed: " + path);
}

EvalReport load_eval_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open report: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return eval_report_from_json_text(text);
}

}  // namespace incdet
