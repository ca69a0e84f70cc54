#include "incdet/inference.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "incdet/nn.hpp"
#include "json.hpp"

namespace incdet {

namespace {
void check_vocab(const Checkpoint& ckpt, const ClassVocabulary& vocab) {
    if (ckpt.config.num_base != vocab.num_base())
        throw ShapeError("checkpoint base-class width " + std::to_string(ckpt.config.num_base) +
                         " does not match vocabulary (" + std::to_string(vocab.num_base()) + ")");
    if (ckpt.params.stage() == Stage::kBranched && ckpt.config.num_novel != vocab.num_novel())
        throw ShapeError("checkpoint novel-class width " + std::to_string(ckpt.config.num_novel) +
                         " does not match vocabulary (" + std::to_string(vocab.num_novel()) + ")");
}

Box decode_clipped(const Box& proposal, const std::array<double, 4>& d, const DetectorConfig& cfg) {
    return decode_delta(proposal, d).clipped(cfg.canvas_w, cfg.canvas_h);
}
}  // namespace

std::vector<Detection> detect(const AnnotatedImage& image, const Checkpoint& ckpt,
                              const ClassVocabulary& vocab) {
    check_vocab(ckpt, vocab);
    const DetectorConfig& cfg = ckpt.config;
    const ParameterStore& params = ckpt.params;
    const bool branched = params.stage() == Stage::kBranched;
    const int B = vocab.num_base();
    const int bg = vocab.background_index();

    Tensor z = backbone_forward(image_to_tensor(image), params, cfg);
    std::vector<Proposal> proposals =
        rpn_forward(z, params, generate_anchors(cfg), cfg, RunMode::kEval);

    struct Cand {
        Box box;
        int class_index;
        double score;
    };
    std::vector<Cand> cands;

    for (const Proposal& pr : proposals) {
        Tensor pooled = roi_pool(z, pr.box, cfg);
        std::vector<double> fb = roi_feature_forward(pooled, Branch::kBase, params, cfg);
        std::vector<double> logits = classify(fb, Branch::kBase, params, cfg);
        if (branched) {
            std::vector<double> fn = roi_feature_forward(pooled, Branch::kNovel, params, cfg);
            std::vector<double> ln = classify(fn, Branch::kNovel, params, cfg);
            logits.insert(logits.end(), ln.begin(), ln.end());
        }
        std::vector<double> probs(logits.size());
        nn::softmax(logits.data(), static_cast<int>(logits.size()), probs.data());

        std::vector<double> raw = regress_raw(fb, params);
        Box shared_box;
        if (cfg.regressor == RegressorMode::kAgnostic)
            shared_box = decode_clipped(pr.box, {raw[0], raw[1], raw[2], raw[3]}, cfg);

        for (int c = 0; c < static_cast<int>(probs.size()); ++c) {
            if (c == bg) continue;
            double p = probs[static_cast<size_t>(c)];
            // a non-finite score would poison the final ranking
            if (!std::isfinite(p)) throw NonFiniteLossError("detection.score");
            if (p <= cfg.score_threshold) continue;
            Box b;
            if (cfg.regressor == RegressorMode::kAgnostic) {
                b = shared_box;  // one decode shared by every class hypothesis
            } else if (c < B) {
                size_t o = static_cast<size_t>(4 * c);
                b = decode_clipped(pr.box, {raw[o], raw[o + 1], raw[o + 2], raw[o + 3]}, cfg);
            } else {
                // the per-class regressor has no novel slots; novel hypotheses
                // keep the raw proposal box
                b = pr.box;
            }
            if (!b.valid()) continue;
            cands.push_back({b, c, p});
        }
    }

    std::vector<Detection> out;
    const int width = branched ? vocab.joint_width() : B + 1;
    for (int c = 0; c < width; ++c) {
        if (c == bg) continue;
        std::vector<Box> boxes;
        std::vector<double> scores;
        for (const Cand& cd : cands) {
            if (cd.class_index != c) continue;
            boxes.push_back(cd.box);
            scores.push_back(cd.score);
        }
        for (int k : nms(boxes, scores, cfg.detection_nms_iou))
            out.push_back({boxes[static_cast<size_t>(k)], c, scores[static_cast<size_t>(k)]});
    }

    std::sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.class_index != b.class_index) return a.class_index < b.class_index;
        return box_less(a.box, b.box);
    });
    if (static_cast<int>(out.size()) > cfg.max_detections)
        out.resize(static_cast<size_t>(cfg.max_detections));
    return out;
}

BasePathSnapshot base_path_eval(const AnnotatedImage& image, const Checkpoint& ckpt) {
    const DetectorConfig& cfg = ckpt.config;
    const ParameterStore& params = ckpt.params;

    BasePathSnapshot snap;
    Tensor z = backbone_forward(image_to_tensor(image), params, cfg);
    snap.proposals = rpn_forward(z, params, generate_anchors(cfg), cfg, RunMode::kEval);
    for (const Proposal& pr : snap.proposals) {
        Tensor pooled = roi_pool(z, pr.box, cfg);
        std::vector<double> fb = roi_feature_forward(pooled, Branch::kBase, params, cfg);
        snap.base_logits.push_back(classify(fb, Branch::kBase, params, cfg));
        snap.box_deltas.push_back(regress_raw(fb, params));
    }
    return snap;
}

void write_detection_dump(const std::vector<DetectionRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open detection dump for writing: " + path);
    for (const DetectionRecord& r : records) {
        nlohmann::json j;
        j["image_id"] = r.image_id;
        j["class"] = r.class_name;
        j["score"] = r.score;
        j["box"] = {r.box.x1, r.box.y1, r.box.x2, r.box.y2};
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("detection dump write failed: " + path);
}

std::vector<DetectionRecord> read_detection_dump(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open detection dump: " + path);
    std::vector<DetectionRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw IoError("bad detection record at line " + std::to_string(lineno) + ": " + e.what());
        }
        DetectionRecord r;
        r.image_id = j.at("image_id").get<int>();
        r.class_name = j.at("class").get<std::string>();
        r.score = j.at("score").get<double>();
        auto b = j.at("box");
        r.box = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                 b.at(3).get<double>()};
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<DetectionRecord> to_records(int image_id, const std::vector<Detection>& dets,
                                        const ClassVocabulary& vocab) {
    std::vector<DetectionRecord> out;
    out.reserve(dets.size());
    for (const Detection& d : dets)
        out.push_back({image_id, vocab.name_of(d.class_index), d.score, d.box});
    return out;
}

}  // namespace incdet
