#pragma once

#include <string>
#include <vector>

#include "incdet/nms.hpp"
#include "incdet/training.hpp"

namespace incdet {

struct Detection {
    Box box;
    int class_index = 0;  // joint-vocabulary index, never background
    double score = 0.0;
};

// Full pipeline: proposals -> joint (or base-only, at stage=base) softmax ->
// background dropped -> score threshold -> shared box decode -> per-class NMS
// -> top-K by score.
std::vector<Detection> detect(const AnnotatedImage& image, const Checkpoint& ckpt,
                              const ClassVocabulary& vocab);

// Eval-mode forward of the base path only; the pieces that must stay
// bit-identical across fine-tuning.
struct BasePathSnapshot {
    std::vector<Proposal> proposals;
    std::vector<std::vector<double>> base_logits;
    std::vector<std::vector<double>> box_deltas;
};
BasePathSnapshot base_path_eval(const AnnotatedImage& image, const Checkpoint& ckpt);

// ---- detection dumps (one JSON record per line) ----
struct DetectionRecord {
    int image_id = 0;
    std::string class_name;
    double score = 0.0;
    Box box;
};

void write_detection_dump(const std::vector<DetectionRecord>& records, const std::string& path);
std::vector<DetectionRecord> read_detection_dump(const std::string& path);

std::vector<DetectionRecord> to_records(int image_id, const std::vector<Detection>& dets,
                                        const ClassVocabulary& vocab);

}  // namespace incdet
