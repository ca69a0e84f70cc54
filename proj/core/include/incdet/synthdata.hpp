#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "incdet/box.hpp"
#include "incdet/vocab.hpp"

namespace incdet {

struct Instance {
    int class_index = -1;
    Box box;
};

// Raster image (H x W x 3, values in [0,1]) plus ground-truth instances.
struct AnnotatedImage {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;  // HWC
    std::vector<Instance> instances;
    int image_id = 0;
    uint64_t seed = 0;

    double& px(int y, int x, int c) { return pixels[(static_cast<size_t>(y) * width + x) * 3 + c]; }
    double px(int y, int x, int c) const {
        return pixels[(static_cast<size_t>(y) * width + x) * 3 + c];
    }
    bool bit_equal(const AnnotatedImage& o) const;
};

struct DatasetSplit {
    std::vector<AnnotatedImage> base_train;  // base-class instances only
    std::vector<AnnotatedImage> novel_pool;  // novel-class instances only
    std::vector<AnnotatedImage> test;        // mixed
    ClassVocabulary vocabulary;
};

// Exactly K annotated instances per novel class, counted at instance level.
struct SupportSet {
    int shots_per_class = 0;
    std::vector<AnnotatedImage> items;
    uint64_t seed = 0;
};

struct DatasetConfig {
    std::vector<std::string> base_classes = {"circle", "square", "triangle", "ring", "cross", "star"};
    std::vector<std::string> novel_classes = {"pentagon", "crescent", "diamond"};
    int canvas_h = 64;
    int canvas_w = 64;
    int base_train_images = 200;
    int novel_pool_images = 60;
    int test_images = 50;
    int max_instances = 3;
    uint64_t seed = 1;

    ClassVocabulary vocabulary() const { return {base_classes, novel_classes}; }
    void validate() const;
};

// Pixel value shared by all three channels outside any shape.
constexpr double kBackgroundFill = 0.10;

// Renders a scene with 1..max_instances shapes of the allowed classes.
// Class identity is encoded in shape geometry and a per-class color family;
// position, scale, and fill are randomized. Ground-truth boxes are tight
// around rendered pixels and pairwise IoU stays below 0.3.
AnnotatedImage generate_scene(uint64_t seed, const ClassVocabulary& vocab, int canvas_h,
                              int canvas_w, const std::vector<int>& allowed_classes,
                              int max_instances);

DatasetSplit build_dataset(const DatasetConfig& config);

// Uniform instance-level K-shot sampling without replacement. Images keeping
// fewer than their original instances have the surplus annotations removed.
SupportSet sample_support_set(const std::vector<AnnotatedImage>& pool, int k, uint64_t seed,
                              const ClassVocabulary& vocab);

// COCO-format annotation I/O (bbox stored as x,y,width,height).
void write_coco_annotations(const std::vector<AnnotatedImage>& images, const ClassVocabulary& vocab,
                            const std::string& path);
struct CocoReadResult {
    std::vector<AnnotatedImage> images;  // annotations only, pixels empty
    ClassVocabulary vocabulary;
};
CocoReadResult read_coco_annotations(const std::string& path);

DatasetConfig load_dataset_config(const std::string& path);
void save_dataset_config(const DatasetConfig& config, const std::string& path);

}  // namespace incdet
