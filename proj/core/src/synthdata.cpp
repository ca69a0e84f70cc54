#include "incdet/synthdata.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "incdet/rng.hpp"

#include "json.hpp"

namespace incdet {
namespace {

using nlohmann::json;

enum class ShapeKind { kCircle, kSquare, kTriangle, kRing, kCross, kStar, kPentagon, kCrescent, kDiamond };

ShapeKind shape_for_class(const std::string& name, int color_ordinal) {
    static const std::map<std::string, ShapeKind> kByName = {
        {"circle", ShapeKind::kCircle},     {"square", ShapeKind::kSquare},
        {"triangle", ShapeKind::kTriangle}, {"ring", ShapeKind::kRing},
        {"cross", ShapeKind::kCross},       {"star", ShapeKind::kStar},
        {"pentagon", ShapeKind::kPentagon}, {"crescent", ShapeKind::kCrescent},
        {"diamond", ShapeKind::kDiamond}};
    auto it = kByName.find(name);
    if (it != kByName.end()) return it->second;
    return static_cast<ShapeKind>(color_ordinal % 9);  // unnamed classes cycle the palette
}

// Position of a class in the compact base-then-novel ordering, used for the
// per-class hue assignment.
int color_ordinal(const ClassVocabulary& vocab, int class_index) {
    return vocab.is_base(class_index) ? class_index
                                      : vocab.num_base() + vocab.novel_ordinal(class_index);
}

// Designed hue-wheel slot per shape (9 slots, 40 degrees apart, circular).
// Small rasterized shapes are easy to mistake for one another, so hue has to
// carry the distinction: every strong look-alike pair (diamond/square,
// pentagon/circle, crescent/ring, ring/circle, star/cross) sits at least
// three slots apart around the wheel, and milder ones (pentagon/ring,
// crescent/circle, diamond/triangle, ...) at least two. Distances are
// circular, so slot 8 neighbors slot 0.
int slot_for_kind(ShapeKind kind) {
    switch (kind) {
        case ShapeKind::kCircle: return 0;
        case ShapeKind::kTriangle: return 1;
        case ShapeKind::kCrescent: return 2;
        case ShapeKind::kPentagon: return 3;
        case ShapeKind::kSquare: return 4;
        case ShapeKind::kStar: return 5;
        case ShapeKind::kRing: return 6;
        case ShapeKind::kDiamond: return 7;
        case ShapeKind::kCross: return 8;
    }
    return 0;
}

bool known_shape_name(const std::string& name) {
    static const std::set<std::string> kNames = {"circle", "square",   "triangle",
                                                 "ring",   "cross",    "star",
                                                 "pentagon", "crescent", "diamond"};
    return kNames.count(name) > 0;
}

// Hue slot per compact ordinal: named shapes take their designed slot;
// other classes fill the remaining slots in vocabulary order.
std::vector<int> hue_slots(const ClassVocabulary& vocab) {
    int n = vocab.num_base() + vocab.num_novel();
    std::vector<int> slots(n, -1);
    std::array<bool, 9> taken{};
    auto class_of = [&](int ord) {
        return ord < vocab.num_base() ? ord : vocab.novel_indices()[ord - vocab.num_base()];
    };
    for (int ord = 0; ord < n; ++ord) {
        const std::string& name = vocab.name_of(class_of(ord));
        if (known_shape_name(name)) {
            int s = slot_for_kind(shape_for_class(name, ord));
            slots[ord] = s;
            taken[s] = true;
        }
    }
    int next = 0;
    for (int ord = 0; ord < n; ++ord) {
        if (slots[ord] >= 0) continue;
        while (next < 9 && taken[next]) ++next;
        slots[ord] = next < 9 ? next++ : ord % 9;
    }
    return slots;
}

void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
    h = std::fmod(std::fmod(h, 360.0) + 360.0, 360.0) / 60.0;
    int i = static_cast<int>(h) % 6;
    double f = h - std::floor(h);
    double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (i) {
        case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
        case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
        case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
        case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
        case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
        default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
    }
}

struct Poly {
    std::vector<double> xs, ys;
};

Poly regular_polygon(int n, double radius, double phase) {
    Poly p;
    for (int k = 0; k < n; ++k) {
        double a = phase + 2.0 * M_PI * k / n;
        p.xs.push_back(radius * std::cos(a));
        p.ys.push_back(radius * std::sin(a));
    }
    return p;
}

Poly star_polygon(double r_outer, double r_inner, double phase) {
    Poly p;
    for (int k = 0; k < 10; ++k) {
        double r = (k % 2 == 0) ? r_outer : r_inner;
        double a = phase + M_PI * k / 5.0;
        p.xs.push_back(r * std::cos(a));
        p.ys.push_back(r * std::sin(a));
    }
    return p;
}

bool point_in_poly(const Poly& p, double x, double y) {
    bool inside = false;
    size_t n = p.xs.size();
    for (size_t i = 0, j = n - 1; i < n; j = i++) {
        if ((p.ys[i] > y) != (p.ys[j] > y) &&
            x < (p.xs[j] - p.xs[i]) * (y - p.ys[i]) / (p.ys[j] - p.ys[i]) + p.xs[i])
            inside = !inside;
    }
    return inside;
}

// Inside test in unit coordinates (shape fits roughly in the unit disk).
struct ShapeInstance {
    ShapeKind kind;
    double rot = 0.0;       // radians
    double crescent_dir = 0.0;
    Poly poly;              // for polygon-based kinds

    bool inside(double u, double v) const {
        // rotate into shape frame
        double cu = std::cos(-rot), sv = std::sin(-rot);
        double x = cu * u - sv * v;
        double y = sv * u + cu * v;
        switch (kind) {
            case ShapeKind::kCircle: return x * x + y * y <= 1.0;
            case ShapeKind::kSquare: return std::max(std::abs(x), std::abs(y)) <= 0.82;
            case ShapeKind::kRing: {
                double d2 = x * x + y * y;
                return d2 <= 1.0 && d2 >= 0.55 * 0.55;
            }
            case ShapeKind::kCross:
                return (std::abs(x) <= 0.34 && std::abs(y) <= 1.0) ||
                       (std::abs(y) <= 0.34 && std::abs(x) <= 1.0);
            case ShapeKind::kDiamond: return std::abs(x) + std::abs(y) <= 1.0;
            case ShapeKind::kCrescent: {
                if (x * x + y * y > 1.0) return false;
                double bx = 0.55 * std::cos(crescent_dir), by = 0.55 * std::sin(crescent_dir);
                double dx = x - bx, dy = y - by;
                return dx * dx + dy * dy >= 0.78 * 0.78;
            }
            case ShapeKind::kTriangle:
            case ShapeKind::kStar:
            case ShapeKind::kPentagon: return point_in_poly(poly, x, y);
        }
        return false;
    }
};

ShapeInstance make_shape(ShapeKind kind, Rng& rng) {
    ShapeInstance s;
    s.kind = kind;
    switch (kind) {
        case ShapeKind::kTriangle:
            s.rot = rng.uniform(-0.25, 0.25);
            s.poly = regular_polygon(3, 1.0, -M_PI / 2.0);
            break;
        case ShapeKind::kPentagon:
            s.rot = rng.uniform(-0.3, 0.3);
            s.poly = regular_polygon(5, 1.0, -M_PI / 2.0);
            break;
        case ShapeKind::kStar:
            s.rot = rng.uniform(-0.3, 0.3);
            s.poly = star_polygon(1.0, 0.45, -M_PI / 2.0);
            break;
        case ShapeKind::kCrescent:
            s.crescent_dir = rng.uniform(0.0, 2.0 * M_PI);
            break;
        case ShapeKind::kCross:
            s.rot = rng.uniform(-0.2, 0.2);
            break;
        default: break;
    }
    return s;
}

struct PlacedShape {
    Box box;
    int class_index;
};

// Renders one shape onto the canvas; returns the tight box over painted
// pixels, or an invalid box when nothing landed on canvas.
Box paint_shape(AnnotatedImage& img, const ShapeInstance& shape, double cx, double cy, double rx,
                double ry, const double rgb[3]) {
    int x_lo = std::max(0, static_cast<int>(std::floor(cx - rx - 2)));
    int x_hi = std::min(img.width - 1, static_cast<int>(std::ceil(cx + rx + 2)));
    int y_lo = std::max(0, static_cast<int>(std::floor(cy - ry - 2)));
    int y_hi = std::min(img.height - 1, static_cast<int>(std::ceil(cy + ry + 2)));
    int min_x = img.width, max_x = -1, min_y = img.height, max_y = -1;
    for (int py = y_lo; py <= y_hi; ++py) {
        for (int px = x_lo; px <= x_hi; ++px) {
            double u = (px + 0.5 - cx) / rx;
            double v = (py + 0.5 - cy) / ry;
            if (!shape.inside(u, v)) continue;
            img.px(py, px, 0) = rgb[0];
            img.px(py, px, 1) = rgb[1];
            img.px(py, px, 2) = rgb[2];
            min_x = std::min(min_x, px);
            max_x = std::max(max_x, px);
            min_y = std::min(min_y, py);
            max_y = std::max(max_y, py);
        }
    }
    if (max_x < 0) return {};
    return {static_cast<double>(min_x), static_cast<double>(min_y), static_cast<double>(max_x + 1),
            static_cast<double>(max_y + 1)};
}

AnnotatedImage generate_scene_impl(uint64_t seed, const ClassVocabulary& vocab, int canvas_h,
                                   int canvas_w, const std::vector<int>& allowed_classes,
                                   int max_instances, int forced_first_class) {
    if (canvas_h < 32 || canvas_w < 32)
        throw ConfigError("canvas " + std::to_string(canvas_h) + "x" + std::to_string(canvas_w) +
                          " too small to place one shape at minimum size; need at least 32x32");
    if (allowed_classes.empty()) throw ConfigError("allowed_classes must be nonempty");
    if (max_instances < 1) throw ConfigError("max_instances must be >= 1");
    for (int c : allowed_classes)
        if (!vocab.is_annotatable(c))
            throw ConfigError("allowed class index " + std::to_string(c) + " outside vocabulary");

    AnnotatedImage img;
    img.height = canvas_h;
    img.width = canvas_w;
    img.seed = seed;
    img.pixels.assign(static_cast<size_t>(canvas_h) * canvas_w * 3, kBackgroundFill);

    Rng rng(derive_seed(seed, "scene"));
    int target = 1 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(max_instances)));

    // keep the smallest shape above ~2 backbone cells so geometry stays
    // resolvable after the stride-8 feature map
    double r_max = std::min(13.0, (std::min(canvas_h, canvas_w) - 6) / 4.0);
    double r_min = std::min(7.0, r_max);

    std::vector<PlacedShape> placed;
    const std::vector<int> slots = hue_slots(vocab);
    for (int inst = 0; inst < target; ++inst) {
        bool ok = false;
        for (int attempt = 0; attempt < 40 && !ok; ++attempt) {
            int cls = (inst == 0 && forced_first_class >= 0)
                          ? forced_first_class
                          : allowed_classes[rng.uniform_int(allowed_classes.size())];
            double r = rng.uniform(r_min, r_max);
            double aspect = rng.uniform(0.85, 1.2);
            double rx = r * aspect, ry = r;
            double cx = rng.uniform(rx + 1.5, canvas_w - rx - 1.5);
            double cy = rng.uniform(ry + 1.5, canvas_h - ry - 1.5);

            int ord = color_ordinal(vocab, cls);
            double hue = 40.0 * slots[ord] + rng.uniform(-8.0, 8.0);
            double rgb[3];
            hsv_to_rgb(hue, rng.uniform(0.7, 1.0), rng.uniform(0.55, 0.95), rgb);

            ShapeInstance shape = make_shape(shape_for_class(vocab.name_of(cls), ord), rng);

            // dry-run bounding box estimate against existing boxes before painting
            Box est{cx - rx - 1, cy - ry - 1, cx + rx + 1, cy + ry + 1};
            bool clash = false;
            for (const auto& p : placed) {
                double i = iou(est, p.box);
                double inter_x = std::min(est.x2, p.box.x2) - std::max(est.x1, p.box.x1);
                double inter_y = std::min(est.y2, p.box.y2) - std::max(est.y1, p.box.y1);
                double inter = std::max(0.0, inter_x) * std::max(0.0, inter_y);
                double cover = inter / std::min(est.area(), p.box.area());
                if (i >= 0.25 || cover >= 0.45) {  // conservative against the tight-box limit
                    clash = true;
                    break;
                }
            }
            if (clash) continue;

            Box tight = paint_shape(img, shape, cx, cy, rx, ry, rgb);
            if (!tight.valid() || tight.area() < 9.0) continue;  // too few pixels landed
            placed.push_back({tight, cls});
            ok = true;
        }
        if (!ok && placed.empty())
            throw ConfigError("placement failed on canvas " + std::to_string(canvas_h) + "x" +
                              std::to_string(canvas_w) + ": no room for a minimum-size shape");
        if (!ok) break;
    }

    for (const auto& p : placed) img.instances.push_back({p.class_index, p.box});
    return img;
}

}  // namespace

bool AnnotatedImage::bit_equal(const AnnotatedImage& o) const {
    if (height != o.height || width != o.width || image_id != o.image_id || seed != o.seed)
        return false;
    if (instances.size() != o.instances.size()) return false;
    for (size_t i = 0; i < instances.size(); ++i) {
        if (instances[i].class_index != o.instances[i].class_index) return false;
        if (!(instances[i].box == o.instances[i].box)) return false;
    }
    if (pixels.size() != o.pixels.size()) return false;
    return std::memcmp(pixels.data(), o.pixels.data(), pixels.size() * sizeof(double)) == 0;
}

void DatasetConfig::validate() const {
    if (base_classes.empty() || novel_classes.empty())
        throw ConfigError("dataset config needs at least one base and one novel class");
    if (canvas_h < 32 || canvas_w < 32) throw ConfigError("canvas must be at least 32x32");
    if (base_train_images < 1 || novel_pool_images < 1 || test_images < 1)
        throw ConfigError("image counts must be >= 1");
    if (max_instances < 1) throw ConfigError("max_instances must be >= 1");
    int classes = static_cast<int>(base_classes.size() + novel_classes.size());
    if (test_images < classes)
        throw ConfigError("test_images (" + std::to_string(test_images) +
                          ") must cover every class at least once; need >= " +
                          std::to_string(classes));
    vocabulary();  // throws on overlap/duplicates
}

AnnotatedImage generate_scene(uint64_t seed, const ClassVocabulary& vocab, int canvas_h,
                              int canvas_w, const std::vector<int>& allowed_classes,
                              int max_instances) {
    return generate_scene_impl(seed, vocab, canvas_h, canvas_w, allowed_classes, max_instances, -1);
}

DatasetSplit build_dataset(const DatasetConfig& config) {
    config.validate();
    DatasetSplit split;
    split.vocabulary = config.vocabulary();
    const auto& vocab = split.vocabulary;

    std::vector<int> base_ids = vocab.base_indices();
    std::vector<int> novel_ids = vocab.novel_indices();
    std::vector<int> all_ids = base_ids;
    all_ids.insert(all_ids.end(), novel_ids.begin(), novel_ids.end());

    int next_id = 1;
    for (int i = 0; i < config.base_train_images; ++i) {
        auto img = generate_scene_impl(derive_seed(config.seed, "base_train", i), vocab,
                                       config.canvas_h, config.canvas_w, base_ids,
                                       config.max_instances,
                                       base_ids[static_cast<size_t>(i) % base_ids.size()]);
        img.image_id = next_id++;
        split.base_train.push_back(std::move(img));
    }
    for (int i = 0; i < config.novel_pool_images; ++i) {
        auto img = generate_scene_impl(derive_seed(config.seed, "novel_pool", i), vocab,
                                       config.canvas_h, config.canvas_w, novel_ids,
                                       config.max_instances,
                                       novel_ids[static_cast<size_t>(i) % novel_ids.size()]);
        img.image_id = next_id++;
        split.novel_pool.push_back(std::move(img));
    }
    for (int i = 0; i < config.test_images; ++i) {
        int forced = i < static_cast<int>(all_ids.size()) ? all_ids[static_cast<size_t>(i)] : -1;
        auto img = generate_scene_impl(derive_seed(config.seed, "test", i), vocab, config.canvas_h,
                                       config.canvas_w, all_ids, config.max_instances, forced);
        img.image_id = next_id++;
        split.test.push_back(std::move(img));
    }

    for (const auto& img : split.base_train)
        for (const auto& inst : img.instances)
            if (!vocab.is_base(inst.class_index))
                throw ConfigError("internal: novel instance leaked into base_train");
    return split;
}

SupportSet sample_support_set(const std::vector<AnnotatedImage>& pool, int k, uint64_t seed,
                              const ClassVocabulary& vocab) {
    if (k < 1) throw ConfigError("K must be >= 1");
    // per-class instance references in pool order
    std::map<int, std::vector<std::pair<int, int>>> refs;  // class -> (img_idx, inst_idx)
    for (int i = 0; i < static_cast<int>(pool.size()); ++i)
        for (int j = 0; j < static_cast<int>(pool[static_cast<size_t>(i)].instances.size()); ++j) {
            int c = pool[static_cast<size_t>(i)].instances[static_cast<size_t>(j)].class_index;
            if (vocab.is_novel(c)) refs[c].push_back({i, j});
        }

    std::set<std::pair<int, int>> keep;
    for (int ordinal = 0; ordinal < vocab.num_novel(); ++ordinal) {
        int cls = vocab.novel_index(ordinal);
        auto& avail = refs[cls];
        if (static_cast<int>(avail.size()) < k)
            throw ConfigError("support sampling: class '" + vocab.name_of(cls) + "' has " +
                              std::to_string(avail.size()) + " instances, need K=" +
                              std::to_string(k));
        Rng rng(derive_seed(seed, "support", static_cast<uint64_t>(ordinal)));
        std::vector<int> chosen;
        rng.sample_without_replacement(static_cast<int>(avail.size()), k, chosen);
        std::sort(chosen.begin(), chosen.end());
        for (int idx : chosen) keep.insert(avail[static_cast<size_t>(idx)]);
    }

    SupportSet out;
    out.shots_per_class = k;
    out.seed = seed;
    for (int i = 0; i < static_cast<int>(pool.size()); ++i) {
        std::vector<Instance> kept;
        for (int j = 0; j < static_cast<int>(pool[static_cast<size_t>(i)].instances.size()); ++j)
            if (keep.count({i, j})) kept.push_back(pool[static_cast<size_t>(i)].instances[static_cast<size_t>(j)]);
        if (kept.empty()) continue;
        AnnotatedImage img = pool[static_cast<size_t>(i)];
        img.instances = std::move(kept);
        out.items.push_back(std::move(img));
    }
    return out;
}

void write_coco_annotations(const std::vector<AnnotatedImage>& images, const ClassVocabulary& vocab,
                            const std::string& path) {
    json doc;
    doc["images"] = json::array();
    doc["annotations"] = json::array();
    doc["categories"] = json::array();

    for (int i = 0; i < vocab.joint_width(); ++i) {
        if (i == vocab.background_index()) continue;
        doc["categories"].push_back({{"id", i + 1},
                                     {"name", vocab.name_of(i)},
                                     {"supercategory", vocab.is_base(i) ? "base" : "novel"}});
    }

    int ann_id = 1;
    for (const auto& img : images) {
        doc["images"].push_back({{"id", img.image_id},
                                 {"width", img.width},
                                 {"height", img.height},
                                 {"file_name", "img_" + std::to_string(img.image_id) + ".png"},
                                 {"seed", img.seed}});
        for (const auto& inst : img.instances) {
            double w = inst.box.x2 - inst.box.x1, h = inst.box.y2 - inst.box.y1;
            doc["annotations"].push_back({{"id", ann_id++},
                                          {"image_id", img.image_id},
                                          {"category_id", inst.class_index + 1},
                                          {"bbox", {inst.box.x1, inst.box.y1, w, h}},
                                          {"area", w * h},
                                          {"iscrowd", 0}});
        }
    }

    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << doc.dump(2) << "\n";
}

CocoReadResult read_coco_annotations(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    json doc;
    try {
        f >> doc;
    } catch (const json::exception& e) {
        throw IoError("COCO parse error in " + path + ": " + e.what());
    }

    // rebuild the vocabulary from categories; ordering by category id
    std::vector<std::pair<int, json>> cats;
    for (const auto& c : doc.at("categories")) cats.push_back({c.at("id").get<int>(), c});
    std::sort(cats.begin(), cats.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<std::string> base, novel;
    std::map<int, std::string> cat_names;
    for (const auto& [id, c] : cats) {
        std::string name = c.at("name").get<std::string>();
        std::string super = c.value("supercategory", "base");
        (super == "novel" ? novel : base).push_back(name);
        cat_names[id] = name;
    }
    CocoReadResult out;
    out.vocabulary = ClassVocabulary(base, novel);

    std::map<int, size_t> by_image;
    for (const auto& im : doc.at("images")) {
        AnnotatedImage img;
        img.image_id = im.at("id").get<int>();
        img.width = im.at("width").get<int>();
        img.height = im.at("height").get<int>();
        img.seed = im.value("seed", uint64_t{0});
        by_image[img.image_id] = out.images.size();
        out.images.push_back(std::move(img));
    }

    for (const auto& a : doc.at("annotations")) {
        int ann_id = a.value("id", -1);
        int cat = a.at("category_id").get<int>();
        auto name_it = cat_names.find(cat);
        if (name_it == cat_names.end())
            throw IoError("annotation " + std::to_string(ann_id) + " references missing category " +
                          std::to_string(cat));
        const auto& bbox = a.at("bbox");
        double x = bbox.at(0).get<double>(), y = bbox.at(1).get<double>();
        double w = bbox.at(2).get<double>(), h = bbox.at(3).get<double>();
        if (w <= 0 || h <= 0)
            throw IoError("annotation " + std::to_string(ann_id) + " has degenerate box (w=" +
                          std::to_string(w) + ", h=" + std::to_string(h) + ")");
        auto img_it = by_image.find(a.at("image_id").get<int>());
        if (img_it == by_image.end())
            throw IoError("annotation " + std::to_string(ann_id) + " references missing image");
        out.images[img_it->second].instances.push_back(
            {out.vocabulary.index_of(name_it->second), Box{x, y, x + w, y + h}});
    }
    return out;
}

DatasetConfig load_dataset_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open dataset config " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw IoError(std::string("dataset config parse error: ") + e.what());
    }
    DatasetConfig cfg;
    if (j.contains("base_classes")) cfg.base_classes = j["base_classes"].get<std::vector<std::string>>();
    if (j.contains("novel_classes")) cfg.novel_classes = j["novel_classes"].get<std::vector<std::string>>();
    if (j.contains("canvas")) {
        cfg.canvas_h = j["canvas"].value("h", cfg.canvas_h);
        cfg.canvas_w = j["canvas"].value("w", cfg.canvas_w);
    }
    if (j.contains("counts")) {
        cfg.base_train_images = j["counts"].value("base_train", cfg.base_train_images);
        cfg.novel_pool_images = j["counts"].value("novel_pool", cfg.novel_pool_images);
        cfg.test_images = j["counts"].value("test", cfg.test_images);
    }
    cfg.max_instances = j.value("max_instances", cfg.max_instances);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.validate();
    return cfg;
}

void save_dataset_config(const DatasetConfig& cfg, const std::string& path) {
    json j{{"base_classes", cfg.base_classes},
           {"novel_classes", cfg.novel_classes},
           {"canvas", {{"h", cfg.canvas_h}, {"w", cfg.canvas_w}}},
           {"counts",
            {{"base_train", cfg.base_train_images},
             {"novel_pool", cfg.novel_pool_images},
             {"test", cfg.test_images}}},
           {"max_instances", cfg.max_instances},
           {"seed", cfg.seed}};
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << j.dump(2) << "\n";
}

}  // namespace incdet
