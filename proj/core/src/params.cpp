#include "incdet/params.hpp"

namespace incdet {

void ParameterStore::validate() const {
    static const char* kCore[] = {
        "backbone.conv1.w", "backbone.conv1.b", "backbone.conv2.w", "backbone.conv2.b",
        "backbone.conv3.w", "backbone.conv3.b", "backbone.conv4.w", "backbone.conv4.b",
        "rpn.conv.w",       "rpn.conv.b",       "rpn.obj.w",        "rpn.obj.b",
        "rpn.delta.w",      "rpn.delta.b",      "roi.base.fc1.w",   "roi.base.fc1.b",
        "roi.base.fc2.w",   "roi.base.fc2.b",   "cls.base.w",       "cls.base.b",
        "reg.w",            "reg.b",
    };
    static const char* kNovel[] = {
        "roi.novel.fc1.w", "roi.novel.fc1.b", "roi.novel.fc2.w",
        "roi.novel.fc2.b", "cls.novel.w",     "cls.novel.b",
    };

    for (const char* n : kCore)
        if (!has(n)) throw StageError(std::string("missing tensor ") + n);

    if (stage_ == Stage::kBase) {
        for (const auto& [name, entry] : tensors_) {
            if (name.rfind("roi.novel.", 0) == 0 || name.rfind("cls.novel.", 0) == 0)
                throw StageError("novel-branch tensor " + name + " present at stage=base");
        }
    } else {
        for (const char* n : kNovel)
            if (!has(n)) throw StageError(std::string("stage=branched but missing tensor ") + n);
    }

    for (const auto& [name, entry] : tensors_)
        if (!entry.value.all_finite()) throw ConfigError("non-finite values in tensor " + name);
}

}  // namespace incdet
