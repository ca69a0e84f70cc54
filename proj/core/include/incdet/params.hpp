#pragma once

#include <map>
#include <string>
#include <vector>

#include "incdet/errors.hpp"
#include "incdet/tensor.hpp"

namespace incdet {

enum class Stage { kBase, kBranched };

inline const char* stage_name(Stage s) { return s == Stage::kBase ? "base" : "branched"; }

// Named tensor collection with per-tensor trainability flags and a stage tag.
// Tensor names follow the detector layout: backbone.*, rpn.*, roi.base.*,
// roi.novel.* (branched only), cls.base.*, cls.novel.* (branched only), reg.*.
class ParameterStore {
public:
    struct Entry {
        Tensor value;
        bool trainable = true;
    };

    void add(const std::string& name, Tensor t, bool trainable = true) {
        if (tensors_.count(name)) throw ConfigError("duplicate tensor name " + name);
        tensors_[name] = Entry{std::move(t), trainable};
    }

    bool has(const std::string& name) const { return tensors_.count(name) != 0; }

    Tensor& at(const std::string& name) {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) throw ConfigError("unknown tensor " + name);
        return it->second.value;
    }
    const Tensor& at(const std::string& name) const {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) throw ConfigError("unknown tensor " + name);
        return it->second.value;
    }

    bool trainable(const std::string& name) const {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) throw ConfigError("unknown tensor " + name);
        return it->second.trainable;
    }
    void set_trainable(const std::string& name, bool v) {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) throw ConfigError("unknown tensor " + name);
        it->second.trainable = v;
    }

    // sorted by name, deterministic
    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(tensors_.size());
        for (const auto& [k, v] : tensors_) out.push_back(k);
        return out;
    }
    std::vector<std::string> trainable_names() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : tensors_)
            if (v.trainable) out.push_back(k);
        return out;
    }

    Stage stage() const { return stage_; }
    void set_stage(Stage s) { stage_ = s; }

    void require_stage(Stage s, const std::string& what) const {
        if (stage_ != s)
            throw StageError(what + " requires stage=" + stage_name(s) + ", store is stage=" +
                             stage_name(stage_));
    }

    bool all_finite() const {
        for (const auto& [k, v] : tensors_)
            if (!v.value.all_finite()) return false;
        return true;
    }

    // Structural invariants on the name set for the declared stage.
    void validate() const;

    bool bit_equal(const ParameterStore& o) const {
        if (stage_ != o.stage_ || tensors_.size() != o.tensors_.size()) return false;
        auto a = tensors_.begin();
        auto b = o.tensors_.begin();
        for (; a != tensors_.end(); ++a, ++b) {
            if (a->first != b->first || a->second.trainable != b->second.trainable) return false;
            if (!a->second.value.bit_equal(b->second.value)) return false;
        }
        return true;
    }

private:
    std::map<std::string, Entry> tensors_;
    Stage stage_ = Stage::kBase;
};

}  // namespace incdet
