#pragma once

#include <string>
#include <vector>

#include "incdet/errors.hpp"

namespace incdet {

// Joint label space: base classes first, then one background way, then the
// novel classes. Annotation class indices live in
// {0..|base|-1} u {|base|+1..|base|+|novel|}; index |base| is background and
// carries no annotations.
class ClassVocabulary {
public:
    ClassVocabulary() = default;

    ClassVocabulary(std::vector<std::string> base_classes, std::vector<std::string> novel_classes)
        : base_(std::move(base_classes)), novel_(std::move(novel_classes)) {
        for (const auto& b : base_)
            for (const auto& n : novel_)
                if (b == n) throw ConfigError("class '" + b + "' is both base and novel");
        for (size_t i = 0; i < base_.size(); ++i)
            for (size_t j = i + 1; j < base_.size(); ++j)
                if (base_[i] == base_[j]) throw ConfigError("duplicate base class '" + base_[i] + "'");
        for (size_t i = 0; i < novel_.size(); ++i)
            for (size_t j = i + 1; j < novel_.size(); ++j)
                if (novel_[i] == novel_[j]) throw ConfigError("duplicate novel class '" + novel_[i] + "'");
    }

    int num_base() const { return static_cast<int>(base_.size()); }
    int num_novel() const { return static_cast<int>(novel_.size()); }
    int background_index() const { return num_base(); }
    // base ways + background + novel ways
    int joint_width() const { return num_base() + 1 + num_novel(); }

    bool is_base(int class_index) const { return class_index >= 0 && class_index < num_base(); }
    bool is_novel(int class_index) const {
        return class_index > background_index() && class_index < joint_width();
    }
    bool is_annotatable(int class_index) const { return is_base(class_index) || is_novel(class_index); }

    int novel_index(int ordinal) const { return background_index() + 1 + ordinal; }
    int novel_ordinal(int class_index) const { return class_index - background_index() - 1; }

    const std::vector<std::string>& base_classes() const { return base_; }
    const std::vector<std::string>& novel_classes() const { return novel_; }

    const std::string& name_of(int class_index) const {
        static const std::string kBackground = "__background__";
        if (is_base(class_index)) return base_[static_cast<size_t>(class_index)];
        if (class_index == background_index()) return kBackground;
        if (is_novel(class_index)) return novel_[static_cast<size_t>(novel_ordinal(class_index))];
        throw ConfigError("class index " + std::to_string(class_index) + " outside vocabulary");
    }

    int index_of(const std::string& name) const {
        for (int i = 0; i < num_base(); ++i)
            if (base_[static_cast<size_t>(i)] == name) return i;
        for (int i = 0; i < num_novel(); ++i)
            if (novel_[static_cast<size_t>(i)] == name) return novel_index(i);
        throw ConfigError("unknown class name '" + name + "'");
    }

    std::vector<int> base_indices() const {
        std::vector<int> v(static_cast<size_t>(num_base()));
        for (int i = 0; i < num_base(); ++i) v[static_cast<size_t>(i)] = i;
        return v;
    }
    std::vector<int> novel_indices() const {
        std::vector<int> v(static_cast<size_t>(num_novel()));
        for (int i = 0; i < num_novel(); ++i) v[static_cast<size_t>(i)] = novel_index(i);
        return v;
    }

    bool operator==(const ClassVocabulary& o) const { return base_ == o.base_ && novel_ == o.novel_; }

private:
    std::vector<std::string> base_;
    std::vector<std::string> novel_;
};

}  // namespace incdet
