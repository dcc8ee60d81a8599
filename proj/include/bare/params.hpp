#pragma once

// Named-parameter registry. Entries keep insertion order so checkpoints,
// optimizer state and gradient reductions are reproducible.

#include "bare/tensor.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace bare {

enum class ParamCategory { base, adapter, lsm, vbc, r2e, fusion, head, align };

inline const char* category_name(ParamCategory c) {
    switch (c) {
        case ParamCategory::base: return "base";
        case ParamCategory::adapter: return "adapter";
        case ParamCategory::lsm: return "lsm";
        case ParamCategory::vbc: return "vbc";
        case ParamCategory::r2e: return "r2e";
        case ParamCategory::fusion: return "fusion";
        case ParamCategory::head: return "head";
        case ParamCategory::align: return "align";
    }
    return "?";
}

template <typename T>
class ParamStore {
public:
    struct Entry {
        std::string name;
        ParamCategory category;
        Tensor<T> value;
    };

    Tensor<T>& add(const std::string& name, ParamCategory cat, Tensor<T> value) {
        if (index_.count(name)) throw ValueError("param store: duplicate name " + name);
        index_[name] = entries_.size();
        entries_.push_back(Entry{name, cat, std::move(value)});
        return entries_.back().value;
    }

    Tensor<T>& add_normal(const std::string& name, ParamCategory cat, Shape shape, double stdev,
                          std::uint64_t seed) {
        Tensor<T> t(shape);
        std::mt19937_64 rng(derive_seed(seed, fnv1a64(name)));
        std::normal_distribution<double> dist(0.0, stdev);
        for (auto& v : t.data_mut()) v = static_cast<T>(dist(rng));
        return add(name, cat, std::move(t));
    }

    Tensor<T>& add_const(const std::string& name, ParamCategory cat, Shape shape, double value) {
        return add(name, cat, Tensor<T>::constant(std::move(shape), static_cast<T>(value)));
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ValueError("param store: unknown name " + name);
        return it->second;
    }

    Tensor<T>& value(const std::string& name) { return entries_[index_of(name)].value; }
    const Tensor<T>& value(const std::string& name) const { return entries_[index_of(name)].value; }

    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    std::size_t total_numel() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.value.numel();
        return n;
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Binds store entries to a tape on demand. Trainable entries become tape
// leaves; frozen ones (and everything when tape == nullptr) are used as plain
// values, which keeps backward off the frozen part of the graph.
template <typename T>
class BoundParams {
public:
    using TrainablePred = std::function<bool(const typename ParamStore<T>::Entry&)>;

    BoundParams(ParamStore<T>& store, Tape<T>* tape)
        : store_(&store), tape_(tape), bound_(store.size()), is_bound_(store.size(), 0) {}

    BoundParams(ParamStore<T>& store, Tape<T>* tape, TrainablePred trainable)
        : store_(&store),
          tape_(tape),
          trainable_(std::move(trainable)),
          bound_(store.size()),
          is_bound_(store.size(), 0) {}

    const Tensor<T>& operator()(const std::string& name) { return at(store_->index_of(name)); }

    const Tensor<T>& at(std::size_t idx) {
        if (!is_bound_[idx]) {
            auto& entry = store_->entries()[idx];
            const bool track = tape_ && (!trainable_ || trainable_(entry));
            bound_[idx] = track ? tape_->leaf(entry.value) : entry.value;
            is_bound_[idx] = 1;
        }
        return bound_[idx];
    }

    // Gradient for entry idx after tape->backward(); zeros when the entry was
    // never bound as a leaf or never reached by the loss.
    std::vector<T> grad(std::size_t idx) const {
        const auto& entry = store_->entries()[idx];
        if (!tape_ || !is_bound_[idx] || !bound_[idx].tracked())
            return std::vector<T>(entry.value.numel(), T(0));
        return tape_->grad_of(bound_[idx]);
    }

    ParamStore<T>& store() { return *store_; }
    Tape<T>* tape() { return tape_; }

private:
    ParamStore<T>* store_;
    Tape<T>* tape_;
    TrainablePred trainable_;
    std::vector<Tensor<T>> bound_;
    std::vector<char> is_bound_;
};

}  // namespace bare
