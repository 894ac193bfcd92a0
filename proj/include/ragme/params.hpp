#pragma once

#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "ragme/graph.hpp"
#include "ragme/io.hpp"
#include "ragme/mat.hpp"
#include "ragme/rng.hpp"

namespace ragme::nn {

template <typename S>
struct Parameter {
    std::string name;
    MatX<S> value;
    MatX<S> m, v;  // Adam moments
    bool trainable = true;
};

// Named node-id handles for one graph build.
using Attached = std::unordered_map<std::string, int>;

template <typename S>
class ParamStore {
public:
    Parameter<S>& add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
        Parameter<S> p;
        p.name = name;
        p.value = MatX<S>::Zero(rows, cols);
        p.m = MatX<S>::Zero(rows, cols);
        p.v = MatX<S>::Zero(rows, cols);
        index_[name] = items_.size();
        items_.push_back(std::move(p));
        return items_.back();
    }

    Parameter<S>& add_normal(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                             Rng& rng, double stddev) {
        Parameter<S>& p = add(name, rows, cols);
        rng.fill_normal(p.value, stddev);
        return p;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Parameter<S>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no parameter: " + name);
        return items_[it->second];
    }

    const Parameter<S>& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no parameter: " + name);
        return items_[it->second];
    }

    std::vector<Parameter<S>>& items() { return items_; }
    const std::vector<Parameter<S>>& items() const { return items_; }

    void set_trainable_all(bool t) {
        for (auto& p : items_) p.trainable = t;
    }

    void set_trainable_prefix(const std::string& prefix, bool t) {
        for (auto& p : items_)
            if (p.name.rfind(prefix, 0) == 0) p.trainable = t;
    }

    // Leaf per parameter. In inference mode no grads are requested anywhere.
    Attached attach(Graph<S>& g, bool train_mode = true) const {
        Attached ids;
        for (const auto& p : items_)
            ids[p.name] = g.leaf(p.value, train_mode && p.trainable);
        return ids;
    }

    uint64_t hash(const std::string& prefix = "") const {
        uint64_t h = 0xcbf29ce484222325ull;
        for (const auto& p : items_) {
            if (!prefix.empty() && p.name.rfind(prefix, 0) != 0) continue;
            h = fnv1a64(p.name.data(), p.name.size(), h);
            h = hash_matrix(p.value, h);
        }
        return h;
    }

    io::BlobMap to_blobs(const std::string& prefix = "") const {
        io::BlobMap blobs;
        for (const auto& p : items_) {
            if (!prefix.empty() && p.name.rfind(prefix, 0) != 0) continue;
            blobs[p.name] = io::to_blob(p.value);
        }
        return blobs;
    }

    void load_blobs(const io::BlobMap& blobs) {
        for (const auto& [name, blob] : blobs) {
            auto it = index_.find(name);
            if (it == index_.end()) throw std::runtime_error("checkpoint has unknown blob: " + name);
            Parameter<S>& p = items_[it->second];
            if (p.value.rows() != blob.rows || p.value.cols() != blob.cols)
                throw std::runtime_error("checkpoint blob shape mismatch: " + name);
            p.value = io::from_blob<S>(blob);
        }
    }

private:
    std::vector<Parameter<S>> items_;
    std::unordered_map<std::string, size_t> index_;
};

template <typename S>
struct AdamConfig {
    S lr = S(1e-3);
    S beta1 = S(0.9);
    S beta2 = S(0.999);
    S eps = S(1e-8);
    S clip_norm = S(0);  // 0 disables clipping
};

template <typename S>
class Adam {
public:
    explicit Adam(AdamConfig<S> cfg = {}) : cfg_(cfg) {}

    // Applies one update from the grads accumulated in `g` for trainable
    // parameters. Gradients are read per-parameter from the attached ids.
    void step(ParamStore<S>& store, Graph<S>& g, const Attached& ids) {
        ++t_;
        S scale = S(1);
        if (cfg_.clip_norm > S(0)) {
            double sq = 0;
            for (auto& p : store.items()) {
                if (!p.trainable) continue;
                sq += double(g.grad(ids.at(p.name)).squaredNorm());
            }
            double norm = std::sqrt(sq);
            if (norm > double(cfg_.clip_norm)) scale = S(double(cfg_.clip_norm) / norm);
        }
        S bc1 = S(1) - std::pow(cfg_.beta1, S(t_));
        S bc2 = S(1) - std::pow(cfg_.beta2, S(t_));
        for (auto& p : store.items()) {
            if (!p.trainable) continue;
            const MatX<S>& grad = g.grad(ids.at(p.name));
            for (Eigen::Index i = 0; i < p.value.size(); ++i) {
                S gi = grad.data()[i] * scale;
                S& m = p.m.data()[i];
                S& v = p.v.data()[i];
                m = cfg_.beta1 * m + (S(1) - cfg_.beta1) * gi;
                v = cfg_.beta2 * v + (S(1) - cfg_.beta2) * gi * gi;
                p.value.data()[i] -= cfg_.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
            }
        }
    }

    int iterations() const { return t_; }
    AdamConfig<S>& config() { return cfg_; }

private:
    AdamConfig<S> cfg_;
    int t_ = 0;
};

}  // namespace ragme::nn
