#pragma once

// Flat "key = value" configuration with dotted section prefixes. Built-in
// profiles (toy, paper, gradcheck) provide complete defaults; files and
// command-line overrides are merged on top.

#include "bare/common.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace bare {

class Config {
public:
    static Config profile(const std::string& name);
    static Config from_file(const std::string& path);
    // Accepts a profile name or a path to a config file. File values are laid
    // over the profile named by their optional "profile" key (default: toy).
    static Config resolve(const std::string& name_or_path);

    void set(const std::string& key, const std::string& value) { kv_[key] = value; }
    void merge(const Config& other) {
        for (const auto& [k, v] : other.kv_) kv_[k] = v;
    }
    bool has(const std::string& key) const { return kv_.count(key) != 0; }

    const std::string& get_str(const std::string& key) const;
    std::int64_t get_int(const std::string& key) const;
    double get_f64(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<std::size_t> get_size_list(const std::string& key) const;

    std::string dump() const;  // canonical sorted text form
    const std::map<std::string, std::string>& items() const { return kv_; }

    // Keys present in `other` but mapping to different values here.
    std::vector<std::string> diff(const Config& other) const;

private:
    std::map<std::string, std::string> kv_;
};

enum class FreezePolicy { train_all, freeze_base };

FreezePolicy freeze_policy_from(const std::string& s);
const char* freeze_policy_name(FreezePolicy p);

enum class R2ePlacement { before, mid, after };

R2ePlacement r2e_placement_from(const std::string& s);
const char* r2e_placement_name(R2ePlacement p);

struct BackboneConfig {
    std::size_t layers = 6;
    std::size_t dim = 64;
    std::size_t ffn_dim = 256;
    std::size_t heads = 4;
    std::size_t fusion_depth = 3;
    std::vector<std::size_t> vbc_layers = {1, 3, 5};  // 1-indexed, applied after the layer
    R2ePlacement r2e_placement = R2ePlacement::after;
    bool use_lsm = true;
    bool use_vbc = true;
    bool use_r2e = true;
    std::size_t vbc_mlp_mult = 2;
    std::size_t image_size = 64;
    std::size_t patch = 8;
    std::size_t text_max = 32;
    bool lora_enabled = false;
    std::size_t lora_rank = 8;
    double lora_alpha = 16.0;
    FreezePolicy freeze = FreezePolicy::train_all;

    std::size_t visual_tokens() const { return (image_size / patch) * (image_size / patch); }
    std::size_t grid() const { return image_size / patch; }

    static BackboneConfig from(const Config& c);
    void validate() const;
};

struct LossConfig {
    double lambda_l1 = 1.0;
    double lambda_giou = 1.0;
    double lambda_focal = 1.0;
    double lambda_dice = 1.0;
    double focal_gamma = 2.0;
    double focal_alpha = 0.25;
    double dice_eps = 1.0;
    double smooth_l1_beta = 1.0;

    static LossConfig from(const Config& c);
};

struct TrainConfig {
    std::size_t epochs = 40;
    std::size_t batch = 32;
    double lr = 1e-4;
    double weight_decay = 1e-4;
    std::uint64_t seed = 1;
    std::size_t threads = 1;
    std::size_t checkpoint_every = 0;  // epochs between checkpoints; 0 = final only
    std::size_t eval_every = 0;        // epochs between test evals; 0 = never
    double stop_at_accuracy = 0.0;     // early stop once test accuracy reaches this

    static TrainConfig from(const Config& c);
};

struct CorpusConfig {
    std::uint64_t seed = 7;
    std::size_t n_train = 2000;
    std::size_t n_test = 500;
    std::size_t n_probe = 250;
    std::size_t canvas = 64;
    double color_shortcut_rho = 0.9;
    std::string shortcut_shape = "circle";
    std::string shortcut_color = "red";
    double shared_prefix_rate = 0.3;

    static CorpusConfig from(const Config& c);
};

}  // namespace bare
