#include "bare/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace bare {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

Config toy_profile() {
    Config c;
    c.set("profile", "toy");
    c.set("model.layers", "6");
    c.set("model.dim", "64");
    c.set("model.ffn_dim", "256");
    c.set("model.heads", "4");
    c.set("model.fusion_depth", "3");
    c.set("model.vbc_layers", "1,3,5");
    c.set("model.r2e_placement", "after");
    c.set("model.use_lsm", "true");
    c.set("model.use_vbc", "true");
    c.set("model.use_r2e", "true");
    c.set("model.vbc_mlp_mult", "2");
    c.set("image.size", "64");
    c.set("image.patch", "8");
    c.set("text.max_len", "32");
    c.set("lora.enabled", "false");
    c.set("lora.rank", "8");
    c.set("lora.alpha", "16");
    c.set("loss.l1", "1");
    c.set("loss.giou", "1");
    c.set("loss.focal", "1");
    c.set("loss.dice", "1");
    c.set("loss.focal_gamma", "2");
    c.set("loss.focal_alpha", "0.25");
    c.set("loss.dice_eps", "1");
    c.set("loss.smooth_l1_beta", "1");
    c.set("train.epochs", "40");
    c.set("train.batch", "32");
    c.set("train.lr", "1e-4");
    c.set("train.weight_decay", "1e-4");
    c.set("train.freeze", "train-all");
    c.set("train.seed", "1");
    c.set("train.threads", "1");
    c.set("train.checkpoint_every", "0");
    c.set("train.eval_every", "0");
    c.set("train.stop_at_accuracy", "0");
    c.set("corpus.seed", "7");
    c.set("corpus.train", "2000");
    c.set("corpus.test", "500");
    c.set("corpus.probe", "250");
    c.set("corpus.canvas", "64");
    c.set("corpus.color_shortcut_rho", "0.9");
    c.set("corpus.shortcut_shape", "circle");
    c.set("corpus.shortcut_color", "red");
    c.set("corpus.shared_prefix_rate", "0.3");
    return c;
}

Config paper_profile() {
    Config c = toy_profile();
    c.set("profile", "paper");
    c.set("model.layers", "12");
    c.set("model.dim", "768");
    c.set("model.ffn_dim", "3072");
    c.set("model.heads", "12");
    c.set("model.fusion_depth", "6");
    c.set("model.vbc_layers", "1,5,9");
    c.set("image.size", "224");
    c.set("image.patch", "16");
    c.set("text.max_len", "77");
    c.set("lora.enabled", "true");
    c.set("lora.rank", "32");
    c.set("lora.alpha", "16");
    c.set("train.epochs", "60");
    c.set("train.freeze", "freeze-base");
    return c;
}

// Small enough that every parameter element can be probed by central
// differences within the runtime budget.
Config gradcheck_profile() {
    Config c = toy_profile();
    c.set("profile", "gradcheck");
    c.set("model.layers", "3");
    c.set("model.dim", "16");
    c.set("model.ffn_dim", "32");
    c.set("model.heads", "2");
    c.set("model.fusion_depth", "2");
    c.set("model.vbc_layers", "1,3");
    c.set("image.size", "16");
    c.set("image.patch", "8");
    c.set("text.max_len", "8");
    c.set("lora.enabled", "true");
    c.set("lora.rank", "2");
    c.set("corpus.canvas", "16");
    return c;
}

}  // namespace

Config Config::profile(const std::string& name) {
    if (name == "toy") return toy_profile();
    if (name == "paper") return paper_profile();
    if (name == "gradcheck") return gradcheck_profile();
    throw ConfigError("unknown config profile: " + name);
}

Config Config::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    Config c;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
        c.set(key, value);
    }
    return c;
}

Config Config::resolve(const std::string& name_or_path) {
    if (name_or_path == "toy" || name_or_path == "paper" || name_or_path == "gradcheck")
        return profile(name_or_path);
    Config file = from_file(name_or_path);
    Config base = profile(file.has("profile") ? file.get_str("profile") : "toy");
    base.merge(file);
    return base;
}

const std::string& Config::get_str(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError("missing config key: " + key);
    return it->second;
}

std::int64_t Config::get_int(const std::string& key) const {
    const std::string& s = get_str(key);
    try {
        std::size_t pos = 0;
        const std::int64_t v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": expected integer, got '" + s + "'");
    }
}

double Config::get_f64(const std::string& key) const {
    const std::string& s = get_str(key);
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": expected number, got '" + s + "'");
    }
}

bool Config::get_bool(const std::string& key) const {
    const std::string& s = get_str(key);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError("config key " + key + ": expected boolean, got '" + s + "'");
}

std::vector<std::size_t> Config::get_size_list(const std::string& key) const {
    const std::string& s = get_str(key);
    std::vector<std::size_t> out;
    if (trim(s).empty() || trim(s) == "none") return out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ',')) {
        part = trim(part);
        try {
            out.push_back(static_cast<std::size_t>(std::stoull(part)));
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + ": expected size list, got '" + s + "'");
        }
    }
    return out;
}

std::string Config::dump() const {
    std::ostringstream os;
    for (const auto& [k, v] : kv_) os << k << " = " << v << "\n";
    return os.str();
}

std::vector<std::string> Config::diff(const Config& other) const {
    std::vector<std::string> keys;
    for (const auto& [k, v] : other.kv_) {
        auto it = kv_.find(k);
        if (it == kv_.end() || it->second != v) keys.push_back(k);
    }
    for (const auto& [k, v] : kv_)
        if (!other.kv_.count(k)) keys.push_back(k);
    std::sort(keys.begin(), keys.end());
    return keys;
}

FreezePolicy freeze_policy_from(const std::string& s) {
    if (s == "train-all") return FreezePolicy::train_all;
    if (s == "freeze-base") return FreezePolicy::freeze_base;
    throw ConfigError("unknown freeze policy: " + s);
}

const char* freeze_policy_name(FreezePolicy p) {
    return p == FreezePolicy::train_all ? "train-all" : "freeze-base";
}

R2ePlacement r2e_placement_from(const std::string& s) {
    if (s == "before") return R2ePlacement::before;
    if (s == "mid") return R2ePlacement::mid;
    if (s == "after") return R2ePlacement::after;
    throw ConfigError("unknown r2e placement: " + s);
}

const char* r2e_placement_name(R2ePlacement p) {
    switch (p) {
        case R2ePlacement::before: return "before";
        case R2ePlacement::mid: return "mid";
        case R2ePlacement::after: return "after";
    }
    return "?";
}

BackboneConfig BackboneConfig::from(const Config& c) {
    BackboneConfig b;
    b.layers = static_cast<std::size_t>(c.get_int("model.layers"));
    b.dim = static_cast<std::size_t>(c.get_int("model.dim"));
    b.ffn_dim = static_cast<std::size_t>(c.get_int("model.ffn_dim"));
    b.heads = static_cast<std::size_t>(c.get_int("model.heads"));
    b.fusion_depth = static_cast<std::size_t>(c.get_int("model.fusion_depth"));
    b.vbc_layers = c.get_size_list("model.vbc_layers");
    b.r2e_placement = r2e_placement_from(c.get_str("model.r2e_placement"));
    b.use_lsm = c.get_bool("model.use_lsm");
    b.use_vbc = c.get_bool("model.use_vbc");
    b.use_r2e = c.get_bool("model.use_r2e");
    b.vbc_mlp_mult = static_cast<std::size_t>(c.get_int("model.vbc_mlp_mult"));
    b.image_size = static_cast<std::size_t>(c.get_int("image.size"));
    b.patch = static_cast<std::size_t>(c.get_int("image.patch"));
    b.text_max = static_cast<std::size_t>(c.get_int("text.max_len"));
    b.lora_enabled = c.get_bool("lora.enabled");
    b.lora_rank = static_cast<std::size_t>(c.get_int("lora.rank"));
    b.lora_alpha = c.get_f64("lora.alpha");
    b.freeze = freeze_policy_from(c.get_str("train.freeze"));
    b.validate();
    return b;
}

void BackboneConfig::validate() const {
    if (layers == 0 || dim == 0 || ffn_dim == 0 || heads == 0)
        throw ConfigError("backbone: dimensions must be positive");
    if (dim % heads != 0)
        throw ConfigError("backbone: dim " + std::to_string(dim) + " not divisible by heads " +
                          std::to_string(heads));
    if (image_size % patch != 0)
        throw ConfigError("backbone: image size " + std::to_string(image_size) +
                          " not divisible by patch " + std::to_string(patch));
    for (auto l : vbc_layers)
        if (l < 1 || l > layers)
            throw ConfigError("backbone: vbc insertion layer " + std::to_string(l) +
                              " outside [1, " + std::to_string(layers) + "]");
    if (text_max < 2) throw ConfigError("backbone: text.max_len must be at least 2");
    if (lora_enabled && lora_rank == 0) throw ConfigError("backbone: lora rank must be positive");
}

LossConfig LossConfig::from(const Config& c) {
    LossConfig l;
    l.lambda_l1 = c.get_f64("loss.l1");
    l.lambda_giou = c.get_f64("loss.giou");
    l.lambda_focal = c.get_f64("loss.focal");
    l.lambda_dice = c.get_f64("loss.dice");
    l.focal_gamma = c.get_f64("loss.focal_gamma");
    l.focal_alpha = c.get_f64("loss.focal_alpha");
    l.dice_eps = c.get_f64("loss.dice_eps");
    l.smooth_l1_beta = c.get_f64("loss.smooth_l1_beta");
    return l;
}

TrainConfig TrainConfig::from(const Config& c) {
    TrainConfig t;
    t.epochs = static_cast<std::size_t>(c.get_int("train.epochs"));
    t.batch = static_cast<std::size_t>(c.get_int("train.batch"));
    t.lr = c.get_f64("train.lr");
    t.weight_decay = c.get_f64("train.weight_decay");
    t.seed = static_cast<std::uint64_t>(c.get_int("train.seed"));
    t.threads = static_cast<std::size_t>(c.get_int("train.threads"));
    t.checkpoint_every = static_cast<std::size_t>(c.get_int("train.checkpoint_every"));
    t.eval_every = static_cast<std::size_t>(c.get_int("train.eval_every"));
    t.stop_at_accuracy = c.get_f64("train.stop_at_accuracy");
    if (t.batch == 0 || t.epochs == 0) throw ConfigError("train: epochs and batch must be positive");
    if (t.threads == 0) throw ConfigError("train: threads must be positive");
    return t;
}

CorpusConfig CorpusConfig::from(const Config& c) {
    CorpusConfig g;
    g.seed = static_cast<std::uint64_t>(c.get_int("corpus.seed"));
    g.n_train = static_cast<std::size_t>(c.get_int("corpus.train"));
    g.n_test = static_cast<std::size_t>(c.get_int("corpus.test"));
    g.n_probe = static_cast<std::size_t>(c.get_int("corpus.probe"));
    g.canvas = static_cast<std::size_t>(c.get_int("corpus.canvas"));
    g.color_shortcut_rho = c.get_f64("corpus.color_shortcut_rho");
    g.shortcut_shape = c.get_str("corpus.shortcut_shape");
    g.shortcut_color = c.get_str("corpus.shortcut_color");
    g.shared_prefix_rate = c.get_f64("corpus.shared_prefix_rate");
    if (g.color_shortcut_rho < 0.0 || g.color_shortcut_rho > 1.0)
        throw ConfigError("corpus: color_shortcut_rho must be in [0,1]");
    if (g.shared_prefix_rate < 0.0 || g.shared_prefix_rate > 1.0)
        throw ConfigError("corpus: shared_prefix_rate must be in [0,1]");
    return g;
}

}  // namespace bare
