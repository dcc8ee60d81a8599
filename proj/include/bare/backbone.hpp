#pragma once

// The modality-shared encoder with low-rank adapters and module insertion
// hooks, the fusion encoder with its regression token, the box head, and the
// checkpoint format.

#include "bare/attention.hpp"
#include "bare/box.hpp"
#include "bare/config.hpp"
#include "bare/lsm.hpp"
#include "bare/params.hpp"
#include "bare/r2e.hpp"
#include "bare/tokenize.hpp"
#include "bare/vbc.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace bare {

// -------------------------------------------------------------- diagnostics ---

struct AttnRecord {
    std::size_t layer = 0;          // 1-indexed encoder layer, 0 for pre-encoder
    std::string kind;               // "vbc-pre" | "vbc-post" | "r2e"
    std::size_t rows = 0, cols = 0;
    std::vector<double> probs;      // row-stochastic
};

struct ForwardDiag {
    bool capture_attention = false;
    int vbc_applications = 0;
    int r2e_applications = 0;
    std::vector<AttnRecord> maps;
    std::vector<LsmGateRecord> lsm_gates;
};

template <typename T>
struct ForwardOut {
    Tensor<T> x_star;  // (N + M_max) x C encoder output
    Tensor<T> v_rows;  // N x C
    Tensor<T> t_eos;   // 1 x C
    Tensor<T> v_pool;  // 1 x C
    Tensor<T> box;     // 1 x 4, (cx, cy, w, h) in (0,1)
};

struct ParamCounts {
    std::size_t total = 0;
    std::size_t trainable = 0;
    double ratio = 0.0;
    std::map<std::string, std::size_t> by_category;
};

// ------------------------------------------------------------------- model ---

template <typename T>
class Model {
public:
    Model(BackboneConfig cfg, std::size_t vocab_size, std::uint64_t seed)
        : cfg_(std::move(cfg)), vocab_size_(vocab_size) {
        cfg_.validate();
        register_params(seed);
    }

    Model(BackboneConfig cfg, std::size_t vocab_size, ParamStore<T> store)
        : cfg_(std::move(cfg)), vocab_size_(vocab_size), store_(std::move(store)) {
        cfg_.validate();
    }

    const BackboneConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return store_; }
    const ParamStore<T>& params() const { return store_; }
    std::size_t vocab_size() const { return vocab_size_; }

    bool entry_trainable(const typename ParamStore<T>::Entry& e) const {
        if (cfg_.freeze == FreezePolicy::train_all) return true;
        return e.category != ParamCategory::base;
    }

    ParamCounts count_parameters() const {
        ParamCounts out;
        for (const auto& e : store_.entries()) {
            out.total += e.value.numel();
            out.by_category[category_name(e.category)] += e.value.numel();
            if (entry_trainable(e)) out.trainable += e.value.numel();
        }
        out.ratio = out.total ? double(out.trainable) / double(out.total) : 0.0;
        return out;
    }

    ForwardOut<T> forward(const RasterU8& img, const TextTokens& tokens, Tape<T>* tape,
                          ForwardDiag* diag = nullptr) {
        BoundParams<T> bp(store_, tape,
                          [this](const auto& e) { return entry_trainable(e); });
        return forward_bound(bp, img, tokens, diag);
    }

    Box predict(const RasterU8& img, const TextTokens& tokens, ForwardDiag* diag = nullptr) {
        auto out = forward(img, tokens, nullptr, diag);
        return Box{double(out.box.data()[0]), double(out.box.data()[1]),
                   double(out.box.data()[2]), double(out.box.data()[3])};
    }

    // Folds every adapter into its base matrix; the merged model carries no
    // adapter parameters.
    Model<T> merged() const {
        BackboneConfig mc = cfg_;
        mc.lora_enabled = false;
        ParamStore<T> ms;
        for (const auto& e : store_.entries()) {
            if (e.category == ParamCategory::adapter) continue;
            Tensor<T> value = Tensor<T>(e.value.shape(), e.value.data());
            if (cfg_.lora_enabled && e.category == ParamCategory::base) {
                const std::string a_name = adapter_name_for(e.name, "A");
                if (store_.has(a_name)) {
                    const auto& a = store_.value(a_name);                       // r x in
                    const auto& b = store_.value(adapter_name_for(e.name, "B"));  // out x r
                    const T s = T(cfg_.lora_alpha / double(cfg_.lora_rank));
                    const std::size_t in = value.rows(), out_d = value.cols(),
                                      r = cfg_.lora_rank;
                    for (std::size_t i = 0; i < in; ++i)
                        for (std::size_t j = 0; j < out_d; ++j) {
                            T acc = T(0);
                            for (std::size_t p = 0; p < r; ++p)
                                acc += b.ptr()[j * r + p] * a.ptr()[p * in + i];
                            value.ptr_mut()[i * out_d + j] += s * acc;
                        }
                }
            }
            ms.add(e.name, e.category, std::move(value));
        }
        return Model<T>(mc, vocab_size_, std::move(ms));
    }

    // --------------------------------------------------------------- pieces ---

    ForwardOut<T> forward_bound(BoundParams<T>& bp, const RasterU8& img,
                                const TextTokens& tokens, ForwardDiag* diag) {
        const std::size_t n = cfg_.visual_tokens();
        const std::size_t m = cfg_.text_max;
        const std::size_t c = cfg_.dim;
        if (tokens.ids.size() != m)
            throw ShapeError("forward: token length " + std::to_string(tokens.ids.size()) +
                             " does not match text.max_len " + std::to_string(m));
        if (img.width != cfg_.image_size || img.height != cfg_.image_size)
            throw ShapeError("forward: raster " + std::to_string(img.width) + "x" +
                             std::to_string(img.height) + " does not match image.size " +
                             std::to_string(cfg_.image_size));

        // tokenizer stage
        auto f_v = patch_embed(patch_matrix<T>(img, cfg_.patch), bp("tok.patch_proj"),
                               bp("tok.pos_visual"));
        auto f_t = embed_text(tokens, bp("tok.word_emb"), bp("tok.pos_text"));

        auto text_mask = mask_column<T>(tokens);
        Tensor<T> joint_mask({n + m, 1});
        for (std::size_t i = 0; i < n; ++i) joint_mask.ptr_mut()[i] = T(1);
        for (std::size_t i = 0; i < m; ++i) joint_mask.ptr_mut()[n + i] = text_mask.ptr()[i];

        if (cfg_.use_lsm) {
            if (diag) diag->lsm_gates = lsm_gate_dump(untracked(f_t), text_mask, lsm_values());
            f_t = lsm_forward(f_t, text_mask, lsm_pieces(bp));
        }

        auto x = concat_rows<T>({f_v, f_t});

        // module schedule
        std::vector<std::size_t> vbc_at = cfg_.use_vbc ? cfg_.vbc_layers : std::vector<std::size_t>{};
        std::size_t r2e_at = 0;
        bool r2e_before = false;
        if (cfg_.use_r2e) {
            switch (cfg_.r2e_placement) {
                case R2ePlacement::before: r2e_before = true; break;
                case R2ePlacement::after: r2e_at = cfg_.layers; break;
                case R2ePlacement::mid: {
                    const std::size_t mid = (cfg_.layers + 1) / 2;
                    r2e_at = mid;
                    for (auto& l : vbc_at)
                        if (l == mid) l = cfg_.layers;  // swapped slot
                    break;
                }
            }
        }

        VbcState<T> vbc_state;
        auto vbc = cfg_.use_vbc ? std::optional<VbcPieces<T>>(vbc_pieces(bp)) : std::nullopt;
        auto r2e = cfg_.use_r2e ? std::optional<R2ePieces<T>>(r2e_pieces(bp)) : std::nullopt;

        auto run_r2e = [&](Tensor<T> in, std::size_t layer) {
            std::vector<double> attn;
            auto out = r2e_forward(in, n, m, text_mask, *r2e,
                                   diag && diag->capture_attention ? &attn : nullptr);
            if (diag) {
                diag->r2e_applications += 1;
                if (diag->capture_attention)
                    diag->maps.push_back(make_text_attn_record(layer, "r2e", attn, tokens, n, m));
            }
            return out;
        };

        if (cfg_.use_r2e && r2e_before) x = run_r2e(std::move(x), 0);

        for (std::size_t layer = 1; layer <= cfg_.layers; ++layer) {
            const bool vbc_here =
                cfg_.use_vbc && std::count(vbc_at.begin(), vbc_at.end(), layer) > 0;
            std::vector<double> enc_attn;
            x = transformer_layer(bp, x, "enc.L" + std::to_string(layer), joint_mask, true,
                                  vbc_here && diag && diag->capture_attention ? &enc_attn
                                                                              : nullptr);
            if (vbc_here) {
                if (diag && diag->capture_attention)
                    diag->maps.push_back(make_visual_crop_record(layer, "vbc-pre", enc_attn, n, m));
                std::vector<double> a_v;
                x = vbc_forward(x, n, m, vbc_state, *vbc, text_mask,
                                diag && diag->capture_attention ? &a_v : nullptr);
                if (diag) {
                    diag->vbc_applications += 1;
                    if (diag->capture_attention) {
                        AttnRecord rec;
                        rec.layer = layer;
                        rec.kind = "vbc-post";
                        rec.rows = n;
                        rec.cols = n;
                        rec.probs = std::move(a_v);
                        diag->maps.push_back(std::move(rec));
                    }
                }
            }
            if (cfg_.use_r2e && !r2e_before && layer == r2e_at) x = run_r2e(std::move(x), layer);
        }

        ForwardOut<T> out;
        out.x_star = x;
        auto parts = split_rows(x, {n, m});
        out.v_rows = parts[0];
        out.v_pool = mean_rows(parts[0]);
        out.t_eos = row_select(x, n + tokens.length - 1);

        // fusion encoder over [REG; X*]
        auto x_g = concat_rows<T>({bp("head.reg"), x});
        Tensor<T> fusion_mask({1 + n + m, 1});
        fusion_mask.ptr_mut()[0] = T(1);
        for (std::size_t i = 0; i < n + m; ++i)
            fusion_mask.ptr_mut()[1 + i] = joint_mask.ptr()[i];
        for (std::size_t fl = 1; fl <= cfg_.fusion_depth; ++fl)
            x_g = transformer_layer(bp, x_g, "fusion.L" + std::to_string(fl), fusion_mask, false);

        auto reg_row = row_select(x_g, 0);
        auto hidden = gelu(add(matmul(reg_row, bp("head.mlp1.w")), bp("head.mlp1.b")));
        out.box = sigmoid(add(matmul(hidden, bp("head.mlp2.w")), bp("head.mlp2.b")));
        return out;
    }

    LsmPieces<T> lsm_pieces(BoundParams<T>& bp) {
        LsmPieces<T> p;
        p.w_h = bp("lsm.w_h");
        p.ln_gain = bp("lsm.ln.gain");
        p.ln_bias = bp("lsm.ln.bias");
        p.w_r = bp("lsm.w_r");
        p.w_b = bp("lsm.w_b");
        p.l_bias = bp("lsm.l_bias");
        p.alpha_raw = bp("lsm.alpha");
        p.lambda = bp("lsm.lambda");
        return p;
    }

    // Untracked view of the LSM parameters, for diagnostics.
    LsmPieces<T> lsm_values() {
        LsmPieces<T> p;
        p.w_h = store_.value("lsm.w_h");
        p.ln_gain = store_.value("lsm.ln.gain");
        p.ln_bias = store_.value("lsm.ln.bias");
        p.w_r = store_.value("lsm.w_r");
        p.w_b = store_.value("lsm.w_b");
        p.l_bias = store_.value("lsm.l_bias");
        p.alpha_raw = store_.value("lsm.alpha");
        p.lambda = store_.value("lsm.lambda");
        return p;
    }

    VbcPieces<T> vbc_pieces(BoundParams<T>& bp) {
        VbcPieces<T> p;
        p.prototypes = bp("vbc.prototypes");
        p.w_q = bp("vbc.dec.wq");
        p.w_k = bp("vbc.dec.wk");
        p.w_v = bp("vbc.dec.wv");
        p.mlp_up = Linear<T>{bp("vbc.mlp1.w"), bp("vbc.mlp1.b")};
        p.mlp_down = Linear<T>{bp("vbc.mlp2.w"), bp("vbc.mlp2.b")};
        p.debias = mha_pieces(bp, "vbc.attn");
        return p;
    }

    R2ePieces<T> r2e_pieces(BoundParams<T>& bp) {
        R2ePieces<T> p;
        p.w_v = bp("r2e.w_v");
        p.mlp_up = Linear<T>{bp("r2e.mlp1.w"), bp("r2e.mlp1.b")};
        p.mlp_down = Linear<T>{bp("r2e.mlp2.w"), bp("r2e.mlp2.b")};
        p.self_attn = mha_pieces(bp, "r2e.self");
        p.cross_attn = mha_pieces(bp, "r2e.cross");
        return p;
    }

private:
    BackboneConfig cfg_;
    std::size_t vocab_size_ = 0;
    ParamStore<T> store_;

    static Tensor<T> untracked(const Tensor<T>& t) { return Tensor<T>(t.shape(), t.data()); }

    static std::string adapter_name_for(const std::string& base_name, const char* which) {
        // enc.L3.attn.wq -> lora.L3.attn.wq.A
        if (base_name.rfind("enc.", 0) != 0) return {};
        return "lora." + base_name.substr(4) + "." + which;
    }

    MhaParams<T> mha_pieces(BoundParams<T>& bp, const std::string& prefix,
                            bool with_lora = false) {
        MhaParams<T> p;
        p.heads = cfg_.heads;
        auto lin = [&](const char* which, bool lora_target) {
            Linear<T> l{bp(prefix + "." + which + ".w"), bp(prefix + "." + which + ".b")};
            if (with_lora && lora_target && cfg_.lora_enabled) {
                const std::string an = "lora." + prefix.substr(4) + "." + which + ".w.A";
                const std::string bn = "lora." + prefix.substr(4) + "." + which + ".w.B";
                l.lora = std::make_pair(bp(an), bp(bn));
                l.lora_scale = T(cfg_.lora_alpha / double(cfg_.lora_rank));
            }
            return l;
        };
        p.q = lin("wq", true);
        p.k = lin("wk", true);
        p.v = lin("wv", true);
        p.o = lin("wo", false);
        return p;
    }

    Linear<T> ffn_linear(BoundParams<T>& bp, const std::string& name, bool with_lora) {
        Linear<T> l{bp(name + ".w"), bp(name + ".b")};
        if (with_lora && cfg_.lora_enabled) {
            l.lora = std::make_pair(bp("lora." + name.substr(4) + ".w.A"),
                                    bp("lora." + name.substr(4) + ".w.B"));
            l.lora_scale = T(cfg_.lora_alpha / double(cfg_.lora_rank));
        }
        return l;
    }

    // Post-LN transformer layer (sublayer, residual add, then LN); padded
    // rows are re-zeroed on the way out.
    Tensor<T> transformer_layer(BoundParams<T>& bp, const Tensor<T>& x, const std::string& base,
                                const Tensor<T>& keep, bool with_lora,
                                std::vector<double>* attn_mean = nullptr) {
        auto attn = mha_pieces(bp, base + ".attn", with_lora);
        auto up = ffn_linear(bp, base + ".ffn1", with_lora);
        auto down = ffn_linear(bp, base + ".ffn2", with_lora);
        auto h = layer_norm(add(x, multi_head_attention(x, x, attn, &keep, attn_mean)),
                            bp(base + ".ln1.gain"), bp(base + ".ln1.bias"), T(1e-5));
        auto out = layer_norm(add(h, feed_forward(h, up, down)), bp(base + ".ln2.gain"),
                              bp(base + ".ln2.bias"), T(1e-5));
        return zero_rows(out, keep);
    }

    static AttnRecord make_visual_crop_record(std::size_t layer, const char* kind,
                                              const std::vector<double>& joint, std::size_t n,
                                              std::size_t m) {
        // visual-query/visual-key crop of the (n+m)^2 map, rows renormalized
        AttnRecord rec;
        rec.layer = layer;
        rec.kind = kind;
        rec.rows = n;
        rec.cols = n;
        rec.probs.resize(n * n);
        const std::size_t w = n + m;
        for (std::size_t i = 0; i < n; ++i) {
            double sum = 0;
            for (std::size_t j = 0; j < n; ++j) sum += joint[i * w + j];
            for (std::size_t j = 0; j < n; ++j)
                rec.probs[i * n + j] = sum > 0 ? joint[i * w + j] / sum : 0.0;
        }
        return rec;
    }

    static AttnRecord make_text_attn_record(std::size_t layer, const char* kind,
                                            const std::vector<double>& attn,
                                            const TextTokens& tokens, std::size_t n,
                                            std::size_t m) {
        // keep only real text query rows
        AttnRecord rec;
        rec.layer = layer;
        rec.kind = kind;
        rec.rows = tokens.length;
        rec.cols = n;
        rec.probs.resize(tokens.length * n);
        for (std::size_t i = 0; i < tokens.length; ++i)
            for (std::size_t j = 0; j < n; ++j) rec.probs[i * n + j] = attn[i * n + j];
        return rec;
    }

    void register_params(std::uint64_t seed) {
        const std::size_t c = cfg_.dim;
        const std::size_t n = cfg_.visual_tokens();
        const std::size_t pd = cfg_.patch * cfg_.patch * 3;
        auto& s = store_;

        s.add_normal("tok.patch_proj", ParamCategory::base, {pd, c}, 0.02, seed);
        s.add_normal("tok.pos_visual", ParamCategory::base, {n, c}, 0.02, seed);
        s.add_normal("tok.word_emb", ParamCategory::base, {vocab_size_, c}, 0.02, seed);
        s.add_normal("tok.pos_text", ParamCategory::base, {cfg_.text_max, c}, 0.02, seed);

        auto add_linear = [&](const std::string& name, ParamCategory cat, std::size_t in,
                              std::size_t out) {
            s.add_normal(name + ".w", cat, {in, out}, 0.02, seed);
            s.add_const(name + ".b", cat, {1, out}, 0.0);
        };
        auto add_ln = [&](const std::string& name, ParamCategory cat) {
            s.add_const(name + ".gain", cat, {1, c}, 1.0);
            s.add_const(name + ".bias", cat, {1, c}, 0.0);
        };
        auto add_mha = [&](const std::string& base, ParamCategory cat) {
            add_linear(base + ".wq", cat, c, c);
            add_linear(base + ".wk", cat, c, c);
            add_linear(base + ".wv", cat, c, c);
            add_linear(base + ".wo", cat, c, c);
        };
        auto add_layer = [&](const std::string& base, ParamCategory cat) {
            add_mha(base + ".attn", cat);
            add_linear(base + ".ffn1", cat, c, cfg_.ffn_dim);
            add_linear(base + ".ffn2", cat, cfg_.ffn_dim, c);
            add_ln(base + ".ln1", cat);
            add_ln(base + ".ln2", cat);
        };
        auto add_adapter = [&](const std::string& target, std::size_t in, std::size_t out) {
            s.add_normal("lora." + target + ".A", ParamCategory::adapter,
                         {cfg_.lora_rank, in}, 0.02, seed);
            s.add_const("lora." + target + ".B", ParamCategory::adapter, {out, cfg_.lora_rank},
                        0.0);
        };

        for (std::size_t l = 1; l <= cfg_.layers; ++l) {
            const std::string base = "enc.L" + std::to_string(l);
            add_layer(base, ParamCategory::base);
            if (cfg_.lora_enabled) {
                const std::string sl = "L" + std::to_string(l);
                add_adapter(sl + ".attn.wq.w", c, c);
                add_adapter(sl + ".attn.wk.w", c, c);
                add_adapter(sl + ".attn.wv.w", c, c);
                add_adapter(sl + ".ffn1.w", c, cfg_.ffn_dim);
                add_adapter(sl + ".ffn2.w", cfg_.ffn_dim, c);
            }
        }

        if (cfg_.use_lsm) {
            s.add_normal("lsm.w_h", ParamCategory::lsm, {c, c}, 0.02, seed);
            add_ln("lsm.ln", ParamCategory::lsm);
            s.add_normal("lsm.w_r", ParamCategory::lsm, {c, 1}, 0.02, seed);
            s.add_normal("lsm.w_b", ParamCategory::lsm, {c, 1}, 0.02, seed);
            s.add_normal("lsm.l_bias", ParamCategory::lsm, {cfg_.text_max, c}, 0.02, seed);
            s.add_const("lsm.alpha", ParamCategory::lsm, {1, 1}, 0.0);  // sigmoid -> 0.5
            s.add_const("lsm.lambda", ParamCategory::lsm, {1, 1}, 0.1);
        }

        if (cfg_.use_vbc) {
            s.add_normal("vbc.prototypes", ParamCategory::vbc, {n, c}, 0.02, seed);
            s.add_normal("vbc.dec.wq", ParamCategory::vbc, {c, c}, 0.02, seed);
            s.add_normal("vbc.dec.wk", ParamCategory::vbc, {c, c}, 0.02, seed);
            s.add_normal("vbc.dec.wv", ParamCategory::vbc, {c, c}, 0.02, seed);
            add_linear("vbc.mlp1", ParamCategory::vbc, c, cfg_.vbc_mlp_mult * c);
            add_linear("vbc.mlp2", ParamCategory::vbc, cfg_.vbc_mlp_mult * c, c);
            add_mha("vbc.attn", ParamCategory::vbc);
        }

        if (cfg_.use_r2e) {
            s.add_const("r2e.w_v", ParamCategory::r2e, {n, c}, 0.0);
            add_linear("r2e.mlp1", ParamCategory::r2e, c, 2 * c);
            add_linear("r2e.mlp2", ParamCategory::r2e, 2 * c, c);
            add_mha("r2e.self", ParamCategory::r2e);
            add_mha("r2e.cross", ParamCategory::r2e);
        }

        for (std::size_t l = 1; l <= cfg_.fusion_depth; ++l)
            add_layer("fusion.L" + std::to_string(l), ParamCategory::fusion);

        s.add_normal("head.reg", ParamCategory::head, {1, c}, 0.02, seed);
        add_linear("head.mlp1", ParamCategory::head, c, c);
        add_linear("head.mlp2", ParamCategory::head, c, 4);

        s.add_const("align.logit_scale", ParamCategory::align, {1, 1},
                    2.6592600369327783);  // log(1/0.07)
        s.add_const("align.rta_scale", ParamCategory::align, {1, 1}, 10.0);
        s.add_normal("align.pta.w", ParamCategory::align, {c, 1}, 0.02, seed);
        s.add_const("align.pta.b", ParamCategory::align, {1, 1}, 0.0);
    }
};

// --------------------------------------------------------------- checkpoint ---

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}
inline void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), 8);
}
inline std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
inline std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

template <typename T>
constexpr std::uint8_t dtype_tag() {
    return sizeof(T) == 4 ? 0 : 1;
}

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kCheckpointFlagUnmergedAdapters = 1u << 0;

// Layout: "BARE" magic, version, flags, config block, then one record per
// parameter: name length, name, rank, dims, dtype tag, little-endian payload.
template <typename T>
void save_checkpoint(const std::string& path, const Config& config,
                     const ParamStore<T>& store) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint " + path);
    os.write("BARE", 4);
    detail::write_u32(os, kCheckpointVersion);
    std::uint32_t flags = 0;
    for (const auto& e : store.entries())
        if (e.category == ParamCategory::adapter) flags |= kCheckpointFlagUnmergedAdapters;
    detail::write_u32(os, flags);
    const std::string cfg_text = config.dump();
    detail::write_u64(os, cfg_text.size());
    os.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));
    detail::write_u64(os, store.entries().size());
    for (const auto& e : store.entries()) {
        detail::write_u32(os, static_cast<std::uint32_t>(e.name.size()));
        os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        detail::write_u32(os, static_cast<std::uint32_t>(e.value.shape().size()));
        for (auto d : e.value.shape()) detail::write_u64(os, d);
        const std::uint8_t tag = detail::dtype_tag<T>();
        os.write(reinterpret_cast<const char*>(&tag), 1);
        os.write(reinterpret_cast<const char*>(e.value.ptr()),
                 static_cast<std::streamsize>(e.value.numel() * sizeof(T)));
    }
    if (!os) throw IoError("short write to checkpoint " + path);
}

struct CheckpointMeta {
    std::uint32_t version = 0;
    std::uint32_t flags = 0;
    Config config;
};

template <typename T>
CheckpointMeta load_checkpoint(const std::string& path, ParamStore<T>& store_out) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read checkpoint " + path);
    char magic[4] = {};
    is.read(magic, 4);
    if (std::memcmp(magic, "BARE", 4) != 0) throw IoError(path + ": bad checkpoint magic");
    CheckpointMeta meta;
    meta.version = detail::read_u32(is);
    if (meta.version != kCheckpointVersion)
        throw IoError(path + ": unsupported checkpoint version " + std::to_string(meta.version));
    meta.flags = detail::read_u32(is);
    const std::uint64_t cfg_len = detail::read_u64(is);
    std::string cfg_text(cfg_len, '\0');
    is.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len));
    {
        std::istringstream ss(cfg_text);
        std::string line;
        while (std::getline(ss, line)) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            auto trim = [](std::string s) {
                while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
                    s.erase(s.begin());
                while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
                    s.pop_back();
                return s;
            };
            meta.config.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
    }
    const std::uint64_t count = detail::read_u64(is);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = detail::read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const std::uint32_t rank = detail::read_u32(is);
        Shape shape(rank);
        for (auto& d : shape) d = detail::read_u64(is);
        std::uint8_t tag = 0;
        is.read(reinterpret_cast<char*>(&tag), 1);
        if (tag != detail::dtype_tag<T>())
            throw IoError(path + ": dtype tag mismatch for " + name);
        Tensor<T> value(shape);
        is.read(reinterpret_cast<char*>(value.ptr_mut()),
                static_cast<std::streamsize>(value.numel() * sizeof(T)));
        ParamCategory cat = ParamCategory::base;
        if (name.rfind("lora.", 0) == 0) cat = ParamCategory::adapter;
        else if (name.rfind("lsm.", 0) == 0) cat = ParamCategory::lsm;
        else if (name.rfind("vbc.", 0) == 0) cat = ParamCategory::vbc;
        else if (name.rfind("r2e.", 0) == 0) cat = ParamCategory::r2e;
        else if (name.rfind("fusion.", 0) == 0) cat = ParamCategory::fusion;
        else if (name.rfind("head.", 0) == 0) cat = ParamCategory::head;
        else if (name.rfind("align.", 0) == 0) cat = ParamCategory::align;
        store_out.add(name, cat, std::move(value));
    }
    if (!is) throw IoError(path + ": truncated checkpoint");
    return meta;
}

}  // namespace bare
