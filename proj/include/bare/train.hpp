#pragma once

// Optimizer, batched loss/gradient evaluation, the training loop, accuracy
// evaluation, and the diagnostic dumps.

#include "bare/backbone.hpp"
#include "bare/gradcheck.hpp"
#include "bare/losses.hpp"
#include "bare/synthetic.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace bare {

// ------------------------------------------------------------ parallel for ---

// Deterministic work split: worker w handles indices w, w+threads, ...; the
// callee must not depend on execution order across indices.
inline void parallel_for(std::size_t n, std::size_t threads,
                         const std::function<void(std::size_t)>& body) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    const std::size_t workers = std::min(threads, n);
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) body(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// ----------------------------------------------------------------- AdamW ---

// Decoupled weight decay: the decay shrinks the parameter directly and is not
// part of the moment statistics.
template <typename T>
class AdamW {
public:
    AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8)
        : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParamStore<T>& params, const std::vector<std::size_t>& indices,
              const std::vector<std::vector<T>>& grads) {
        if (slots_.empty()) slots_.resize(params.size());
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, double(t_));
        const double bc2 = 1.0 - std::pow(beta2_, double(t_));
        for (std::size_t gi = 0; gi < indices.size(); ++gi) {
            const std::size_t pi = indices[gi];
            auto& entry = params.entries()[pi];
            const auto& g = grads[gi];
            for (const T gv : g)
                if (!std::isfinite(double(gv)))
                    throw NumericError("adamw: non-finite gradient for " + entry.name);
            auto& slot = slots_[pi];
            if (slot.m.empty()) {
                slot.m.assign(g.size(), T(0));
                slot.v.assign(g.size(), T(0));
            }
            auto& data = entry.value.data_mut();
            for (std::size_t i = 0; i < g.size(); ++i) {
                slot.m[i] = T(beta1_) * slot.m[i] + T(1.0 - beta1_) * g[i];
                slot.v[i] = T(beta2_) * slot.v[i] + T(1.0 - beta2_) * g[i] * g[i];
                const double mhat = double(slot.m[i]) / bc1;
                const double vhat = double(slot.v[i]) / bc2;
                data[i] -= T(lr_ * wd_) * data[i];
                data[i] -= T(lr_ * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    std::size_t steps() const { return t_; }

private:
    struct Slot {
        std::vector<T> m, v;
    };
    double lr_, wd_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::vector<Slot> slots_;
};

// ------------------------------------------------------------ batch losses ---

struct TrainSample {
    RasterU8 raster;
    TextTokens tokens;
    Box gt;
    AlignTargets targets;
    const Sample* meta = nullptr;
};

inline std::vector<TrainSample> prepare_samples(const std::vector<Sample>& split,
                                                const std::string& corpus_dir,
                                                const Vocabulary& vocab,
                                                const BackboneConfig& cfg) {
    namespace fs = std::filesystem;
    std::vector<TrainSample> out(split.size());
    for (std::size_t i = 0; i < split.size(); ++i) {
        const auto& s = split[i];
        TrainSample t;
        t.raster = read_ppm((fs::path(corpus_dir) / s.image).string());
        if (t.raster.width != cfg.image_size || t.raster.height != cfg.image_size)
            throw ValueError("sample " + s.id + ": raster " + std::to_string(t.raster.width) +
                             "px does not match the configured image size " +
                             std::to_string(cfg.image_size));
        t.tokens = tokenize_text(s.expression, vocab, cfg.text_max);
        t.gt = s.box;
        t.targets = box_to_masks(s.box, cfg.image_size, cfg.patch);
        t.meta = &s;
        out[i] = std::move(t);
    }
    return out;
}

template <typename T>
struct BatchResult {
    double total = 0;
    LossBreakdown breakdown;
    // aligned with trainable_indices when gradients were requested
    std::vector<std::vector<T>> grads;
    std::vector<std::size_t> trainable_indices;
};

// Evaluates the full objective over a batch. Per-sample graphs live on their
// own tapes; the batch-level contrastive term runs on a small combiner tape
// whose input gradients seed the per-sample backward passes. Gradients are
// reduced in sample order, so the result is bit-identical for any thread
// count.
template <typename T>
BatchResult<T> batch_eval(Model<T>& model, const std::vector<const TrainSample*>& batch,
                          const LossConfig& lc, bool with_grads, std::size_t threads) {
    if (batch.empty()) throw ValueError("batch_eval: empty batch");
    const std::size_t b = batch.size();
    const T inv_b = T(1) / T(b);

    struct PerSample {
        std::unique_ptr<Tape<T>> tape;
        std::unique_ptr<BoundParams<T>> bound;
        Tensor<T> piece;   // coordinate + region + pixel terms, weighted
        Tensor<T> t_eos;   // tracked
        Tensor<T> v_pool;  // tracked
        double l1 = 0, giou = 0, rta = 0, pta = 0;
    };
    std::vector<PerSample> per(b);

    auto trainable_pred = [&model](const typename ParamStore<T>::Entry& e) {
        return model.entry_trainable(e);
    };

    parallel_for(b, threads, [&](std::size_t i) {
        auto& slot = per[i];
        slot.tape = with_grads ? std::make_unique<Tape<T>>() : nullptr;
        slot.bound = std::make_unique<BoundParams<T>>(model.params(), slot.tape.get(),
                                                      trainable_pred);
        const TrainSample& s = *batch[i];
        auto out = model.forward_bound(*slot.bound, s.raster, s.tokens, nullptr);
        SampleLossInput<T> in{out.box, s.gt, out.v_rows, out.t_eos, out.v_pool, s.targets};
        slot.piece = sample_loss(in, (*slot.bound)("align.pta.w"), (*slot.bound)("align.pta.b"),
                                 (*slot.bound)("align.rta_scale"), lc, &slot.l1, &slot.giou,
                                 &slot.rta, &slot.pta);
        slot.t_eos = out.t_eos;
        slot.v_pool = out.v_pool;
    });

    BatchResult<T> result;
    for (const auto& slot : per) {
        result.breakdown.l1 += slot.l1 / double(b);
        result.breakdown.giou += slot.giou / double(b);
        result.breakdown.rta += slot.rta / double(b);
        result.breakdown.pta += slot.pta / double(b);
    }

    // combiner tape for the contrastive term
    Tape<T> combiner;
    std::vector<Tensor<T>> t_leaves(b), v_leaves(b);
    for (std::size_t i = 0; i < b; ++i) {
        t_leaves[i] = combiner.leaf(Tensor<T>(per[i].t_eos.shape(), per[i].t_eos.data()));
        v_leaves[i] = combiner.leaf(Tensor<T>(per[i].v_pool.shape(), per[i].v_pool.data()));
    }
    const auto& ls_value = model.params().value("align.logit_scale");
    Tensor<T> ls_leaf = combiner.leaf(Tensor<T>(ls_value.shape(), ls_value.data()));
    auto ita = ita_loss(concat_rows(v_leaves), concat_rows(t_leaves), ls_leaf);
    result.breakdown.ita = double(ita.item());

    double total = result.breakdown.ita;
    for (const auto& slot : per) total += double(slot.piece.item()) / double(b);
    result.total = total;
    result.breakdown.total = total;

    if (!with_grads) return result;

    combiner.backward(ita);

    // per-sample backward from a single synthetic root that carries both the
    // 1/B share of the sample loss and the contrastive seed gradients
    std::vector<std::vector<std::vector<T>>> sample_grads(b);
    parallel_for(b, threads, [&](std::size_t i) {
        auto& slot = per[i];
        Tensor<T> gt_seed({1, slot.t_eos.cols()}, combiner.grad_of(t_leaves[i]));
        Tensor<T> gv_seed({1, slot.v_pool.cols()}, combiner.grad_of(v_leaves[i]));
        auto root = add(scale(slot.piece, inv_b),
                        add(sum_all(mul(slot.t_eos, gt_seed)), sum_all(mul(slot.v_pool, gv_seed))));
        slot.tape->backward(root);
        auto& grads = sample_grads[i];
        for (std::size_t pi = 0; pi < model.params().size(); ++pi)
            if (model.entry_trainable(model.params().entries()[pi]))
                grads.push_back(slot.bound->grad(pi));
    });

    for (std::size_t pi = 0; pi < model.params().size(); ++pi)
        if (model.entry_trainable(model.params().entries()[pi]))
            result.trainable_indices.push_back(pi);

    // ordered reduction over samples
    result.grads.resize(result.trainable_indices.size());
    for (std::size_t gi = 0; gi < result.trainable_indices.size(); ++gi) {
        const std::size_t pi = result.trainable_indices[gi];
        result.grads[gi].assign(model.params().entries()[pi].value.numel(), T(0));
        for (std::size_t i = 0; i < b; ++i) {
            const auto& g = sample_grads[i][gi];
            for (std::size_t k = 0; k < g.size(); ++k) result.grads[gi][k] += g[k];
        }
    }
    // the contrastive temperature gradient comes from the combiner
    {
        const auto ls_grad = combiner.grad_of(ls_leaf);
        for (std::size_t gi = 0; gi < result.trainable_indices.size(); ++gi)
            if (model.params().entries()[result.trainable_indices[gi]].name ==
                "align.logit_scale")
                for (std::size_t k = 0; k < ls_grad.size(); ++k)
                    result.grads[gi][k] += ls_grad[k];
    }
    return result;
}

// ------------------------------------------------------------- evaluation ---

struct CellStats {
    std::size_t count = 0;
    std::size_t correct = 0;
    double accuracy() const { return count ? double(correct) / double(count) : 0.0; }
};

struct MetricsReport {
    std::size_t count = 0;
    std::size_t correct = 0;
    double accuracy = 0;
    double mean_iou = 0;
    std::map<std::string, CellStats> by_difficulty;
    std::map<std::string, CellStats> by_type;              // overlapping marginal
    std::map<std::string, CellStats> by_cell;              // "<type-set>|<difficulty>" partition
};

// IoU at-least-0.5 accuracy plus the per-cell grid. Cells are keyed by the
// generating template's type set crossed with difficulty, which partitions
// the split exactly.
inline MetricsReport evaluate_model(Model<float>& model, const std::vector<TrainSample>& samples,
                                    std::size_t threads) {
    MetricsReport report;
    report.count = samples.size();
    std::vector<double> ious(samples.size(), 0.0);
    std::vector<char> correct(samples.size(), 0);
    parallel_for(samples.size(), threads, [&](std::size_t i) {
        const auto& s = samples[i];
        const Box pred = model.predict(s.raster, s.tokens);
        const double iou = box_iou(pred, s.gt);
        ious[i] = iou;
        correct[i] = iou >= 0.5 ? 1 : 0;
    });
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& meta = *samples[i].meta;
        report.mean_iou += ious[i];
        report.correct += correct[i];
        auto& cell = report.by_cell[meta.types.key() + "|" + meta.difficulty];
        cell.count += 1;
        cell.correct += correct[i];
        auto& diff = report.by_difficulty[meta.difficulty];
        diff.count += 1;
        diff.correct += correct[i];
        for (const auto& t : meta.types.names()) {
            auto& ty = report.by_type[t];
            ty.count += 1;
            ty.correct += correct[i];
        }
    }
    if (report.count) {
        report.accuracy = double(report.correct) / double(report.count);
        report.mean_iou /= double(report.count);
    }
    return report;
}

// ---------------------------------------------------------------- training ---

struct TrainProgress {
    std::size_t epoch = 0;
    std::size_t step = 0;
    double loss = 0;
    double test_accuracy = -1;
};

struct TrainResult {
    std::size_t steps = 0;
    std::size_t epochs = 0;
    double final_test_accuracy = -1;
    std::string checkpoint;
    std::string log_path;
};

inline TrainResult train(const Config& config, const std::string& corpus_dir,
                         const std::string& out_dir,
                         const std::function<void(const TrainProgress&)>& on_progress = {}) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const auto backbone = BackboneConfig::from(config);
    const auto tc = TrainConfig::from(config);
    const auto lc = LossConfig::from(config);

    auto vocab = Vocabulary::from_file((fs::path(corpus_dir) / "vocab.txt").string());
    auto train_meta = load_split(corpus_dir, "train");
    auto train_samples = prepare_samples(train_meta, corpus_dir, vocab, backbone);

    std::vector<Sample> test_meta;
    std::vector<TrainSample> test_samples;
    const bool wants_eval = tc.eval_every > 0 || tc.stop_at_accuracy > 0;
    if (wants_eval) {
        test_meta = load_split(corpus_dir, "test");
        test_samples = prepare_samples(test_meta, corpus_dir, vocab, backbone);
    }

    Model<float> model(backbone, vocab.size(), tc.seed);
    AdamW<float> opt(tc.lr, tc.weight_decay);

    const std::string log_path = (fs::path(out_dir) / "train_log.csv").string();
    std::ofstream log(log_path);
    if (!log) throw IoError("cannot write " + log_path);
    char header[256];
    std::snprintf(header, sizeof(header),
                  "# lr = %g, weight_decay = %g, batch = %zu, epochs = %zu, seed = %llu, "
                  "freeze = %s\n",
                  tc.lr, tc.weight_decay, tc.batch, tc.epochs,
                  static_cast<unsigned long long>(tc.seed), freeze_policy_name(backbone.freeze));
    log << header;
    log << "step,L_total,L_l1,L_giou,L_ITA,L_RTA,L_PTA\n";

    TrainResult result;
    std::size_t step = 0;
    bool stop = false;
    for (std::size_t epoch = 1; epoch <= tc.epochs && !stop; ++epoch) {
        std::vector<std::size_t> order(train_samples.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::mt19937_64 shuffle_rng(derive_seed(tc.seed, 0xe90c17ULL, epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        for (std::size_t start = 0; start < order.size(); start += tc.batch) {
            const std::size_t end = std::min(order.size(), start + tc.batch);
            std::vector<const TrainSample*> batch;
            for (std::size_t i = start; i < end; ++i) batch.push_back(&train_samples[order[i]]);
            auto eval = batch_eval(model, batch, lc, /*with_grads=*/true, tc.threads);
            if (!std::isfinite(eval.total)) {
                char msg[128];
                std::snprintf(msg, sizeof(msg), "# halt: non-finite loss at step %zu (batch %zu)\n",
                              step + 1, start / tc.batch);
                log << msg;
                throw NumericError("train: non-finite loss at step " + std::to_string(step + 1) +
                                   ", epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(start / tc.batch));
            }
            opt.step(model.params(), eval.trainable_indices, eval.grads);
            ++step;
            char row[256];
            std::snprintf(row, sizeof(row), "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", step,
                          eval.breakdown.total, eval.breakdown.l1, eval.breakdown.giou,
                          eval.breakdown.ita, eval.breakdown.rta, eval.breakdown.pta);
            log << row;
            if (on_progress) on_progress(TrainProgress{epoch, step, eval.total, -1});
        }
        result.epochs = epoch;

        if (wants_eval && (tc.eval_every > 0 ? epoch % tc.eval_every == 0 : true)) {
            auto metrics = evaluate_model(model, test_samples, tc.threads);
            result.final_test_accuracy = metrics.accuracy;
            if (on_progress)
                on_progress(TrainProgress{epoch, step, 0.0, metrics.accuracy});
            if (tc.stop_at_accuracy > 0 && metrics.accuracy >= tc.stop_at_accuracy) stop = true;
        }
        if (tc.checkpoint_every > 0 && epoch % tc.checkpoint_every == 0 && epoch != tc.epochs) {
            char name[64];
            std::snprintf(name, sizeof(name), "checkpoint_epoch%03zu.bin", epoch);
            save_checkpoint((fs::path(out_dir) / name).string(), config, model.params());
        }
    }
    result.steps = step;
    result.checkpoint = (fs::path(out_dir) / "checkpoint.bin").string();
    save_checkpoint(result.checkpoint, config, model.params());
    result.log_path = log_path;
    return result;
}

// Loads a model (f32) back from a checkpoint.
inline Model<float> load_model(const std::string& checkpoint_path) {
    ParamStore<float> store;
    auto meta = load_checkpoint(checkpoint_path, store);
    auto cfg = BackboneConfig::from(meta.config);
    const std::size_t vocab_words = store.value("tok.word_emb").rows();
    return Model<float>(cfg, vocab_words, std::move(store));
}

}  // namespace bare
