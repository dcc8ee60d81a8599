#include "bare/synthetic.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace bare {

// ------------------------------------------------------------------ names ---

const char* shape_name(ShapeKind s) {
    switch (s) {
        case ShapeKind::circle: return "circle";
        case ShapeKind::square: return "square";
        case ShapeKind::triangle: return "triangle";
    }
    return "?";
}

const char* color_name(ColorKind c) {
    switch (c) {
        case ColorKind::red: return "red";
        case ColorKind::green: return "green";
        case ColorKind::blue: return "blue";
        case ColorKind::yellow: return "yellow";
    }
    return "?";
}

const char* size_name(SizeKind s) { return s == SizeKind::small ? "small" : "large"; }

std::optional<ShapeKind> shape_from(const std::string& w) {
    if (w == "circle") return ShapeKind::circle;
    if (w == "square") return ShapeKind::square;
    if (w == "triangle") return ShapeKind::triangle;
    return std::nullopt;
}

std::optional<ColorKind> color_from(const std::string& w) {
    if (w == "red") return ColorKind::red;
    if (w == "green") return ColorKind::green;
    if (w == "blue") return ColorKind::blue;
    if (w == "yellow") return ColorKind::yellow;
    return std::nullopt;
}

const char* ref_type_name(RefType t) {
    switch (t) {
        case RefType::attribute: return "attribute";
        case RefType::relation: return "relation";
        case RefType::logic: return "logic";
        case RefType::ambiguity: return "ambiguity";
        case RefType::perspective: return "perspective";
    }
    return "?";
}

std::size_t TypeSet::count() const {
    std::size_t n = 0;
    for (int i = 0; i < 5; ++i)
        if (bits & (1u << i)) ++n;
    return n;
}

std::vector<std::string> TypeSet::names() const {
    std::vector<std::string> out;
    for (int i = 0; i < 5; ++i)
        if (bits & (1u << i)) out.push_back(ref_type_name(static_cast<RefType>(i)));
    return out;
}

std::string TypeSet::key() const {
    std::string out;
    for (const auto& n : names()) {
        if (!out.empty()) out += "+";
        out += n;
    }
    return out;
}

Box SceneSpec::target_box_normalized() const {
    const auto& o = objects[target];
    const double s = static_cast<double>(canvas);
    return Box{o.cx / s, o.cy / s, 2 * o.half / s, 2 * o.half / s};
}

// ----------------------------------------------------------------- render ---

namespace {

struct Rgb {
    std::uint8_t r, g, b;
};

constexpr Rgb kBackground{200, 200, 200};

Rgb color_rgb(ColorKind c) {
    switch (c) {
        case ColorKind::red: return {220, 50, 50};
        case ColorKind::green: return {60, 170, 70};
        case ColorKind::blue: return {50, 90, 220};
        case ColorKind::yellow: return {230, 200, 50};
    }
    return kBackground;
}

bool contains_point(const SceneObject& o, double px, double py) {
    const double dx = px - o.cx;
    const double dy = py - o.cy;
    switch (o.shape) {
        case ShapeKind::circle: return dx * dx + dy * dy <= o.half * o.half;
        case ShapeKind::square: return std::abs(dx) <= o.half && std::abs(dy) <= o.half;
        case ShapeKind::triangle: {
            // Upward triangle: apex (cx, cy-h), base corners (cx +- h, cy+h).
            // The apex is truncated to 0.75 px half-width so the top of the
            // shape always lands on a pixel center.
            if (dy < -o.half || dy > o.half) return false;
            const double t = (dy + o.half) / (2.0 * o.half);
            const double width_at = 0.75 + t * (o.half - 0.75);
            return std::abs(dx) <= width_at;
        }
    }
    return false;
}

}  // namespace

RasterU8 render(const SceneSpec& scene, std::size_t size) {
    RasterU8 img;
    img.width = size;
    img.height = size;
    img.rgb.assign(size * size * 3, 0);
    const double sx = static_cast<double>(size) / static_cast<double>(scene.canvas);
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const double px = (static_cast<double>(x) + 0.5) / sx;
            const double py = (static_cast<double>(y) + 0.5) / sx;
            Rgb c = kBackground;
            for (const auto& o : scene.objects)
                if (contains_point(o, px, py)) c = color_rgb(o.color);  // later objects on top
            std::uint8_t* p = img.pixel(x, y);
            p[0] = c.r;
            p[1] = c.g;
            p[2] = c.b;
        }
    }
    return img;
}

// ---------------------------------------------------------------- matcher ---

namespace {

const std::vector<std::string>& lexicon() {
    static const std::vector<std::string> words = [] {
        std::vector<std::string> w = {
            "the",    "that",   "is",       "not",     "and",      "of",       "on",
            "at",     "to",     "left",     "right",   "top",      "bottom",   "above",
            "below",  "over",   "under",    "leftmost", "rightmost", "reader's", "viewer's",
            "please", "find",   "circle",   "square",  "triangle", "red",      "green",
            "blue",   "yellow", "small",    "large",   "big",      "little"};
        std::sort(w.begin(), w.end());
        return w;
    }();
    return words;
}

std::vector<std::string> split_words(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string w;
    while (ss >> w) out.push_back(w);
    return out;
}

std::optional<SizeKind> size_from_word(const std::string& w) {
    if (w == "small" || w == "little") return SizeKind::small;
    if (w == "large" || w == "big") return SizeKind::large;
    return std::nullopt;
}

struct Parser {
    const std::vector<std::string>& toks;
    std::size_t pos = 0;

    bool done() const { return pos >= toks.size(); }
    const std::string& peek() const {
        static const std::string empty;
        return done() ? empty : toks[pos];
    }
    bool accept(const std::string& w) {
        if (!done() && toks[pos] == w) {
            ++pos;
            return true;
        }
        return false;
    }
    void expect(const std::string& w) {
        if (!accept(w)) throw ValueError("expression parse: expected '" + w + "' before '" + peek() + "'");
    }
};

struct NounPhrase {
    std::optional<SizeKind> size;
    std::optional<ColorKind> color;
    ShapeKind shape = ShapeKind::circle;
};

NounPhrase parse_np_head(Parser& p) {
    NounPhrase np;
    if (auto s = size_from_word(p.peek())) {
        np.size = s;
        ++p.pos;
    }
    if (auto c = color_from(p.peek())) {
        np.color = c;
        ++p.pos;
    }
    if (auto sh = shape_from(p.peek())) {
        np.shape = *sh;
        ++p.pos;
    } else {
        throw ValueError("expression parse: expected a shape word, got '" + p.peek() + "'");
    }
    return np;
}

std::vector<std::size_t> filter_np(const SceneSpec& scene, const NounPhrase& np) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < scene.objects.size(); ++i) {
        const auto& o = scene.objects[i];
        if (o.shape != np.shape) continue;
        if (np.size && o.size != *np.size) continue;
        if (np.color && o.color != *np.color) continue;
        out.push_back(i);
    }
    return out;
}

enum class Axis { x, y };

std::vector<std::size_t> extremal(const SceneSpec& scene, const std::vector<std::size_t>& set,
                                  Axis axis, bool want_min) {
    if (set.empty()) return {};
    auto coord = [&](std::size_t i) {
        return axis == Axis::x ? scene.objects[i].cx : scene.objects[i].cy;
    };
    double best = coord(set[0]);
    for (auto i : set) best = want_min ? std::min(best, coord(i)) : std::max(best, coord(i));
    std::vector<std::size_t> out;
    for (auto i : set)
        if (coord(i) == best) out.push_back(i);
    return out;
}

}  // namespace

std::vector<std::size_t> match_expression(const SceneSpec& scene, const std::string& expr) {
    const auto toks = split_words(expr);
    const auto& lex = lexicon();
    for (const auto& t : toks)
        if (!std::binary_search(lex.begin(), lex.end(), t))
            throw VocabError("expression word outside the grammar lexicon: " + t);

    Parser p{toks};
    if (p.accept("please")) p.expect("find");
    p.expect("the");

    if (p.peek() == "leftmost" || p.peek() == "rightmost") {
        const bool leftmost = p.peek() == "leftmost";
        ++p.pos;
        NounPhrase np;
        if (auto sh = shape_from(p.peek())) {
            np.shape = *sh;
            ++p.pos;
        } else {
            throw ValueError("expression parse: expected shape after superlative");
        }
        if (!p.done()) throw ValueError("expression parse: trailing words after '" + toks[p.pos - 1] + "'");
        return extremal(scene, filter_np(scene, np), Axis::x, leftmost);
    }

    const NounPhrase head = parse_np_head(p);
    std::vector<std::size_t> cands = filter_np(scene, head);
    if (p.done()) return cands;

    if (p.accept("that")) {
        p.expect("is");
        if (p.accept("not")) {
            auto c = color_from(p.peek());
            if (!c) throw ValueError("expression parse: expected color after 'not'");
            ++p.pos;
            std::vector<std::size_t> out;
            for (auto i : cands)
                if (scene.objects[i].color != *c) out.push_back(i);
            cands = out;
        } else {
            auto c = color_from(p.peek());
            if (!c) throw ValueError("expression parse: expected color in copula");
            ++p.pos;
            std::vector<std::size_t> out;
            for (auto i : cands)
                if (scene.objects[i].color == *c) out.push_back(i);
            cands = out;
            if (p.accept("and")) {
                auto s = size_from_word(p.peek());
                if (!s) throw ValueError("expression parse: expected size after 'and'");
                ++p.pos;
                out.clear();
                for (auto i : cands)
                    if (scene.objects[i].size == *s) out.push_back(i);
                cands = out;
            }
        }
        if (!p.done()) throw ValueError("expression parse: trailing words in copula");
        return cands;
    }

    // Spatial tails.
    enum class Rel { left, right, above, below };
    std::optional<Rel> rel;
    if (p.accept("left")) {
        p.expect("of");
        rel = Rel::left;
    } else if (p.accept("right")) {
        p.expect("of");
        rel = Rel::right;
    } else if (p.accept("to")) {
        p.expect("the");
        if (p.accept("left"))
            rel = Rel::left;
        else if (p.accept("right"))
            rel = Rel::right;
        else
            throw ValueError("expression parse: expected left/right after 'to the'");
        p.expect("of");
    } else if (p.accept("above") || p.accept("over")) {
        rel = Rel::above;
    } else if (p.accept("below") || p.accept("under")) {
        rel = Rel::below;
    } else if (p.accept("on")) {
        p.expect("the");
        if (!p.accept("reader's") && !p.accept("viewer's"))
            throw ValueError("expression parse: expected reader's/viewer's");
        const bool leftish = p.accept("left");
        if (!leftish) p.expect("right");
        if (!p.done()) throw ValueError("expression parse: trailing words after frame phrase");
        return extremal(scene, cands, Axis::x, leftish);
    } else if (p.accept("at")) {
        p.expect("the");
        const bool topish = p.accept("top");
        if (!topish) p.expect("bottom");
        if (!p.done()) throw ValueError("expression parse: trailing words after position phrase");
        return extremal(scene, cands, Axis::y, topish);
    } else {
        throw ValueError("expression parse: unexpected word '" + p.peek() + "'");
    }

    p.expect("the");
    const NounPhrase lm_np = parse_np_head(p);
    if (!p.done()) throw ValueError("expression parse: trailing words after landmark");
    const auto lms = filter_np(scene, lm_np);
    if (lms.size() != 1) return {};  // ambiguous or missing landmark: nothing refers
    const auto& lm = scene.objects[lms[0]];
    std::vector<std::size_t> out;
    for (auto i : cands) {
        if (i == lms[0]) continue;
        const auto& o = scene.objects[i];
        const bool ok = (*rel == Rel::left && o.cx < lm.cx) || (*rel == Rel::right && o.cx > lm.cx) ||
                        (*rel == Rel::above && o.cy < lm.cy) || (*rel == Rel::below && o.cy > lm.cy);
        if (ok) out.push_back(i);
    }
    return out;
}

std::vector<std::string> grammar_words() { return lexicon(); }

const char* shared_prefix() { return "please find"; }

std::string classify_difficulty(const TypeSet& types, std::size_t distractors) {
    const bool heavy = types.has(RefType::logic) || types.has(RefType::perspective);
    if ((heavy && distractors >= 4) || types.count() >= 3) return "hard";
    if (types.count() == 2 || distractors == 3 || distractors == 4) return "medium";
    return "easy";
}

// -------------------------------------------------------------- generator ---

namespace {

using Rng = std::mt19937_64;

std::size_t pick(Rng& rng, std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

ColorKind pick_color(Rng& rng) { return static_cast<ColorKind>(pick(rng, 4)); }
ShapeKind pick_shape(Rng& rng) { return static_cast<ShapeKind>(pick(rng, 3)); }
SizeKind pick_size(Rng& rng) { return pick(rng, 2) == 0 ? SizeKind::small : SizeKind::large; }

ColorKind pick_color_except(Rng& rng, ColorKind avoid) {
    ColorKind c = avoid;
    while (c == avoid) c = pick_color(rng);
    return c;
}

ShapeKind pick_shape_except(Rng& rng, ShapeKind avoid) {
    ShapeKind s = avoid;
    while (s == avoid) s = pick_shape(rng);
    return s;
}

double half_extent(Rng& rng, SizeKind s, double unit) {
    std::uniform_real_distribution<double> small_d(4.0, 6.0), large_d(9.0, 12.0);
    return (s == SizeKind::small ? small_d(rng) : large_d(rng)) * unit;
}

using PosPred = std::function<bool(double, double)>;

// Places objects one by one with rejection sampling: inside the canvas with a
// small border, no overlap with anything already placed, and an optional
// per-object position predicate.
class ScenePlacer {
public:
    ScenePlacer(Rng& rng, double canvas) : rng_(rng), canvas_(canvas) {}

    bool place(SceneObject& o, const PosPred& pred = nullptr) {
        const double br = o.bound_radius();
        const double lo = br + 1.0, hi = canvas_ - 1.0 - br;
        if (lo >= hi) return false;
        std::uniform_real_distribution<double> dist(lo, hi);
        for (int attempt = 0; attempt < 120; ++attempt) {
            const double cx = dist(rng_);
            const double cy = dist(rng_);
            if (pred && !pred(cx, cy)) continue;
            bool clear = true;
            for (const auto& other : placed_) {
                const double dx = cx - other.cx, dy = cy - other.cy;
                const double min_d = br + other.bound_radius() + 2.0;
                if (dx * dx + dy * dy < min_d * min_d) {
                    clear = false;
                    break;
                }
            }
            if (!clear) continue;
            o.cx = cx;
            o.cy = cy;
            placed_.push_back(o);
            return true;
        }
        return false;
    }

    std::vector<SceneObject>& objects() { return placed_; }

private:
    Rng& rng_;
    double canvas_;
    std::vector<SceneObject> placed_;
};

constexpr double kAxisMargin = 3.0;  // keeps strict coordinate comparisons robust

struct BuildInput {
    const CorpusConfig* cfg;
    int split;  // 0 train, 1 test, 2 probe
    std::size_t distractors;
    ShapeKind t_shape;
    ColorKind t_color;
    SizeKind t_size;
};

struct Built {
    SceneSpec scene;
    std::string expression;
    TypeSet types;
};

SceneObject make_object(Rng& rng, ShapeKind sh, ColorKind co, SizeKind si, double unit) {
    SceneObject o;
    o.shape = sh;
    o.color = co;
    o.size = si;
    o.half = half_extent(rng, si, unit);
    return o;
}

// Finalizes object order (shuffled so the target index carries no signal) and
// verifies unique reference with the exhaustive matcher.
std::optional<Built> finish(Rng& rng, ScenePlacer& placer, std::size_t target_idx,
                            double canvas, std::string expression, TypeSet types) {
    SceneSpec scene;
    scene.canvas = static_cast<std::size_t>(canvas);
    auto& objs = placer.objects();
    std::vector<std::size_t> order(objs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < order.size(); ++i) {
        scene.objects.push_back(objs[order[i]]);
        if (order[i] == target_idx) scene.target = i;
    }
    const auto matched = match_expression(scene, expression);
    if (matched.size() != 1 || matched[0] != scene.target) return std::nullopt;
    Built b;
    b.scene = std::move(scene);
    b.expression = std::move(expression);
    b.types = types;
    return b;
}

std::string np_text(std::optional<SizeKind> size, std::optional<ColorKind> color, ShapeKind shape,
                    Rng& rng) {
    std::string out;
    if (size) {
        const char* variants_small[] = {"small", "little"};
        const char* variants_large[] = {"large", "big"};
        out += (*size == SizeKind::small ? variants_small[pick(rng, 2)]
                                         : variants_large[pick(rng, 2)]);
        out += " ";
    }
    if (color) {
        out += color_name(*color);
        out += " ";
    }
    out += shape_name(shape);
    return out;
}

// --- family builders; each returns nullopt on placement failure -------------

std::optional<Built> build_attribute(Rng& rng, const BuildInput& in, double canvas, double unit,
                                     bool as_ambiguity) {
    enum class Cue { color, size, both };
    Cue cue = Cue::color;
    if (as_ambiguity) {
        cue = pick(rng, 2) == 0 ? Cue::color : Cue::size;
    } else {
        const std::size_t r = pick(rng, 10);
        cue = r < 6 ? Cue::color : (r < 8 && in.distractors >= 3 ? Cue::both : Cue::size);
    }

    ScenePlacer placer(rng, canvas);
    SceneObject target = make_object(rng, in.t_shape, in.t_color, in.t_size, unit);
    if (!placer.place(target)) return std::nullopt;

    std::size_t same_shape_needed = as_ambiguity ? 1 + pick(rng, in.distractors) : 0;
    for (std::size_t d = 0; d < in.distractors; ++d) {
        const bool force_same = d < same_shape_needed;
        ShapeKind sh = force_same ? in.t_shape : pick_shape(rng);
        ColorKind co = pick_color(rng);
        SizeKind si = pick_size(rng);
        if (sh == in.t_shape) {
            // keep the cue uniquely true of the target
            if (cue == Cue::color && co == in.t_color) co = pick_color_except(rng, in.t_color);
            if (cue == Cue::size && si == in.t_size)
                si = in.t_size == SizeKind::small ? SizeKind::large : SizeKind::small;
            if (cue == Cue::both && co == in.t_color && si == in.t_size)
                co = pick_color_except(rng, in.t_color);
        }
        SceneObject o = make_object(rng, sh, co, si, unit);
        if (!placer.place(o)) return std::nullopt;
    }

    std::string expr;
    TypeSet types;
    types.set(as_ambiguity ? RefType::ambiguity : RefType::attribute);
    switch (cue) {
        case Cue::color:
            if (!as_ambiguity && pick(rng, 4) == 0)
                expr = "the " + std::string(shape_name(in.t_shape)) + " that is " +
                       color_name(in.t_color);
            else
                expr = "the " + np_text(std::nullopt, in.t_color, in.t_shape, rng);
            break;
        case Cue::size: expr = "the " + np_text(in.t_size, std::nullopt, in.t_shape, rng); break;
        case Cue::both: expr = "the " + np_text(in.t_size, in.t_color, in.t_shape, rng); break;
    }
    return finish(rng, placer, 0, canvas, expr, types);
}

std::optional<Built> build_relation(Rng& rng, const BuildInput& in, double canvas, double unit,
                                    bool with_attribute) {
    if (with_attribute && in.distractors < 3) return std::nullopt;
    enum class Rel { left, right, above, below };
    const Rel rel = static_cast<Rel>(pick(rng, 4));
    const ShapeKind lm_shape = pick_shape_except(rng, in.t_shape);

    ScenePlacer placer(rng, canvas);
    SceneObject landmark = make_object(rng, lm_shape, pick_color(rng), pick_size(rng), unit);
    if (!placer.place(landmark)) return std::nullopt;
    const double lx = landmark.cx, ly = landmark.cy;

    auto in_half = [rel, lx, ly](double cx, double cy) {
        switch (rel) {
            case Rel::left: return cx <= lx - kAxisMargin;
            case Rel::right: return cx >= lx + kAxisMargin;
            case Rel::above: return cy <= ly - kAxisMargin;
            case Rel::below: return cy >= ly + kAxisMargin;
        }
        return false;
    };
    auto out_half = [rel, lx, ly](double cx, double cy) {
        switch (rel) {
            case Rel::left: return cx >= lx + kAxisMargin;
            case Rel::right: return cx <= lx - kAxisMargin;
            case Rel::above: return cy >= ly + kAxisMargin;
            case Rel::below: return cy <= ly - kAxisMargin;
        }
        return false;
    };

    SceneObject target = make_object(rng, in.t_shape, in.t_color, in.t_size, unit);
    if (!placer.place(target, in_half)) return std::nullopt;
    const std::size_t target_idx = 1;

    std::size_t remaining = in.distractors - 1;
    if (with_attribute) {
        // one same-shape object inside the half-plane (attribute essential) and
        // one same-shape same-color outside it (relation essential)
        SceneObject inside = make_object(rng, in.t_shape, pick_color_except(rng, in.t_color),
                                         pick_size(rng), unit);
        if (!placer.place(inside, in_half)) return std::nullopt;
        SceneObject outside = make_object(rng, in.t_shape, in.t_color, pick_size(rng), unit);
        if (!placer.place(outside, out_half)) return std::nullopt;
        remaining = in.distractors - 3;  // landmark + the two essentials
    }
    for (std::size_t d = 0; d < remaining; ++d) {
        ShapeKind sh = pick_shape(rng);
        if (sh == lm_shape) sh = in.t_shape;  // landmark stays unique
        ColorKind co = pick_color(rng);
        if (sh == in.t_shape && with_attribute && co == in.t_color)
            co = pick_color_except(rng, in.t_color);
        SceneObject o = make_object(rng, sh, co, pick_size(rng), unit);
        // same-shape distractors stay out of the relation half-plane
        if (!placer.place(o, sh == in.t_shape ? PosPred(out_half) : PosPred())) return std::nullopt;
    }

    const char* rel_text[] = {"left of", "right of", "above", "below"};
    const char* rel_alt[] = {"to the left of", "to the right of", "over", "under"};
    std::string rel_words = pick(rng, 3) == 0 ? rel_alt[static_cast<int>(rel)]
                                              : rel_text[static_cast<int>(rel)];
    std::string expr = "the " +
                       np_text(std::nullopt, with_attribute ? std::optional(in.t_color) : std::nullopt,
                               in.t_shape, rng) +
                       " " + rel_words + " the " + shape_name(lm_shape);
    TypeSet types;
    types.set(RefType::relation);
    if (with_attribute) types.set(RefType::attribute);
    return finish(rng, placer, target_idx, canvas, expr, types);
}

std::optional<Built> build_logic(Rng& rng, const BuildInput& in, double canvas, double unit,
                                 bool with_attribute) {
    const bool conjunction = !with_attribute && in.distractors >= 2 && pick(rng, 10) < 3;
    if (with_attribute && in.distractors < 2) return std::nullopt;

    ScenePlacer placer(rng, canvas);
    SceneObject target = make_object(rng, in.t_shape, in.t_color, in.t_size, unit);
    if (!placer.place(target)) return std::nullopt;

    TypeSet types;
    types.set(RefType::logic);
    std::string expr;

    if (conjunction) {
        // "the SHAPE that is COLOR and SIZE": one distractor shares the color,
        // one shares the size, so both conjuncts are needed.
        const SizeKind other_size = in.t_size == SizeKind::small ? SizeKind::large : SizeKind::small;
        SceneObject same_color = make_object(rng, in.t_shape, in.t_color, other_size, unit);
        if (!placer.place(same_color)) return std::nullopt;
        SceneObject same_size =
            make_object(rng, in.t_shape, pick_color_except(rng, in.t_color), in.t_size, unit);
        if (!placer.place(same_size)) return std::nullopt;
        for (std::size_t d = 2; d < in.distractors; ++d) {
            ShapeKind sh = pick_shape(rng);
            ColorKind co = pick_color(rng);
            SizeKind si = pick_size(rng);
            if (sh == in.t_shape && co == in.t_color && si == in.t_size)
                co = pick_color_except(rng, in.t_color);
            SceneObject o = make_object(rng, sh, co, si, unit);
            if (!placer.place(o)) return std::nullopt;
        }
        const char* size_word = in.t_size == SizeKind::small ? "small" : "large";
        expr = "the " + std::string(shape_name(in.t_shape)) + " that is " +
               color_name(in.t_color) + " and " + size_word;
        return finish(rng, placer, 0, canvas, expr, types);
    }

    // Negation: every other same-shape object carries the negated color.
    const ColorKind negated = pick_color_except(rng, in.t_color);
    const std::size_t same_shape =
        with_attribute ? in.distractors : 1 + pick(rng, in.distractors);
    for (std::size_t d = 0; d < in.distractors; ++d) {
        SceneObject o;
        if (d < same_shape) {
            if (with_attribute && d == 0) {
                // same shape, not the negated color, opposite size: makes the
                // size attribute essential
                const SizeKind other = in.t_size == SizeKind::small ? SizeKind::large : SizeKind::small;
                o = make_object(rng, in.t_shape, pick_color_except(rng, negated), other, unit);
            } else if (with_attribute && d == 1) {
                // negated color at the target's size: makes the negation essential
                o = make_object(rng, in.t_shape, negated, in.t_size, unit);
            } else {
                o = make_object(rng, in.t_shape, negated, pick_size(rng), unit);
            }
        } else {
            o = make_object(rng, pick_shape_except(rng, in.t_shape), pick_color(rng),
                            pick_size(rng), unit);
        }
        if (!placer.place(o)) return std::nullopt;
    }

    if (with_attribute) {
        types.set(RefType::attribute);
        expr = "the " + np_text(in.t_size, std::nullopt, in.t_shape, rng) + " that is not " +
               color_name(negated);
    } else {
        expr = "the " + std::string(shape_name(in.t_shape)) + " that is not " + color_name(negated);
    }
    return finish(rng, placer, 0, canvas, expr, types);
}

std::optional<Built> build_perspective(Rng& rng, const BuildInput& in, double canvas, double unit) {
    enum class Dir { left, right, top, bottom };
    const Dir dir = static_cast<Dir>(pick(rng, 4));

    ScenePlacer placer(rng, canvas);
    SceneObject target = make_object(rng, in.t_shape, in.t_color, in.t_size, unit);
    if (!placer.place(target)) return std::nullopt;
    const double tx = target.cx, ty = target.cy;

    auto beyond = [dir, tx, ty](double cx, double cy) {
        switch (dir) {
            case Dir::left: return cx >= tx + kAxisMargin;
            case Dir::right: return cx <= tx - kAxisMargin;
            case Dir::top: return cy >= ty + kAxisMargin;
            case Dir::bottom: return cy <= ty - kAxisMargin;
        }
        return false;
    };

    const std::size_t same_shape = 1 + pick(rng, in.distractors);
    for (std::size_t d = 0; d < in.distractors; ++d) {
        const bool same = d < same_shape;
        SceneObject o = make_object(rng, same ? in.t_shape : pick_shape_except(rng, in.t_shape),
                                    pick_color(rng), pick_size(rng), unit);
        if (!placer.place(o, same ? PosPred(beyond) : PosPred())) return std::nullopt;
    }

    std::string expr;
    const std::string shape_word = shape_name(in.t_shape);
    switch (dir) {
        case Dir::left:
            expr = pick(rng, 3) == 0 ? "the leftmost " + shape_word
                                     : "the " + shape_word + " on the " +
                                           (pick(rng, 2) == 0 ? "reader's" : "viewer's") + " left";
            break;
        case Dir::right:
            expr = pick(rng, 3) == 0 ? "the rightmost " + shape_word
                                     : "the " + shape_word + " on the " +
                                           (pick(rng, 2) == 0 ? "reader's" : "viewer's") + " right";
            break;
        case Dir::top: expr = "the " + shape_word + " at the top"; break;
        case Dir::bottom: expr = "the " + shape_word + " at the bottom"; break;
    }
    TypeSet types;
    types.set(RefType::perspective);
    return finish(rng, placer, 0, canvas, expr, types);
}

// Bias-probe: the target violates the trained color shortcut while a
// shortcut-consistent twin sits in the scene as a distractor.
std::optional<Built> build_probe(Rng& rng, const CorpusConfig& cfg, std::size_t distractors,
                                 double canvas, double unit) {
    const ShapeKind sc_shape = shape_from(cfg.shortcut_shape).value_or(ShapeKind::circle);
    const ColorKind sc_color = color_from(cfg.shortcut_color).value_or(ColorKind::red);
    const ColorKind t_color = pick_color_except(rng, sc_color);
    const SizeKind t_size = pick_size(rng);
    const bool attribute_form = pick(rng, 2) == 0;

    ScenePlacer placer(rng, canvas);
    SceneObject target = make_object(rng, sc_shape, t_color, t_size, unit);
    if (!placer.place(target)) return std::nullopt;
    const double tx = target.cx, ty = target.cy;

    enum class Dir { left, right, top, bottom };
    const Dir dir = static_cast<Dir>(pick(rng, 4));
    auto beyond = [dir, tx, ty](double cx, double cy) {
        switch (dir) {
            case Dir::left: return cx >= tx + kAxisMargin;
            case Dir::right: return cx <= tx - kAxisMargin;
            case Dir::top: return cy >= ty + kAxisMargin;
            case Dir::bottom: return cy <= ty - kAxisMargin;
        }
        return false;
    };

    SceneObject twin = make_object(rng, sc_shape, sc_color, pick_size(rng), unit);
    if (!placer.place(twin, attribute_form ? PosPred() : PosPred(beyond))) return std::nullopt;

    for (std::size_t d = 1; d < distractors; ++d) {
        const bool same = pick(rng, 3) == 0;
        SceneObject o = make_object(rng, same ? sc_shape : pick_shape_except(rng, sc_shape),
                                    same ? pick_color_except(rng, t_color) : pick_color(rng),
                                    pick_size(rng), unit);
        if (!placer.place(o, (same && !attribute_form) ? PosPred(beyond) : PosPred()))
            return std::nullopt;
    }

    std::string expr;
    TypeSet types;
    const std::string shape_word = shape_name(sc_shape);
    if (attribute_form) {
        types.set(RefType::attribute);
        expr = "the " + std::string(color_name(t_color)) + " " + shape_word;
    } else {
        types.set(RefType::perspective);
        switch (dir) {
            case Dir::left: expr = "the " + shape_word + " on the reader's left"; break;
            case Dir::right: expr = "the " + shape_word + " on the reader's right"; break;
            case Dir::top: expr = "the " + shape_word + " at the top"; break;
            case Dir::bottom: expr = "the " + shape_word + " at the bottom"; break;
        }
    }
    return finish(rng, placer, 0, canvas, expr, types);
}

enum class Family {
    attribute,
    relation,
    logic,
    ambiguity,
    perspective,
    attribute_relation,
    attribute_logic
};

}  // namespace

GeneratedSample SceneGenerator::generate(int split, std::size_t index) const {
    Rng rng(derive_seed(cfg_.seed, static_cast<std::uint64_t>(split) + 1, index));
    const double canvas = static_cast<double>(cfg_.canvas);
    if (cfg_.canvas < 48) throw ValueError("corpus: canvas below 48 px cannot place objects");
    const double unit = canvas / 64.0;

    for (int attempt = 0; attempt < 400; ++attempt) {
        std::optional<Built> built;
        if (split == 2) {
            const std::size_t dc = 1 + pick(rng, 4);  // 1..4
            built = build_probe(rng, cfg_, dc, canvas, unit);
        } else {
            // difficulty mix: 40% easy, 40% medium, 20% hard
            const std::size_t roll = pick(rng, 10);
            const int want = roll < 4 ? 0 : (roll < 8 ? 1 : 2);
            Family fam;
            std::size_t dc = 1;
            if (want == 0) {
                fam = static_cast<Family>(pick(rng, 5));
                dc = 1 + pick(rng, 2);  // 1..2
            } else if (want == 1) {
                if (pick(rng, 2) == 0) {
                    fam = static_cast<Family>(pick(rng, 5));
                    dc = 3 + pick(rng, 2);  // 3..4
                    if (fam == Family::logic || fam == Family::perspective) dc = 3;
                } else {
                    fam = pick(rng, 2) == 0 ? Family::attribute_relation : Family::attribute_logic;
                    dc = fam == Family::attribute_relation ? 3 + pick(rng, 2)   // 3..4
                                                           : 2 + pick(rng, 2);  // 2..3
                }
            } else {
                const Family hard_fams[] = {Family::logic, Family::perspective,
                                            Family::attribute_logic};
                fam = hard_fams[pick(rng, 3)];
                dc = 4 + pick(rng, 2);  // 4..5
            }

            BuildInput in;
            in.cfg = &cfg_;
            in.split = split;
            in.distractors = dc;
            in.t_shape = pick_shape(rng);
            in.t_size = pick_size(rng);
            const auto sc_shape = shape_from(cfg_.shortcut_shape);
            const auto sc_color = color_from(cfg_.shortcut_color);
            if (split == 0 && sc_shape && sc_color && in.t_shape == *sc_shape &&
                std::bernoulli_distribution(cfg_.color_shortcut_rho)(rng))
                in.t_color = *sc_color;
            else if (split == 0 && sc_shape && sc_color && in.t_shape == *sc_shape)
                in.t_color = pick_color_except(rng, *sc_color);
            else
                in.t_color = pick_color(rng);

            switch (fam) {
                case Family::attribute: built = build_attribute(rng, in, canvas, unit, false); break;
                case Family::ambiguity: built = build_attribute(rng, in, canvas, unit, true); break;
                case Family::relation: built = build_relation(rng, in, canvas, unit, false); break;
                case Family::attribute_relation:
                    built = build_relation(rng, in, canvas, unit, true);
                    break;
                case Family::logic: built = build_logic(rng, in, canvas, unit, false); break;
                case Family::attribute_logic: built = build_logic(rng, in, canvas, unit, true); break;
                case Family::perspective: built = build_perspective(rng, in, canvas, unit); break;
            }
            if (built) {
                const std::size_t got_dc = built->scene.objects.size() - 1;
                const char* names[] = {"easy", "medium", "hard"};
                if (classify_difficulty(built->types, got_dc) != names[want]) built.reset();
            }
        }
        if (!built) continue;

        if (split != 2 && std::bernoulli_distribution(cfg_.shared_prefix_rate)(rng))
            built->expression = std::string(shared_prefix()) + " " + built->expression;
        // prefix must not break unique reference
        const auto check = match_expression(built->scene, built->expression);
        if (check.size() != 1 || check[0] != built->scene.target) continue;

        GeneratedSample out;
        out.scene = std::move(built->scene);
        out.expression = std::move(built->expression);
        out.types = built->types;
        out.difficulty = classify_difficulty(out.types, out.scene.objects.size() - 1);
        return out;
    }
    throw ValueError("corpus: constraint satisfaction failed for split " + std::to_string(split) +
                     " index " + std::to_string(index));
}

// ----------------------------------------------------------------- corpus ---

namespace {

const char* split_name(int split) {
    return split == 0 ? "train" : (split == 1 ? "test" : "bias-probe");
}
const char* split_file(int split) {
    return split == 0 ? "train.jsonl" : (split == 1 ? "test.jsonl" : "bias_probe.jsonl");
}

ordered_json sample_json(const Sample& s) {
    ordered_json j;
    j["id"] = s.id;
    j["image"] = s.image;
    j["expression"] = s.expression;
    j["box"] = {s.box.cx, s.box.cy, s.box.w, s.box.h};
    j["types"] = s.types.names();
    j["difficulty"] = s.difficulty;
    j["split"] = s.split;
    return j;
}

}  // namespace

CorpusManifest make_corpus(const CorpusConfig& cfg, const std::string& out_dir) {
    fs::create_directories(fs::path(out_dir) / "images");
    SceneGenerator gen(cfg);

    // vocab.txt: sorted grammar lexicon, one word per line
    {
        std::ofstream vf(fs::path(out_dir) / "vocab.txt");
        if (!vf) throw IoError("cannot write vocab.txt under " + out_dir);
        for (const auto& w : grammar_words()) vf << w << "\n";
    }

    ordered_json manifest;
    manifest["generator"] = "bare-synthetic";
    manifest["config"] = {{"seed", cfg.seed},
                          {"train", cfg.n_train},
                          {"test", cfg.n_test},
                          {"bias_probe", cfg.n_probe},
                          {"canvas", cfg.canvas},
                          {"color_shortcut_rho", cfg.color_shortcut_rho},
                          {"shortcut_shape", cfg.shortcut_shape},
                          {"shortcut_color", cfg.shortcut_color},
                          {"shared_prefix_rate", cfg.shared_prefix_rate}};
    manifest["notes"] = ordered_json::array(
        {"perspective expressions use 2-D frame-of-reference phrasing; scenes have no depth axis",
         "difficulty rule: hard if (logic or perspective) with >=4 distractors or >=3 types; "
         "medium if two types or 3-4 distractors; easy otherwise"});

    std::size_t shortcut_targets = 0, shortcut_hits = 0;
    ordered_json splits;
    for (int split = 0; split < 3; ++split) {
        const std::size_t count = split == 0 ? cfg.n_train : (split == 1 ? cfg.n_test : cfg.n_probe);
        std::map<std::string, std::map<std::string, std::size_t>> grid;
        std::map<std::string, std::size_t> by_difficulty, by_type;

        std::ofstream jf(fs::path(out_dir) / split_file(split));
        if (!jf) throw IoError(std::string("cannot write ") + split_file(split));

        for (std::size_t i = 0; i < count; ++i) {
            const GeneratedSample g = gen.generate(split, i);
            char idbuf[32];
            std::snprintf(idbuf, sizeof(idbuf), "%s_%06zu", split == 2 ? "probe" : split_name(split),
                          i);
            Sample s;
            s.id = idbuf;
            s.image = std::string("images/") + idbuf + ".ppm";
            s.expression = g.expression;
            s.box = g.scene.target_box_normalized();
            s.types = g.types;
            s.difficulty = g.difficulty;
            s.split = split_name(split);

            write_ppm((fs::path(out_dir) / s.image).string(), render(g.scene, cfg.canvas));
            jf << sample_json(s).dump() << "\n";

            grid[g.types.key()][s.difficulty]++;
            by_difficulty[s.difficulty]++;
            for (const auto& t : g.types.names()) by_type[t]++;
            if (split == 0) {
                const auto sc_shape = shape_from(cfg.shortcut_shape);
                const auto sc_color = color_from(cfg.shortcut_color);
                if (sc_shape && g.scene.objects[g.scene.target].shape == *sc_shape) {
                    ++shortcut_targets;
                    if (sc_color && g.scene.objects[g.scene.target].color == *sc_color)
                        ++shortcut_hits;
                }
            }
        }

        ordered_json sj;
        sj["total"] = count;
        ordered_json gj;
        for (const auto& [family, cells] : grid) {
            ordered_json row;
            for (const auto& [diff, n] : cells) row[diff] = n;
            gj[family] = row;
        }
        sj["grid"] = gj;
        sj["by_difficulty"] = by_difficulty;
        sj["by_type"] = by_type;
        splits[split_name(split)] = sj;
    }
    manifest["splits"] = splits;
    manifest["measured_shortcut"] = {
        {"targets_of_shortcut_shape", shortcut_targets},
        {"in_shortcut_color", shortcut_hits},
        {"rate", shortcut_targets ? double(shortcut_hits) / double(shortcut_targets) : 0.0}};

    CorpusManifest out;
    out.json = manifest.dump(2) + "\n";
    std::ofstream mf(fs::path(out_dir) / "manifest.json");
    if (!mf) throw IoError("cannot write manifest.json under " + out_dir);
    mf << out.json;
    return out;
}

std::vector<Sample> load_split(const std::string& corpus_dir, const std::string& split) {
    int si = -1;
    if (split == "train") si = 0;
    if (split == "test") si = 1;
    if (split == "bias-probe" || split == "probe") si = 2;
    if (si < 0) throw ValueError("unknown split: " + split);
    const fs::path path = fs::path(corpus_dir) / split_file(si);
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<Sample> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        Sample s;
        s.id = j.at("id").get<std::string>();
        s.image = j.at("image").get<std::string>();
        s.expression = j.at("expression").get<std::string>();
        const auto& b = j.at("box");
        s.box = Box{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                    b.at(3).get<double>()};
        for (const auto& t : j.at("types")) {
            const std::string name = t.get<std::string>();
            for (int k = 0; k < 5; ++k)
                if (name == ref_type_name(static_cast<RefType>(k)))
                    s.types.set(static_cast<RefType>(k));
        }
        s.difficulty = j.at("difficulty").get<std::string>();
        s.split = j.at("split").get<std::string>();
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace bare
