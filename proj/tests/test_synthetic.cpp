#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "bare/synthetic.hpp"
#include "bare/tokenize.hpp"

#include <filesystem>
#include <fstream>
#include <set>

using namespace bare;
namespace fs = std::filesystem;

namespace {

SceneSpec two_object_scene() {
    SceneSpec s;
    s.canvas = 64;
    SceneObject red_circle{ShapeKind::circle, ColorKind::red, SizeKind::small, 20, 30, 5};
    SceneObject blue_square{ShapeKind::square, ColorKind::blue, SizeKind::large, 45, 40, 10};
    s.objects = {red_circle, blue_square};
    s.target = 0;
    return s;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("matcher handles the template grammar") {
    auto scene = two_object_scene();
    CHECK(match_expression(scene, "the red circle") == std::vector<std::size_t>{0});
    CHECK(match_expression(scene, "the circle") == std::vector<std::size_t>{0});
    CHECK(match_expression(scene, "the blue square") == std::vector<std::size_t>{1});
    CHECK(match_expression(scene, "please find the circle") == std::vector<std::size_t>{0});
    CHECK(match_expression(scene, "the circle left of the square") == std::vector<std::size_t>{0});
    CHECK(match_expression(scene, "the circle to the left of the square") ==
          std::vector<std::size_t>{0});
    CHECK(match_expression(scene, "the circle right of the square").empty());
    CHECK(match_expression(scene, "the square that is not red") == std::vector<std::size_t>{1});
    CHECK(match_expression(scene, "the circle on the reader's left") ==
          std::vector<std::size_t>{0});
    CHECK(match_expression(scene, "the leftmost circle") == std::vector<std::size_t>{0});
    CHECK(match_expression(scene, "the circle at the top") == std::vector<std::size_t>{0});
    CHECK(match_expression(scene, "the square that is blue and large") ==
          std::vector<std::size_t>{1});
    CHECK(match_expression(scene, "the green circle").empty());
    CHECK_THROWS_AS(match_expression(scene, "the purple circle"), VocabError);
}

TEST_CASE("relations need a unique landmark") {
    auto scene = two_object_scene();
    SceneObject extra{ShapeKind::square, ColorKind::green, SizeKind::small, 30, 55, 5};
    scene.objects.push_back(extra);
    CHECK(match_expression(scene, "the circle left of the square").empty());
    CHECK(match_expression(scene, "the circle left of the blue square") ==
          std::vector<std::size_t>{0});
}

TEST_CASE("render paints shape centers and background") {
    auto scene = two_object_scene();
    auto img = render(scene, 64);
    const auto* center = img.pixel(20, 30);  // inside the red circle
    CHECK(int(center[0]) == 220);
    const auto* bg = img.pixel(2, 2);
    CHECK(int(bg[0]) == 200);
    CHECK(int(bg[1]) == 200);
    CHECK(int(bg[2]) == 200);
}

TEST_CASE("rendered target extent matches the analytic box within one pixel") {
    CorpusConfig cfg;
    cfg.seed = 99;
    SceneGenerator gen(cfg);
    for (std::size_t i = 0; i < 10; ++i) {
        auto g = gen.generate(0, i);
        auto img = render(g.scene, cfg.canvas);
        // winning-object scan: a pixel belongs to the target if the target is
        // the last object containing it
        double minx = 1e9, maxx = -1e9, miny = 1e9, maxy = -1e9;
        for (std::size_t y = 0; y < cfg.canvas; ++y)
            for (std::size_t x = 0; x < cfg.canvas; ++x) {
                const double px = x + 0.5, py = y + 0.5;
                int winner = -1;
                for (std::size_t k = 0; k < g.scene.objects.size(); ++k) {
                    const auto& o = g.scene.objects[k];
                    const double dx = px - o.cx, dy = py - o.cy;
                    bool inside = false;
                    switch (o.shape) {
                        case ShapeKind::circle: inside = dx * dx + dy * dy <= o.half * o.half; break;
                        case ShapeKind::square:
                            inside = std::abs(dx) <= o.half && std::abs(dy) <= o.half;
                            break;
                        case ShapeKind::triangle:
                            inside = dy >= -o.half && dy <= o.half &&
                                     std::abs(dx) <= 0.75 + (dy + o.half) / (2.0 * o.half) *
                                                                (o.half - 0.75);
                            break;
                    }
                    if (inside) winner = int(k);
                }
                if (winner == int(g.scene.target)) {
                    minx = std::min(minx, px);
                    maxx = std::max(maxx, px);
                    miny = std::min(miny, py);
                    maxy = std::max(maxy, py);
                }
            }
        // pixel coverage spans [center-0.5, center+0.5]
        const auto ext = g.scene.objects[g.scene.target].extent_px();
        CHECK(std::abs((minx - 0.5) - ext.x1()) <= 1.0);
        CHECK(std::abs((maxx + 0.5) - ext.x2()) <= 1.0);
        CHECK(std::abs((miny - 0.5) - ext.y1()) <= 1.0);
        CHECK(std::abs((maxy + 0.5) - ext.y2()) <= 1.0);
        (void)img;
    }
}

TEST_CASE("every generated expression refers uniquely") {
    CorpusConfig cfg;
    cfg.seed = 5;
    SceneGenerator gen(cfg);
    for (int split = 0; split < 3; ++split)
        for (std::size_t i = 0; i < 60; ++i) {
            auto g = gen.generate(split, i);
            auto matched = match_expression(g.scene, g.expression);
            REQUIRE(matched.size() == 1);
            CHECK(matched[0] == g.scene.target);
            CHECK(g.scene.objects.size() >= 2);
            CHECK(g.scene.objects.size() <= 6);
            CHECK(classify_difficulty(g.types, g.scene.objects.size() - 1) == g.difficulty);
        }
}

TEST_CASE("generation is deterministic per (seed, split, index)") {
    CorpusConfig cfg;
    cfg.seed = 13;
    SceneGenerator gen(cfg);
    auto a = gen.generate(0, 17);
    auto b = gen.generate(0, 17);
    CHECK(a.expression == b.expression);
    REQUIRE(a.scene.objects.size() == b.scene.objects.size());
    for (std::size_t i = 0; i < a.scene.objects.size(); ++i) {
        CHECK(a.scene.objects[i].cx == b.scene.objects[i].cx);
        CHECK(a.scene.objects[i].cy == b.scene.objects[i].cy);
    }
}

TEST_CASE("difficulty rule") {
    TypeSet logic;
    logic.set(RefType::logic);
    CHECK(classify_difficulty(logic, 5) == "hard");
    CHECK(classify_difficulty(logic, 2) == "easy");
    CHECK(classify_difficulty(logic, 3) == "medium");
    TypeSet attr;
    attr.set(RefType::attribute);
    CHECK(classify_difficulty(attr, 2) == "easy");
    CHECK(classify_difficulty(attr, 4) == "medium");
    TypeSet two;
    two.set(RefType::attribute);
    two.set(RefType::relation);
    CHECK(classify_difficulty(two, 1) == "medium");
}

TEST_CASE("probe samples contradict the shortcut") {
    CorpusConfig cfg;
    cfg.seed = 23;
    SceneGenerator gen(cfg);
    for (std::size_t i = 0; i < 40; ++i) {
        auto g = gen.generate(2, i);
        const auto& target = g.scene.objects[g.scene.target];
        CHECK(target.shape == ShapeKind::circle);
        CHECK(target.color != ColorKind::red);
        bool has_consistent_distractor = false;
        for (std::size_t k = 0; k < g.scene.objects.size(); ++k)
            if (k != g.scene.target && g.scene.objects[k].shape == ShapeKind::circle &&
                g.scene.objects[k].color == ColorKind::red)
                has_consistent_distractor = true;
        CHECK(has_consistent_distractor);
    }
}

TEST_CASE("corpus files are byte-identical across runs and match the manifest") {
    CorpusConfig cfg;
    cfg.seed = 31;
    cfg.n_train = 40;
    cfg.n_test = 15;
    cfg.n_probe = 10;
    const fs::path dir_a = fs::temp_directory_path() / "bare_corpus_a";
    const fs::path dir_b = fs::temp_directory_path() / "bare_corpus_b";
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
    auto ma = make_corpus(cfg, dir_a.string());
    auto mb = make_corpus(cfg, dir_b.string());
    CHECK(ma.json == mb.json);
    for (const char* f : {"train.jsonl", "test.jsonl", "bias_probe.jsonl", "vocab.txt"})
        CHECK(slurp(dir_a / f) == slurp(dir_b / f));
    CHECK(slurp(dir_a / "images" / "train_000000.ppm") ==
          slurp(dir_b / "images" / "train_000000.ppm"));

    auto train = load_split(dir_a.string(), "train");
    CHECK(train.size() == 40);
    auto probe = load_split(dir_a.string(), "bias-probe");
    CHECK(probe.size() == 10);
    for (const auto& s : probe) CHECK(s.split == "bias-probe");
}

TEST_CASE("train split honors the color-shortcut rate within 3 sigma") {
    CorpusConfig cfg;
    cfg.seed = 41;
    cfg.color_shortcut_rho = 0.9;
    SceneGenerator gen(cfg);
    std::size_t circles = 0, red_circles = 0;
    for (std::size_t i = 0; i < 600; ++i) {
        auto g = gen.generate(0, i);
        const auto& t = g.scene.objects[g.scene.target];
        if (t.shape == ShapeKind::circle) {
            ++circles;
            if (t.color == ColorKind::red) ++red_circles;
        }
    }
    REQUIRE(circles > 50);
    const double rate = double(red_circles) / double(circles);
    const double sigma = std::sqrt(0.9 * 0.1 / double(circles));
    CHECK(std::abs(rate - 0.9) <= 3.0 * sigma);
}

TEST_CASE("expressions with the prefix knob maxed all share the prefix") {
    CorpusConfig cfg;
    cfg.seed = 47;
    cfg.shared_prefix_rate = 1.0;
    SceneGenerator gen(cfg);
    for (std::size_t i = 0; i < 25; ++i) {
        auto g = gen.generate(0, i);
        CHECK(g.expression.rfind("please find ", 0) == 0);
    }
}

TEST_CASE("every generated expression tokenizes with the grammar vocabulary") {
    auto vocab = Vocabulary::from_words(grammar_words());
    CorpusConfig cfg;
    cfg.seed = 53;
    SceneGenerator gen(cfg);
    for (int split = 0; split < 3; ++split)
        for (std::size_t i = 0; i < 30; ++i) {
            auto g = gen.generate(split, i);
            auto toks = tokenize_text(g.expression, vocab, 32);
            CHECK(!toks.truncated);
            CHECK(toks.length >= 3);
        }
}

TEST_CASE("tokenizer basics") {
    auto vocab = Vocabulary::from_words(grammar_words());

    auto t = tokenize_text("the red circle", vocab, 32);
    CHECK(t.length == 5);
    CHECK(t.ids[0] == Vocabulary::kSep);
    CHECK(t.ids[4] == Vocabulary::kEos);
    CHECK(t.ids[5] == Vocabulary::kPad);
    CHECK(t.mask[4] == 1);
    CHECK(t.mask[5] == 0);
    CHECK(vocab.word_of(t.ids[2]) == "red");

    auto empty = tokenize_text("", vocab, 32);
    CHECK(empty.length == 2);
    CHECK(empty.ids[0] == Vocabulary::kSep);
    CHECK(empty.ids[1] == Vocabulary::kEos);

    // idempotence: re-tokenizing the detokenized words gives the same ids
    auto again = tokenize_text("the red circle", vocab, 32);
    CHECK(again.ids == t.ids);

    CHECK_THROWS_WITH_AS(tokenize_text("the zebra", vocab, 32), doctest::Contains("zebra"),
                         VocabError);

    auto truncated = tokenize_text("the red circle left of the large blue square", vocab, 6);
    CHECK(truncated.truncated);
    CHECK(truncated.length == 6);
    CHECK(truncated.ids[5] == Vocabulary::kEos);
}

TEST_CASE("vocabulary round trip through a file") {
    auto vocab = Vocabulary::from_words(grammar_words());
    const auto path = (fs::temp_directory_path() / "bare_vocab.txt").string();
    vocab.save(path);
    auto loaded = Vocabulary::from_file(path);
    CHECK(loaded.size() == vocab.size());
    CHECK(loaded.id_of("circle") == vocab.id_of("circle"));
    CHECK(loaded.id_of("reader's") == vocab.id_of("reader's"));
}
