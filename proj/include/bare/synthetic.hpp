#pragma once

// Procedural referring-expression corpus with controlled biases. Scenes are
// flat-colored shapes on a neutral canvas; every expression is produced by a
// closed template grammar and is guaranteed to pick out exactly one object
// (checked with the exhaustive matcher below).

#include "bare/box.hpp"
#include "bare/config.hpp"
#include "bare/image_io.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace bare {

enum class ShapeKind { circle, square, triangle };
enum class ColorKind { red, green, blue, yellow };
enum class SizeKind { small, large };

const char* shape_name(ShapeKind s);
const char* color_name(ColorKind c);
const char* size_name(SizeKind s);
std::optional<ShapeKind> shape_from(const std::string& w);
std::optional<ColorKind> color_from(const std::string& w);

enum class RefType { attribute, relation, logic, ambiguity, perspective };
const char* ref_type_name(RefType t);

// Sorted set of referential types, encoded as a bitmask over RefType.
struct TypeSet {
    std::uint8_t bits = 0;
    void set(RefType t) { bits |= std::uint8_t(1u << static_cast<int>(t)); }
    bool has(RefType t) const { return bits & (1u << static_cast<int>(t)); }
    std::size_t count() const;
    std::vector<std::string> names() const;
    std::string key() const;  // "attribute+relation" style cell key
};

struct SceneObject {
    ShapeKind shape;
    ColorKind color;
    SizeKind size;
    double cx = 0, cy = 0;  // pixels
    double half = 0;        // half extent in pixels

    // Analytic axis-aligned extent of the drawn shape.
    Box extent_px() const { return Box{cx, cy, 2 * half, 2 * half}; }
    double bound_radius() const { return half * 1.45; }
};

struct SceneSpec {
    std::size_t canvas = 64;
    std::vector<SceneObject> objects;
    std::size_t target = 0;

    Box target_box_normalized() const;
};

struct Sample {
    std::string id;
    std::string image;  // path relative to the corpus directory
    std::string expression;
    Box box;  // normalized cx, cy, w, h
    TypeSet types;
    std::string difficulty;  // easy | medium | hard
    std::string split;       // train | test | bias-probe
};

// ------------------------------------------------------------- components ---

RasterU8 render(const SceneSpec& scene, std::size_t size);

// All satisfier indices of `expr` against the scene; a uniquely referring
// expression yields exactly one. Throws VocabError on words outside the
// grammar lexicon.
std::vector<std::size_t> match_expression(const SceneSpec& scene, const std::string& expr);

// Closed lexicon of the template grammar, sorted.
std::vector<std::string> grammar_words();

const char* shared_prefix();  // high-frequency opener used by the bias knob

std::string classify_difficulty(const TypeSet& types, std::size_t distractors);

struct GeneratedSample {
    SceneSpec scene;
    std::string expression;
    TypeSet types;
    std::string difficulty;
};

class SceneGenerator {
public:
    explicit SceneGenerator(const CorpusConfig& cfg) : cfg_(cfg) {}

    // split: 0 = train, 1 = test, 2 = bias-probe. Deterministic in
    // (corpus seed, split, index) regardless of call order.
    GeneratedSample generate(int split, std::size_t index) const;

private:
    CorpusConfig cfg_;
};

struct CorpusManifest {
    std::string json;  // serialized manifest document
};

// Writes images/, {train,test,bias_probe}.jsonl, vocab.txt and manifest.json
// under out_dir. Byte-identical for identical configs.
CorpusManifest make_corpus(const CorpusConfig& cfg, const std::string& out_dir);

std::vector<Sample> load_split(const std::string& corpus_dir, const std::string& split);

}  // namespace bare
