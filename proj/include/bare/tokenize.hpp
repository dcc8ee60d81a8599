#pragma once

// Closed-vocabulary text tokenization and the patch/text embedding helpers
// that turn raw samples into encoder inputs.

#include "bare/image_io.hpp"
#include "bare/tensor.hpp"

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace bare {

class Vocabulary {
public:
    static constexpr std::size_t kSep = 0;
    static constexpr std::size_t kEos = 1;
    static constexpr std::size_t kPad = 2;
    static constexpr std::size_t kReserved = 3;

    static Vocabulary from_words(std::vector<std::string> words);  // sorted, deduplicated
    static Vocabulary from_file(const std::string& path);
    void save(const std::string& path) const;

    std::size_t size() const { return kReserved + words_.size(); }
    std::size_t id_of(const std::string& word) const;  // VocabError on unknown words
    std::string word_of(std::size_t id) const;
    const std::vector<std::string>& words() const { return words_; }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct TextTokens {
    std::vector<std::size_t> ids;    // fixed length m_max
    std::vector<std::uint8_t> mask;  // 1 for real tokens
    std::size_t length = 0;          // real tokens including [SEP]/[EOS]
    bool truncated = false;
};

TextTokens tokenize_text(const std::string& expr, const Vocabulary& vocab, std::size_t m_max);

// Flattens non-overlapping patches into an N x (patch*patch*3) matrix in
// row-major patch order, pixel values scaled to [0,1].
template <typename T>
Tensor<T> patch_matrix(const RasterU8& img, std::size_t patch) {
    if (img.width % patch != 0 || img.height % patch != 0)
        throw ConfigError("patch_matrix: raster " + std::to_string(img.width) + "x" +
                          std::to_string(img.height) + " not divisible by patch " +
                          std::to_string(patch));
    const std::size_t gw = img.width / patch, gh = img.height / patch;
    const std::size_t dim = patch * patch * 3;
    Tensor<T> out({gh * gw, dim});
    T* p = out.ptr_mut();
    for (std::size_t gy = 0; gy < gh; ++gy)
        for (std::size_t gx = 0; gx < gw; ++gx) {
            T* row = p + (gy * gw + gx) * dim;
            std::size_t k = 0;
            for (std::size_t y = 0; y < patch; ++y)
                for (std::size_t x = 0; x < patch; ++x) {
                    const std::uint8_t* px = img.pixel(gx * patch + x, gy * patch + y);
                    row[k++] = T(px[0]) / T(255);
                    row[k++] = T(px[1]) / T(255);
                    row[k++] = T(px[2]) / T(255);
                }
        }
    return out;
}

// Projection plus learned 2-D positional embedding.
template <typename T>
Tensor<T> patch_embed(const Tensor<T>& patches, const Tensor<T>& proj, const Tensor<T>& pos) {
    return add(matmul(patches, proj), pos);
}

template <typename T>
Tensor<T> mask_column(const TextTokens& tokens) {
    Tensor<T> mask_col({tokens.ids.size(), 1});
    for (std::size_t i = 0; i < tokens.ids.size(); ++i) mask_col.ptr_mut()[i] = T(tokens.mask[i]);
    return mask_col;
}

// Table lookup plus learned 1-D positional embedding; padded rows come out as
// exact zeros and contribute no gradient to the table or the positions.
template <typename T>
Tensor<T> embed_text(const TextTokens& tokens, const Tensor<T>& table, const Tensor<T>& pos) {
    const std::size_t m_max = tokens.ids.size();
    if (pos.rows() != m_max)
        throw ShapeError("embed_text: positional table has " + std::to_string(pos.rows()) +
                         " rows, tokens have " + std::to_string(m_max));
    return zero_rows(add(gather_rows(table, tokens.ids), pos), mask_column<T>(tokens));
}

}  // namespace bare
