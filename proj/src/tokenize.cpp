#include "bare/tokenize.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace bare {

Vocabulary Vocabulary::from_words(std::vector<std::string> words) {
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    Vocabulary v;
    v.words_ = std::move(words);
    for (std::size_t i = 0; i < v.words_.size(); ++i) v.index_[v.words_[i]] = kReserved + i;
    return v;
}

Vocabulary Vocabulary::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open vocabulary file " + path);
    std::vector<std::string> words;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) words.push_back(line);
    // id = line index + reserved offset; the file is trusted to be sorted
    Vocabulary v;
    v.words_ = std::move(words);
    for (std::size_t i = 0; i < v.words_.size(); ++i) v.index_[v.words_[i]] = kReserved + i;
    return v;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write vocabulary file " + path);
    for (const auto& w : words_) out << w << "\n";
}

std::size_t Vocabulary::id_of(const std::string& word) const {
    auto it = index_.find(word);
    if (it == index_.end()) throw VocabError("word not in vocabulary: " + word);
    return it->second;
}

std::string Vocabulary::word_of(std::size_t id) const {
    if (id == kSep) return "[SEP]";
    if (id == kEos) return "[EOS]";
    if (id == kPad) return "[PAD]";
    if (id - kReserved >= words_.size())
        throw VocabError("token id out of range: " + std::to_string(id));
    return words_[id - kReserved];
}

TextTokens tokenize_text(const std::string& expr, const Vocabulary& vocab, std::size_t m_max) {
    if (m_max < 2) throw ConfigError("tokenize_text: m_max must be at least 2");
    std::vector<std::string> words;
    {
        std::stringstream ss(expr);
        std::string w;
        while (ss >> w) words.push_back(w);
    }
    TextTokens out;
    out.truncated = words.size() > m_max - 2;
    if (out.truncated) words.resize(m_max - 2);

    out.ids.assign(m_max, Vocabulary::kPad);
    out.mask.assign(m_max, 0);
    out.ids[0] = Vocabulary::kSep;
    out.mask[0] = 1;
    for (std::size_t i = 0; i < words.size(); ++i) {
        out.ids[1 + i] = vocab.id_of(words[i]);
        out.mask[1 + i] = 1;
    }
    out.ids[1 + words.size()] = Vocabulary::kEos;
    out.mask[1 + words.size()] = 1;
    out.length = words.size() + 2;
    return out;
}

}  // namespace bare
