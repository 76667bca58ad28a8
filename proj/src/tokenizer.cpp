#include "minimm/tokenizer.hpp"

#include <sstream>
#include <stdexcept>

namespace minimm {

namespace {

const char* kVocab[] = {
    // specials; order pinned by the kPad..kThinkClose constants
    "<pad>", "<bos>", "<eos>", "<image>", "<think>", "</think>",
    // digits
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
    // palette colors
    "red", "green", "blue", "yellow", "purple", "orange", "cyan", "white",
    // shape words
    "square", "circle", "triangle", "glyph", "squares", "circles", "triangles", "glyphs",
    // question / answer / caption / filler words
    "is", "there", "a", "?", "what", "color", "the", "how", "many", "are",
    "on", "left", "read", "largest", "do", "and", "make", "sides", "does",
    "have", "plus", "yes", "no", "describe", "scene", "nothing", "well",
    "maybe", "it", "could", "be", "i", "see", "looking", "again",
};

} // namespace

Tokenizer::Tokenizer() {
    for (const char* w : kVocab) {
        index_.emplace(w, int(words_.size()));
        words_.emplace_back(w);
    }
    if (words_.size() > 128) throw std::logic_error("tokenizer: vocabulary exceeds 128 words");
}

std::vector<int> Tokenizer::tokenize(const std::string& text) const {
    std::vector<int> out;
    std::istringstream in(text);
    std::string w;
    while (in >> w) out.push_back(id(w));
    return out;
}

std::string Tokenizer::detokenize(std::span<const int> ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ' ';
        out += word(ids[i]);
    }
    return out;
}

int Tokenizer::id(const std::string& w) const {
    auto it = index_.find(w);
    if (it == index_.end())
        throw std::invalid_argument("tokenizer: out-of-vocabulary word '" + w + "'");
    return it->second;
}

const std::string& Tokenizer::word(int id) const {
    if (id < 0 || id >= int(words_.size()))
        throw std::invalid_argument("tokenizer: id out of range");
    return words_[size_t(id)];
}

bool Tokenizer::contains(const std::string& w) const { return index_.count(w) != 0; }

const Tokenizer& tokenizer() {
    static const Tokenizer tok;
    return tok;
}

std::vector<int> strip_think_spans(std::span<const int> ids) {
    std::vector<int> out;
    bool in_think = false;
    for (int id : ids) {
        if (id == Tokenizer::kThinkOpen) {
            in_think = true;
            continue;
        }
        if (id == Tokenizer::kThinkClose) {
            in_think = false;
            continue;
        }
        if (in_think) continue;
        if (id == Tokenizer::kEos || id == Tokenizer::kPad) continue;
        out.push_back(id);
    }
    return out;
}

} // namespace minimm
