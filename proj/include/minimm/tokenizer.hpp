#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace minimm {

// Word-level tokenizer over the closed template vocabulary. All generated
// text is canonical (lowercase, single-space separated, '?' as its own word),
// so detokenize(tokenize(s)) == s holds exactly.
class Tokenizer {
public:
    Tokenizer();

    int vocab_size() const { return int(words_.size()); }
    std::vector<int> tokenize(const std::string& text) const; // throws on OOV
    std::string detokenize(std::span<const int> ids) const;
    int id(const std::string& word) const;
    const std::string& word(int id) const;
    bool contains(const std::string& word) const;

    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kImage = 3;
    static constexpr int kThinkOpen = 4;
    static constexpr int kThinkClose = 5;

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> index_;
};

const Tokenizer& tokenizer();

// Removes <think>...</think> spans and trailing specials; used by exact-match
// scoring and by response-length bookkeeping.
std::vector<int> strip_think_spans(std::span<const int> ids);

} // namespace minimm
