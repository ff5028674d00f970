#pragma once

// Word-level vocabulary: one token per word or punctuation mark. Entity names
// are single lowercase words, so every statement renders as canonical
// space-separated tokens and tokenize/detokenize round-trip exactly.

#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace cotlab {

struct WordLists {
    std::vector<std::string> individuals;
    std::vector<std::string> fictional_categories;  // nonce words
    std::vector<std::string> real_categories;
    std::vector<std::string> attributes;

    static const WordLists& builtin();
};

class Vocab {
public:
    static Vocab build(const WordLists& lists);

    int size() const { return static_cast<int>(words_.size()); }
    bool contains(const std::string& w) const { return index_.count(w) != 0; }
    int id(const std::string& w) const;
    const std::string& word(int id) const;

    std::vector<int> tokenize(const std::string& text) const;
    std::string detokenize(std::span<const int> ids) const;

    void save(const std::filesystem::path& path) const;  // ordered word list
    static Vocab load(const std::filesystem::path& path);

    // structural token ids, resolved once at build time
    struct Special {
        int dot, colon, is, nott, vtrue, vfalse, orr, input, response;
        int let, us, think, step, by;
    };
    const Special& sp() const { return sp_; }

private:
    explicit Vocab(std::vector<std::string> words);
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> index_;
    Special sp_{};
};

} // namespace cotlab
