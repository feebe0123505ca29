#pragma once

// Toy subword tokenizer: whitespace word split followed by greedy
// longest-match against the vocabulary, with per-token word ids so the
// cluster aggregator can regroup subwords.

#include <string>
#include <unordered_map>
#include <vector>

#include "slu/tensor.hpp"

namespace slu {

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kClsId = 3;
inline constexpr int kTaskId = 4;  // steers the match path of the grounded text encoder
inline constexpr int kNumReserved = 5;

class Vocabulary {
public:
    Vocabulary();

    int size() const { return static_cast<int>(id_to_token_.size()); }
    bool contains(const std::string& token) const;
    int id(const std::string& token) const;  // throws if absent
    const std::string& token(int id) const;
    // Appends a new token; returns its id. Reserved ids are never reassigned.
    int add(const std::string& token);

    const std::vector<std::string>& tokens() const { return id_to_token_; }

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
};

struct TokenizedText {
    std::vector<int> ids;       // CLS-prefixed, EOS-suffixed
    std::vector<int> word_ids;  // source word per token, -1 for specials
    void validate() const;
};

// Reserved tokens first, then candidate subwords (whole words and their
// single characters) ranked by corpus frequency, ties broken lexicographically.
Vocabulary build_vocab(const std::vector<std::string>& corpus, int max_size);

// Greedy longest-match split per word. Unknown leading characters are added
// to the vocabulary when training is true and rejected otherwise.
TokenizedText tokenize(const std::string& text, Vocabulary& vocab, bool training = false);

// Rebuilds the original words (subwords of one word are concatenated).
std::string detokenize(const TokenizedText& text, const Vocabulary& vocab);

// Token strings for non-special ids, used when scoring decoded output.
std::vector<std::string> ids_to_tokens(const std::vector<int>& ids, const Vocabulary& vocab);

// Row lookup plus additive learned positional embedding.
Tensor embed(const TokenizedText& text, const Tensor& table, const Tensor& pos_table);
Tensor embed_ids(const std::vector<int>& ids, const Tensor& table, const Tensor& pos_table);

// Line-oriented "token<TAB>id" file, UTF-8, ordered by id.
void save_vocab(const Vocabulary& vocab, const std::string& path);
Vocabulary load_vocab(const std::string& path);

}  // namespace slu
