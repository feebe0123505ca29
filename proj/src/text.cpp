#include "slu/text.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace slu {

namespace {

const std::vector<std::string>& reserved_tokens() {
    static const std::vector<std::string> r = {"<pad>", "<bos>", "<eos>", "<cls>", "<task>"};
    return r;
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::istringstream in(text);
    std::string w;
    while (in >> w) words.push_back(w);
    return words;
}

std::size_t utf8_len(unsigned char lead) {
    if (lead >= 0xF0) return 4;
    if (lead >= 0xE0) return 3;
    if (lead >= 0xC0) return 2;
    return 1;
}

}  // namespace

Vocabulary::Vocabulary() {
    for (const std::string& t : reserved_tokens()) add(t);
}

bool Vocabulary::contains(const std::string& token) const {
    return token_to_id_.find(token) != token_to_id_.end();
}

int Vocabulary::id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    if (it == token_to_id_.end()) throw std::out_of_range("vocab: unknown token '" + token + "'");
    return it->second;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("vocab: id out of range");
    return id_to_token_[static_cast<std::size_t>(id)];
}

int Vocabulary::add(const std::string& token) {
    auto it = token_to_id_.find(token);
    if (it != token_to_id_.end()) return it->second;
    id_to_token_.push_back(token);
    const int id = size() - 1;
    token_to_id_[token] = id;
    return id;
}

void TokenizedText::validate() const {
    if (ids.size() != word_ids.size()) throw std::invalid_argument("tokenized: length mismatch");
    if (ids.empty() || ids.front() != kClsId || ids.back() != kEosId) {
        throw std::invalid_argument("tokenized: missing CLS/EOS frame");
    }
    int prev = -1;
    bool seen = false;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const int w = word_ids[i];
        if (ids[i] < kNumReserved) {
            if (w != -1) throw std::invalid_argument("tokenized: special with word id");
            continue;
        }
        if (!seen && w != 0) throw std::invalid_argument("tokenized: word ids must start at 0");
        if (w < prev) throw std::invalid_argument("tokenized: word ids must be nondecreasing");
        prev = w;
        seen = true;
    }
}

Vocabulary build_vocab(const std::vector<std::string>& corpus, int max_size) {
    if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
    if (max_size < kNumReserved + 1) throw std::invalid_argument("build_vocab: max_size too small");
    std::map<std::string, std::int64_t> freq;
    for (const std::string& line : corpus) {
        for (const std::string& word : split_words(line)) {
            ++freq[word];
            std::size_t i = 0;
            while (i < word.size()) {
                const std::size_t len = utf8_len(static_cast<unsigned char>(word[i]));
                const std::string ch = word.substr(i, len);
                if (ch != word) ++freq[ch];
                i += len;
            }
        }
    }
    std::vector<std::pair<std::string, std::int64_t>> ranked(freq.begin(), freq.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocabulary v;
    for (const auto& entry : ranked) {
        if (v.size() >= max_size) break;
        v.add(entry.first);
    }
    return v;
}

TokenizedText tokenize(const std::string& text, Vocabulary& vocab, bool training) {
    const std::vector<std::string> words = split_words(text);
    if (words.empty()) throw std::invalid_argument("tokenize: empty text");
    TokenizedText out;
    out.ids.push_back(kClsId);
    out.word_ids.push_back(-1);
    for (std::size_t w = 0; w < words.size(); ++w) {
        const std::string& word = words[w];
        std::size_t pos = 0;
        while (pos < word.size()) {
            // Longest vocabulary entry that prefixes the remainder.
            std::size_t best = 0;
            for (std::size_t len = word.size() - pos; len >= 1; --len) {
                if (vocab.contains(word.substr(pos, len))) {
                    best = len;
                    break;
                }
            }
            if (best == 0) {
                const std::size_t len = utf8_len(static_cast<unsigned char>(word[pos]));
                if (!training) {
                    throw std::runtime_error("tokenize: unknown character '" + word.substr(pos, len) + "'");
                }
                vocab.add(word.substr(pos, len));
                best = len;
            }
            out.ids.push_back(vocab.id(word.substr(pos, best)));
            out.word_ids.push_back(static_cast<int>(w));
            pos += best;
        }
    }
    out.ids.push_back(kEosId);
    out.word_ids.push_back(-1);
    out.validate();
    return out;
}

std::string detokenize(const TokenizedText& text, const Vocabulary& vocab) {
    std::string out;
    int prev_word = -1;
    for (std::size_t i = 0; i < text.ids.size(); ++i) {
        if (text.word_ids[i] < 0) continue;
        if (text.word_ids[i] != prev_word && prev_word >= 0) out += ' ';
        out += vocab.token(text.ids[i]);
        prev_word = text.word_ids[i];
    }
    return out;
}

std::vector<std::string> ids_to_tokens(const std::vector<int>& ids, const Vocabulary& vocab) {
    std::vector<std::string> out;
    for (int id : ids) {
        if (id >= kNumReserved) out.push_back(vocab.token(id));
    }
    return out;
}

Tensor embed_ids(const std::vector<int>& ids, const Tensor& table, const Tensor& pos_table) {
    const int t = static_cast<int>(ids.size());
    if (t > pos_table.rows()) throw std::invalid_argument("embed: sequence longer than position table");
    Tensor tok = embedding_lookup(table, ids);
    Tensor pos = slice_rows(pos_table, 0, t);
    return add(tok, pos);
}

Tensor embed(const TokenizedText& text, const Tensor& table, const Tensor& pos_table) {
    return embed_ids(text.ids, table, pos_table);
}

void save_vocab(const Vocabulary& vocab, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_vocab: cannot open " + path);
    for (int i = 0; i < vocab.size(); ++i) out << vocab.token(i) << '\t' << i << '\n';
}

Vocabulary load_vocab(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_vocab: cannot open " + path);
    Vocabulary v;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos) {
            throw std::runtime_error("load_vocab: malformed line " + std::to_string(lineno));
        }
        const std::string token = line.substr(0, tab);
        const int id = std::stoi(line.substr(tab + 1));
        if (id < kNumReserved) {
            if (token != v.token(id)) throw std::runtime_error("load_vocab: reserved token mismatch");
            continue;
        }
        if (v.add(token) != id) throw std::runtime_error("load_vocab: non-contiguous ids");
    }
    return v;
}

}  // namespace slu
