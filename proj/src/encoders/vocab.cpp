#include "disentune/encoders/vocab.hpp"

#include <fstream>
#include <sstream>

#include "disentune/core/error.hpp"

#ifndef DISENTUNE_DATA_DIR
#define DISENTUNE_DATA_DIR "data"
#endif

namespace disentune::encoders {

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        const auto& tok = tokens_[i];
        if (tok.empty() || tok.find_first_of(" \t\r\n") != std::string::npos) {
            throw FormatError("vocabulary: invalid token at line " + std::to_string(i + 1));
        }
        if (!ids_.emplace(tok, static_cast<int>(i)).second) {
            throw FormatError("vocabulary: duplicate token '" + tok + "'");
        }
    }
    if (!ids_.contains(std::string(kPadToken)) || !ids_.contains(std::string(kSubjectToken))) {
        throw FormatError("vocabulary: must contain <pad> and S*");
    }
}

Vocabulary Vocabulary::parse(std::string_view text) {
    std::vector<std::string> tokens;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        tokens.push_back(line);
    }
    return Vocabulary(std::move(tokens));
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open vocabulary file " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::string Vocabulary::serialize() const {
    std::string out;
    for (const auto& t : tokens_) {
        out += t;
        out += '\n';
    }
    return out;
}

int Vocabulary::id(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    if (it == ids_.end()) {
        throw VocabularyError("unknown word '" + std::string(token) + "'");
    }
    return it->second;
}

bool Vocabulary::contains(std::string_view token) const { return ids_.contains(std::string(token)); }

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) {
        throw VocabularyError("token id " + std::to_string(id) + " out of range");
    }
    return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::tokenize(std::string_view prompt, int length) const {
    std::vector<int> ids;
    std::istringstream in{std::string(prompt)};
    std::string word;
    while (in >> word) {
        ids.push_back(id(word));
    }
    if (static_cast<int>(ids.size()) > length) {
        throw LengthError("prompt has " + std::to_string(ids.size()) + " words, limit is " + std::to_string(length));
    }
    ids.resize(static_cast<std::size_t>(length), pad_id());
    return ids;
}

std::filesystem::path default_vocabulary_path() { return std::filesystem::path(DISENTUNE_DATA_DIR) / "vocab.txt"; }

}  // namespace disentune::encoders
