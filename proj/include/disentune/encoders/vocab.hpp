#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace disentune::encoders {

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kSubjectToken = "S*";

// Bijective token <-> id table. Ids are line numbers (0-based) of the
// canonical vocabulary file.
class Vocabulary {
public:
    Vocabulary() = default;
    explicit Vocabulary(std::vector<std::string> tokens);

    static Vocabulary load(const std::filesystem::path& path);
    static Vocabulary parse(std::string_view text);
    std::string serialize() const;

    int id(std::string_view token) const;  // VocabularyError if absent
    bool contains(std::string_view token) const;
    const std::string& token(int id) const;
    int size() const { return static_cast<int>(tokens_.size()); }
    int pad_id() const { return id(kPadToken); }

    // Whitespace-split ids padded to `length`. Unknown words raise
    // VocabularyError naming the word; more than `length` words raise
    // LengthError.
    std::vector<int> tokenize(std::string_view prompt, int length) const;

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
};

// Location of the vocabulary shipped with the sources.
std::filesystem::path default_vocabulary_path();

}  // namespace disentune::encoders
