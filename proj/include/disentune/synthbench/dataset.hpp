#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "disentune/core/random.hpp"
#include "disentune/core/tensor.hpp"
#include "disentune/synthbench/render.hpp"

namespace disentune::synthbench {

struct FactorLabels {
    SubjectSpec subject;
    SceneSpec scene;
};

struct SubjectSet {
    std::string subject_id;
    std::string prompt;  // "a S* <shape>"
    SubjectSpec subject;
    std::vector<Tensor> images;
    std::vector<FactorLabels> labels;

    std::size_t size() const { return images.size(); }
};

struct SubjectSetLimits {
    int min_k = 3;
    int max_k = 5;
};

// Scenes usable with a subject: every scene whose background differs from the
// subject's fill, in index order.
std::vector<SceneSpec> compatible_scenes(const SubjectSpec& subject);

// K distinct scenes drawn without replacement from compatible_scenes(subject).
SubjectSet make_subject_set(const std::string& subject_id, const SubjectSpec& subject, int k, std::uint64_t seed,
                            int size = 32, SubjectSetLimits limits = {});

std::string subject_prompt(ShapeKind shape);
// "a S* <shape> on <color> <texture>"
std::string prompt_for(ShapeKind shape, Color background, Texture texture);

struct PromptFactors {
    ShapeKind shape = ShapeKind::square;
    std::optional<Color> background;
    std::optional<Texture> texture;
};

// Inverse of subject_prompt / prompt_for; InputError for anything else.
PromptFactors parse_prompt(std::string_view prompt);

// Plain-language description used to pretrain the base denoiser. Each optional
// attribute group is kept when its bit in `keep` is set:
// bit 0 fill, bit 1 markers, bit 2 background color, bit 3 texture.
std::string describe(const SubjectSpec& subject, const SceneSpec& scene, unsigned keep);

// The fixed four-subject benchmark. Every subject belongs to the same class
// (square) so the class word alone does not reveal identity.
struct BenchmarkSubject {
    std::string id;
    SubjectSpec spec;
};
const std::vector<BenchmarkSubject>& benchmark_subjects();
const BenchmarkSubject& benchmark_subject(std::string_view id);

// Uniform draw over every subject and every compatible scene.
FactorLabels random_factors(Rng& rng);

struct ManifestRow {
    std::string image_path;
    std::string subject_id;
    FactorLabels labels;
};

std::string manifest_header();
std::string manifest_line(const ManifestRow& row);

}  // namespace disentune::synthbench
