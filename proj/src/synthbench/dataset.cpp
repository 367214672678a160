#include "disentune/synthbench/dataset.hpp"

#include <sstream>

namespace disentune::synthbench {

namespace {

template <class E, std::size_t N>
std::optional<E> lookup(std::string_view word, const std::string_view (&words)[N]) {
    for (std::size_t i = 0; i < N; ++i) {
        if (words[i] == word) {
            return static_cast<E>(i);
        }
    }
    return std::nullopt;
}

constexpr std::string_view kShapes[] = {"circle", "square", "triangle", "cross"};
constexpr std::string_view kColors[] = {"red", "green", "blue", "yellow", "cyan", "magenta", "white", "black"};
constexpr std::string_view kTextures[] = {"plain", "stripes", "checker"};

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::istringstream in{std::string(text)};
    std::string w;
    while (in >> w) {
        words.push_back(w);
    }
    return words;
}

}  // namespace

std::vector<SceneSpec> compatible_scenes(const SubjectSpec& subject) {
    std::vector<SceneSpec> out;
    for (int i = 0; i < kNumScenes; ++i) {
        const SceneSpec s = SceneSpec::from_index(i);
        if (s.background != subject.fill) {
            out.push_back(s);
        }
    }
    return out;
}

SubjectSet make_subject_set(const std::string& subject_id, const SubjectSpec& subject, int k, std::uint64_t seed,
                            int size, SubjectSetLimits limits) {
    auto pool = compatible_scenes(subject);
    if (k < limits.min_k || k > limits.max_k) {
        throw ConfigError("subject set size K=" + std::to_string(k) + " outside [" + std::to_string(limits.min_k) +
                          ", " + std::to_string(limits.max_k) + "]");
    }
    if (k > static_cast<int>(pool.size())) {
        throw ConfigError("subject set size K=" + std::to_string(k) + " exceeds " + std::to_string(pool.size()) +
                          " distinct scenes");
    }
    Rng rng(derive_seed(seed, 0x5c3e));
    for (int i = 0; i < k; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(pool.size() - static_cast<std::size_t>(i)));
        std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
    }
    SubjectSet set;
    set.subject_id = subject_id;
    set.prompt = subject_prompt(subject.shape);
    set.subject = subject;
    for (int i = 0; i < k; ++i) {
        const SceneSpec& scene = pool[static_cast<std::size_t>(i)];
        set.images.push_back(render(subject, scene, size));
        set.labels.push_back({subject, scene});
    }
    return set;
}

std::string subject_prompt(ShapeKind shape) { return "a S* " + std::string(shape_word(shape)); }

std::string prompt_for(ShapeKind shape, Color background, Texture texture) {
    return subject_prompt(shape) + " on " + std::string(color_word(background)) + " " +
           std::string(texture_word(texture));
}

PromptFactors parse_prompt(std::string_view prompt) {
    const auto words = split_words(prompt);
    auto fail = [&]() -> PromptFactors {
        throw InputError("prompt '" + std::string(prompt) + "' is not of the form 'a S* <shape> [on <color> <texture>]'");
    };
    if ((words.size() != 3 && words.size() != 6) || words[0] != "a" || words[1] != "S*") {
        return fail();
    }
    PromptFactors f;
    const auto shape = lookup<ShapeKind>(words[2], kShapes);
    if (!shape) {
        return fail();
    }
    f.shape = *shape;
    if (words.size() == 6) {
        f.background = lookup<Color>(words[4], kColors);
        f.texture = lookup<Texture>(words[5], kTextures);
        if (words[3] != "on" || !f.background || !f.texture) {
            return fail();
        }
    }
    return f;
}

std::string describe(const SubjectSpec& subject, const SceneSpec& scene, unsigned keep) {
    std::string out = "a";
    if (keep & 1u) {
        out += " " + std::string(color_word(subject.fill));
    }
    out += " " + std::string(shape_word(subject.shape));
    if (keep & 2u) {
        out += " " + std::string(marker_word(subject.markers));
    }
    if (keep & 12u) {
        out += " on";
        if (keep & 4u) {
            out += " " + std::string(color_word(scene.background));
        }
        if (keep & 8u) {
            out += " " + std::string(texture_word(scene.texture));
        }
    }
    return out;
}

const std::vector<BenchmarkSubject>& benchmark_subjects() {
    static const std::vector<BenchmarkSubject> subjects = {
        {"s0", {ShapeKind::square, Color::red, 1}},
        {"s1", {ShapeKind::square, Color::blue, 2}},
        {"s2", {ShapeKind::square, Color::yellow, 3}},
        {"s3", {ShapeKind::square, Color::green, 0}},
    };
    return subjects;
}

const BenchmarkSubject& benchmark_subject(std::string_view id) {
    for (const auto& s : benchmark_subjects()) {
        if (s.id == id) {
            return s;
        }
    }
    throw InputError("unknown subject id '" + std::string(id) + "'");
}

FactorLabels random_factors(Rng& rng) {
    FactorLabels f;
    f.subject.shape = static_cast<ShapeKind>(rng.below(kNumShapes));
    f.subject.fill = static_cast<Color>(rng.below(kNumColors));
    f.subject.markers = static_cast<int>(rng.below(kNumMarkers));
    // Backgrounds never match the fill; draw from the remaining seven colors.
    auto bg = static_cast<int>(rng.below(kNumColors - 1));
    if (bg >= static_cast<int>(f.subject.fill)) {
        ++bg;
    }
    f.scene.background = static_cast<Color>(bg);
    f.scene.texture = static_cast<Texture>(rng.below(kNumTextures));
    f.scene.position = static_cast<int>(rng.below(kNumPositions));
    f.scene.scale = static_cast<Scale>(rng.below(kNumScales));
    return f;
}

std::string manifest_header() { return "image_path,subject_id,shape,fill,marker,bg_color,texture,pos,scale"; }

std::string manifest_line(const ManifestRow& row) {
    const auto& s = row.labels.subject;
    const auto& c = row.labels.scene;
    std::ostringstream out;
    out << row.image_path << ',' << row.subject_id << ',' << shape_word(s.shape) << ',' << color_word(s.fill) << ','
        << s.markers << ',' << color_word(c.background) << ',' << texture_word(c.texture) << ',' << c.position << ','
        << scale_word(c.scale);
    return out.str();
}

}  // namespace disentune::synthbench
