#include "disentune/io/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <set>

#include "disentune/io/files.hpp"

namespace disentune::io {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint codec assumes a little-endian host");

template <class T>
void put(std::string& out, T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <class T>
    T get(const char* what) {
        T v{};
        need(sizeof(T), what);
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    const char* take(std::size_t n, const char* what) {
        need(n, what);
        const char* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) {
            throw FormatError(std::string("checkpoint truncated while reading ") + what);
        }
    }

    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

Tensor Checkpoint::find(const std::string& name) const {
    for (const auto& e : entries) {
        if (e.name == name) {
            return e.tensor;
        }
    }
    return {};
}

Tensor Checkpoint::require(const std::string& name) const {
    Tensor t = find(name);
    if (!t) {
        throw FormatError("checkpoint has no entry '" + name + "'");
    }
    return t;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
    std::set<std::string> seen;
    std::string out(kCheckpointMagic, 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.entries.size()));
    for (const auto& [name, t] : ckpt.entries) {
        if (!seen.insert(name).second) {
            throw FormatError("duplicate checkpoint entry '" + name + "'");
        }
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) {
            put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
        }
        dispatch(t.dtype(), [&]<class T>() {
            auto v = t.values<T>();
            out.append(reinterpret_cast<const char*>(v.data()), v.size_bytes());
        });
    }
    put<std::uint64_t>(out, ckpt.config_digest);
    return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    Reader r(bytes);
    if (std::memcmp(r.take(4, "magic"), kCheckpointMagic, 4) != 0) {
        throw FormatError("not a checkpoint: bad magic");
    }
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto count = r.get<std::uint32_t>("entry count");
    Checkpoint ckpt;
    std::set<std::string> seen;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = r.get<std::uint32_t>("name length");
        std::string name(r.take(len, "name"), len);
        if (!seen.insert(name).second) {
            throw FormatError("duplicate checkpoint entry '" + name + "'");
        }
        const auto code = r.get<std::uint8_t>("dtype");
        if (code > static_cast<std::uint8_t>(DType::f64)) {
            throw FormatError("entry '" + name + "' has unknown dtype code " + std::to_string(code));
        }
        const auto dt = static_cast<DType>(code);
        const auto rank = r.get<std::uint32_t>("rank");
        if (rank > 8) {
            throw FormatError("entry '" + name + "' has implausible rank " + std::to_string(rank));
        }
        Shape shape;
        std::uint64_t numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            const auto dim = r.get<std::uint64_t>("dims");
            if (dim > (std::uint64_t{1} << 32)) {
                throw FormatError("entry '" + name + "' has implausible extent");
            }
            numel *= dim;
            shape.push_back(static_cast<std::int64_t>(dim));
        }
        if (numel > (std::uint64_t{1} << 32)) {
            throw FormatError("entry '" + name + "' is implausibly large");
        }
        Tensor t = Tensor::zeros(shape, dt);
        dispatch(dt, [&]<class T>() {
            auto v = t.values<T>();
            std::memcpy(v.data(), r.take(v.size_bytes(), "payload"), v.size_bytes());
        });
        ckpt.entries.push_back({std::move(name), t});
    }
    ckpt.config_digest = r.get<std::uint64_t>("config digest");
    if (!r.done()) {
        throw FormatError("trailing bytes after checkpoint");
    }
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    try {
        return decode_checkpoint(read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void restore_into(const Checkpoint& ckpt, const NamedTensors& targets) {
    for (const auto& [name, target] : targets) {
        Tensor src = ckpt.require(name);
        if (src.shape() != target.shape()) {
            throw FormatError("entry '" + name + "' has shape " + shape_str(src.shape()) + ", expected " +
                              shape_str(target.shape()));
        }
        Tensor copy = target;
        copy.assign(src.to(target.dtype()));
    }
}

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace disentune::io
