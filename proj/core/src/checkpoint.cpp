#include "gigp/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

namespace gigp {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

template <typename T>
void put(std::string& out, T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <typename T>
    T get(const char* what) {
        need(sizeof(T), what);
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    std::string get_string(std::size_t n, const char* what) {
        need(n, what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }
    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n, const char* what) {
        if (bytes_.size() - pos_ < n) {
            std::ostringstream os;
            os << "checkpoint truncated while reading " << what << " at byte " << pos_ << " (need " << n
               << ", have " << bytes_.size() - pos_ << ")";
            throw CheckpointError(os.str());
        }
    }

    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& checkpoint) {
    std::string out(kCheckpointMagic, 8);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.config_text.size()));
    out += checkpoint.config_text;
    put<std::uint64_t>(out, checkpoint.iteration);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.blobs.size()));
    for (const auto& [name, tensor] : checkpoint.blobs) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
        for (int d : tensor.shape()) put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
        for (double v : tensor.values()) put<double>(out, v);
    }
    return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
    Reader in(bytes);
    if (bytes.size() < 8 || bytes.compare(0, 8, kCheckpointMagic) != 0) {
        throw CheckpointError("not a checkpoint: expected magic \"GIGPCKPT\"");
    }
    in.get_string(8, "magic");
    const auto version = in.get<std::uint32_t>("version");
    if (version != kCheckpointVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    }
    Checkpoint ck;
    ck.config_text = in.get_string(in.get<std::uint32_t>("config length"), "config text");
    ck.iteration = in.get<std::uint64_t>("iteration");
    const auto count = in.get<std::uint32_t>("blob count");
    for (std::uint32_t b = 0; b < count; ++b) {
        std::string name = in.get_string(in.get<std::uint32_t>("blob name length"), "blob name");
        const auto rank = in.get<std::uint32_t>("blob rank");
        if (rank == 0 || rank > 8) throw CheckpointError("blob '" + name + "' has invalid rank " + std::to_string(rank));
        Shape shape;
        std::size_t numel = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            const auto d = in.get<std::uint64_t>("blob dims");
            if (d == 0 || d > (1u << 30)) throw CheckpointError("blob '" + name + "' has invalid extent");
            shape.push_back(static_cast<int>(d));
            numel *= d;
        }
        std::vector<double> values(numel);
        for (double& v : values) v = in.get<double>("blob values");
        ck.blobs.emplace_back(std::move(name), Tensor::from_values(std::move(shape), std::move(values)));
    }
    if (!in.done()) {
        throw CheckpointError("checkpoint has " + std::to_string(bytes.size() - in.pos()) + " trailing bytes");
    }
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
    const std::string bytes = serialize_checkpoint(checkpoint);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("failed writing '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return parse_checkpoint(bytes);
    } catch (const CheckpointError& e) {
        throw CheckpointError(path.string() + ": " + e.what());
    }
}

void append_blobs(Checkpoint& checkpoint, const std::string& prefix, const ParameterSet& set) {
    for (const auto& p : set.entries()) checkpoint.blobs.emplace_back(prefix + p.name, p.tensor.detach());
}

void restore_blobs(const Checkpoint& checkpoint, const std::string& prefix, ParameterSet& set) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& [name, tensor] : checkpoint.blobs) by_name[name] = &tensor;
    for (auto& p : set.entries()) {
        const auto it = by_name.find(prefix + p.name);
        if (it == by_name.end()) throw CheckpointError("checkpoint lacks parameter '" + prefix + p.name + "'");
        if (it->second->shape() != p.tensor.shape()) {
            throw CheckpointError("parameter '" + prefix + p.name + "' has shape " + shape_str(it->second->shape()) +
                                  " in the checkpoint but " + shape_str(p.tensor.shape()) + " in the network");
        }
        const auto src = it->second->values();
        auto dst = p.tensor.values_mut();
        std::copy(src.begin(), src.end(), dst.begin());
    }
}

}  // namespace gigp
