#include "stfl/param_vector.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace stfl {

using nlohmann::json;

std::uint64_t ParamVector::layout_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& b : blocks) {
        h = fnv1a64(b.name, h);
        h = fnv1a64("|", h);
        for (int d : b.shape) h = fnv1a64(&d, sizeof(d), h);
    }
    return h;
}

std::uint64_t ParamVector::value_digest() const {
    std::uint64_t h = layout_hash();
    for (const auto& b : blocks) h = fnv1a64(b.data.data(), b.data.size() * sizeof(double), h);
    return h;
}

const ParamBlock* ParamVector::find(const std::string& name) const {
    for (const auto& b : blocks)
        if (b.name == name) return &b;
    return nullptr;
}

ParamBlock* ParamVector::find(const std::string& name) {
    for (auto& b : blocks)
        if (b.name == name) return &b;
    return nullptr;
}

void ParamVector::check_finite(const std::string& context) const {
    for (const auto& b : blocks)
        for (double v : b.data)
            if (!std::isfinite(v))
                throw NumericFault(context + ": non-finite value in parameter block \"" + b.name + "\"");
}

namespace {

constexpr char kMagic[] = "STFLCKPT1";
constexpr std::size_t kMagicLen = 9;

void write_u64_le(std::ostream& os, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64_le(std::istream& is) {
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, ParamVector>>& sections) {
    json layers = json::array();
    std::uint64_t offset = 0;
    for (const auto& [section, pv] : sections) {
        for (const auto& b : pv.blocks) {
            const std::uint64_t bytes = b.data.size() * sizeof(double);
            layers.push_back({{"section", section},
                              {"name", b.name},
                              {"shape", b.shape},
                              {"dtype", "f64"},
                              {"offset", offset},
                              {"bytes", bytes}});
            offset += bytes;
        }
    }
    json header = {{"format", 1}, {"layers", layers}};
    const std::string hs = header.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("save_checkpoint: cannot open " + path);
    os.write(kMagic, kMagicLen);
    write_u64_le(os, hs.size());
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [section, pv] : sections)
        for (const auto& b : pv.blocks)
            os.write(reinterpret_cast<const char*>(b.data.data()),
                     static_cast<std::streamsize>(b.data.size() * sizeof(double)));
    if (!os) throw IoError("save_checkpoint: write failed for " + path);
}

std::vector<std::pair<std::string, ParamVector>> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("load_checkpoint: cannot open " + path);
    char magic[kMagicLen];
    is.read(magic, kMagicLen);
    if (!is || std::memcmp(magic, kMagic, kMagicLen) != 0)
        throw IoError("load_checkpoint: bad magic in " + path);
    const std::uint64_t hlen = read_u64_le(is);
    std::string hs(hlen, '\0');
    is.read(hs.data(), static_cast<std::streamsize>(hlen));
    json header = json::parse(hs);

    const std::streampos payload_start = is.tellg();
    std::vector<std::pair<std::string, ParamVector>> sections;
    for (const auto& layer : header.at("layers")) {
        const std::string section = layer.at("section");
        if (layer.at("dtype") != "f64")
            throw IoError("load_checkpoint: unsupported dtype in " + path);
        ParamBlock b;
        b.name = layer.at("name");
        b.shape = layer.at("shape").get<std::vector<int>>();
        const std::uint64_t bytes = layer.at("bytes");
        b.data.resize(bytes / sizeof(double));
        is.seekg(payload_start + static_cast<std::streamoff>(layer.at("offset").get<std::uint64_t>()));
        is.read(reinterpret_cast<char*>(b.data.data()), static_cast<std::streamsize>(bytes));
        if (!is) throw IoError("load_checkpoint: truncated payload in " + path);
        if (b.data.size() != b.numel())
            throw IoError("load_checkpoint: shape/byte mismatch for " + b.name);
        if (sections.empty() || sections.back().first != section)
            sections.emplace_back(section, ParamVector{});
        sections.back().second.blocks.push_back(std::move(b));
    }
    return sections;
}

void save_checkpoint(const std::string& path, const ParamVector& params) {
    save_checkpoint(path, {{"params", params}});
}

ParamVector load_single_checkpoint(const std::string& path) {
    auto sections = load_checkpoint(path);
    if (sections.size() != 1)
        throw IoError("load_single_checkpoint: expected one section in " + path);
    return std::move(sections.front().second);
}

}  // namespace stfl
