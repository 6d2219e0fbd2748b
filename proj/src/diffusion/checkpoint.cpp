#include <bit>
#include <cstring>

#include "tamms/core/errors.hpp"
#include "tamms/diffusion/diffusion.hpp"

namespace tamms::diffusion {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'T', 'A', 'M', 'K'};

void put_u32(std::string& out, std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    out.append(b, 4);
}

void put_record(std::string& out, const std::string& name, const ParamEntry& e) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(e.partition));
    put_u32(out, static_cast<std::uint32_t>(e.value.rank()));
    for (std::size_t d : e.value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    const auto data = e.value.data();
    out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(double));
}

struct Reader {
    std::string_view bytes;
    std::size_t pos = 0;

    [[noreturn]] void fail(const std::string& what) const {
        throw ValidationError("corrupt checkpoint at byte " + std::to_string(pos) + ": " + what);
    }
    void need(std::size_t n) const {
        if (bytes.size() - pos < n) fail("unexpected end of data");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v;
        std::memcpy(&v, bytes.data() + pos, 4);
        pos += 4;
        return v;
    }
};

}  // namespace

std::string encode_checkpoint(const ParamStore& store) {
    std::string out(kMagic, 4);
    put_u32(out, kCheckpointVersion);
    for (const auto& [name, e] : store) put_record(out, name, e);
    return out;
}

ParamStore decode_checkpoint(std::string_view bytes) {
    Reader r{bytes};
    r.need(4);
    if (bytes.substr(0, 4) != std::string_view(kMagic, 4)) r.fail("bad magic, expected TAMK");
    r.pos = 4;
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) r.fail("unsupported format version " + std::to_string(version));
    ParamStore store;
    while (r.pos < bytes.size()) {
        const std::uint32_t len = r.u32();
        r.need(len);
        std::string name(bytes.substr(r.pos, len));
        r.pos += len;
        r.need(1);
        const auto tag = static_cast<std::uint8_t>(bytes[r.pos++]);
        Partition part;
        try {
            part = partition_from_tag(tag);
        } catch (const Error&) {
            r.fail("unknown partition tag " + std::to_string(tag));
        }
        const std::uint32_t rank = r.u32();
        if (rank > 8) r.fail("implausible rank " + std::to_string(rank));
        Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.u32());
        const std::size_t n = shape_numel(shape);
        if (n > (bytes.size() - r.pos) / sizeof(double)) r.fail("payload of '" + name + "' runs past the end");
        Tensor value(shape);
        std::memcpy(value.data().data(), bytes.data() + r.pos, n * sizeof(double));
        r.pos += n * sizeof(double);
        if (store.contains(name)) r.fail("duplicate record '" + name + "'");
        store.add(name, std::move(value), part);
    }
    return store;
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store) {
    io::write_file(path, encode_checkpoint(store));
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
    try {
        return decode_checkpoint(io::read_file(path));
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

std::string partition_bytes(const ParamStore& store, Partition partition) {
    std::string out;
    for (const auto& [name, e] : store) {
        if (e.partition == partition) put_record(out, name, e);
    }
    return out;
}

void check_compatible(const ParamStore& store, const ModelConfig& cfg) {
    ParamStore ref;
    init_model(ref, cfg, 0);
    for (const auto& [name, e] : ref) {
        if (name.starts_with("__meta.")) continue;
        if (!store.contains(name)) throw ValidationError("checkpoint lacks parameter '" + name + "'");
        if (store.value(name).shape() != e.value.shape()) {
            throw ValidationError("parameter '" + name + "' has shape " + shape_to_string(store.value(name).shape()) +
                                  ", model expects " + shape_to_string(e.value.shape()));
        }
    }
    for (const auto& [name, e] : store) {
        if (!name.starts_with("__meta.") && !ref.contains(name)) {
            throw ValidationError("checkpoint has unexpected parameter '" + name + "'");
        }
    }
}

}  // namespace tamms::diffusion
