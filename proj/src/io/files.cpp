#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tamms/core/errors.hpp"
#include "tamms/io/sits.hpp"

namespace tamms::io {

namespace fs = std::filesystem;

namespace {

// Cursor over a netpbm header: magic, then whitespace-separated integers with
// '#' comments running to end of line.
struct HeaderReader {
    std::string_view bytes;
    std::size_t pos = 0;
    const char* format;

    [[noreturn]] void fail(const std::string& what) const {
        throw ValidationError(std::string("malformed ") + format + ": " + what);
    }

    void skip_space() {
        while (pos < bytes.size()) {
            const char c = bytes[pos];
            if (c == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                ++pos;
            } else {
                break;
            }
        }
    }

    std::size_t number(const char* field) {
        skip_space();
        const std::size_t start = pos;
        std::size_t v = 0;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
            v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
            if (v > 1'000'000) fail(std::string(field) + " too large");
            ++pos;
        }
        if (pos == start) fail(std::string("missing ") + field);
        return v;
    }

    // Exactly one whitespace byte separates the header from the raster.
    void end_header() {
        if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
            fail("header not terminated by whitespace");
        }
        ++pos;
    }
};

}  // namespace

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw IoError("error reading '" + path.string() + "'");
    return ss.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("error writing '" + path.string() + "'");
}

std::string encode_ppm(const Tensor& image) {
    if (image.rank() != 3 || image.dim(2) != 3 || image.dim(0) == 0 || image.dim(1) == 0) {
        throw DimensionError("PPM images must be [H,W,3], got " + shape_to_string(image.shape()));
    }
    std::string out = "P6\n" + std::to_string(image.dim(1)) + " " + std::to_string(image.dim(0)) + "\n255\n";
    const std::size_t header = out.size();
    out.resize(header + image.numel());
    for (std::size_t i = 0; i < image.numel(); ++i) {
        const double v = std::isnan(image[i]) ? 0.0 : std::clamp(image[i], 0.0, 1.0);
        out[header + i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
    }
    return out;
}

Tensor decode_ppm(std::string_view bytes) {
    HeaderReader r{bytes, 0, "PPM"};
    if (bytes.substr(0, 2) != "P6") r.fail("expected magic P6");
    r.pos = 2;
    const std::size_t w = r.number("width");
    const std::size_t h = r.number("height");
    const std::size_t maxval = r.number("maxval");
    r.end_header();
    if (w == 0 || h == 0) r.fail("zero image size");
    if (maxval != 255) r.fail("only 8-bit images (maxval 255) are supported, got " + std::to_string(maxval));
    const std::size_t n = w * h * 3;
    if (bytes.size() - r.pos < n) r.fail("truncated raster");
    Tensor img({h, w, 3});
    for (std::size_t i = 0; i < n; ++i) {
        img[i] = static_cast<double>(static_cast<unsigned char>(bytes[r.pos + i])) / 255.0;
    }
    return img;
}

void write_ppm(const fs::path& path, const Tensor& image) { write_file(path, encode_ppm(image)); }

Tensor read_ppm(const fs::path& path) {
    try {
        return decode_ppm(read_file(path));
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

std::string encode_pbm(const metrics::ChangeMask& mask) {
    const std::size_t w = mask.width(), h = mask.height();
    const std::size_t row_bytes = (w + 7) / 8;
    std::string out = "P4\n" + std::to_string(w) + " " + std::to_string(h) + "\n";
    const std::size_t header = out.size();
    out.resize(header + row_bytes * h, '\0');
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            if (mask.get(i, j)) out[header + i * row_bytes + j / 8] |= static_cast<char>(0x80u >> (j % 8));
        }
    }
    return out;
}

metrics::ChangeMask decode_pbm(std::string_view bytes) {
    HeaderReader r{bytes, 0, "PBM"};
    if (bytes.substr(0, 2) != "P4") r.fail("expected magic P4");
    r.pos = 2;
    const std::size_t w = r.number("width");
    const std::size_t h = r.number("height");
    r.end_header();
    if (w == 0 || h == 0) r.fail("zero image size");
    const std::size_t row_bytes = (w + 7) / 8;
    if (bytes.size() - r.pos < row_bytes * h) r.fail("truncated raster");
    metrics::ChangeMask mask(w, h);
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            const auto byte = static_cast<unsigned char>(bytes[r.pos + i * row_bytes + j / 8]);
            mask.set(i, j, (byte & (0x80u >> (j % 8))) != 0);
        }
    }
    return mask;
}

void write_pbm(const fs::path& path, const metrics::ChangeMask& mask) { write_file(path, encode_pbm(mask)); }

metrics::ChangeMask read_pbm(const fs::path& path) {
    try {
        return decode_pbm(read_file(path));
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------- manifests

void validate(const SitsSequence& seq) {
    const std::string who = seq.id.empty() ? std::string("sequence") : "sequence '" + seq.id + "'";
    if (seq.frames.size() != seq.timestamps.size()) {
        throw ValidationError(who + ": " + std::to_string(seq.frames.size()) + " frames but " +
                              std::to_string(seq.timestamps.size()) + " timestamps");
    }
    if (seq.frames.size() < 2) throw ValidationError(who + ": needs at least two frames");
    for (std::size_t i = 1; i < seq.timestamps.size(); ++i) {
        if (seq.timestamps[i] <= seq.timestamps[i - 1]) {
            throw ValidationError(who + ": timestamps must strictly increase (" +
                                  std::to_string(seq.timestamps[i - 1]) + " then " +
                                  std::to_string(seq.timestamps[i]) + ")");
        }
    }
    const Shape& shape = seq.frames.front().shape();
    if (shape.size() != 3 || shape_numel(shape) == 0) {
        throw ValidationError(who + ": frames must be non-empty [H,W,C], got " + shape_to_string(shape));
    }
    for (std::size_t i = 0; i < seq.frames.size(); ++i) {
        if (seq.frames[i].shape() != shape) {
            throw ValidationError(who + ": frame " + std::to_string(i) + " has shape " +
                                  shape_to_string(seq.frames[i].shape()) + ", expected " + shape_to_string(shape));
        }
        for (double v : seq.frames[i].data()) {
            if (!(v >= 0.0 && v <= 1.0)) {
                throw ValidationError(who + ": frame " + std::to_string(i) + " has values outside [0, 1]");
            }
        }
    }
}

SitsSequence load_sequence(const fs::path& manifest_path) {
    const std::string text = read_file(manifest_path);
    Json doc;
    try {
        doc = Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(manifest_path.string() + ": invalid JSON: " + e.what());
    }
    auto bad = [&](const std::string& what) { return ValidationError(manifest_path.string() + ": " + what); };
    if (!doc.is_object()) throw bad("manifest must be a JSON object");
    if (!doc.contains("id") || !doc["id"].is_string()) throw bad("missing string field 'id'");
    if (!doc.contains("scene_description") || !doc["scene_description"].is_string()) {
        throw bad("missing string field 'scene_description'");
    }
    if (!doc.contains("frames") || !doc["frames"].is_array()) throw bad("missing array field 'frames'");

    SitsSequence seq;
    seq.id = doc["id"].get<std::string>();
    seq.scene_description = doc["scene_description"].get<std::string>();
    const fs::path base = manifest_path.parent_path();
    for (const auto& fr : doc["frames"]) {
        if (!fr.is_object() || !fr.contains("path") || !fr["path"].is_string()) {
            throw bad("every frame needs a string 'path'");
        }
        if (!fr.contains("timestamp_days") || !fr["timestamp_days"].is_number_integer()) {
            throw bad("every frame needs an integer 'timestamp_days'");
        }
        seq.timestamps.push_back(fr["timestamp_days"].get<std::int64_t>());
        seq.frames.push_back(read_ppm(base / fr["path"].get<std::string>()));
    }
    try {
        validate(seq);
    } catch (const ValidationError& e) {
        throw bad(e.what());
    }
    return seq;
}

fs::path write_sequence(const SitsSequence& seq, const fs::path& dir) {
    validate(seq);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
    Json doc;
    doc["id"] = seq.id;
    doc["scene_description"] = seq.scene_description;
    doc["frames"] = Json::array();
    for (std::size_t i = 0; i < seq.frames.size(); ++i) {
        const std::string name = "frame_" + std::to_string(i) + ".ppm";
        write_ppm(dir / name, seq.frames[i]);
        doc["frames"].push_back({{"path", name}, {"timestamp_days", seq.timestamps[i]}});
    }
    const fs::path manifest = dir / "manifest.json";
    write_file(manifest, render_json(doc));
    return manifest;
}

std::vector<fs::path> list_manifests(const fs::path& root) {
    std::error_code ec;
    if (!fs::is_directory(root, ec)) throw IoError("dataset directory '" + root.string() + "' does not exist");
    std::vector<fs::path> out;
    for (const auto& entry : fs::directory_iterator(root)) {
        const fs::path m = entry.path() / "manifest.json";
        if (entry.is_directory() && fs::exists(m)) out.push_back(m);
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<SitsSequence> load_dataset(const fs::path& root) {
    std::vector<SitsSequence> out;
    for (const fs::path& m : list_manifests(root)) out.push_back(load_sequence(m));
    return out;
}

void write_dataset(const std::vector<SitsSequence>& seqs, const fs::path& root) {
    for (const SitsSequence& s : seqs) {
        if (s.id.empty() || s.id.find_first_of("/\\") != std::string::npos || s.id == "." || s.id == "..") {
            throw ValidationError("sequence id '" + s.id + "' is not usable as a directory name");
        }
        write_sequence(s, root / s.id);
    }
}

}  // namespace tamms::io
