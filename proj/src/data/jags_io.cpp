#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "swae/data.hpp"
#include "swae/errors.hpp"

namespace swae {

namespace {

constexpr std::array<char, 4> kMagic{'J', 'A', 'G', 'S'};

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_f32(std::vector<unsigned char>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

std::uint32_t get_u32(const unsigned char* p) {
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

}  // namespace

std::uint64_t jags_file_size(const DatasetHeader& h) {
    return kJagsHeaderBytes + std::uint64_t(h.n_samples) * (h.image_size() + h.n_scalars) * 4;
}

void write_dataset(const std::filesystem::path& path, const Dataset& dataset) {
    const auto& h = dataset.header;
    if (dataset.records.empty()) throw ShapeError("write_dataset: no records");
    if (dataset.records.size() != h.n_samples)
        throw ShapeError("write_dataset: header says " + std::to_string(h.n_samples) + " samples, have " +
                         std::to_string(dataset.records.size()));
    for (std::size_t i = 0; i < dataset.records.size(); ++i) {
        const auto& r = dataset.records[i];
        if (r.image.size() != h.image_size() || r.scalars.size() != h.n_scalars)
            throw ShapeError("write_dataset: record " + std::to_string(i) + " does not match the header shape");
    }

    std::vector<unsigned char> buf;
    buf.reserve(jags_file_size(h));
    buf.insert(buf.end(), kMagic.begin(), kMagic.end());
    for (std::uint32_t v : {kJagsVersion, h.n_samples, h.height, h.width, h.channels, h.n_scalars, 0u}) put_u32(buf, v);
    for (const auto& r : dataset.records) {
        for (float v : r.image) put_f32(buf, v);
        for (float v : r.scalars) put_f32(buf, v);
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < 4) throw FormatError("truncated header", buf.size());
    if (std::memcmp(buf.data(), kMagic.data(), 4) != 0) throw FormatError("bad magic", 0);
    if (buf.size() < kJagsHeaderBytes) throw FormatError("truncated header", buf.size());
    if (get_u32(buf.data() + 4) != kJagsVersion) throw FormatError("unsupported version", 4);

    Dataset ds;
    auto& h = ds.header;
    h.n_samples = get_u32(buf.data() + 8);
    h.height = get_u32(buf.data() + 12);
    h.width = get_u32(buf.data() + 16);
    h.channels = get_u32(buf.data() + 20);
    h.n_scalars = get_u32(buf.data() + 24);
    if (h.height == 0 || h.width == 0 || h.channels == 0 || h.n_scalars == 0)
        throw FormatError("zero dimension in header", 12);

    const std::uint64_t expected = jags_file_size(h);
    if (buf.size() < expected) throw FormatError("truncated payload", buf.size());
    if (buf.size() > expected) throw FormatError("trailing bytes after payload", expected);

    const unsigned char* p = buf.data() + kJagsHeaderBytes;
    auto next = [&p] {
        const float f = std::bit_cast<float>(get_u32(p));
        p += 4;
        return f;
    };
    ds.records.resize(h.n_samples);
    for (auto& r : ds.records) {
        r.image.resize(h.image_size());
        r.scalars.resize(h.n_scalars);
        for (auto& v : r.image) v = next();
        for (auto& v : r.scalars) v = next();
    }
    return ds;
}

}  // namespace swae
