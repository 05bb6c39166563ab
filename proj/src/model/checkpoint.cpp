#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "swae/errors.hpp"
#include "swae/model.hpp"

namespace swae {

namespace {

constexpr std::array<char, 4> kMagic{'S', 'W', 'A', 'E'};
constexpr const char* kStdMean = "standardizer.mean";
constexpr const char* kStdScale = "standardizer.std";
constexpr const char* kLine = "science.line";

class Writer {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        u32(static_cast<std::uint32_t>(bits));
        u32(static_cast<std::uint32_t>(bits >> 32));
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        buf_.insert(buf_.end(), s.begin(), s.end());
    }
    void tensor(const std::string& name, const Shape& shape, std::span<const float> values) {
        str(name);
        u32(static_cast<std::uint32_t>(shape.size()));
        for (auto d : shape) u32(static_cast<std::uint32_t>(d));
        for (float v : values) f32(v);
    }
    const std::vector<unsigned char>& bytes() const { return buf_; }
    std::vector<unsigned char>& raw() { return buf_; }

private:
    std::vector<unsigned char> buf_;
};

class Reader {
public:
    explicit Reader(std::vector<unsigned char> buf) : buf_(std::move(buf)) {}

    std::uint32_t u32() {
        need(4, "u32");
        const unsigned char* p = buf_.data() + pos_;
        pos_ += 4;
        return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() {
        const std::uint64_t lo = u32();
        const std::uint64_t hi = u32();
        return std::bit_cast<double>(lo | hi << 32);
    }
    std::string str() {
        const auto n = u32();
        need(n, "string");
        std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    void magic() {
        need(4, "magic");
        if (std::memcmp(buf_.data(), kMagic.data(), 4) != 0) throw FormatError("bad magic", 0);
        pos_ = 4;
    }
    bool done() const { return pos_ == buf_.size(); }
    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n, const char* what) {
        if (buf_.size() - pos_ < n) throw FormatError(std::string("truncated ") + what, pos_);
    }
    std::vector<unsigned char> buf_;
    std::size_t pos_ = 0;
};

struct RawTensor {
    Shape shape;
    std::vector<float> values;
};

void write_arch(Writer& w, const ArchConfig& a, const DataShape& s) {
    for (auto v : {s.channels, s.height, s.width, s.n_scalars}) w.u32(static_cast<std::uint32_t>(v));
    w.u32(static_cast<std::uint32_t>(a.latent_dim));
    w.u32(static_cast<std::uint32_t>(a.conv_ladder.size()));
    for (const auto& st : a.conv_ladder) {
        w.u32(static_cast<std::uint32_t>(st.out_channels));
        w.u32(static_cast<std::uint32_t>(st.stride));
    }
    w.u32(static_cast<std::uint32_t>(a.scalar_width));
    w.u32(static_cast<std::uint32_t>(a.fusion_width));
    w.u32(static_cast<std::uint32_t>(a.disc_widths.size()));
    for (auto d : a.disc_widths) w.u32(static_cast<std::uint32_t>(d));
    w.f64(a.leaky_slope);
}

std::pair<ArchConfig, DataShape> read_arch(Reader& r) {
    DataShape s;
    s.channels = r.u32();
    s.height = r.u32();
    s.width = r.u32();
    s.n_scalars = r.u32();
    ArchConfig a;
    a.latent_dim = r.u32();
    const auto stages = r.u32();
    if (stages > 64) throw FormatError("implausible conv ladder length", r.pos() - 4);
    a.conv_ladder.clear();
    for (std::uint32_t i = 0; i < stages; ++i) {
        ConvStage st;
        st.out_channels = r.u32();
        st.stride = r.u32();
        a.conv_ladder.push_back(st);
    }
    a.scalar_width = r.u32();
    a.fusion_width = r.u32();
    const auto n_disc = r.u32();
    if (n_disc > 64) throw FormatError("implausible discriminator depth", r.pos() - 4);
    a.disc_widths.clear();
    for (std::uint32_t i = 0; i < n_disc; ++i) a.disc_widths.push_back(r.u32());
    a.leaky_slope = r.f64();
    return {a, s};
}

Checkpoint parse(const std::filesystem::path& path, const ArchConfig* expect_arch, const DataShape* expect_shape) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    Reader r(std::vector<unsigned char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()));
    r.magic();
    if (r.u32() != kCheckpointVersion) throw FormatError("unsupported checkpoint version", 4);
    auto [arch, shape] = read_arch(r);

    std::map<std::string, RawTensor> tensors;
    std::vector<std::string> order;
    const auto count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        RawTensor t;
        auto name = r.str();
        const auto rank = r.u32();
        if (rank > 8) throw FormatError("implausible tensor rank", r.pos() - 4);
        for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(r.u32());
        const auto n = numel_of(t.shape);
        t.values.resize(n);
        for (auto& v : t.values) v = r.f32();
        order.push_back(name);
        tensors.emplace(std::move(name), std::move(t));
    }
    if (!r.done()) throw FormatError("trailing bytes after tensors", r.pos());

    const ArchConfig& target_arch = expect_arch ? *expect_arch : arch;
    const DataShape& target_shape = expect_shape ? *expect_shape : shape;
    Model<float> model(target_arch, target_shape, 0);

    auto take = [&](const std::string& name, BasicTensor<float>& dst) {
        auto it = tensors.find(name);
        if (it == tensors.end())
            throw ArchMismatchError("checkpoint " + path.string() + " has no tensor " + name, name);
        if (it->second.shape != dst.shape())
            throw ArchMismatchError("checkpoint tensor " + name + " has shape " + shape_str(it->second.shape) +
                                        ", architecture expects " + shape_str(dst.shape()),
                                    name);
        std::copy(it->second.values.begin(), it->second.values.end(), dst.data().begin());
    };
    for (auto& p : model.params()) take(p.name, p.tensor);
    for (auto& [name, t] : model.buffers()) take(name, t);

    Checkpoint ckpt{std::move(model), {}, std::nullopt};
    auto find = [&](const char* name) -> const RawTensor* {
        auto it = tensors.find(name);
        return it == tensors.end() ? nullptr : &it->second;
    };
    const auto* mean = find(kStdMean);
    const auto* scale = find(kStdScale);
    if (mean && scale) {
        ckpt.standardizer.mean = mean->values;
        ckpt.standardizer.std = scale->values;
    }
    if (const auto* line = find(kLine)) {
        if (line->values.size() != 4) throw ArchMismatchError("checkpoint tensor science.line must hold 4 values", kLine);
        ckpt.line = ScientificLine{line->values[0], line->values[1], line->values[2],
                                   static_cast<std::size_t>(line->values[3])};
    }
    return ckpt;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    Writer w;
    w.raw().insert(w.raw().end(), kMagic.begin(), kMagic.end());
    w.u32(kCheckpointVersion);
    write_arch(w, ckpt.model.arch(), ckpt.model.shape());

    std::uint32_t count = 0;
    Writer body;
    for (const auto& p : ckpt.model.params()) {
        body.tensor(p.name, p.tensor.shape(), p.tensor.data());
        ++count;
    }
    for (const auto& [name, t] : ckpt.model.buffers()) {
        body.tensor(name, t.shape(), t.data());
        ++count;
    }
    if (!ckpt.standardizer.mean.empty()) {
        body.tensor(kStdMean, {ckpt.standardizer.mean.size()}, ckpt.standardizer.mean);
        body.tensor(kStdScale, {ckpt.standardizer.std.size()}, ckpt.standardizer.std);
        count += 2;
    }
    if (ckpt.line) {
        const std::vector<float> v{static_cast<float>(ckpt.line->slope), static_cast<float>(ckpt.line->intercept),
                                   static_cast<float>(ckpt.line->train_residual_std),
                                   static_cast<float>(ckpt.line->n_fit)};
        body.tensor(kLine, {4}, v);
        ++count;
    }
    w.u32(count);
    w.raw().insert(w.raw().end(), body.bytes().begin(), body.bytes().end());

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(w.bytes().data()), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse(path, nullptr, nullptr); }

Checkpoint load_checkpoint(const std::filesystem::path& path, const ArchConfig& arch, const DataShape& shape) {
    return parse(path, &arch, &shape);
}

}  // namespace swae
