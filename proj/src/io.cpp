#include "lms/io.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>

namespace lms {
namespace {

constexpr std::uint32_t kRv3dVersion = 1;
constexpr std::uint32_t kLmswVersion = 1;
constexpr std::uint8_t kDtypeF32 = 0;

class Writer {
   public:
    void magic(const char* m) { bytes_.insert(bytes_.end(), m, m + 4); }
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u16(std::uint16_t v) { le(v, 2); }
    void u32(std::uint32_t v) { le(v, 4); }
    void f32(float v) { le(std::bit_cast<std::uint32_t>(v), 4); }
    void str(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

   private:
    void le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> bytes_;
};

class Reader {
   public:
    Reader(const std::vector<std::uint8_t>& b, const char* what) : b_(b), what_(what) {}

    void magic(const char* m) {
        need(4);
        if (!std::equal(m, m + 4, b_.begin() + static_cast<std::ptrdiff_t>(pos_))) {
            throw_io(std::string(what_) + ": bad magic");
        }
        pos_ += 4;
    }
    std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string str(std::size_t n) {
        need(n);
        std::string s(b_.begin() + static_cast<std::ptrdiff_t>(pos_), b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return s;
    }
    void need(std::size_t n) const {
        if (b_.size() - pos_ < n) throw_io(std::string(what_) + ": truncated");
    }
    bool done() const { return pos_ == b_.size(); }

   private:
    std::uint64_t le(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    const std::vector<std::uint8_t>& b_;
    const char* what_;
    std::size_t pos_ = 0;
};

std::uint32_t checked_u32(Index v, const char* what) {
    if (v < 0 || v > static_cast<Index>(std::numeric_limits<std::uint32_t>::max())) {
        throw_argument(std::string(what) + ": extent out of range");
    }
    return static_cast<std::uint32_t>(v);
}

}  // namespace

template <typename T>
Tensor<T> Volume::tensor() const {
    if (static_cast<Index>(data.size()) != numel()) throw_shape("volume: payload does not match extents");
    Tensor<T> t = Tensor<T>::volume(1, channels, extents);
    for (Index i = 0; i < numel(); ++i) t[i] = static_cast<T>(data[static_cast<std::size_t>(i)]);
    return t;
}

template <typename T>
Volume Volume::from_tensor(const Tensor<T>& t, Index b) {
    require_rank(t.shape(), 5, "volume");
    if (b < 0 || b >= t.dim(0)) throw_argument("volume: batch index out of range");
    Volume v{t.dim(1), t.extents(), {}};
    const Index n = v.numel();
    v.data.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) v.data[static_cast<std::size_t>(i)] = static_cast<float>(t[b * n + i]);
    return v;
}

template Tensor<float> Volume::tensor() const;
template Tensor<double> Volume::tensor() const;
template Volume Volume::from_tensor(const Tensor<float>&, Index);
template Volume Volume::from_tensor(const Tensor<double>&, Index);

std::vector<std::uint8_t> encode_rv3d(const Volume& v) {
    if (static_cast<Index>(v.data.size()) != v.numel()) throw_shape("rv3d: payload does not match extents");
    Writer w;
    w.magic("RV3D");
    w.u32(kRv3dVersion);
    w.u32(checked_u32(v.channels, "rv3d"));
    w.u32(checked_u32(v.extents.d, "rv3d"));
    w.u32(checked_u32(v.extents.h, "rv3d"));
    w.u32(checked_u32(v.extents.w, "rv3d"));
    w.u8(kDtypeF32);
    for (float x : v.data) w.f32(x);
    return w.take();
}

Volume decode_rv3d(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes, "rv3d");
    r.magic("RV3D");
    const std::uint32_t version = r.u32();
    if (version != kRv3dVersion) throw_io("rv3d: unsupported version " + std::to_string(version));
    Volume v;
    v.channels = r.u32();
    v.extents.d = r.u32();
    v.extents.h = r.u32();
    v.extents.w = r.u32();
    const std::uint8_t dtype = r.u8();
    if (dtype != kDtypeF32) throw_io("rv3d: unsupported dtype code " + std::to_string(dtype));
    const auto n = static_cast<std::size_t>(v.numel());
    r.need(4 * n);
    v.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) v.data[i] = r.f32();
    if (!r.done()) throw_io("rv3d: trailing bytes after payload");
    return v;
}

std::vector<std::uint8_t> encode_lmsw(const std::vector<WeightEntry>& entries) {
    Writer w;
    w.magic("LMSW");
    w.u32(kLmswVersion);
    w.u32(checked_u32(static_cast<Index>(entries.size()), "lmsw"));
    for (const WeightEntry& e : entries) {
        if (e.name.empty() || e.name.size() > std::numeric_limits<std::uint16_t>::max()) {
            throw_argument("lmsw: invalid entry name length");
        }
        if (e.extents.size() > 255) throw_argument("lmsw: rank too large");
        Index n = 1;
        for (Index x : e.extents) n *= x;
        if (n != static_cast<Index>(e.values.size())) throw_shape("lmsw: " + e.name + " payload does not match extents");
        w.u16(static_cast<std::uint16_t>(e.name.size()));
        w.str(e.name);
        w.u8(static_cast<std::uint8_t>(e.extents.size()));
        for (Index x : e.extents) w.u32(checked_u32(x, "lmsw"));
        for (float x : e.values) w.f32(x);
    }
    return w.take();
}

std::vector<WeightEntry> decode_lmsw(const std::vector<std::uint8_t>& bytes) {
    Reader r(bytes, "lmsw");
    r.magic("LMSW");
    const std::uint32_t version = r.u32();
    if (version != kLmswVersion) throw_io("lmsw: unsupported version " + std::to_string(version));
    const std::uint32_t count = r.u32();
    std::vector<WeightEntry> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        WeightEntry e;
        e.name = r.str(r.u16());
        const std::uint8_t rank = r.u8();
        Index n = 1;
        for (std::uint8_t k = 0; k < rank; ++k) {
            e.extents.push_back(r.u32());
            n *= e.extents.back();
        }
        r.need(4 * static_cast<std::size_t>(n));
        e.values.resize(static_cast<std::size_t>(n));
        for (float& x : e.values) x = r.f32();
        out.push_back(std::move(e));
    }
    if (!r.done()) throw_io("lmsw: trailing bytes after last entry");
    return out;
}

std::vector<WeightEntry> export_weights(const ParamStore& store) {
    std::vector<WeightEntry> out;
    for (const ParamTensor& p : store.entries()) {
        WeightEntry e;
        e.name = p.name;
        for (Index x : p.value.shape().dims()) e.extents.push_back(x);
        e.values.reserve(static_cast<std::size_t>(p.value.numel()));
        for (double x : p.value.data()) e.values.push_back(static_cast<float>(x));
        out.push_back(std::move(e));
    }
    return out;
}

void import_weights(ParamStore& store, const std::vector<WeightEntry>& entries) {
    std::set<std::string> seen;
    for (const WeightEntry& e : entries) {
        if (!store.contains(e.name)) throw_config("weights: unknown parameter '" + e.name + "'");
        if (!seen.insert(e.name).second) throw_config("weights: duplicate parameter '" + e.name + "'");
        const Shape& s = store.at(e.name).value.shape();
        const std::vector<Index> expected(s.dims().begin(), s.dims().end());
        if (expected != e.extents) throw_shape("weights: '" + e.name + "' has the wrong shape for this config");
    }
    if (seen.size() != store.entries().size()) {
        for (const ParamTensor& p : store.entries()) {
            if (!seen.count(p.name)) throw_config("weights: missing parameter '" + p.name + "'");
        }
    }
    for (const WeightEntry& e : entries) {
        Tensor<double>& v = store.at(e.name).value;
        for (std::size_t i = 0; i < e.values.size(); ++i) v[static_cast<Index>(i)] = static_cast<double>(e.values[i]);
    }
}

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw_io("cannot open '" + path + "' for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw_io("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw_io("write to '" + path + "' failed");
}

void write_rv3d(const std::string& path, const Volume& v) { write_file(path, encode_rv3d(v)); }
Volume read_rv3d(const std::string& path) { return decode_rv3d(read_file(path)); }

void save_weights(const std::string& path, const ParamStore& store) { write_file(path, encode_lmsw(export_weights(store))); }
void load_weights(const std::string& path, ParamStore& store) { import_weights(store, decode_lmsw(read_file(path))); }

}  // namespace lms
