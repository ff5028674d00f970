#include "cotlab/tensorio.hpp"

#include <cstring>
#include <stdexcept>

#include "cotlab/ioutil.hpp"

namespace cotlab {

namespace {

constexpr char kMagic[4] = {'C', 'O', 'T', 'L'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
    std::string_view buf;
    std::size_t off = 0;
    std::string origin;

    void need(std::size_t n) const {
        if (off + n > buf.size())
            throw std::runtime_error("tensor container truncated: " + origin);
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
        off += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[off + i])) << (8 * i);
        off += 8;
        return v;
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf[off++]);
    }
    std::string_view bytes(std::size_t n) {
        need(n);
        std::string_view v = buf.substr(off, n);
        off += n;
        return v;
    }
};

} // namespace

std::size_t dtype_size(DType t) {
    switch (t) {
        case DType::f32: return 4;
        case DType::f64: return 8;
        case DType::i32: return 4;
        case DType::i64: return 8;
        case DType::u8: return 1;
    }
    throw std::runtime_error("unknown dtype");
}

std::uint64_t TensorSection::elem_count() const {
    std::uint64_t n = 1;
    for (std::uint64_t d : dims) n *= d;
    return n;
}

std::span<const float> TensorSection::f32() const {
    if (dtype != DType::f32) throw std::runtime_error("section is not f32");
    return {reinterpret_cast<const float*>(bytes.data()), bytes.size() / 4};
}

std::span<const std::int32_t> TensorSection::i32() const {
    if (dtype != DType::i32) throw std::runtime_error("section is not i32");
    return {reinterpret_cast<const std::int32_t*>(bytes.data()), bytes.size() / 4};
}

void TensorFile::add_f32(const std::string& name, std::vector<std::uint64_t> dims,
                         std::span<const float> data) {
    TensorSection s;
    s.dtype = DType::f32;
    s.dims = std::move(dims);
    if (s.elem_count() != data.size())
        throw std::invalid_argument("tensor section '" + name + "': dims do not match data size");
    s.bytes.resize(data.size() * 4);
    std::memcpy(s.bytes.data(), data.data(), s.bytes.size());
    sections_[name] = std::move(s);
}

void TensorFile::add_i32(const std::string& name, std::vector<std::uint64_t> dims,
                         std::span<const std::int32_t> data) {
    TensorSection s;
    s.dtype = DType::i32;
    s.dims = std::move(dims);
    if (s.elem_count() != data.size())
        throw std::invalid_argument("tensor section '" + name + "': dims do not match data size");
    s.bytes.resize(data.size() * 4);
    std::memcpy(s.bytes.data(), data.data(), s.bytes.size());
    sections_[name] = std::move(s);
}

const TensorSection& TensorFile::section(const std::string& name) const {
    auto it = sections_.find(name);
    if (it == sections_.end())
        throw std::runtime_error("tensor container has no section '" + name + "'");
    return it->second;
}

std::string TensorFile::serialize() const {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    const std::string meta_str = meta.dump();
    put_u64(out, meta_str.size());
    out += meta_str;
    put_u32(out, static_cast<std::uint32_t>(sections_.size()));
    for (const auto& [name, s] : sections_) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        out.push_back(static_cast<char>(s.dtype));
        put_u32(out, static_cast<std::uint32_t>(s.dims.size()));
        for (std::uint64_t d : s.dims) put_u64(out, d);
        put_u64(out, s.bytes.size());
        out.append(reinterpret_cast<const char*>(s.bytes.data()), s.bytes.size());
    }
    return out;
}

void TensorFile::save(const std::filesystem::path& path) const {
    write_file_atomic(path, serialize());
}

TensorFile TensorFile::parse(std::string_view bytes, const std::string& origin) {
    Reader r{bytes, 0, origin};
    const std::string_view magic = r.bytes(4);
    if (std::memcmp(magic.data(), kMagic, 4) != 0)
        throw std::runtime_error("bad tensor container magic: " + origin);
    const std::uint32_t version = r.u32();
    if (version != kVersion)
        throw std::runtime_error("unsupported tensor container version " + std::to_string(version) +
                                 ": " + origin);
    TensorFile tf;
    const std::uint64_t meta_len = r.u64();
    tf.meta = nlohmann::json::parse(r.bytes(meta_len));
    const std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::uint32_t name_len = r.u32();
        std::string name(r.bytes(name_len));
        TensorSection s;
        const std::uint8_t dt = r.u8();
        if (dt > 4) throw std::runtime_error("bad dtype in tensor container: " + origin);
        s.dtype = static_cast<DType>(dt);
        const std::uint32_t ndim = r.u32();
        s.dims.resize(ndim);
        for (std::uint32_t j = 0; j < ndim; ++j) s.dims[j] = r.u64();
        const std::uint64_t nbytes = r.u64();
        if (nbytes != s.elem_count() * dtype_size(s.dtype))
            throw std::runtime_error("section '" + name + "' size mismatch: " + origin);
        const std::string_view data = r.bytes(nbytes);
        s.bytes.assign(data.begin(), data.end());
        tf.sections_[name] = std::move(s);
    }
    if (r.off != bytes.size())
        throw std::runtime_error("trailing bytes after tensor container: " + origin);
    return tf;
}

TensorFile TensorFile::load(const std::filesystem::path& path) {
    return parse(read_file(path), path.string());
}

} // namespace cotlab
