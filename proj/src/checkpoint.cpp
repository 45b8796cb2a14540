#include "hvox/checkpoint.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace hvox {

namespace {

constexpr char kMagic[4] = {'H', 'V', 'O', 'X'};

void push_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xFF));
    out.push_back(static_cast<uint8_t>(v >> 8));
}

void push_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xFF));
}

uint32_t read_u32(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

size_t dtype_size(uint8_t dtype) {
    switch (dtype) {
        case 0: return 4;
        case 1: return 8;
        case 2: return 1;
        case 3: return 8;
        default: throw IoError(strf("archive: unknown dtype tag %u", dtype));
    }
}

}  // namespace

void ArchiveWriter::add_record(const std::string& name, uint8_t dtype, const Shape& shape,
                               const void* payload, size_t bytes) {
    if (name.empty()) throw ValueError("archive: empty record name");
    if (shape.size() > 255) throw ValueError("archive: rank > 255");
    push_u32(body_, static_cast<uint32_t>(name.size()));
    body_.insert(body_.end(), name.begin(), name.end());
    body_.push_back(dtype);
    body_.push_back(static_cast<uint8_t>(shape.size()));
    for (int64_t e : shape) push_u32(body_, static_cast<uint32_t>(e));
    const auto* p = static_cast<const uint8_t*>(payload);
    body_.insert(body_.end(), p, p + bytes);
}

void ArchiveWriter::add_f32(const std::string& name, const Shape& shape, const float* data) {
    add_record(name, 0, shape, data, sizeof(float) * static_cast<size_t>(numel(shape)));
}

void ArchiveWriter::add_i64(const std::string& name, const std::vector<int64_t>& values) {
    add_record(name, 3, {static_cast<int64_t>(values.size())},
               values.empty() ? nullptr : values.data(), sizeof(int64_t) * values.size());
}

void ArchiveWriter::add_bytes(const std::string& name, const std::string& bytes) {
    add_record(name, 2, {static_cast<int64_t>(bytes.size())}, bytes.data(), bytes.size());
}

void ArchiveWriter::write(const std::string& path) const {
    std::vector<uint8_t> out;
    out.reserve(body_.size() + 10);
    out.insert(out.end(), kMagic, kMagic + 4);
    push_u16(out, kArchiveVersion);
    out.insert(out.end(), body_.begin(), body_.end());
    uint32_t crc = static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(out.data()), static_cast<uInt>(out.size())));
    push_u32(out, crc);

    namespace fs = std::filesystem;
    fs::path target(path);
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError(strf("archive: cannot open %s for writing", tmp.string().c_str()));
        f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
        if (!f) throw IoError(strf("archive: write to %s failed", tmp.string().c_str()));
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec)
        throw IoError(strf("archive: rename to %s failed: %s", path.c_str(), ec.message().c_str()));
}

ArchiveReader::ArchiveReader(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError(strf("archive: cannot open %s", path.c_str()));
    data_.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    if (data_.size() < 10) throw IoError(strf("archive: %s is truncated", path.c_str()));
    if (std::memcmp(data_.data(), kMagic, 4) != 0)
        throw IoError(strf("archive: %s has bad magic bytes", path.c_str()));
    uint16_t version = static_cast<uint16_t>(data_[4] | (data_[5] << 8));
    if (version != kArchiveVersion)
        throw IoError(strf("archive: %s has version %u, expected %u", path.c_str(), version,
                           kArchiveVersion));
    uint32_t stored = read_u32(data_.data() + data_.size() - 4);
    uint32_t actual = static_cast<uint32_t>(crc32(
        0L, reinterpret_cast<const Bytef*>(data_.data()), static_cast<uInt>(data_.size() - 4)));
    if (stored != actual)
        throw IoError(strf("archive: %s checksum mismatch (stored %08x, computed %08x)",
                           path.c_str(), stored, actual));

    size_t pos = 6;
    const size_t end = data_.size() - 4;
    while (pos < end) {
        if (pos + 4 > end) throw IoError(strf("archive: %s record header truncated", path.c_str()));
        uint32_t name_len = read_u32(data_.data() + pos);
        pos += 4;
        if (pos + name_len + 2 > end)
            throw IoError(strf("archive: %s record truncated", path.c_str()));
        std::string name(reinterpret_cast<const char*>(data_.data() + pos), name_len);
        pos += name_len;
        uint8_t dtype = data_[pos++];
        uint8_t rank = data_[pos++];
        if (pos + 4ull * rank > end)
            throw IoError(strf("archive: %s extents truncated in '%s'", path.c_str(), name.c_str()));
        Shape shape;
        for (int d = 0; d < rank; ++d) {
            shape.push_back(read_u32(data_.data() + pos));
            pos += 4;
        }
        size_t bytes = dtype_size(dtype) * static_cast<size_t>(numel(shape));
        if (pos + bytes > end)
            throw IoError(strf("archive: %s payload truncated in '%s'", path.c_str(), name.c_str()));
        entries_[name] = Entry{dtype, shape, pos, bytes};
        order_.push_back(name);
        pos += bytes;
    }
}

bool ArchiveReader::has(const std::string& name) const { return entries_.count(name) > 0; }

std::vector<std::string> ArchiveReader::names() const { return order_; }

Shape ArchiveReader::shape(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw IoError(strf("archive: missing record '%s'", name.c_str()));
    return it->second.shape;
}

const ArchiveReader::Entry& ArchiveReader::find(const std::string& name, uint8_t dtype) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw IoError(strf("archive: missing record '%s'", name.c_str()));
    if (it->second.dtype != dtype)
        throw IoError(strf("archive: record '%s' has dtype %u, expected %u", name.c_str(),
                           it->second.dtype, dtype));
    return it->second;
}

std::vector<float> ArchiveReader::f32(const std::string& name) const {
    const Entry& e = find(name, 0);
    std::vector<float> out(e.size / sizeof(float));
    std::memcpy(out.data(), data_.data() + e.offset, e.size);
    return out;
}

std::vector<int64_t> ArchiveReader::i64(const std::string& name) const {
    const Entry& e = find(name, 3);
    std::vector<int64_t> out(e.size / sizeof(int64_t));
    std::memcpy(out.data(), data_.data() + e.offset, e.size);
    return out;
}

std::string ArchiveReader::bytes(const std::string& name) const {
    const Entry& e = find(name, 2);
    return std::string(reinterpret_cast<const char*>(data_.data() + e.offset), e.size);
}

}  // namespace hvox
