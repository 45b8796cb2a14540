#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hvox/tensor.hpp"

namespace hvox {

// Named-tensor archive. Layout:
//   magic "HVOX" | u16 version | records... | u32 crc32
// record:
//   u32 name_len | name | u8 dtype | u8 rank | u32 extents[rank] | payload
// dtype: 0 = f32, 1 = f64, 2 = u8, 3 = i64. Integers and payloads are
// little-endian. The CRC covers everything before it.

inline constexpr uint16_t kArchiveVersion = 1;

class ArchiveWriter {
public:
    void add_f32(const std::string& name, const Shape& shape, const float* data);
    void add_i64(const std::string& name, const std::vector<int64_t>& values);
    void add_bytes(const std::string& name, const std::string& bytes);

    /// Writes magic, version, records and CRC. Atomic (temp + rename).
    void write(const std::string& path) const;

private:
    void add_record(const std::string& name, uint8_t dtype, const Shape& shape,
                    const void* payload, size_t bytes);
    std::vector<uint8_t> body_;
};

class ArchiveReader {
public:
    /// Reads and validates magic, version and CRC. Throws IoError on any
    /// corruption (bad magic, truncation, checksum failure).
    explicit ArchiveReader(const std::string& path);

    bool has(const std::string& name) const;
    std::vector<std::string> names() const;
    Shape shape(const std::string& name) const;

    std::vector<float> f32(const std::string& name) const;
    std::vector<int64_t> i64(const std::string& name) const;
    std::string bytes(const std::string& name) const;

private:
    struct Entry {
        uint8_t dtype;
        Shape shape;
        size_t offset;  // payload offset into data_
        size_t size;    // payload bytes
    };
    const Entry& find(const std::string& name, uint8_t dtype) const;
    std::vector<uint8_t> data_;
    std::map<std::string, Entry> entries_;
    std::vector<std::string> order_;
};

}  // namespace hvox
