#pragma once

// Self-describing binary tensor container shared by checkpoints, ablation
// banks, probe feature sets and trace exports. Layout (all integers
// little-endian):
//
//   "COTL" | u32 version | u64 meta_len | meta (JSON, UTF-8) | u32 n_sections
//   per section: u32 name_len | name | u8 dtype | u32 ndim | u64 dims[ndim]
//                | u64 data_bytes | raw data
//
// Round-trips are bitwise; loads validate magic, sizes and reject trailing
// bytes so truncated or corrupt files fail loudly.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace cotlab {

enum class DType : std::uint8_t { f32 = 0, f64 = 1, i32 = 2, i64 = 3, u8 = 4 };

std::size_t dtype_size(DType t);

struct TensorSection {
    DType dtype = DType::f32;
    std::vector<std::uint64_t> dims;
    std::vector<std::uint8_t> bytes;

    std::uint64_t elem_count() const;
    std::span<const float> f32() const;
    std::span<const std::int32_t> i32() const;
};

class TensorFile {
public:
    static constexpr std::uint32_t kVersion = 1;

    nlohmann::json meta = nlohmann::json::object();

    void add_f32(const std::string& name, std::vector<std::uint64_t> dims,
                 std::span<const float> data);
    void add_i32(const std::string& name, std::vector<std::uint64_t> dims,
                 std::span<const std::int32_t> data);

    bool has(const std::string& name) const { return sections_.count(name) != 0; }
    const TensorSection& section(const std::string& name) const;
    const std::map<std::string, TensorSection>& sections() const { return sections_; }

    std::string serialize() const;
    void save(const std::filesystem::path& path) const;
    static TensorFile parse(std::string_view bytes, const std::string& origin = "<memory>");
    static TensorFile load(const std::filesystem::path& path);

private:
    std::map<std::string, TensorSection> sections_;  // ordered -> deterministic bytes
};

} // namespace cotlab
