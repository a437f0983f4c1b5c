#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mlk/bytes.hpp"
#include "mlk/core_model.hpp"

namespace mlk {

inline constexpr std::size_t kShardHeaderSize = 44;
inline constexpr std::uint16_t kShardVersion = 1;
inline constexpr std::uint16_t kArchiveVersion = 1;

enum class Section : std::size_t { weights = 0, codes, pq_table, residuals, lambdas, exceptions };
inline constexpr std::size_t kSectionCount = 6;
inline constexpr std::array<const char*, kSectionCount> kSectionNames = {"weights",   "codes",   "pq_table",
                                                                          "residuals", "lambdas", "exceptions"};

/// Fixed 44-byte little-endian shard header:
///
///   off  size  field
///     0     4  magic "MLK1"
///     4     2  version
///     6     1  scheme (0 = AE+PQ+residual+lambda, 1 = residual-only)
///     7     1  lambda precision in bytes (4 or 8)
///     8    24  six u32 section lengths
///    32     4  n_images
///    36     2  img_rows
///    38     2  img_cols
///    40     1  latent_dim
///    41     1  pq_bits
///    42     2  reserved, zero
struct ShardHeader {
    std::uint16_t version = kShardVersion;
    std::uint8_t scheme = 0;
    std::uint8_t lambda_precision = 4;
    std::array<std::uint32_t, kSectionCount> section_lengths{};
    std::uint32_t n_images = 0;
    std::uint16_t img_rows = 0;
    std::uint16_t img_cols = 0;
    std::uint8_t latent_dim = 0;
    std::uint8_t pq_bits = 0;

    std::uint64_t blob_size() const;
    nlohmann::json to_json() const;

    friend bool operator==(const ShardHeader&, const ShardHeader&) = default;
};

struct ShardBlob {
    ShardHeader header;
    std::array<Bytes, kSectionCount> sections;

    const Bytes& section(Section s) const { return sections[static_cast<std::size_t>(s)]; }
    Bytes& section(Section s) { return sections[static_cast<std::size_t>(s)]; }

    friend bool operator==(const ShardBlob&, const ShardBlob&) = default;
};

Bytes encode_shard_header(const ShardHeader& h);
ShardHeader decode_shard_header(std::span<const std::uint8_t> bytes);

/// Header || weights || codes || pq_table || residuals || lambdas || exceptions.
/// Section lengths in `header` are overwritten with the payload sizes.
Bytes write_shard(ShardHeader header, const std::array<Bytes, kSectionCount>& sections);
ShardBlob read_shard(std::span<const std::uint8_t> bytes);

/// Run-level metadata stored once per archive.
struct Preamble {
    std::uint16_t version = kArchiveVersion;
    VelocityGrid grid;
    std::uint32_t n_planes = 0;
    std::uint32_t n_nodes = 0;
    std::int64_t timestep = 0;
    std::uint8_t decomp_mode = 1;
    std::uint8_t distance = 0;
    double tau = 1e-3;
    double floor_factor = 1e-12;
    std::uint64_t seed = 0;
    std::uint64_t config_digest = 0;

    nlohmann::json to_json() const;

    friend bool operator==(const Preamble&, const Preamble&) = default;
};

struct Archive {
    Preamble preamble;
    std::vector<ShardBlob> shards;

    friend bool operator==(const Archive&, const Archive&) = default;
};

/// "MLKA" | preamble | n_shards (u32) | n_shards u64 absolute offsets | shard blobs.
Bytes serialize_archive(const Archive& archive);
Archive parse_archive(std::span<const std::uint8_t> bytes);

void write_archive(const Archive& archive, const std::filesystem::path& path);
Archive read_archive(const std::filesystem::path& path);
Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// Preamble and per-shard headers as JSON.
nlohmann::json inspect_archive(std::span<const std::uint8_t> bytes);

std::uint64_t fnv1a64(std::string_view s);

}  // namespace mlk
