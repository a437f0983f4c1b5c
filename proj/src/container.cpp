#include "mlk/container.hpp"

#include <fstream>
#include <limits>

#include "mlk/error.hpp"

namespace mlk {

namespace {

constexpr std::string_view kShardMagic = "MLK1";
constexpr std::string_view kArchiveMagic = "MLKA";

void write_preamble(ByteWriter& w, const Preamble& p) {
    w.u16(p.version);
    w.u32(p.n_planes);
    w.u32(p.n_nodes);
    w.u64(static_cast<std::uint64_t>(p.timestep));
    w.u8(p.decomp_mode);
    w.u8(p.distance);
    w.f64(p.tau);
    w.f64(p.floor_factor);
    w.u64(p.seed);
    w.u64(p.config_digest);
    w.u16(static_cast<std::uint16_t>(p.grid.rows));
    w.u16(static_cast<std::uint16_t>(p.grid.cols));
    w.f64(p.grid.mass);
    for (double v : p.grid.v_perp) w.f64(v);
    for (double v : p.grid.v_par) w.f64(v);
    for (double v : p.grid.vol) w.f64(v);
}

Preamble read_preamble(ByteReader& r) {
    Preamble p;
    p.version = r.u16();
    if (p.version != kArchiveVersion) throw FormatError("unsupported archive version " + std::to_string(p.version));
    p.n_planes = r.u32();
    p.n_nodes = r.u32();
    p.timestep = static_cast<std::int64_t>(r.u64());
    p.decomp_mode = r.u8();
    p.distance = r.u8();
    p.tau = r.f64();
    p.floor_factor = r.f64();
    p.seed = r.u64();
    p.config_digest = r.u64();
    p.grid.rows = r.u16();
    p.grid.cols = r.u16();
    p.grid.mass = r.f64();
    p.grid.v_perp.resize(p.grid.rows);
    p.grid.v_par.resize(p.grid.cols);
    p.grid.vol.resize(p.grid.rows * p.grid.cols);
    for (double& v : p.grid.v_perp) v = r.f64();
    for (double& v : p.grid.v_par) v = r.f64();
    for (double& v : p.grid.vol) v = r.f64();
    try {
        p.grid.validate();
    } catch (const InvalidArgument& e) {
        throw FormatError(std::string("archive grid is invalid: ") + e.what());
    }
    return p;
}

}  // namespace

std::uint64_t ShardHeader::blob_size() const {
    std::uint64_t n = kShardHeaderSize;
    for (auto len : section_lengths) n += len;
    return n;
}

nlohmann::json ShardHeader::to_json() const {
    nlohmann::json j;
    j["version"] = version;
    j["scheme"] = scheme;
    j["lambda_precision"] = lambda_precision;
    for (std::size_t s = 0; s < kSectionCount; ++s) j["sections"][kSectionNames[s]] = section_lengths[s];
    j["n_images"] = n_images;
    j["img_rows"] = img_rows;
    j["img_cols"] = img_cols;
    j["latent_dim"] = latent_dim;
    j["pq_bits"] = pq_bits;
    j["blob_size"] = blob_size();
    return j;
}

Bytes encode_shard_header(const ShardHeader& h) {
    Bytes out;
    out.reserve(kShardHeaderSize);
    ByteWriter w(out);
    w.tag(kShardMagic);
    w.u16(h.version);
    w.u8(h.scheme);
    w.u8(h.lambda_precision);
    for (auto len : h.section_lengths) w.u32(len);
    w.u32(h.n_images);
    w.u16(h.img_rows);
    w.u16(h.img_cols);
    w.u8(h.latent_dim);
    w.u8(h.pq_bits);
    w.u16(0);
    return out;
}

ShardHeader decode_shard_header(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kShardHeaderSize) throw FormatError("shard shorter than its 44-byte header");
    ByteReader r(bytes.first(kShardHeaderSize));
    if (r.tag(4) != kShardMagic) throw FormatError("bad shard magic");
    ShardHeader h;
    h.version = r.u16();
    if (h.version != kShardVersion) throw FormatError("unsupported shard version " + std::to_string(h.version));
    h.scheme = r.u8();
    h.lambda_precision = r.u8();
    if (h.lambda_precision != 4 && h.lambda_precision != 8) throw FormatError("bad lambda precision in shard header");
    for (auto& len : h.section_lengths) len = r.u32();
    h.n_images = r.u32();
    h.img_rows = r.u16();
    h.img_cols = r.u16();
    h.latent_dim = r.u8();
    h.pq_bits = r.u8();
    if (r.u16() != 0) throw FormatError("reserved shard header bytes are not zero");
    return h;
}

Bytes write_shard(ShardHeader header, const std::array<Bytes, kSectionCount>& sections) {
    for (std::size_t s = 0; s < kSectionCount; ++s) {
        if (sections[s].size() > std::numeric_limits<std::uint32_t>::max())
            throw InvalidArgument(std::string("section ") + kSectionNames[s] + " exceeds 4 GiB");
        header.section_lengths[s] = static_cast<std::uint32_t>(sections[s].size());
    }
    Bytes out = encode_shard_header(header);
    out.reserve(header.blob_size());
    for (const auto& s : sections) out.insert(out.end(), s.begin(), s.end());
    return out;
}

ShardBlob read_shard(std::span<const std::uint8_t> bytes) {
    ShardBlob blob;
    blob.header = decode_shard_header(bytes);
    if (blob.header.blob_size() != bytes.size())
        throw FormatError("shard length " + std::to_string(bytes.size()) + " does not match header total " +
                          std::to_string(blob.header.blob_size()));
    std::size_t pos = kShardHeaderSize;
    for (std::size_t s = 0; s < kSectionCount; ++s) {
        const auto len = blob.header.section_lengths[s];
        blob.sections[s].assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                bytes.begin() + static_cast<std::ptrdiff_t>(pos + len));
        pos += len;
    }
    return blob;
}

nlohmann::json Preamble::to_json() const {
    nlohmann::json j;
    j["version"] = version;
    j["n_planes"] = n_planes;
    j["n_nodes"] = n_nodes;
    j["timestep"] = timestep;
    j["decomp_mode"] = decomp_mode == 0 ? "row" : "col";
    j["distance"] = distance == 0 ? "kl" : "l2";
    j["tau"] = tau;
    j["floor_factor"] = floor_factor;
    j["seed"] = seed;
    j["config_digest"] = config_digest;
    j["grid"] = {{"rows", grid.rows}, {"cols", grid.cols}, {"mass", grid.mass}};
    return j;
}

Bytes serialize_archive(const Archive& archive) {
    if (archive.shards.empty()) throw InvalidArgument("archive needs at least one shard");
    Bytes out;
    ByteWriter w(out);
    w.tag(kArchiveMagic);
    write_preamble(w, archive.preamble);
    w.u32(static_cast<std::uint32_t>(archive.shards.size()));

    std::vector<Bytes> blobs;
    blobs.reserve(archive.shards.size());
    for (const auto& s : archive.shards) blobs.push_back(write_shard(s.header, s.sections));

    std::uint64_t offset = out.size() + 8 * blobs.size();
    for (const auto& b : blobs) {
        w.u64(offset);
        offset += b.size();
    }
    for (const auto& b : blobs) w.raw(b);
    return out;
}

Archive parse_archive(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    if (bytes.size() < 4 || r.tag(4) != kArchiveMagic) throw FormatError("bad archive magic");
    Archive a;
    a.preamble = read_preamble(r);
    const std::uint32_t n = r.u32();
    if (n == 0) throw FormatError("archive has no shards");
    std::vector<std::uint64_t> offsets(n);
    for (auto& o : offsets) o = r.u64();

    const std::uint64_t data_start = r.position();
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::uint64_t begin = offsets[i];
        const std::uint64_t end = i + 1 < n ? offsets[i + 1] : bytes.size();
        const bool ordered = i == 0 ? begin == data_start : begin > offsets[i - 1];
        if (!ordered || begin >= end || end > bytes.size())
            throw FormatError("archive index corrupt at shard " + std::to_string(i));
        try {
            a.shards.push_back(read_shard(bytes.subspan(begin, end - begin)));
        } catch (const FormatError& e) {
            throw FormatError("shard " + std::to_string(i) + ": " + e.what());
        }
    }
    return a;
}

Bytes read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

void write_archive(const Archive& archive, const std::filesystem::path& path) {
    write_file(path, serialize_archive(archive));
}

Archive read_archive(const std::filesystem::path& path) { return parse_archive(read_file(path)); }

nlohmann::json inspect_archive(std::span<const std::uint8_t> bytes) {
    const Archive a = parse_archive(bytes);
    nlohmann::json j;
    j["archive_bytes"] = bytes.size();
    j["preamble"] = a.preamble.to_json();
    j["n_shards"] = a.shards.size();
    j["shards"] = nlohmann::json::array();
    for (const auto& s : a.shards) j["shards"].push_back(s.header.to_json());
    return j;
}

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace mlk
