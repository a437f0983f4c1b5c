#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace mlk {

enum class DecompMode : std::uint8_t { row = 0, column = 1 };

std::string to_string(DecompMode mode);
DecompMode parse_decomp_mode(std::string_view s);

struct ImageRef {
    std::size_t plane = 0;
    std::size_t node = 0;

    friend bool operator==(const ImageRef&, const ImageRef&) = default;
    friend auto operator<=>(const ImageRef&, const ImageRef&) = default;
};

/// Images owned by one worker, ordered plane-major then node.
struct Shard {
    std::size_t worker_id = 0;
    DecompMode mode = DecompMode::column;
    std::vector<ImageRef> members;

    /// Distinct node indices covered, ascending.
    std::vector<std::size_t> node_indices() const;
    /// Distinct plane indices covered, ascending.
    std::vector<std::size_t> plane_indices() const;
};

/// Splits a planes x nodes image grid into `n_workers` disjoint shards.
///
/// Row mode groups workers per plane (remainder workers go round-robin to the
/// first planes) and cuts each plane into contiguous node blocks. Column mode
/// gives every worker one contiguous node block across all planes. Block sizes
/// differ by at most one, larger blocks first.
std::vector<Shard> partition(std::size_t n_planes, std::size_t n_nodes, std::size_t n_workers, DecompMode mode);

enum class SelectionScheme : std::uint8_t {
    row,
    row25,
    row50,
    row75,
    col,
    colfst,
    colrand,
    colrandind,
    col25,
    col50,
    col75,
};

std::string to_string(SelectionScheme scheme);
SelectionScheme parse_selection_scheme(std::string_view s);
bool is_row_scheme(SelectionScheme scheme);

/// Indices into `shard.members` used for training, ascending.
std::vector<std::size_t> select_training(const Shard& shard, SelectionScheme scheme, std::size_t n_planes,
                                         std::uint64_t seed);

}  // namespace mlk
