#include "mlk/decomp.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>

#include "mlk/error.hpp"
#include "mlk/random.hpp"

namespace mlk {

namespace {

// [begin, end) of block `i` when `n` items are split into `parts` blocks.
std::pair<std::size_t, std::size_t> block_range(std::size_t n, std::size_t parts, std::size_t i) {
    const std::size_t base = n / parts, extra = n % parts;
    const std::size_t begin = i * base + std::min(i, extra);
    return {begin, begin + base + (i < extra ? 1 : 0)};
}

constexpr std::array<std::pair<std::string_view, SelectionScheme>, 11> kSchemes = {{
    {"row", SelectionScheme::row},
    {"row25", SelectionScheme::row25},
    {"row50", SelectionScheme::row50},
    {"row75", SelectionScheme::row75},
    {"col", SelectionScheme::col},
    {"colfst", SelectionScheme::colfst},
    {"colrand", SelectionScheme::colrand},
    {"colrandind", SelectionScheme::colrandind},
    {"col25", SelectionScheme::col25},
    {"col50", SelectionScheme::col50},
    {"col75", SelectionScheme::col75},
}};

double scheme_fraction(SelectionScheme s) {
    switch (s) {
        case SelectionScheme::row25:
        case SelectionScheme::col25: return 0.25;
        case SelectionScheme::row50:
        case SelectionScheme::col50: return 0.50;
        case SelectionScheme::row75:
        case SelectionScheme::col75: return 0.75;
        default: return 1.0;
    }
}

// Uniform subset of `count` items of `pool`, returned ascending.
std::vector<std::size_t> sample_without_replacement(std::vector<std::size_t> pool, std::size_t count, Rng& rng) {
    count = std::min(count, pool.size());
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(count);
    std::sort(pool.begin(), pool.end());
    return pool;
}

std::size_t fraction_count(std::size_t n, double frac) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(frac * static_cast<double>(n))));
}

}  // namespace

std::string to_string(DecompMode mode) { return mode == DecompMode::row ? "row" : "col"; }

DecompMode parse_decomp_mode(std::string_view s) {
    if (s == "row" || s == "row-wise") return DecompMode::row;
    if (s == "col" || s == "column" || s == "column-wise") return DecompMode::column;
    throw InvalidArgument("unknown decomposition mode '" + std::string(s) + "'");
}

std::vector<std::size_t> Shard::node_indices() const {
    std::vector<std::size_t> v;
    for (const auto& m : members) v.push_back(m.node);
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

std::vector<std::size_t> Shard::plane_indices() const {
    std::vector<std::size_t> v;
    for (const auto& m : members) v.push_back(m.plane);
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
}

std::vector<Shard> partition(std::size_t n_planes, std::size_t n_nodes, std::size_t n_workers, DecompMode mode) {
    if (n_planes == 0 || n_nodes == 0) throw InvalidArgument("partition: empty image grid");
    if (n_workers == 0) throw InvalidArgument("partition: need at least one worker");

    std::vector<Shard> shards;
    if (mode == DecompMode::row) {
        // Every worker sees a single plane, so a plane must have at least one worker
        // and no worker can be left without nodes.
        if (n_workers < n_planes)
            throw InvalidArgument("partition: row-wise decomposition needs at least one worker per plane");
        const std::size_t per_plane = n_workers / n_planes, extra = n_workers % n_planes;
        if (per_plane + (extra > 0 ? 1 : 0) > n_nodes)
            throw InvalidArgument("partition: more workers per plane than nodes");
        std::size_t id = 0;
        for (std::size_t p = 0; p < n_planes; ++p) {
            const std::size_t workers = per_plane + (p < extra ? 1 : 0);
            for (std::size_t w = 0; w < workers; ++w) {
                Shard s{id++, mode, {}};
                const auto [b, e] = block_range(n_nodes, workers, w);
                for (std::size_t x = b; x < e; ++x) s.members.push_back({p, x});
                shards.push_back(std::move(s));
            }
        }
    } else {
        if (n_workers > n_nodes) throw InvalidArgument("partition: more column workers than nodes");
        for (std::size_t w = 0; w < n_workers; ++w) {
            Shard s{w, mode, {}};
            const auto [b, e] = block_range(n_nodes, n_workers, w);
            for (std::size_t p = 0; p < n_planes; ++p)
                for (std::size_t x = b; x < e; ++x) s.members.push_back({p, x});
            shards.push_back(std::move(s));
        }
    }
    return shards;
}

std::string to_string(SelectionScheme scheme) {
    for (const auto& [name, s] : kSchemes)
        if (s == scheme) return std::string(name);
    return "unknown";
}

SelectionScheme parse_selection_scheme(std::string_view s) {
    for (const auto& [name, scheme] : kSchemes)
        if (name == s) return scheme;
    throw InvalidArgument("unknown selection scheme '" + std::string(s) + "'");
}

bool is_row_scheme(SelectionScheme scheme) {
    return scheme == SelectionScheme::row || scheme == SelectionScheme::row25 || scheme == SelectionScheme::row50 ||
           scheme == SelectionScheme::row75;
}

std::vector<std::size_t> select_training(const Shard& shard, SelectionScheme scheme, std::size_t n_planes,
                                         std::uint64_t seed) {
    if (shard.members.empty()) throw InvalidArgument("select_training: empty shard");
    if (is_row_scheme(scheme) != (shard.mode == DecompMode::row))
        throw InvalidArgument("select_training: scheme '" + to_string(scheme) + "' does not match " +
                              to_string(shard.mode) + "-wise decomposition");
    (void)n_planes;

    Rng rng(derive_seed(seed, shard.worker_id));
    std::vector<std::size_t> all(shard.members.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

    // Member indices grouped by node, planes ascending within each node.
    auto by_node = [&] {
        std::map<std::size_t, std::vector<std::size_t>> groups;
        for (std::size_t i = 0; i < shard.members.size(); ++i) groups[shard.members[i].node].push_back(i);
        return groups;
    };
    auto colrandind = [&] {
        std::vector<std::size_t> pick;
        for (const auto& [node, idx] : by_node()) pick.push_back(idx[static_cast<std::size_t>(rng.below(idx.size()))]);
        std::sort(pick.begin(), pick.end());
        return pick;
    };

    switch (scheme) {
        case SelectionScheme::row:
        case SelectionScheme::col: return all;
        case SelectionScheme::row25:
        case SelectionScheme::row50:
        case SelectionScheme::row75:
            return sample_without_replacement(all, fraction_count(all.size(), scheme_fraction(scheme)), rng);
        case SelectionScheme::colfst: {
            const std::size_t first = shard.plane_indices().front();
            std::vector<std::size_t> pick;
            for (std::size_t i = 0; i < shard.members.size(); ++i)
                if (shard.members[i].plane == first) pick.push_back(i);
            return pick;
        }
        case SelectionScheme::colrand:
            return sample_without_replacement(all, shard.node_indices().size(), rng);
        case SelectionScheme::colrandind: return colrandind();
        case SelectionScheme::col25:
        case SelectionScheme::col50:
        case SelectionScheme::col75: {
            auto base = colrandind();
            return sample_without_replacement(base, fraction_count(base.size(), scheme_fraction(scheme)), rng);
        }
    }
    return all;
}

}  // namespace mlk
