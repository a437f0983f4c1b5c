#include <doctest.h>

#include <algorithm>
#include <set>

#include "mlk/decomp.hpp"
#include "mlk/error.hpp"
#include "mlk/random.hpp"

using namespace mlk;

namespace {

Shard column_shard(std::size_t planes, std::size_t nodes) {
    Shard s;
    s.mode = DecompMode::column;
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t x = 0; x < nodes; ++x) s.members.push_back({p, x});
    return s;
}

Shard row_shard(std::size_t nodes) {
    Shard s;
    s.mode = DecompMode::row;
    for (std::size_t x = 0; x < nodes; ++x) s.members.push_back({0, x});
    return s;
}

}  // namespace

TEST_CASE("row-wise: 3 planes, 6 nodes, 9 workers") {
    const auto shards = partition(3, 6, 9, DecompMode::row);
    REQUIRE(shards.size() == 9);
    for (std::size_t w = 0; w < 9; ++w) {
        CHECK(shards[w].worker_id == w);
        CHECK(shards[w].members.size() == 2);
        CHECK(shards[w].plane_indices().size() == 1);
    }
    for (std::size_t p = 0; p < 3; ++p) {
        const auto count = std::count_if(shards.begin(), shards.end(),
                                         [&](const Shard& s) { return s.plane_indices().front() == p; });
        CHECK(count == 3);
    }
}

TEST_CASE("column-wise: 3 planes, 6 nodes, 3 workers") {
    const auto shards = partition(3, 6, 3, DecompMode::column);
    REQUIRE(shards.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(shards[i].node_indices() == std::vector<std::size_t>{2 * i, 2 * i + 1});
        CHECK(shards[i].plane_indices() == std::vector<std::size_t>{0, 1, 2});
        CHECK(shards[i].members.size() == 6);
    }
}

TEST_CASE("single image gives a single shard in both modes") {
    for (auto mode : {DecompMode::row, DecompMode::column}) {
        const auto shards = partition(1, 1, 1, mode);
        REQUIRE(shards.size() == 1);
        CHECK(shards[0].members == std::vector<ImageRef>{{0, 0}});
    }
}

TEST_CASE("partition covers every image exactly once") {
    Rng rng(21);
    for (int t = 0; t < 300; ++t) {
        const std::size_t planes = 1 + rng.below(6);
        const std::size_t nodes = 1 + rng.below(50);
        const auto mode = rng.below(2) ? DecompMode::row : DecompMode::column;
        const std::size_t lo = mode == DecompMode::row ? planes : 1;
        const std::size_t hi = mode == DecompMode::row ? planes * nodes : nodes;
        const std::size_t workers = lo + rng.below(hi - lo + 1);
        const auto shards = partition(planes, nodes, workers, mode);
        REQUIRE(shards.size() == workers);
        std::set<ImageRef> seen;
        std::size_t min_size = ~std::size_t{0}, max_size = 0;
        for (const auto& s : shards) {
            CHECK(std::is_sorted(s.members.begin(), s.members.end()));
            for (const auto& m : s.members) CHECK(seen.insert(m).second);
            if (mode == DecompMode::row) CHECK(s.plane_indices().size() == 1);
            const std::size_t span = mode == DecompMode::row ? s.members.size() : s.node_indices().size();
            min_size = std::min(min_size, span);
            max_size = std::max(max_size, span);
            CHECK_FALSE(s.members.empty());
        }
        CHECK(seen.size() == planes * nodes);
        if (mode == DecompMode::column) CHECK(max_size - min_size <= 1);
    }
}

TEST_CASE("partition is independent of call order") {
    CHECK(partition(8, 4096, 8, DecompMode::column)[3].members ==
          partition(8, 4096, 8, DecompMode::column)[3].members);
}

TEST_CASE("partition rejects impossible layouts") {
    CHECK_THROWS_AS(partition(0, 4, 1, DecompMode::column), InvalidArgument);
    CHECK_THROWS_AS(partition(2, 4, 0, DecompMode::column), InvalidArgument);
    CHECK_THROWS_AS(partition(4, 4, 2, DecompMode::row), InvalidArgument);
    CHECK_THROWS_AS(partition(2, 3, 5, DecompMode::column), InvalidArgument);
    CHECK_THROWS_AS(partition(1, 2, 3, DecompMode::row), InvalidArgument);
}

TEST_CASE("COLFST picks exactly the first-plane members") {
    const auto s = column_shard(8, 100);
    const auto pick = select_training(s, SelectionScheme::colfst, 8, 1);
    REQUIRE(pick.size() == 100);
    for (auto i : pick) CHECK(s.members[i].plane == 0);
}

TEST_CASE("COLRANDIND picks one member per node") {
    const auto s = column_shard(3, 5);
    const auto pick = select_training(s, SelectionScheme::colrandind, 3, 9);
    REQUIRE(pick.size() == 5);
    std::set<std::size_t> nodes;
    for (auto i : pick) nodes.insert(s.members[i].node);
    CHECK(nodes.size() == 5);
    CHECK(std::is_sorted(pick.begin(), pick.end()));
}

TEST_CASE("COLRANDIND actually varies the plane") {
    const auto s = column_shard(8, 200);
    const auto pick = select_training(s, SelectionScheme::colrandind, 8, 3);
    std::set<std::size_t> planes;
    for (auto i : pick) planes.insert(s.members[i].plane);
    CHECK(planes.size() == 8);
}

TEST_CASE("ROW50 selection cardinality and determinism") {
    const auto s = row_shard(10);
    const auto a = select_training(s, SelectionScheme::row50, 1, 5);
    const auto b = select_training(s, SelectionScheme::row50, 1, 5);
    CHECK(a.size() == 5);
    CHECK(std::set<std::size_t>(a.begin(), a.end()).size() == 5);
    CHECK(a == b);
}

TEST_CASE("fractional schemes keep at least one member") {
    const auto s = row_shard(1);
    CHECK(select_training(s, SelectionScheme::row25, 1, 0).size() == 1);
}

TEST_CASE("full schemes return every member") {
    CHECK(select_training(row_shard(7), SelectionScheme::row, 1, 0).size() == 7);
    CHECK(select_training(column_shard(2, 7), SelectionScheme::col, 2, 0).size() == 14);
}

TEST_CASE("COLRAND samples as many members as there are nodes") {
    const auto s = column_shard(4, 30);
    const auto pick = select_training(s, SelectionScheme::colrand, 4, 11);
    CHECK(pick.size() == 30);
    CHECK(std::set<std::size_t>(pick.begin(), pick.end()).size() == 30);
}

TEST_CASE("COL50 halves the COLRANDIND sample") {
    const auto s = column_shard(4, 40);
    CHECK(select_training(s, SelectionScheme::col50, 4, 2).size() == 20);
}

TEST_CASE("scheme and decomposition mode must agree") {
    CHECK_THROWS_AS(select_training(row_shard(4), SelectionScheme::col, 1, 0), InvalidArgument);
    CHECK_THROWS_AS(select_training(column_shard(2, 4), SelectionScheme::row50, 2, 0), InvalidArgument);
    CHECK_THROWS_AS(select_training(Shard{}, SelectionScheme::col, 1, 0), InvalidArgument);
}

TEST_CASE("scheme names roundtrip") {
    for (auto s : {SelectionScheme::row, SelectionScheme::row25, SelectionScheme::colfst, SelectionScheme::colrandind,
                   SelectionScheme::col75})
        CHECK(parse_selection_scheme(to_string(s)) == s);
    CHECK(parse_decomp_mode(to_string(DecompMode::row)) == DecompMode::row);
    CHECK_THROWS_AS(parse_selection_scheme("diagonal"), InvalidArgument);
}
