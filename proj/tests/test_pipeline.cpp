#include <doctest.h>

#include <cstring>

#include "mlk/container.hpp"
#include "mlk/error.hpp"
#include "mlk/pipeline.hpp"

using namespace mlk;

namespace {

FDataset small_corpus(std::uint64_t seed = 42, std::int64_t timestep = 0) {
    SyntheticParams p;
    p.seed = seed;
    p.timestep = timestep;
    return gen_synthetic(2, 96, default_grid(), p);
}

PipelineConfig small_config() {
    PipelineConfig c;
    c.shards = 3;
    c.epochs_full = 20;
    return c;
}

void check_gates(const FDataset& ds, const CompressResult& res) {
    const auto ev = evaluate(ds, res.bytes);
    CHECK(ev.pd_gate_passed);
    CHECK(ev.qoi_gate_passed);
    CHECK(ev.report.fraction_within(1e-3) == 1.0);
}

}  // namespace

TEST_CASE("roundtrip meets the per-image and QoI gates") {
    const auto ds = small_corpus();
    const auto cfg = small_config();
    const auto res = compress(ds, cfg);
    const auto ev = evaluate(ds, res.bytes);
    CHECK(ev.pd_gate_passed);
    CHECK(ev.qoi_gate_passed);
    CHECK(ev.report.max_image_nrmse() <= cfg.tau);
    CHECK(ev.report.max_qoi_nrmse <= 1e-8);
    CHECK(res.report.compression_ratio > 1.0);
    CHECK(res.training == TrainingMode::full);

    const auto dec = decompress(res.bytes);
    CHECK(dec == res.recon);
    CHECK(decompress(res.bytes) == dec);
}

TEST_CASE("double precision lambdas meet the tighter QoI gate") {
    const auto ds = small_corpus();
    auto cfg = small_config();
    cfg.lambda_precision = LambdaPrecision::f64;
    const auto ev = evaluate(ds, compress(ds, cfg).bytes);
    CHECK(ev.qoi_gate == 1e-12);
    CHECK(ev.report.max_qoi_nrmse <= 1e-12);
    CHECK(ev.pd_gate_passed);
}

TEST_CASE("post-processing lowers QoI error below the bare AE output") {
    const auto ds = small_corpus();
    const auto res = compress(ds, small_config());
    CHECK(res.report.max_qoi_nrmse < 1e-8);
    CHECK(qoi_error_report(ds, res.recon).max == res.report.max_qoi_nrmse);
}

TEST_CASE("worker count does not change the archive") {
    const auto ds = small_corpus();
    auto cfg = small_config();
    const auto a = compress(ds, cfg).bytes;
    cfg.workers = 3;
    const auto b = compress(ds, cfg).bytes;
    cfg.workers = 8;
    const auto c = compress(ds, cfg).bytes;
    CHECK(a == b);
    CHECK(a == c);
    CHECK(decompress(a, 1) == decompress(a, 4));
}

TEST_CASE("seed changes the archive") {
    const auto ds = small_corpus();
    auto cfg = small_config();
    const auto a = compress(ds, cfg).bytes;
    cfg.seed = 7;
    CHECK(compress(ds, cfg).bytes != a);
}

TEST_CASE("looser tau never costs more bytes") {
    const auto ds = small_corpus();
    auto cfg = small_config();
    const auto tight = compress(ds, cfg).bytes.size();
    cfg.tau = 1e-2;
    const auto loose = compress(ds, cfg);
    CHECK(loose.bytes.size() <= tight);
    CHECK(evaluate(ds, loose.bytes).pd_gate_passed);
}

TEST_CASE("non-converged images are stored verbatim") {
    const auto ds = small_corpus();
    auto cfg = small_config();
    cfg.newton.max_iter = 1;
    cfg.newton.step = 0.01;
    const auto res = compress(ds, cfg);
    CHECK(res.report.exception_images == ds.n_images());
    const auto dec = decompress(res.bytes);
    CHECK(std::memcmp(dec.data.data(), ds.data.data(), ds.data.size() * sizeof(double)) == 0);
    const auto ev = evaluate(ds, res.bytes);
    CHECK(ev.report.exception_images == ds.n_images());
    CHECK(ev.report.convergence_fraction == 0.0);
}

TEST_CASE("empty histograms survive the roundtrip as zeros") {
    auto ds = small_corpus();
    for (double& v : ds.image(1, 5)) v = 0.0;
    const auto res = compress(ds, small_config());
    const auto dec = decompress(res.bytes);
    for (double v : dec.image(1, 5)) CHECK(v == 0.0);
    CHECK(evaluate(ds, res.bytes).passed());
}

TEST_CASE("residual-only baseline meets the gates") {
    const auto ds = small_corpus();
    auto cfg = small_config();
    cfg.scheme = CompressionScheme::residual_only;
    const auto res = compress(ds, cfg);
    CHECK(res.training == TrainingMode::none);
    const auto ev = evaluate(ds, res.bytes);
    CHECK(ev.passed());
    CHECK(ev.report.ae_accuracy == 0.0);
    const auto archive = parse_archive(res.bytes);
    for (const auto& s : archive.shards) {
        CHECK(s.header.scheme == 1);
        CHECK(s.section(Section::weights).empty());
    }
}

TEST_CASE("row decomposition works with a row scheme") {
    const auto ds = small_corpus();
    auto cfg = small_config();
    cfg.mode = DecompMode::row;
    cfg.selection = SelectionScheme::row50;
    cfg.shards = 4;
    const auto res = compress(ds, cfg);
    CHECK(evaluate(ds, res.bytes).passed());
}

TEST_CASE("archive accounting identity") {
    const auto ds = small_corpus();
    const auto res = compress(ds, small_config());
    std::uint64_t blobs = 0;
    for (const auto& s : res.shards) blobs += s.blob_bytes;
    const auto archive = parse_archive(res.bytes);
    std::uint64_t headers = 0;
    for (const auto& s : archive.shards) headers += s.header.blob_size();
    CHECK(blobs == headers);
    CHECK(res.bytes.size() > blobs);
    CHECK(res.report.archive_bytes == res.bytes.size());
    CHECK(res.report.original_bytes == original_size(ds));
}

TEST_CASE("timestep sequence with K = 1 full-trains every step") {
    std::vector<FDataset> steps;
    for (int t = 0; t < 3; ++t) steps.push_back(small_corpus(42, t));
    auto cfg = small_config();
    cfg.retrain_period = 1;
    const auto reports = run_timesteps(steps, cfg);
    REQUIRE(reports.size() == 3);
    for (const auto& r : reports) CHECK(r.training == TrainingMode::full);
}

TEST_CASE("drifting sequence with K = 5 passes every gate") {
    std::vector<FDataset> steps;
    for (int t = 0; t < 10; ++t) steps.push_back(small_corpus(42, t));
    auto cfg = small_config();
    cfg.retrain_period = 5;
    TimestepState state;
    for (int t = 0; t < 10; ++t) {
        const auto res = compress(steps[t], cfg, &state);
        CHECK(res.training == (t % 5 == 0 ? TrainingMode::full : TrainingMode::incremental));
        const auto ev = evaluate(steps[t], res.bytes);
        CHECK(ev.passed());
    }
}

TEST_CASE("static mode trains once and freezes") {
    std::vector<FDataset> steps;
    for (int t = 0; t < 3; ++t) steps.push_back(small_corpus(42, t));
    auto cfg = small_config();
    cfg.static_model = true;
    TimestepState state;
    std::vector<Bytes> weights;
    for (int t = 0; t < 3; ++t) {
        const auto res = compress(steps[t], cfg, &state);
        CHECK(res.training == (t == 0 ? TrainingMode::full : TrainingMode::frozen));
        weights.push_back(parse_archive(res.bytes).shards[0].section(Section::weights));
        CHECK(evaluate(steps[t], res.bytes).passed());
    }
    // The normalizer is refit per step; the weights themselves stay fixed.
    CHECK(std::equal(weights[0].begin() + 16, weights[0].end(), weights[2].begin() + 16));
}

TEST_CASE("config JSON roundtrip and validation") {
    auto cfg = small_config();
    cfg.tau = 5e-4;
    cfg.lambda_precision = LambdaPrecision::f64;
    cfg.newton.distance = Distance::l2;
    cfg.retry_small_step = true;
    const auto back = PipelineConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
    CHECK(back.digest() == cfg.digest());

    auto other = cfg;
    other.workers = 16;
    CHECK(other.digest() == cfg.digest());
    other.seed = 1;
    CHECK(other.digest() != cfg.digest());

    CHECK_THROWS_AS(PipelineConfig::from_json({{"tua", 1e-3}}), InvalidArgument);
    CHECK_THROWS_AS(PipelineConfig::from_json({{"tau", "small"}}), InvalidArgument);
    CHECK_THROWS_AS(PipelineConfig::from_json({{"newton", {{"steps", 1}}}}), InvalidArgument);
    CHECK_THROWS_AS(PipelineConfig::from_json({{"select", "row"}}), InvalidArgument);
    CHECK_THROWS_AS(PipelineConfig::from_json({{"pq_bits", 5}}), InvalidArgument);
    CHECK_NOTHROW(PipelineConfig::from_json({{"mode", "row"}, {"select", "row25"}}));
}

TEST_CASE("evaluate rejects a mismatched original") {
    const auto ds = small_corpus();
    const auto res = compress(ds, small_config());
    const auto other = gen_synthetic(2, 95, default_grid(), SyntheticParams{});
    CHECK_THROWS_AS(evaluate(other, res.bytes), ShapeMismatch);
    ErrorReport scratch;
    CHECK_THROWS_AS(fill_error_fields(scratch, other, res.recon, 1), ShapeMismatch);
}

TEST_CASE("corrupted archives fail loudly") {
    const auto ds = small_corpus();
    auto bytes = compress(ds, small_config()).bytes;
    bytes.resize(bytes.size() - 3);
    CHECK_THROWS_AS(decompress(bytes), FormatError);
}

TEST_CASE("gates helper") {
    CHECK(qoi_gate_for(LambdaPrecision::f32) == 1e-8);
    CHECK(qoi_gate_for(LambdaPrecision::f64) == 1e-12);
    const auto ds = small_corpus();
    check_gates(ds, compress(ds, small_config()));
}
