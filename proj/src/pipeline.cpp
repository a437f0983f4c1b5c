#include "mlk/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>

#include "mlk/error.hpp"
#include "mlk/kernels.hpp"
#include "mlk/quantizer.hpp"
#include "mlk/random.hpp"
#include "mlk/residual.hpp"

namespace mlk {

namespace {

using kernels::Exec;
using Clock = std::chrono::steady_clock;

constexpr std::uint64_t kTrainStream = 0x7472'6169'6eULL;
constexpr std::uint64_t kPqStream = 0x7071ULL;

class StageTimer {
public:
    explicit StageTimer(std::map<std::string, double>& sink) : sink_(sink), start_(Clock::now()) {}
    void lap(const std::string& stage) {
        const auto now = Clock::now();
        sink_[stage] += std::chrono::duration<double>(now - start_).count();
        start_ = now;
    }

private:
    std::map<std::string, double>& sink_;
    Clock::time_point start_;
};

/// Runs fn(i) for every shard on up to `workers` threads. Failures are
/// collected per shard and rethrown together.
template <class Fn>
void for_each_shard(std::size_t n, std::size_t workers, Fn&& fn) {
    std::vector<std::string> errors(n);
    std::vector<char> failed(n, 0);
    const long long count = static_cast<long long>(n);
    const int threads = static_cast<int>(std::max<std::size_t>(1, std::min(workers, n)));
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
    for (long long i = 0; i < count; ++i) {
        try {
            fn(static_cast<std::size_t>(i));
        } catch (const std::exception& e) {
            errors[i] = e.what();
            failed[i] = 1;
        } catch (...) {
            errors[i] = "unknown error";
            failed[i] = 1;
        }
    }
    std::string msg;
    for (std::size_t i = 0; i < n; ++i) {
        if (!failed[i]) continue;
        if (!msg.empty()) msg += "; ";
        msg += "shard " + std::to_string(i) + ": " + errors[i];
    }
    if (!msg.empty()) throw Error(msg);
}

NewtonOptions decoder_options(const Preamble& p) {
    NewtonOptions opts;
    opts.floor_factor = p.floor_factor;
    opts.distance = static_cast<Distance>(p.distance);
    return opts;
}

bool stored_qoi_usable(const Qoi& q) {
    return q.n > 0.0 && std::isfinite(q.n) && std::isfinite(q.u_par) && std::isfinite(q.t_perp) &&
           std::isfinite(q.t_par);
}

Bytes serialize_exceptions(const std::vector<std::pair<std::uint32_t, std::vector<double>>>& items) {
    Bytes out;
    if (items.empty()) return out;
    ByteWriter w(out);
    w.u32(static_cast<std::uint32_t>(items.size()));
    for (const auto& [idx, img] : items) {
        w.u32(idx);
        for (double v : img) w.f64(v);
    }
    return out;
}

std::vector<std::pair<std::uint32_t, std::vector<double>>> deserialize_exceptions(std::span<const std::uint8_t> bytes,
                                                                                  std::size_t image_size,
                                                                                  std::size_t n_images) {
    std::vector<std::pair<std::uint32_t, std::vector<double>>> out;
    if (bytes.empty()) return out;
    ByteReader r(bytes);
    const std::uint32_t count = r.u32();
    if (static_cast<std::uint64_t>(count) * (4 + 8 * image_size) != r.remaining())
        throw FormatError("exceptions section length does not match its count");
    out.reserve(count);
    for (std::uint32_t e = 0; e < count; ++e) {
        const std::uint32_t idx = r.u32();
        if (idx >= n_images) throw FormatError("exception index out of range");
        std::vector<double> img(image_size);
        for (double& v : img) v = r.f64();
        out.emplace_back(idx, std::move(img));
    }
    return out;
}

struct ShardOutput {
    ShardBlob blob;
    ShardStats stats;
    std::vector<std::vector<double>> recon;
    std::optional<AEModel> model;
};

TrainingMode choose_training(const PipelineConfig& config, const TimestepState* state, std::size_t shard_count) {
    if (config.scheme == CompressionScheme::residual_only) return TrainingMode::none;
    if (!state || state->models.size() != shard_count) return TrainingMode::full;
    const bool have_models =
        std::all_of(state->models.begin(), state->models.end(), [](const auto& m) { return m.has_value(); });
    if (!have_models) return TrainingMode::full;
    if (config.static_model) return TrainingMode::frozen;
    const auto k = static_cast<std::size_t>(config.retrain_period);
    return state->timestep_counter % k == 0 ? TrainingMode::full : TrainingMode::incremental;
}

ShardOutput compress_shard(const FDataset& ds, const Shard& shard, const PipelineConfig& config, TrainingMode training,
                           const AEModel* previous) {
    const auto& grid = ds.grid;
    const std::size_t n = shard.members.size();
    const std::size_t dim = grid.cells();

    ShardOutput out;
    auto& stats = out.stats;
    stats.worker_id = shard.worker_id;
    stats.n_images = n;
    stats.training = training;
    StageTimer timer(stats.timings);

    std::vector<std::span<const double>> originals(n);
    for (std::size_t i = 0; i < n; ++i) originals[i] = ds.image(shard.members[i].plane, shard.members[i].node);

    std::array<Bytes, kSectionCount> sections;
    ShardHeader header;
    header.scheme = static_cast<std::uint8_t>(config.scheme);
    header.lambda_precision = static_cast<std::uint8_t>(config.lambda_precision);
    header.n_images = static_cast<std::uint32_t>(n);
    header.img_rows = static_cast<std::uint16_t>(grid.rows);
    header.img_cols = static_cast<std::uint16_t>(grid.cols);

    // Stages 1-2: training and latent coding.
    std::vector<std::vector<double>>& recon = out.recon;
    if (config.scheme == CompressionScheme::autoencoder) {
        AEModel model;
        if (training == TrainingMode::frozen) {
            model = *previous;
        } else {
            const auto picked = select_training(shard, config.selection, ds.n_planes, config.seed);
            std::vector<std::span<const double>> train_set;
            train_set.reserve(picked.size());
            for (auto idx : picked) train_set.push_back(originals[idx]);
            stats.training_images = train_set.size();

            TrainConfig tc;
            tc.learning_rate = config.learning_rate;
            tc.batch_size = config.batch_size;
            tc.seed = derive_seed(derive_seed(config.seed, kTrainStream), shard.worker_id);
            const bool warm = training == TrainingMode::incremental;
            tc.epochs = warm ? config.epochs_incremental : config.epochs_full;
            auto result = train(train_set, config.latent_dim, tc, warm ? previous : nullptr);
            model = std::move(result.model);
            if (!result.epoch_loss.empty()) stats.final_train_loss = result.epoch_loss.back();
        }
        timer.lap("training");

        const auto latents = kernels::encode_batch(model, originals, Exec::serial);
        timer.lap("encode");

        const auto pq = pq_train(latents, config.latent_dim, pq_k_for_bits(config.pq_bits),
                                 derive_seed(derive_seed(config.seed, kPqStream), shard.worker_id));
        sections[static_cast<std::size_t>(Section::codes)] = pq_encode(pq, latents);
        const auto dequantized = pq_decode(pq, sections[static_cast<std::size_t>(Section::codes)], n);
        sections[static_cast<std::size_t>(Section::pq_table)] = serialize_codebook(pq);
        timer.lap("pq");

        recon = kernels::decode_batch(model, dequantized, Exec::serial);
        sections[static_cast<std::size_t>(Section::weights)] = serialize_model(model);
        header.latent_dim = static_cast<std::uint8_t>(config.latent_dim);
        header.pq_bits = static_cast<std::uint8_t>(config.pq_bits);
        out.model = std::move(model);
        timer.lap("encode");
    } else {
        recon.assign(n, std::vector<double>(dim, 0.0));
    }

    // Stage 5 on the bare reconstruction. Only images that still miss the
    // bound afterwards get a residual (stages 3-4) and are projected again.
    const BuiltinCodec codec;
    const auto p = config.lambda_precision;
    LambdaSet lambdas;
    lambdas.precision = p;
    lambdas.entries.resize(n);
    std::vector<std::vector<double>> final_images(n);
    std::vector<std::pair<std::uint32_t, std::vector<double>>> exceptions;
    std::vector<std::size_t> pending;
    std::vector<Qoi> q_true(n);

    enum class Outcome { pass, nonconverged, out_of_bound, unusable };
    std::vector<char> attempted(n, 0);
    auto project = [&](std::size_t i, std::span<const double> current) {
        const Qoi& q = q_true[i];
        const Qoi q_stored{round_to(q.n, p), round_to(q.u_par, p), round_to(q.t_perp, p), round_to(q.t_par, p)};
        if (!stored_qoi_usable(q_stored)) return Outcome::unusable;
        const bool first = !attempted[i];
        attempted[i] = 1;

        const auto cs = build_constraints(grid, q, q_stored.u_par);
        auto result = newton_project(current, cs, config.newton);
        if (result.status != ProjectionStatus::converged && config.retry_small_step) {
            NewtonOptions retry = config.newton;
            retry.step = config.retry_step;
            retry.max_iter = config.retry_max_iter;
            result = newton_project(current, cs, retry);
        }
        stats.max_newton_iterations = std::max(stats.max_newton_iterations, result.iterations);
        Vec4 lambda{};
        bool finite = result.status == ProjectionStatus::converged;
        for (int k = 0; k < 4 && finite; ++k) {
            lambda[k] = round_to(result.lambda[k], p);
            finite = std::isfinite(lambda[k]);
        }
        if (!finite) {
            if (first) ++stats.nonconverged_images;
            return Outcome::nonconverged;
        }
        auto f = apply_lambda(current, lambda, cs, config.newton);
        if (!(image_nrmse_or_inf(originals[i], f) <= config.tau)) return Outcome::out_of_bound;
        lambdas.entries[i] = LambdaEntry{lambda, q_stored, true, false};
        final_images[i] = std::move(f);
        return Outcome::pass;
    };
    auto to_exception = [&](std::size_t i) {
        exceptions.emplace_back(static_cast<std::uint32_t>(i),
                                std::vector<double>(originals[i].begin(), originals[i].end()));
    };

    // Images the AE misses go straight to the residual stage; the rest are
    // projected now and join it only if the projection pushes them past tau.
    // A projection that does not converge sends the image to the exceptions.
    const auto ae_misses = config.scheme == CompressionScheme::autoencoder
                               ? select_residuals(originals, std::vector<std::span<const double>>(recon.begin(), recon.end()),
                                                  config.tau)
                               : std::vector<std::size_t>{};
    std::vector<char> ae_missed(n, config.scheme == CompressionScheme::residual_only);
    for (auto i : ae_misses) ae_missed[i] = 1;
    for (std::size_t i = 0; i < n; ++i) {
        q_true[i] = compute_qoi(originals[i], grid);
        if (!q_true[i].defined()) {
            // Empty histogram: a stored density of zero tells the decoder to emit zeros.
            ++stats.empty_images;
            lambdas.entries[i].converged = true;
            final_images[i].assign(dim, 0.0);
            continue;
        }
        if (ae_missed[i]) {
            pending.push_back(i);
            continue;
        }
        const auto outcome = project(i, recon[i]);
        if (outcome == Outcome::unusable || outcome == Outcome::nonconverged)
            to_exception(i);
        else if (outcome != Outcome::pass)
            pending.push_back(i);
    }
    timer.lap("post_processing");

    ResidualPlan plan;
    plan.tau = config.tau;
    if (!pending.empty()) {
        std::vector<std::span<const double>> sel_orig, sel_recon;
        for (auto i : pending) {
            sel_orig.push_back(originals[i]);
            sel_recon.push_back(recon[i]);
        }
        const auto search =
            find_error_bound(sel_orig, sel_recon, grid.rows, grid.cols, config.tau * config.eb_margin, codec);
        plan.lossless = search.lossless;
        plan.eb = search.lossless ? 0.0 : search.eb;

        std::vector<double> residual(dim), current(dim);
        for (auto i : pending) {
            for (std::size_t j = 0; j < dim; ++j) residual[j] = originals[i][j] - recon[i][j];
            const auto [lo, hi] = std::minmax_element(originals[i].begin(), originals[i].end());
            const double eb_floor = std::ldexp(config.tau * (*hi - *lo), -20);
            double eb = plan.eb;
            // Tighten this image's bound until its projected result passes.
            for (;;) {
                Bytes payload;
                try {
                    payload = codec.compress(residual, grid.rows, grid.cols, eb);
                } catch (const InvalidArgument&) {
                    eb = 0.0;
                    payload = codec.compress(residual, grid.rows, grid.cols, eb);
                }
                const auto decoded = codec.decompress(payload);
                current = recon[i];
                for (std::size_t j = 0; j < dim; ++j) current[j] += decoded[j];
                const auto outcome = project(i, current);
                if (outcome == Outcome::pass) {
                    plan.selected.push_back(i);
                    plan.payloads.push_back(std::move(payload));
                    break;
                }
                if (outcome == Outcome::unusable || outcome == Outcome::nonconverged || eb == 0.0) {
                    if (outcome == Outcome::out_of_bound) ++stats.pd_fallback_images;
                    to_exception(i);
                    break;
                }
                eb *= 0.5;
                if (eb < eb_floor) eb = 0.0;
            }
        }
        if (!plan.selected.empty()) sections[static_cast<std::size_t>(Section::residuals)] = serialize_residuals(plan);
    }
    stats.residual_images = plan.selected.size();
    stats.eb = plan.eb;
    stats.lossless_residuals = plan.lossless;
    timer.lap("find_eb");

    for (const auto& [idx, img] : exceptions) {
        final_images[idx] = img;
        lambdas.entries[idx] = LambdaEntry{};
    }
    recon = std::move(final_images);
    stats.exception_images = exceptions.size();
    sections[static_cast<std::size_t>(Section::lambdas)] = serialize_lambdas(lambdas);
    sections[static_cast<std::size_t>(Section::exceptions)] = serialize_exceptions(exceptions);
    timer.lap("post_processing");

    const Bytes bytes = write_shard(header, sections);
    out.blob = read_shard(bytes);
    stats.blob_bytes = bytes.size();
    timer.lap("other");
    return out;
}

std::vector<std::vector<double>> decompress_shard(const ShardBlob& blob, const Shard& shard, const Preamble& pre) {
    const auto& grid = pre.grid;
    const auto& h = blob.header;
    const std::size_t n = shard.members.size();
    const std::size_t dim = grid.cells();
    if (h.n_images != n) throw FormatError("image count does not match the partition");
    if (h.img_rows != grid.rows || h.img_cols != grid.cols) throw FormatError("image shape does not match the grid");

    std::vector<std::vector<double>> recon;
    if (h.scheme == static_cast<std::uint8_t>(CompressionScheme::autoencoder)) {
        const AEModel model = deserialize_model(blob.section(Section::weights), h.latent_dim, dim);
        const auto pq = deserialize_codebook(blob.section(Section::pq_table), h.latent_dim, pq_k_for_bits(h.pq_bits));
        const auto latents = pq_decode(pq, blob.section(Section::codes), n);
        recon = kernels::decode_batch(model, latents, Exec::serial);
    } else if (h.scheme == static_cast<std::uint8_t>(CompressionScheme::residual_only)) {
        recon.assign(n, std::vector<double>(dim, 0.0));
    } else {
        throw FormatError("unknown scheme " + std::to_string(h.scheme));
    }

    const BuiltinCodec codec;
    const auto plan = deserialize_residuals(blob.section(Section::residuals));
    for (auto idx : plan.selected)
        if (idx >= n) throw FormatError("residual index out of range");
    apply_residuals(recon, plan, codec);

    const auto precision = static_cast<LambdaPrecision>(h.lambda_precision);
    const auto lambdas = deserialize_lambdas(blob.section(Section::lambdas), n, precision);
    const auto exceptions = deserialize_exceptions(blob.section(Section::exceptions), dim, n);
    std::vector<char> is_exception(n, 0);
    for (const auto& e : exceptions) is_exception[e.first] = 1;

    const NewtonOptions opts = decoder_options(pre);
    for (std::size_t i = 0; i < n; ++i) {
        if (is_exception[i]) continue;
        const auto& entry = lambdas.entries[i];
        if (!(entry.qoi.n > 0.0)) {
            std::fill(recon[i].begin(), recon[i].end(), 0.0);
            continue;
        }
        const auto cs = build_constraints(grid, entry.qoi, entry.qoi.u_par);
        recon[i] = apply_lambda(recon[i], entry.lambda, cs, opts);
    }
    for (const auto& [idx, img] : exceptions) recon[idx] = img;
    return recon;
}

void scatter(FDataset& ds, const Shard& shard, const std::vector<std::vector<double>>& images) {
    for (std::size_t i = 0; i < shard.members.size(); ++i) {
        auto dst = ds.image(shard.members[i].plane, shard.members[i].node);
        std::copy(images[i].begin(), images[i].end(), dst.begin());
    }
}

void merge_timings(ErrorReport& report, const std::vector<ShardStats>& stats) {
    for (const auto& s : stats) {
        for (const auto& [stage, secs] : s.timings) {
            report.stage_timings_sum[stage] += secs;
            auto& mx = report.stage_timings_max[stage];
            mx = std::max(mx, secs);
        }
    }
}

}  // namespace

std::string to_string(TrainingMode mode) {
    switch (mode) {
        case TrainingMode::full: return "full";
        case TrainingMode::incremental: return "incremental";
        case TrainingMode::frozen: return "frozen";
        case TrainingMode::none: return "none";
    }
    return "unknown";
}

void PipelineConfig::validate() const {
    if (workers < 1) throw InvalidArgument("workers must be >= 1");
    if (shards < 1) throw InvalidArgument("shards must be >= 1");
    if (!(tau > 0.0) || !std::isfinite(tau)) throw InvalidArgument("tau must be positive");
    if (!(eb_margin > 0.0 && eb_margin <= 1.0)) throw InvalidArgument("eb_margin must lie in (0, 1]");
    if (latent_dim < 1 || latent_dim > 255) throw InvalidArgument("latent_dim must lie in [1, 255]");
    pq_k_for_bits(pq_bits);
    if (epochs_full < 1 || epochs_incremental < 1) throw InvalidArgument("epoch counts must be >= 1");
    if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be positive");
    if (retrain_period < 1) throw InvalidArgument("retrain_period must be >= 1");
    newton.validate();
    if (!(retry_step > 0.0 && retry_step <= 1.0) || retry_max_iter < 1)
        throw InvalidArgument("retry options out of range");
    if (mode == DecompMode::row && !is_row_scheme(selection))
        throw InvalidArgument("selection scheme " + mlk::to_string(selection) + " needs column decomposition");
    if (mode == DecompMode::column && is_row_scheme(selection))
        throw InvalidArgument("selection scheme " + mlk::to_string(selection) + " needs row decomposition");
}

nlohmann::json PipelineConfig::to_json() const {
    nlohmann::json j;
    j["workers"] = workers;
    j["shards"] = shards;
    j["mode"] = mlk::to_string(mode);
    j["select"] = mlk::to_string(selection);
    j["scheme"] = scheme == CompressionScheme::autoencoder ? "ae" : "residual";
    j["tau"] = tau;
    j["eb_margin"] = eb_margin;
    j["latent_dim"] = latent_dim;
    j["pq_bits"] = pq_bits;
    j["lambda_precision"] = mlk::to_string(lambda_precision);
    j["epochs_full"] = epochs_full;
    j["epochs_incremental"] = epochs_incremental;
    j["batch_size"] = batch_size;
    j["learning_rate"] = learning_rate;
    j["retrain_period"] = retrain_period;
    j["static_model"] = static_model;
    j["newton"] = {{"step", newton.step},
                   {"max_iter", newton.max_iter},
                   {"tolerance", newton.tolerance},
                   {"floor_factor", newton.floor_factor},
                   {"distance", newton.distance == Distance::kl ? "kl" : "l2"}};
    j["retry_small_step"] = retry_small_step;
    j["retry_step"] = retry_step;
    j["retry_max_iter"] = retry_max_iter;
    j["seed"] = seed;
    return j;
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
    PipelineConfig c;
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "workers") c.workers = v.get<std::size_t>();
            else if (key == "shards") c.shards = v.get<std::size_t>();
            else if (key == "mode") c.mode = parse_decomp_mode(v.get<std::string>());
            else if (key == "select") c.selection = parse_selection_scheme(v.get<std::string>());
            else if (key == "scheme") {
                const auto s = v.get<std::string>();
                if (s == "ae") c.scheme = CompressionScheme::autoencoder;
                else if (s == "residual") c.scheme = CompressionScheme::residual_only;
                else throw InvalidArgument("unknown scheme '" + s + "'");
            } else if (key == "tau") c.tau = v.get<double>();
            else if (key == "eb_margin") c.eb_margin = v.get<double>();
            else if (key == "latent_dim") c.latent_dim = v.get<std::size_t>();
            else if (key == "pq_bits") c.pq_bits = v.get<int>();
            else if (key == "lambda_precision") c.lambda_precision = parse_lambda_precision(v.get<std::string>());
            else if (key == "epochs_full") c.epochs_full = v.get<int>();
            else if (key == "epochs_incremental") c.epochs_incremental = v.get<int>();
            else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
            else if (key == "learning_rate") c.learning_rate = v.get<double>();
            else if (key == "retrain_period") c.retrain_period = v.get<int>();
            else if (key == "static_model") c.static_model = v.get<bool>();
            else if (key == "newton") {
                for (const auto& [nk, nv] : v.items()) {
                    if (nk == "step") c.newton.step = nv.get<double>();
                    else if (nk == "max_iter") c.newton.max_iter = nv.get<int>();
                    else if (nk == "tolerance") c.newton.tolerance = nv.get<double>();
                    else if (nk == "floor_factor") c.newton.floor_factor = nv.get<double>();
                    else if (nk == "distance") {
                        const auto s = nv.get<std::string>();
                        if (s == "kl") c.newton.distance = Distance::kl;
                        else if (s == "l2") c.newton.distance = Distance::l2;
                        else throw InvalidArgument("unknown distance '" + s + "'");
                    } else throw InvalidArgument("unknown newton option '" + nk + "'");
                }
            } else if (key == "retry_small_step") c.retry_small_step = v.get<bool>();
            else if (key == "retry_step") c.retry_step = v.get<double>();
            else if (key == "retry_max_iter") c.retry_max_iter = v.get<int>();
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else throw InvalidArgument("unknown config key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

std::uint64_t PipelineConfig::digest() const {
    auto j = to_json();
    j.erase("workers");
    return fnv1a64(j.dump());
}

nlohmann::json ShardStats::to_json() const {
    return {{"worker_id", worker_id},
            {"n_images", n_images},
            {"training_images", training_images},
            {"training", mlk::to_string(training)},
            {"final_train_loss", final_train_loss},
            {"residual_images", residual_images},
            {"eb", eb},
            {"lossless_residuals", lossless_residuals},
            {"exception_images", exception_images},
            {"nonconverged_images", nonconverged_images},
            {"pd_fallback_images", pd_fallback_images},
            {"empty_images", empty_images},
            {"max_newton_iterations", max_newton_iterations},
            {"blob_bytes", blob_bytes},
            {"timings", timings}};
}

std::uint64_t original_size(const FDataset& ds) {
    return ds.data.size() * sizeof(double) + dataset_manifest(ds, "data.f64").size();
}

void fill_error_fields(ErrorReport& report, const FDataset& orig, const FDataset& recon, std::size_t workers) {
    if (orig.n_planes != recon.n_planes || orig.n_nodes != recon.n_nodes || !(orig.grid == recon.grid))
        throw ShapeMismatch("reconstruction shape does not match the original");
    const std::size_t n = orig.n_images();
    std::vector<std::span<const double>> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
        a[i] = orig.image(i);
        b[i] = recon.image(i);
    }
    const Exec exec = workers > 1 ? Exec::parallel : Exec::serial;
    report.per_image_nrmse = kernels::nrmse_batch(a, b, exec);
    report.pd_nrmse = nrmse(orig.data, recon.data);
    const auto q = qoi_error_report(orig, recon);
    report.qoi_nrmse = q.nrmse;
    report.max_qoi_nrmse = q.max;
    report.n_images = n;
}

CompressResult compress(const FDataset& ds, const PipelineConfig& config, TimestepState* state) {
    config.validate();
    ds.validate();
    if (ds.n_images() == 0) throw InvalidArgument("dataset has no images");
    if (ds.grid.rows > 0xffff || ds.grid.cols > 0xffff) throw InvalidArgument("image dimensions exceed 65535");

    const auto shards = partition(ds.n_planes, ds.n_nodes, config.shards, config.mode);
    const TrainingMode training = choose_training(config, state, shards.size());

    std::vector<ShardOutput> outputs(shards.size());
    for_each_shard(shards.size(), config.workers, [&](std::size_t s) {
        const AEModel* prev = nullptr;
        if (state && state->models.size() == shards.size() && state->models[s]) prev = &*state->models[s];
        outputs[s] = compress_shard(ds, shards[s], config, training, prev);
    });

    CompressResult res;
    res.training = training;
    auto& pre = res.archive.preamble;
    pre.grid = ds.grid;
    pre.n_planes = static_cast<std::uint32_t>(ds.n_planes);
    pre.n_nodes = static_cast<std::uint32_t>(ds.n_nodes);
    pre.timestep = ds.timestep;
    pre.decomp_mode = static_cast<std::uint8_t>(config.mode);
    pre.distance = static_cast<std::uint8_t>(config.newton.distance);
    pre.tau = config.tau;
    pre.floor_factor = config.newton.floor_factor;
    pre.seed = config.seed;
    pre.config_digest = config.digest();

    res.recon = FDataset::zeros(ds.n_planes, ds.n_nodes, ds.grid);
    res.recon.timestep = ds.timestep;
    for (std::size_t s = 0; s < shards.size(); ++s) {
        scatter(res.recon, shards[s], outputs[s].recon);
        res.archive.shards.push_back(std::move(outputs[s].blob));
        res.shards.push_back(std::move(outputs[s].stats));
    }
    res.bytes = serialize_archive(res.archive);

    if (state) {
        if (training != TrainingMode::none) {
            state->models.resize(shards.size());
            for (std::size_t s = 0; s < shards.size(); ++s) state->models[s] = std::move(outputs[s].model);
        }
        ++state->timestep_counter;
    }

    auto& r = res.report;
    fill_error_fields(r, ds, res.recon, config.workers);
    r.original_bytes = original_size(ds);
    r.archive_bytes = res.bytes.size();
    r.compression_ratio = compression_ratio(r.original_bytes, r.archive_bytes);
    std::size_t nonconverged = 0;
    for (const auto& s : res.shards) {
        r.residual_images += s.residual_images;
        r.exception_images += s.exception_images;
        nonconverged += s.nonconverged_images;
    }
    r.nonconverged_images = nonconverged;
    const double n = static_cast<double>(r.n_images);
    r.residual_fraction = static_cast<double>(r.residual_images) / n;
    r.ae_accuracy = config.scheme == CompressionScheme::autoencoder ? 1.0 - r.residual_fraction : 0.0;
    r.convergence_fraction = 1.0 - static_cast<double>(nonconverged) / n;
    merge_timings(r, res.shards);
    r.notes["training"] = to_string(training);
    r.notes["lambda_precision"] = to_string(config.lambda_precision);
    return res;
}

FDataset decompress(const Archive& archive, std::size_t workers) {
    const auto& pre = archive.preamble;
    if (pre.decomp_mode > 1) throw FormatError("bad decomposition mode in preamble");
    if (pre.distance > 1) throw FormatError("bad distance in preamble");
    const auto shards =
        partition(pre.n_planes, pre.n_nodes, archive.shards.size(), static_cast<DecompMode>(pre.decomp_mode));
    std::vector<std::vector<std::vector<double>>> images(shards.size());
    for_each_shard(shards.size(), workers,
                   [&](std::size_t s) { images[s] = decompress_shard(archive.shards[s], shards[s], pre); });

    FDataset out = FDataset::zeros(pre.n_planes, pre.n_nodes, pre.grid);
    out.timestep = pre.timestep;
    for (std::size_t s = 0; s < shards.size(); ++s) scatter(out, shards[s], images[s]);
    return out;
}

FDataset decompress(std::span<const std::uint8_t> bytes, std::size_t workers) {
    return decompress(parse_archive(bytes), workers);
}

double qoi_gate_for(LambdaPrecision p) { return p == LambdaPrecision::f32 ? 1e-8 : 1e-12; }

nlohmann::json EvalResult::to_json(bool include_per_image) const {
    auto j = report.to_json(include_per_image);
    j["gates"] = {{"tau", report.notes.count("tau") ? std::stod(report.notes.at("tau")) : 0.0},
                  {"qoi", qoi_gate},
                  {"pd_passed", pd_gate_passed},
                  {"qoi_passed", qoi_gate_passed},
                  {"passed", passed()}};
    return j;
}

EvalResult evaluate(const FDataset& orig, std::span<const std::uint8_t> archive_bytes, std::size_t workers) {
    const Archive archive = parse_archive(archive_bytes);
    const auto& pre = archive.preamble;
    if (pre.n_planes != orig.n_planes || pre.n_nodes != orig.n_nodes || !(pre.grid == orig.grid))
        throw ShapeMismatch("archive shape does not match the original dataset");
    const FDataset recon = decompress(archive, workers);

    EvalResult ev;
    auto& r = ev.report;
    fill_error_fields(r, orig, recon, workers);
    r.original_bytes = original_size(orig);
    r.archive_bytes = archive_bytes.size();
    r.compression_ratio = compression_ratio(r.original_bytes, r.archive_bytes);

    bool all_ae = true;
    LambdaPrecision precision = LambdaPrecision::f32;
    for (const auto& shard : archive.shards) {
        r.residual_images += deserialize_residuals(shard.section(Section::residuals)).selected.size();
        const auto& ex = shard.section(Section::exceptions);
        if (!ex.empty()) r.exception_images += ByteReader(ex).u32();
        all_ae = all_ae && shard.header.scheme == static_cast<std::uint8_t>(CompressionScheme::autoencoder);
        if (shard.header.lambda_precision == static_cast<std::uint8_t>(LambdaPrecision::f64))
            precision = LambdaPrecision::f64;
    }
    const double n = static_cast<double>(r.n_images);
    r.residual_fraction = static_cast<double>(r.residual_images) / n;
    r.ae_accuracy = all_ae ? 1.0 - r.residual_fraction : 0.0;
    // Exceptions also hold images that converged but missed the bound; the
    // archive does not distinguish the two.
    r.nonconverged_images = r.exception_images;
    r.convergence_fraction = 1.0 - static_cast<double>(r.exception_images) / n;
    r.notes["tau"] = std::to_string(pre.tau);
    r.notes["lambda_precision"] = to_string(precision);

    ev.qoi_gate = qoi_gate_for(precision);
    ev.pd_gate_passed = r.max_image_nrmse() <= pre.tau;
    ev.qoi_gate_passed = r.max_qoi_nrmse <= ev.qoi_gate;
    return ev;
}

std::vector<TimestepReport> run_timesteps(const std::vector<FDataset>& datasets, const PipelineConfig& config) {
    if (datasets.empty()) throw InvalidArgument("run_timesteps needs at least one dataset");
    TimestepState state;
    std::vector<TimestepReport> out;
    out.reserve(datasets.size());
    for (const auto& ds : datasets) {
        auto res = compress(ds, config, &state);
        out.push_back({ds.timestep, res.training, std::move(res.report)});
    }
    return out;
}

}  // namespace mlk
