#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mlk/container.hpp"
#include "mlk/core_model.hpp"
#include "mlk/error.hpp"
#include "mlk/kernels.hpp"
#include "mlk/pipeline.hpp"

namespace {

using nlohmann::json;

struct ConfigFlags {
    std::optional<std::string> config_path;
    std::optional<std::size_t> workers, shards, latent_dim;
    std::optional<std::string> mode, select, lambda_precision, distance;
    std::optional<double> tau, step_size;
    std::optional<int> pq_bits, epochs, retrain_period, max_iter;
    std::optional<std::uint64_t> seed;
    bool baseline = false;
    bool static_model = false;
    bool retry = false;

    void attach(CLI::App* app) {
        app->add_option("--config", config_path, "JSON file mirroring the pipeline config");
        app->add_option("--workers", workers, "Worker threads (does not change output)");
        app->add_option("--shards", shards, "Number of shards");
        app->add_option("--mode", mode, "Decomposition mode: row or col");
        app->add_option("--select", select, "Training selection scheme");
        app->add_option("--tau", tau, "Per-image NRMSE bound");
        app->add_option("--latent-dim", latent_dim, "Autoencoder bottleneck size");
        app->add_option("--pq-bits", pq_bits, "Bits per latent code: 4, 6 or 8");
        app->add_option("--lambda-precision", lambda_precision, "f32 or f64");
        app->add_option("--epochs", epochs, "Epochs for full training");
        app->add_option("--retrain-period", retrain_period, "Full training every K timesteps");
        app->add_option("--step-size", step_size, "Newton step size");
        app->add_option("--max-iter", max_iter, "Newton iteration limit");
        app->add_option("--distance", distance, "Projection distance: kl or l2");
        app->add_option("--seed", seed, "Random seed");
        app->add_flag("--baseline", baseline, "Residual-only baseline without the autoencoder");
        app->add_flag("--static-model", static_model, "Freeze the model after the first timestep");
        app->add_flag("--retry", retry, "Retry non-converged projections with a small step");
    }

    mlk::PipelineConfig build() const {
        json j = json::object();
        if (config_path) {
            std::ifstream in(*config_path);
            if (!in) throw mlk::IoError("cannot open config " + *config_path);
            j = json::parse(in);
        }
        if (workers) j["workers"] = *workers;
        if (shards) j["shards"] = *shards;
        if (mode) j["mode"] = *mode;
        if (select) j["select"] = *select;
        if (tau) j["tau"] = *tau;
        if (latent_dim) j["latent_dim"] = *latent_dim;
        if (pq_bits) j["pq_bits"] = *pq_bits;
        if (lambda_precision) j["lambda_precision"] = *lambda_precision;
        if (epochs) j["epochs_full"] = *epochs;
        if (retrain_period) j["retrain_period"] = *retrain_period;
        if (step_size) j["newton"]["step"] = *step_size;
        if (max_iter) j["newton"]["max_iter"] = *max_iter;
        if (distance) j["newton"]["distance"] = *distance;
        if (seed) j["seed"] = *seed;
        if (baseline) j["scheme"] = "residual";
        if (static_model) j["static_model"] = true;
        if (retry) j["retry_small_step"] = true;
        if (!j.contains("mode") && j.contains("select") &&
            mlk::is_row_scheme(mlk::parse_selection_scheme(j["select"].get<std::string>())))
            j["mode"] = "row";
        return mlk::PipelineConfig::from_json(j);
    }
};

void emit(const json& j, const std::string& out) {
    if (out.empty()) {
        std::cout << j.dump(2) << '\n';
        return;
    }
    std::ofstream f(out);
    if (!f) throw mlk::IoError("cannot open " + out + " for writing");
    f << j.dump(2) << '\n';
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Moment-preserving autoencoder compressor for velocity-space histograms"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "Generate a synthetic bi-Maxwellian dataset");
    std::size_t planes = 8, nodes = 4096, rows = 33, cols = 37;
    mlk::SyntheticParams sp;
    std::string gen_out;
    gen->add_option("--planes", planes, "Toroidal planes")->capture_default_str();
    gen->add_option("--nodes", nodes, "Mesh nodes per plane")->capture_default_str();
    gen->add_option("--rows", rows, "Histogram rows (v_perp)")->capture_default_str();
    gen->add_option("--cols", cols, "Histogram columns (v_par)")->capture_default_str();
    gen->add_option("--seed", sp.seed, "Random seed")->capture_default_str();
    gen->add_option("--rho", sp.rho, "Per-plane perturbation amplitude")->capture_default_str();
    gen->add_option("--noise", sp.noise, "Node-level noise amplitude")->capture_default_str();
    gen->add_option("--modes", sp.modes, "Sine modes in the node fields")->capture_default_str();
    gen->add_option("--timestep", sp.timestep, "Timestep index")->capture_default_str();
    gen->add_option("--out", gen_out, "Output base path (writes .json and .f64)")->required();

    // compress
    auto* comp = app.add_subcommand("compress", "Compress a dataset into an archive");
    ConfigFlags comp_flags;
    comp_flags.attach(comp);
    std::string comp_in, comp_archive, comp_report;
    bool comp_shards_detail = false;
    comp->add_option("input", comp_in, "Dataset manifest")->required();
    comp->add_option("archive", comp_archive, "Output archive (.mlk)")->required();
    comp->add_option("--out", comp_report, "Write the JSON report here instead of stdout");
    comp->add_flag("--shard-stats", comp_shards_detail, "Include per-shard statistics");

    // decompress
    auto* decomp = app.add_subcommand("decompress", "Reconstruct a dataset from an archive");
    std::string dec_in, dec_out;
    std::size_t dec_workers = 1;
    decomp->add_option("archive", dec_in, "Archive file")->required();
    decomp->add_option("output", dec_out, "Output base path")->required();
    decomp->add_option("--workers", dec_workers, "Worker threads");

    // eval
    auto* eval = app.add_subcommand("eval", "Decompress and compare against the original");
    std::string ev_orig, ev_archive, ev_out;
    std::size_t ev_workers = 1;
    bool ev_per_image = false;
    eval->add_option("original", ev_orig, "Original dataset manifest")->required();
    eval->add_option("archive", ev_archive, "Archive file")->required();
    eval->add_option("--workers", ev_workers, "Worker threads");
    eval->add_option("--out", ev_out, "Write the JSON report here instead of stdout");
    eval->add_flag("--per-image", ev_per_image, "Include per-image NRMSE values");

    // inspect
    auto* insp = app.add_subcommand("inspect", "Dump archive headers as JSON");
    std::string insp_in, insp_out;
    insp->add_option("archive", insp_in, "Archive file")->required();
    insp->add_option("--out", insp_out, "Output file");

    // bench
    auto* bench = app.add_subcommand("bench", "Generate, compress and evaluate a synthetic corpus");
    ConfigFlags bench_flags;
    bench_flags.attach(bench);
    std::size_t bench_planes = 8, bench_nodes = 4096;
    mlk::SyntheticParams bench_params;
    std::string bench_out;
    bench->add_option("--planes", bench_planes, "Toroidal planes")->capture_default_str();
    bench->add_option("--nodes", bench_nodes, "Mesh nodes per plane")->capture_default_str();
    bench->add_option("--rho", bench_params.rho, "Per-plane perturbation amplitude")->capture_default_str();
    bench->add_option("--noise", bench_params.noise, "Node-level noise amplitude")->capture_default_str();
    bench->add_option("--modes", bench_params.modes, "Sine modes in the node fields")->capture_default_str();
    bench->add_option("--density-amplitude", bench_params.density_log_amplitude, "Log-density amplitude")
        ->capture_default_str();
    bench->add_option("--flow-amplitude", bench_params.flow_amplitude, "Flow amplitude")->capture_default_str();
    bench->add_option("--temperature-amplitude", bench_params.temperature_log_amplitude, "Log-temperature amplitude")
        ->capture_default_str();
    bench->add_option("--out", bench_out, "Write the JSON report here instead of stdout");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            const auto grid = mlk::make_grid(rows, cols, 7.0, 7.0, 1.0);
            mlk::save_dataset(mlk::gen_synthetic(planes, nodes, grid, sp), gen_out);
            return 0;
        }
        if (*comp) {
            const auto cfg = comp_flags.build();
            const auto ds = mlk::load_dataset(comp_in);
            const auto res = mlk::compress(ds, cfg);
            mlk::write_file(comp_archive, res.bytes);
            auto j = res.report.to_json();
            j["config"] = cfg.to_json();
            if (comp_shards_detail)
                for (const auto& s : res.shards) j["shards"].push_back(s.to_json());
            emit(j, comp_report);
            return 0;
        }
        if (*decomp) {
            const auto bytes = mlk::read_file(dec_in);
            mlk::save_dataset(mlk::decompress(bytes, dec_workers), dec_out);
            return 0;
        }
        if (*eval) {
            const auto ds = mlk::load_dataset(ev_orig);
            const auto bytes = mlk::read_file(ev_archive);
            const auto res = mlk::evaluate(ds, bytes, ev_workers);
            emit(res.to_json(ev_per_image), ev_out);
            return res.passed() ? 0 : 2;
        }
        if (*insp) {
            emit(mlk::inspect_archive(mlk::read_file(insp_in)), insp_out);
            return 0;
        }
        if (*bench) {
            const auto cfg = bench_flags.build();
            mlk::SyntheticParams params = bench_params;
            params.seed = cfg.seed;
            auto t0 = std::chrono::steady_clock::now();
            const auto ds = mlk::gen_synthetic(bench_planes, bench_nodes, mlk::default_grid(), params);
            const double t_gen = seconds_since(t0);
            t0 = std::chrono::steady_clock::now();
            const auto res = mlk::compress(ds, cfg);
            const double t_comp = seconds_since(t0);
            t0 = std::chrono::steady_clock::now();
            const auto ev = mlk::evaluate(ds, res.bytes, cfg.workers);
            const double t_eval = seconds_since(t0);
            auto j = ev.to_json();
            j["stage_timings_max"] = res.report.stage_timings_max;
            j["stage_timings_sum"] = res.report.stage_timings_sum;
            j["wall_seconds"] = {{"generate", t_gen}, {"compress", t_comp}, {"evaluate", t_eval}};
            j["threads"] = mlk::kernels::max_threads();
            j["config"] = cfg.to_json();
            emit(j, bench_out);
            return ev.passed() ? 0 : 2;
        }
    } catch (const std::exception& e) {
        std::cerr << "mlk: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
