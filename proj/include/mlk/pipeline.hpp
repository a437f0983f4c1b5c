#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mlk/autoencoder.hpp"
#include "mlk/container.hpp"
#include "mlk/core_model.hpp"
#include "mlk/decomp.hpp"
#include "mlk/lagrange.hpp"
#include "mlk/qoi_metrics.hpp"

namespace mlk {

enum class CompressionScheme : std::uint8_t { autoencoder = 0, residual_only = 1 };

struct PipelineConfig {
    /// Execution threads. Never affects archive bytes.
    std::size_t workers = 1;
    /// Number of shards the dataset is cut into.
    std::size_t shards = 8;
    DecompMode mode = DecompMode::column;
    SelectionScheme selection = SelectionScheme::colrandind;
    CompressionScheme scheme = CompressionScheme::autoencoder;
    double tau = 1e-3;
    /// The residual bound search aims at eb_margin * tau, leaving room for
    /// the error the projection adds afterwards.
    double eb_margin = 0.5;
    std::size_t latent_dim = 4;
    int pq_bits = 4;
    LambdaPrecision lambda_precision = LambdaPrecision::f32;
    int epochs_full = 100;
    int epochs_incremental = 2;
    std::size_t batch_size = 128;
    double learning_rate = 1e-3;
    /// Full training every K timesteps, incremental otherwise.
    int retrain_period = 25;
    /// Train once and freeze the model for later timesteps.
    bool static_model = false;
    NewtonOptions newton;
    /// Second projection attempt for stragglers with a small step.
    bool retry_small_step = false;
    double retry_step = 0.01;
    int retry_max_iter = 400;
    std::uint64_t seed = 42;

    void validate() const;
    nlohmann::json to_json() const;
    static PipelineConfig from_json(const nlohmann::json& j);
    /// Digest of every field that influences archive contents.
    std::uint64_t digest() const;
};

enum class TrainingMode { full, incremental, frozen, none };
std::string to_string(TrainingMode mode);

/// Per-shard models carried between timesteps of one session.
struct TimestepState {
    std::vector<std::optional<AEModel>> models;
    std::size_t timestep_counter = 0;
};

struct ShardStats {
    std::size_t worker_id = 0;
    std::size_t n_images = 0;
    std::size_t training_images = 0;
    TrainingMode training = TrainingMode::none;
    double final_train_loss = 0.0;
    std::size_t residual_images = 0;
    double eb = 0.0;
    bool lossless_residuals = false;
    std::size_t exception_images = 0;
    std::size_t nonconverged_images = 0;
    std::size_t pd_fallback_images = 0;
    std::size_t empty_images = 0;
    int max_newton_iterations = 0;
    std::uint64_t blob_bytes = 0;
    std::map<std::string, double> timings;

    nlohmann::json to_json() const;
};

struct CompressResult {
    Archive archive;
    Bytes bytes;
    ErrorReport report;
    std::vector<ShardStats> shards;
    TrainingMode training = TrainingMode::none;
    /// Reconstruction the decoder will produce.
    FDataset recon;
};

CompressResult compress(const FDataset& ds, const PipelineConfig& config, TimestepState* state = nullptr);

FDataset decompress(const Archive& archive, std::size_t workers = 1);
FDataset decompress(std::span<const std::uint8_t> bytes, std::size_t workers = 1);

struct EvalResult {
    ErrorReport report;
    double qoi_gate = 0.0;
    bool pd_gate_passed = false;
    bool qoi_gate_passed = false;
    bool passed() const { return pd_gate_passed && qoi_gate_passed; }
    nlohmann::json to_json(bool include_per_image = false) const;
};

/// QoI gate implied by the stored lambda precision.
double qoi_gate_for(LambdaPrecision p);

/// Decompresses `archive_bytes` and compares against `orig`.
EvalResult evaluate(const FDataset& orig, std::span<const std::uint8_t> archive_bytes, std::size_t workers = 1);

/// Fills the error fields of a report from an original/reconstruction pair.
void fill_error_fields(ErrorReport& report, const FDataset& orig, const FDataset& recon, std::size_t workers);

struct TimestepReport {
    std::int64_t timestep = 0;
    TrainingMode training = TrainingMode::none;
    ErrorReport report;
};

std::vector<TimestepReport> run_timesteps(const std::vector<FDataset>& datasets, const PipelineConfig& config);

/// Bytes of the dataset in its on-disk form (payload plus manifest).
std::uint64_t original_size(const FDataset& ds);

}  // namespace mlk
