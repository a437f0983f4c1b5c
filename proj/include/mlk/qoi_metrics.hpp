#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mlk/core_model.hpp"

namespace mlk {

/// The four moments of one histogram. The ratio moments are meaningful only
/// when `defined()` (density strictly positive).
struct Qoi {
    double n = 0.0;
    double u_par = 0.0;
    double t_perp = 0.0;
    double t_par = 0.0;

    bool defined() const { return n > 0.0; }
    std::array<double, 4> as_array() const { return {n, u_par, t_perp, t_par}; }
};

inline constexpr std::array<const char*, 4> kQoiNames = {"n", "u_par", "t_perp", "t_par"};

Qoi compute_qoi(std::span<const double> image, const VelocityGrid& grid);

/// Per-image moments of a whole dataset, indexed like FDataset images.
struct QoISet {
    std::vector<Qoi> values;
};

QoISet compute_qoi_set(const FDataset& ds);

/// Root-mean-square error normalized by the value range of `reference`.
/// Throws DegenerateRange when the reference is constant and the arrays differ.
double nrmse(std::span<const double> reference, std::span<const double> approx);

struct QoiErrors {
    std::array<double, 4> nrmse{};
    double max = 0.0;
    std::size_t compared_nodes = 0;
};

/// NRMSE of each moment over all images whose original density is positive.
QoiErrors qoi_error_report(const FDataset& orig, const FDataset& recon);
QoiErrors qoi_errors(const QoISet& orig, const QoISet& recon);

double compression_ratio(std::uint64_t original_bytes, std::uint64_t archive_bytes);

/// Everything the evaluator reports about one compression run.
struct ErrorReport {
    double pd_nrmse = 0.0;
    std::vector<double> per_image_nrmse;
    std::array<double, 4> qoi_nrmse{};
    double max_qoi_nrmse = 0.0;
    double compression_ratio = 0.0;
    double ae_accuracy = 0.0;
    double residual_fraction = 0.0;
    double convergence_fraction = 0.0;
    std::uint64_t original_bytes = 0;
    std::uint64_t archive_bytes = 0;
    std::size_t n_images = 0;
    std::size_t residual_images = 0;
    std::size_t exception_images = 0;
    std::size_t nonconverged_images = 0;
    /// Stage name -> seconds, maximum over shards.
    std::map<std::string, double> stage_timings_max;
    /// Stage name -> seconds, summed over shards.
    std::map<std::string, double> stage_timings_sum;
    std::map<std::string, std::string> notes;

    double max_image_nrmse() const;
    double fraction_within(double tau) const;

    /// Serializes summary fields; the per-image array only when requested.
    nlohmann::json to_json(bool include_per_image = false) const;
};

}  // namespace mlk
