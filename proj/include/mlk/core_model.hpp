#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mlk {

/// Velocity-space grid shared by every histogram image.
///
/// Rows index perpendicular speed, columns index signed parallel velocity.
/// `vol` holds one positive quadrature weight per cell, row-major.
struct VelocityGrid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> v_perp;
    std::vector<double> v_par;
    std::vector<double> vol;
    double mass = 1.0;

    std::size_t cells() const { return rows * cols; }

    /// Throws InvalidArgument if any invariant is broken.
    void validate() const;

    friend bool operator==(const VelocityGrid&, const VelocityGrid&) = default;
};

/// Uniform grid with trapezoidal cell weights: v_perp in [0, v_perp_max],
/// v_par in [-v_par_max, v_par_max].
VelocityGrid make_grid(std::size_t rows, std::size_t cols, double v_perp_max, double v_par_max,
                       double mass);

/// Default 33x37 grid used throughout the tools and tests.
VelocityGrid default_grid();

/// Stack of histogram images laid out plane-major, node-major, row-major.
struct FDataset {
    std::size_t n_planes = 0;
    std::size_t n_nodes = 0;
    VelocityGrid grid;
    std::vector<double> data;
    std::int64_t timestep = 0;

    std::size_t image_size() const { return grid.cells(); }
    std::size_t n_images() const { return n_planes * n_nodes; }
    std::size_t image_index(std::size_t plane, std::size_t node) const { return plane * n_nodes + node; }

    std::span<const double> image(std::size_t index) const {
        return {data.data() + index * image_size(), image_size()};
    }
    std::span<double> image(std::size_t index) { return {data.data() + index * image_size(), image_size()}; }
    std::span<const double> image(std::size_t plane, std::size_t node) const {
        return image(image_index(plane, node));
    }
    std::span<double> image(std::size_t plane, std::size_t node) { return image(image_index(plane, node)); }

    /// Zero-filled dataset with the given shape.
    static FDataset zeros(std::size_t n_planes, std::size_t n_nodes, VelocityGrid grid);

    /// Checks shape consistency and non-negativity.
    void validate() const;

    friend bool operator==(const FDataset&, const FDataset&) = default;
};

/// Knobs of the bi-Maxwellian generator.
///
/// Node fields are low-frequency random sine series over the node index:
/// `modes` controls smoothness (more modes means rougher fields). Density is
/// log-normal around `density_scale`, temperatures log-normal around
/// `temperature`, flow is additive around zero.
struct SyntheticParams {
    int modes = 8;
    double density_scale = 2.0e18;
    double density_log_amplitude = 0.5;
    double flow_amplitude = 0.1;
    double temperature = 1.0;
    double temperature_log_amplitude = 0.1;
    /// Per-plane multiplicative perturbation amplitude, in [0, 1).
    double rho = 5e-4;
    /// Node-level multiplicative noise shared by all planes.
    double noise = 5e-4;
    /// Phase advance per timestep, used to build drifting sequences.
    double drift = 0.05;
    std::int64_t timestep = 0;
    std::uint64_t seed = 42;

    void validate() const;
};

/// Generating fields for every node; the moments of a noise-free image
/// converge to these values under grid refinement.
struct NodeFields {
    std::vector<double> density;
    std::vector<double> u_par;
    std::vector<double> t_perp;
    std::vector<double> t_par;
};

NodeFields synthetic_fields(std::size_t n_nodes, const SyntheticParams& params);

FDataset gen_synthetic(std::size_t n_planes, std::size_t n_nodes, const VelocityGrid& grid,
                       const SyntheticParams& params);

/// JSON manifest text for a dataset whose payload lives in `payload_name`.
std::string dataset_manifest(const FDataset& ds, const std::string& payload_name);

/// Writes `<base>.json` and `<base>.f64`. A trailing `.json` on `path` is ignored.
void save_dataset(const FDataset& ds, const std::filesystem::path& path);
FDataset load_dataset(const std::filesystem::path& path);

}  // namespace mlk
