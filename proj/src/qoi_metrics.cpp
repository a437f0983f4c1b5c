#include "mlk/qoi_metrics.hpp"

#include <algorithm>
#include <cmath>

#include "mlk/error.hpp"

namespace mlk {

Qoi compute_qoi(std::span<const double> image, const VelocityGrid& grid) {
    if (image.size() != grid.cells())
        throw ShapeMismatch("compute_qoi: image has " + std::to_string(image.size()) + " cells, grid has " +
                            std::to_string(grid.cells()));

    double n = 0.0, flux = 0.0, perp = 0.0;
    for (std::size_t r = 0; r < grid.rows; ++r) {
        const double vp2 = grid.v_perp[r] * grid.v_perp[r];
        for (std::size_t c = 0; c < grid.cols; ++c) {
            const std::size_t j = r * grid.cols + c;
            const double w = image[j] * grid.vol[j];
            n += w;
            flux += w * grid.v_par[c];
            perp += w * vp2;
        }
    }

    Qoi q;
    q.n = n;
    if (!(n > 0.0)) return q;
    q.u_par = flux / n;
    q.t_perp = 0.5 * grid.mass * perp / n;

    double par = 0.0;
    for (std::size_t r = 0; r < grid.rows; ++r) {
        for (std::size_t c = 0; c < grid.cols; ++c) {
            const std::size_t j = r * grid.cols + c;
            const double dv = grid.v_par[c] - q.u_par;
            par += image[j] * grid.vol[j] * dv * dv;
        }
    }
    q.t_par = 0.5 * grid.mass * par / n;
    return q;
}

QoISet compute_qoi_set(const FDataset& ds) {
    QoISet s;
    s.values.resize(ds.n_images());
    for (std::size_t i = 0; i < ds.n_images(); ++i) s.values[i] = compute_qoi(ds.image(i), ds.grid);
    return s;
}

double nrmse(std::span<const double> reference, std::span<const double> approx) {
    if (reference.size() != approx.size())
        throw ShapeMismatch("nrmse: length mismatch");
    if (reference.empty()) throw InvalidArgument("nrmse: empty input");

    // Neumaier-compensated sum keeps the result within a few ulps.
    double lo = reference[0], hi = reference[0], sq = 0.0, comp = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        lo = std::min(lo, reference[i]);
        hi = std::max(hi, reference[i]);
        const double d = reference[i] - approx[i];
        const double term = d * d;
        const double t = sq + term;
        comp += std::abs(sq) >= std::abs(term) ? (sq - t) + term : (term - t) + sq;
        sq = t;
    }
    sq += comp;
    const double rmse = std::sqrt(sq / static_cast<double>(reference.size()));
    const double range = hi - lo;
    if (range == 0.0) {
        if (sq == 0.0) return 0.0;
        throw DegenerateRange("nrmse: reference has zero range but arrays differ");
    }
    return rmse / range;
}

QoiErrors qoi_errors(const QoISet& orig, const QoISet& recon) {
    if (orig.values.size() != recon.values.size()) throw ShapeMismatch("qoi_errors: node count mismatch");

    std::array<std::vector<double>, 4> a, b;
    for (std::size_t i = 0; i < orig.values.size(); ++i) {
        if (!orig.values[i].defined()) continue;
        const auto x = orig.values[i].as_array();
        const auto y = recon.values[i].as_array();
        for (int k = 0; k < 4; ++k) {
            a[k].push_back(x[k]);
            b[k].push_back(y[k]);
        }
    }

    QoiErrors e;
    e.compared_nodes = a[0].size();
    if (e.compared_nodes == 0) return e;
    for (int k = 0; k < 4; ++k) {
        e.nrmse[k] = nrmse(a[k], b[k]);
        e.max = std::max(e.max, e.nrmse[k]);
    }
    return e;
}

QoiErrors qoi_error_report(const FDataset& orig, const FDataset& recon) {
    if (orig.n_planes != recon.n_planes || orig.n_nodes != recon.n_nodes || !(orig.grid == recon.grid))
        throw ShapeMismatch("qoi_error_report: dataset shapes differ");
    return qoi_errors(compute_qoi_set(orig), compute_qoi_set(recon));
}

double compression_ratio(std::uint64_t original_bytes, std::uint64_t archive_bytes) {
    if (archive_bytes == 0) throw InvalidArgument("compression_ratio: archive size is zero");
    return static_cast<double>(original_bytes) / static_cast<double>(archive_bytes);
}

double ErrorReport::max_image_nrmse() const {
    double m = 0.0;
    for (double v : per_image_nrmse) m = std::max(m, v);
    return m;
}

double ErrorReport::fraction_within(double tau) const {
    if (per_image_nrmse.empty()) return 1.0;
    const auto ok = std::count_if(per_image_nrmse.begin(), per_image_nrmse.end(), [&](double v) { return v <= tau; });
    return static_cast<double>(ok) / static_cast<double>(per_image_nrmse.size());
}

nlohmann::json ErrorReport::to_json(bool include_per_image) const {
    nlohmann::json j;
    j["pd_nrmse"] = pd_nrmse;
    j["max_image_nrmse"] = max_image_nrmse();
    nlohmann::json q;
    for (int k = 0; k < 4; ++k) q[kQoiNames[k]] = qoi_nrmse[k];
    j["qoi_nrmse"] = q;
    j["max_qoi_nrmse"] = max_qoi_nrmse;
    j["compression_ratio"] = compression_ratio;
    j["ae_accuracy"] = ae_accuracy;
    j["residual_fraction"] = residual_fraction;
    j["convergence_fraction"] = convergence_fraction;
    j["original_bytes"] = original_bytes;
    j["archive_bytes"] = archive_bytes;
    j["n_images"] = n_images;
    j["residual_images"] = residual_images;
    j["exception_images"] = exception_images;
    j["nonconverged_images"] = nonconverged_images;
    j["stage_timings_max"] = stage_timings_max;
    j["stage_timings_sum"] = stage_timings_sum;
    if (!notes.empty()) j["notes"] = notes;
    if (include_per_image) j["per_image_nrmse"] = per_image_nrmse;
    return j;
}

}  // namespace mlk
