#include "mlk/core_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "mlk/bytes.hpp"
#include "mlk/error.hpp"
#include "mlk/random.hpp"

namespace mlk {

namespace {

std::vector<double> linspace(double lo, double hi, std::size_t n) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i)
        v[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    return v;
}

double trapezoid_weight(std::size_t i, std::size_t n) { return (i == 0 || i + 1 == n) ? 0.5 : 1.0; }

// Random sine series over the node index, one draw of amplitudes per field.
std::vector<double> smooth_series(std::size_t n_nodes, int modes, double drift, std::int64_t timestep,
                                  Rng& rng) {
    std::vector<double> amp(static_cast<std::size_t>(modes));
    std::vector<double> phase(static_cast<std::size_t>(modes));
    for (int k = 0; k < modes; ++k) {
        amp[k] = rng.uniform(-1.0, 1.0) / static_cast<double>(k + 1);
        phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    std::vector<double> s(n_nodes, 0.0);
    const double t = static_cast<double>(timestep);
    for (std::size_t x = 0; x < n_nodes; ++x) {
        const double pos = static_cast<double>(x) / static_cast<double>(n_nodes);
        double acc = 0.0;
        for (int k = 0; k < modes; ++k) {
            const double kk = static_cast<double>(k + 1);
            acc += amp[k] * std::sin(2.0 * std::numbers::pi * kk * pos + phase[k] + drift * kk * t);
        }
        s[x] = acc;
    }
    return s;
}

std::filesystem::path strip_json(const std::filesystem::path& path) {
    auto base = path;
    if (base.extension() == ".json") base.replace_extension();
    return base;
}

}  // namespace

void VelocityGrid::validate() const {
    if (rows < 2 || cols < 2) throw InvalidArgument("velocity grid needs at least 2 rows and 2 cols");
    if (v_perp.size() != rows || v_par.size() != cols || vol.size() != rows * cols)
        throw InvalidArgument("velocity grid array sizes do not match its dimensions");
    if (!(mass > 0.0) || !std::isfinite(mass)) throw InvalidArgument("particle mass must be positive");
    if (!(v_perp[0] >= 0.0)) throw InvalidArgument("v_perp must be non-negative");
    for (std::size_t i = 1; i < rows; ++i)
        if (!(v_perp[i] > v_perp[i - 1])) throw InvalidArgument("v_perp must be strictly increasing");
    for (std::size_t i = 1; i < cols; ++i)
        if (!(v_par[i] > v_par[i - 1])) throw InvalidArgument("v_par must be strictly increasing");
    for (double w : vol)
        if (!(w > 0.0) || !std::isfinite(w)) throw InvalidArgument("cell volumes must be positive");
}

VelocityGrid make_grid(std::size_t rows, std::size_t cols, double v_perp_max, double v_par_max,
                       double mass) {
    if (rows < 2 || cols < 2) throw InvalidArgument("make_grid: rows and cols must be >= 2");
    if (!(v_perp_max > 0.0) || !(v_par_max > 0.0) || !(mass > 0.0))
        throw InvalidArgument("make_grid: velocity extents and mass must be positive");

    VelocityGrid g;
    g.rows = rows;
    g.cols = cols;
    g.mass = mass;
    g.v_perp = linspace(0.0, v_perp_max, rows);
    g.v_par = linspace(-v_par_max, v_par_max, cols);
    const double d_perp = v_perp_max / static_cast<double>(rows - 1);
    const double d_par = 2.0 * v_par_max / static_cast<double>(cols - 1);
    g.vol.resize(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            g.vol[r * cols + c] = trapezoid_weight(r, rows) * trapezoid_weight(c, cols) * d_perp * d_par;
    return g;
}

VelocityGrid default_grid() { return make_grid(33, 37, 7.0, 7.0, 1.0); }

FDataset FDataset::zeros(std::size_t n_planes, std::size_t n_nodes, VelocityGrid grid) {
    FDataset ds;
    ds.n_planes = n_planes;
    ds.n_nodes = n_nodes;
    ds.grid = std::move(grid);
    ds.data.assign(n_planes * n_nodes * ds.grid.cells(), 0.0);
    return ds;
}

void FDataset::validate() const {
    grid.validate();
    if (n_planes == 0 || n_nodes == 0) throw InvalidArgument("dataset needs at least one plane and node");
    if (data.size() != n_images() * image_size()) throw ShapeMismatch("dataset payload size does not match its shape");
    for (double v : data)
        if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidArgument("histogram values must be finite and >= 0");
}

void SyntheticParams::validate() const {
    if (modes < 1) throw InvalidArgument("synthetic: modes must be >= 1");
    if (!(rho >= 0.0 && rho < 1.0)) throw InvalidArgument("synthetic: rho must lie in [0, 1)");
    if (!(noise >= 0.0 && noise < 1.0)) throw InvalidArgument("synthetic: noise must lie in [0, 1)");
    if (!(density_scale > 0.0) || !(temperature > 0.0))
        throw InvalidArgument("synthetic: density and temperature scales must be positive");
    if (density_log_amplitude < 0.0 || flow_amplitude < 0.0 || temperature_log_amplitude < 0.0)
        throw InvalidArgument("synthetic: amplitudes must be >= 0");
}

NodeFields synthetic_fields(std::size_t n_nodes, const SyntheticParams& params) {
    params.validate();
    Rng rng(derive_seed(params.seed, 0));
    const auto sn = smooth_series(n_nodes, params.modes, params.drift, params.timestep, rng);
    const auto su = smooth_series(n_nodes, params.modes, params.drift, params.timestep, rng);
    const auto sp = smooth_series(n_nodes, params.modes, params.drift, params.timestep, rng);
    const auto sl = smooth_series(n_nodes, params.modes, params.drift, params.timestep, rng);

    NodeFields f;
    f.density.resize(n_nodes);
    f.u_par.resize(n_nodes);
    f.t_perp.resize(n_nodes);
    f.t_par.resize(n_nodes);
    for (std::size_t x = 0; x < n_nodes; ++x) {
        f.density[x] = params.density_scale * std::exp(params.density_log_amplitude * sn[x]);
        f.u_par[x] = params.flow_amplitude * su[x];
        f.t_perp[x] = params.temperature * std::exp(params.temperature_log_amplitude * sp[x]);
        f.t_par[x] = params.temperature * std::exp(params.temperature_log_amplitude * sl[x]);
    }
    return f;
}

FDataset gen_synthetic(std::size_t n_planes, std::size_t n_nodes, const VelocityGrid& grid,
                       const SyntheticParams& params) {
    grid.validate();
    params.validate();
    if (n_planes == 0 || n_nodes == 0) throw InvalidArgument("gen_synthetic: empty dataset shape");

    const NodeFields fields = synthetic_fields(n_nodes, params);
    FDataset ds = FDataset::zeros(n_planes, n_nodes, grid);
    ds.timestep = params.timestep;

    const std::size_t cells = grid.cells();
    const double m = grid.mass;
    const std::uint64_t step_seed = derive_seed(params.seed, 1000003ULL + static_cast<std::uint64_t>(params.timestep));
    std::vector<double> shape(cells);

    for (std::size_t x = 0; x < n_nodes; ++x) {
        const double n = fields.density[x];
        const double u = fields.u_par[x];
        const double tp = fields.t_perp[x];
        const double tl = fields.t_par[x];
        // Widths of 4T make the moment definitions return (n, u, T_perp, T_par).
        const double z = 2.0 * std::numbers::pi * std::sqrt(tp * tl) / m;

        Rng node_rng(derive_seed(step_seed, x));
        for (std::size_t r = 0; r < grid.rows; ++r) {
            for (std::size_t c = 0; c < grid.cols; ++c) {
                const double vp = grid.v_perp[r];
                const double dv = grid.v_par[c] - u;
                const double maxwellian = n / z * std::exp(-m * vp * vp / (4.0 * tp) - m * dv * dv / (4.0 * tl));
                const double xi = node_rng.uniform(-1.0, 1.0);
                shape[r * grid.cols + c] = maxwellian * (1.0 + params.noise * xi);
            }
        }
        for (std::size_t p = 0; p < n_planes; ++p) {
            auto img = ds.image(p, x);
            Rng plane_rng(derive_seed(step_seed, (static_cast<std::uint64_t>(p + 1) << 40) | x));
            for (std::size_t j = 0; j < cells; ++j) {
                const double eta = plane_rng.uniform(-1.0, 1.0);
                img[j] = std::max(0.0, shape[j] * (1.0 + params.rho * eta));
            }
        }
    }
    return ds;
}

std::string dataset_manifest(const FDataset& ds, const std::string& payload_name) {
    nlohmann::json j;
    j["format"] = "mlk-fdata";
    j["version"] = 1;
    j["endianness"] = "little";
    j["dtype"] = "f64";
    j["order"] = "plane,node,row,col";
    j["n_planes"] = ds.n_planes;
    j["n_nodes"] = ds.n_nodes;
    j["rows"] = ds.grid.rows;
    j["cols"] = ds.grid.cols;
    j["mass"] = ds.grid.mass;
    j["v_perp"] = ds.grid.v_perp;
    j["v_par"] = ds.grid.v_par;
    j["vol"] = ds.grid.vol;
    j["timestep"] = ds.timestep;
    j["payload"] = payload_name;
    j["payload_bytes"] = ds.data.size() * sizeof(double);
    return j.dump(2);
}

void save_dataset(const FDataset& ds, const std::filesystem::path& path) {
    const auto base = strip_json(path);
    auto manifest_path = base;
    manifest_path += ".json";
    auto payload_path = base;
    payload_path += ".f64";

    Bytes payload;
    payload.reserve(ds.data.size() * sizeof(double));
    ByteWriter w(payload);
    for (double v : ds.data) w.f64(v);

    std::ofstream pf(payload_path, std::ios::binary);
    if (!pf) throw IoError("cannot open " + payload_path.string() + " for writing");
    pf.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (!pf) throw IoError("failed writing " + payload_path.string());

    std::ofstream mf(manifest_path);
    if (!mf) throw IoError("cannot open " + manifest_path.string() + " for writing");
    mf << dataset_manifest(ds, payload_path.filename().string()) << '\n';
    if (!mf) throw IoError("failed writing " + manifest_path.string());
}

FDataset load_dataset(const std::filesystem::path& path) {
    const auto base = strip_json(path);
    auto manifest_path = base;
    manifest_path += ".json";

    std::ifstream mf(manifest_path);
    if (!mf) throw IoError("cannot open " + manifest_path.string());
    nlohmann::json j;
    try {
        mf >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad dataset manifest: " + std::string(e.what()));
    }

    FDataset ds;
    try {
        if (j.at("format") != "mlk-fdata") throw FormatError("not an mlk-fdata manifest");
        if (j.at("endianness") != "little" || j.at("dtype") != "f64")
            throw FormatError("unsupported payload encoding");
        ds.n_planes = j.at("n_planes").get<std::size_t>();
        ds.n_nodes = j.at("n_nodes").get<std::size_t>();
        ds.grid.rows = j.at("rows").get<std::size_t>();
        ds.grid.cols = j.at("cols").get<std::size_t>();
        ds.grid.mass = j.at("mass").get<double>();
        ds.grid.v_perp = j.at("v_perp").get<std::vector<double>>();
        ds.grid.v_par = j.at("v_par").get<std::vector<double>>();
        ds.grid.vol = j.at("vol").get<std::vector<double>>();
        ds.timestep = j.at("timestep").get<std::int64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad dataset manifest: " + std::string(e.what()));
    }
    ds.grid.validate();

    const auto payload_path = manifest_path.parent_path() / j.at("payload").get<std::string>();
    std::ifstream pf(payload_path, std::ios::binary);
    if (!pf) throw IoError("cannot open " + payload_path.string());
    Bytes payload((std::istreambuf_iterator<char>(pf)), std::istreambuf_iterator<char>());

    const std::size_t expected = ds.n_images() * ds.grid.cells() * sizeof(double);
    if (payload.size() != expected || j.at("payload_bytes").get<std::size_t>() != expected)
        throw FormatError("dataset payload size mismatch: expected " + std::to_string(expected) + " bytes, found " +
                          std::to_string(payload.size()));

    ds.data.resize(ds.n_images() * ds.grid.cells());
    ByteReader r(payload);
    for (double& v : ds.data) v = r.f64();
    return ds;
}

}  // namespace mlk
