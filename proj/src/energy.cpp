#include "neuralfuse/energy.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "neuralfuse/errors.hpp"

namespace nf {
namespace {

int64_t ceil_div(int64_t a, int64_t b) { return (a + b - 1) / b; }

// Output spatial pixel count; deconvs fold over their input map because the
// simulator-style approximation replays them as swapped stride-1 convs.
int64_t fold_pixels(const Graph& g, const Node& node) {
    if (node.spec.kind == LayerKind::linear) return 1;
    const std::vector<int>& shape =
        node.spec.kind == LayerKind::deconv2d
            ? (node.inputs[0] < 0 ? g.input_shape()
                                  : g.node(node.inputs[0]).shape)
            : node.shape;
    return static_cast<int64_t>(shape[1]) * shape[2];
}

int64_t filter_volume(const LayerSpec& s) {
    if (s.kind == LayerKind::linear)
        return static_cast<int64_t>(s.in_features) * s.out_features;
    return static_cast<int64_t>(s.kernel) * s.kernel * s.in_channels *
           s.out_channels;
}

}  // namespace

void ArrayConfig::validate() const {
    if (rows < 1 || cols < 1)
        throw ArgumentError("array rows and cols must be >= 1");
    if (sram_bytes < 1) throw ArgumentError("sram_bytes must be >= 1");
}

int64_t count_twma(const Graph& g, const ArrayConfig& array) {
    array.validate();
    int64_t total = 0;
    for (const Node& node : g.nodes()) {
        if (!has_weights(node.spec.kind)) continue;
        total += filter_volume(node.spec) *
                 ceil_div(fold_pixels(g, node), array.rows);
    }
    return total;
}

int64_t count_macs(const Graph& g) {
    int64_t total = 0;
    for (const Node& node : g.nodes()) {
        const LayerSpec& s = node.spec;
        if (!has_weights(s.kind)) continue;
        if (s.kind == LayerKind::linear) {
            total += static_cast<int64_t>(s.in_features) * s.out_features;
        } else {
            // conv and deconv both count on the produced output map
            total += static_cast<int64_t>(s.kernel) * s.kernel *
                     s.in_channels * s.out_channels * node.shape[1] *
                     node.shape[2];
        }
    }
    return total;
}

int64_t count_params(const Graph& g) {
    return g.param_count(/*trainable_only=*/true);
}

double energy_saving(double twma_base, double twma_nf, double r) {
    if (twma_base <= 0) throw ArgumentError("twma_base must be > 0");
    if (twma_nf < 0) throw ArgumentError("twma_nf must be >= 0");
    if (r <= 0 || r > 1) throw ArgumentError("energy ratio must be in (0, 1]");
    return (1.0 - r - twma_nf / twma_base) * 100.0;
}

double mac_energy_saving(double macs_base, double macs_nf, double r) {
    return energy_saving(macs_base, macs_nf, r);
}

double efficiency_ratio(double rp_percent, double params) {
    if (params <= 0) throw ArgumentError("params must be > 0");
    return rp_percent / (params / 1e6);
}

// ---------------------------------------------------------------------------
// Fixture table
// ---------------------------------------------------------------------------

const EnergyFixtureRow& EnergyFixture::at(const std::string& kind,
                                          const std::string& name) const {
    for (const EnergyFixtureRow& row : rows)
        if (row.kind == kind && row.name == name) return row;
    throw ArgumentError("no fixture row for " + kind + " '" + name + "'");
}

std::vector<std::string> EnergyFixture::names(const std::string& kind) const {
    std::vector<std::string> out;
    for (const EnergyFixtureRow& row : rows)
        if (row.kind == kind) out.push_back(row.name);
    return out;
}

EnergyFixture load_energy_fixture(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open fixture '" + path + "'");
    EnergyFixture fx;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        EnergyFixtureRow row;
        if (!(ss >> row.kind >> row.name >> row.twma >> row.macs >>
              row.params))
            throw FormatError("fixture '" + path + "' line " +
                              std::to_string(lineno) + ": expected 5 columns");
        if (row.kind != "base" && row.kind != "generator")
            throw FormatError("fixture '" + path + "' line " +
                              std::to_string(lineno) + ": unknown kind '" +
                              row.kind + "'");
        if (row.twma <= 0 || row.macs <= 0 || row.params <= 0)
            throw FormatError("fixture '" + path + "' line " +
                              std::to_string(lineno) +
                              ": counts must be positive");
        fx.rows.push_back(std::move(row));
    }
    if (fx.rows.empty())
        throw FormatError("fixture '" + path + "' holds no data rows");
    return fx;
}

EnergyReport make_energy_report(const EnergyFixtureRow& base,
                                const EnergyFixtureRow& gen, double r,
                                double rp_percent) {
    EnergyReport rep;
    rep.twma_base = static_cast<double>(base.twma);
    rep.twma_nf = static_cast<double>(gen.twma);
    rep.macs_base = base.macs;
    rep.macs_nf = gen.macs;
    rep.params_nf = gen.params;
    rep.r = r;
    rep.es = energy_saving(rep.twma_base, rep.twma_nf, r);
    rep.mac_es = mac_energy_saving(rep.macs_base, rep.macs_nf, r);
    rep.efficiency =
        efficiency_ratio(rp_percent, static_cast<double>(gen.params));
    return rep;
}

EnergyReport make_energy_report(const Graph& base, const Graph& gen, double r,
                                double rp_percent, const ArrayConfig& array) {
    EnergyFixtureRow b{"base", base.name(), count_twma(base, array),
                       static_cast<double>(count_macs(base)),
                       count_params(base)};
    EnergyFixtureRow n{"generator", gen.name(), count_twma(gen, array),
                       static_cast<double>(count_macs(gen)),
                       count_params(gen)};
    return make_energy_report(b, n, r, rp_percent);
}

}  // namespace nf
