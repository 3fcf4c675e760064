#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "neuralfuse/graph.hpp"

namespace nf {

// Calibrated dynamic-energy-per-access ratio at the supply voltage that
// produces a 1% bit-error rate (about 30% cheaper than nominal). Matches
// the low-voltage anchor of VoltageCurve.
inline constexpr double kLowVoltageEnergyRatio = 0.6936;

// Weight-stationary accelerator geometry for the access counters.
struct ArrayConfig {
    int rows = 32;
    int cols = 32;
    int64_t sram_bytes = 262144;
    std::string dataflow = "output-stationary";

    void validate() const;
};

// Analytic estimate of total weight-memory accesses (SRAM filter reads)
// under output-stationary dataflow: each fold maps up to `cols` output
// channels across up to `rows` output pixels and re-reads its filters, so a
// conv contributes k^2 * Cin * Cout * ceil(Hout*Wout / rows). Linear layers
// count as 1x1 convs on a 1x1 output; deconvs are approximated by the
// swapped-in/out stride-1 conv (folds over the deconv's input pixels).
// This is a documented approximation, not a cycle-accurate replay; the
// shipped fixture table is authoritative for the published reference models.
int64_t count_twma(const Graph& g, const ArrayConfig& array = {});

// Multiply-accumulates per sample: conv k^2*Cin*Cout*Hout*Wout, linear
// in*out, deconv counted on its output map.
int64_t count_macs(const Graph& g);

// Trainable parameter count (the convention the generator tables use).
int64_t count_params(const Graph& g);

// Percent of total access energy saved by running the protected base model
// at low voltage (energy ratio r) while the transform itself runs at
// nominal voltage: ES = (1 - r - twma_nf / twma_base) * 100.
double energy_saving(double twma_base, double twma_nf, double r);

// Same arithmetic over MAC counts.
double mac_energy_saving(double macs_base, double macs_nf, double r);

// Recovered accuracy (percentage points) per million transform parameters.
double efficiency_ratio(double rp_percent, double params);

// ---------------------------------------------------------------------------
// Fixture-mode counters: reference TWMA / MAC / parameter values for the
// published base models and generator families, loaded from a tab-separated
// table (see data/fixtures/energy_reference.tsv).
// ---------------------------------------------------------------------------

struct EnergyFixtureRow {
    std::string kind;  // "base" | "generator"
    std::string name;
    int64_t twma = 0;
    double macs = 0;
    int64_t params = 0;
};

struct EnergyFixture {
    std::vector<EnergyFixtureRow> rows;

    const EnergyFixtureRow& at(const std::string& kind,
                               const std::string& name) const;
    std::vector<std::string> names(const std::string& kind) const;
};

EnergyFixture load_energy_fixture(const std::string& path);

struct EnergyReport {
    double twma_base = 0, twma_nf = 0;
    double macs_base = 0, macs_nf = 0;
    int64_t params_nf = 0;
    double r = 1.0;
    double es = 0;       // percent
    double mac_es = 0;   // percent
    double efficiency = 0;
};

// Combines one base model row and one generator row at energy ratio r;
// rp_percent (recovered accuracy) feeds the efficiency field.
EnergyReport make_energy_report(const EnergyFixtureRow& base,
                                const EnergyFixtureRow& gen, double r,
                                double rp_percent = 0.0);

// Graph-level variant using the analytic counters.
EnergyReport make_energy_report(const Graph& base, const Graph& gen, double r,
                                double rp_percent = 0.0,
                                const ArrayConfig& array = {});

}  // namespace nf
