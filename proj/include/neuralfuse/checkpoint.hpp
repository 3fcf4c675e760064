#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "neuralfuse/graph.hpp"
#include "neuralfuse/quant.hpp"

namespace nf {

// Architecture tag stored alongside generator weights so a checkpoint is
// self-describing: the family/scale rebuild the topology, the input shape
// pins what the generator was trained for.
struct GeneratorArch {
    std::string family;
    double scale = 1.0;
    std::vector<int> input_shape;  // [C, H, W]
};

// A fully materialized checkpoint: the rebuilt graph with parameters loaded,
// plus whichever optional sections the file carried.
struct Checkpoint {
    uint16_t version = 1;
    Graph graph;
    std::optional<QuantizedWeights> quantized;
    std::optional<GeneratorArch> generator;
    nlohmann::json extra;

    explicit Checkpoint(Graph g) : graph(std::move(g)) {}
};

// Writes "NFCK" + version + JSON manifest + f32 little-endian parameter
// blobs in manifest order, then the optional quantized-code section.
// Layout details: docs/checkpoint-format.md.
void save_checkpoint(const std::string& path, const Graph& graph,
                     const QuantizedWeights* quantized = nullptr,
                     const GeneratorArch* generator = nullptr,
                     const nlohmann::json& extra = nullptr);

// Rebuilds the graph from the manifest and loads every parameter. Any
// structural inconsistency or truncation raises FormatError naming the file.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace nf
