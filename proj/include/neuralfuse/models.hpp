#pragma once

#include <string>
#include <vector>

#include "neuralfuse/graph.hpp"

namespace nf {

// Small classification backbones used as base models. All stay well under
// 100k parameters on 32x32 inputs and deliberately contain no batchnorm, so
// a train-mode pass over frozen weights computes exactly the inference
// function (required when backpropagating through a frozen base model).
//
// tiny-cnn-a: conv-relu-pool x2 + linear head.
// tiny-cnn-b: adds a residual block and wider trunk; a different topology
//             for cross-architecture transfer experiments.
// tiny-cnn-c: a 6-conv plain stack, 16 channels throughout. Depth compounds
//             weight corruption multiplicatively, so this variant loses far
//             more accuracy under bit errors than a or b at the same rate,
//             while the 16-channel trunk keeps enough redundancy that the
//             damage stays recoverable by an input transform. Use it when an
//             experiment needs a fault-sensitive base.
Graph tiny_cnn_a(const std::vector<int>& input_shape, int num_classes);
Graph tiny_cnn_b(const std::vector<int>& input_shape, int num_classes);
Graph tiny_cnn_c(const std::vector<int>& input_shape, int num_classes);

// Lookup by name ("tiny-cnn-a" | "tiny-cnn-b" | "tiny-cnn-c"); unknown
// name -> ArgumentError.
Graph build_base_model(const std::string& name,
                       const std::vector<int>& input_shape, int num_classes);
const std::vector<std::string>& base_model_names();

}  // namespace nf
