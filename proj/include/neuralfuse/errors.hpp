#pragma once

#include <stdexcept>
#include <string>

namespace nf {

// Error taxonomy used across the library. Everything derives from nf::Error
// so callers can catch the whole family at once.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid argument values (bad precision, out-of-range rates, ...).
class ArgumentError : public Error {
public:
    using Error::Error;
};

// Tensor/graph shape mismatches, detected at graph-build time or runtime.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Non-finite values encountered during a forward or backward pass.
class NumericError : public Error {
public:
    NumericError(const std::string& msg, int node_index)
        : Error(msg), node(node_index) {}
    int node = -1;
};

// API misuse (backward without a forward, unfinalized graph, ...).
class StateError : public Error {
public:
    using Error::Error;
};

// Malformed external files (datasets, checkpoints, fixtures, configs).
class FormatError : public Error {
public:
    using Error::Error;
};

}  // namespace nf
