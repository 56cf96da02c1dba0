#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace springid {

/// Invalid configuration or malformed input (CLI exit code 2).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Any numerical failure: divergence, non-finite gradients (CLI exit code 3).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SimulationDiverged : public NumericalError {
public:
    static constexpr std::size_t kNoEdge = static_cast<std::size_t>(-1);

    SimulationDiverged(std::size_t frame, std::size_t edge, const std::string& what)
        : NumericalError(describe(frame, edge, what)), frame_(frame), edge_(edge) {}

    std::size_t frame() const { return frame_; }
    std::size_t edge() const { return edge_; }

private:
    static std::string describe(std::size_t frame, std::size_t edge, const std::string& what) {
        std::string msg = "simulation diverged at frame " + std::to_string(frame);
        if (edge != kNoEdge) msg += " (edge " + std::to_string(edge) + ")";
        return msg + ": " + what;
    }

    std::size_t frame_;
    std::size_t edge_;
};

}  // namespace springid
