#pragma once

// (mu/mu_w, lambda) covariance matrix adaptation evolution strategy.

#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

namespace springid {

struct CmaesSettings {
    /// Offspring per generation; 0 selects 4 + floor(3 ln d).
    int population = 0;
    double sigma0 = 0.3;
    int max_evaluations = 3000;
    /// Generation cap independent of the evaluation budget.
    int max_generations = std::numeric_limits<int>::max();
    std::uint64_t seed = 0;
    /// Stop when the best value improved by less than this over `stall_generations`.
    double tolerance = 1e-10;
    int stall_generations = 20;
    /// Objective values at or above this are treated as failed evaluations.
    double penalty = 1e9;

    int resolved_population(std::size_t dimension) const;
    void validate(std::size_t dimension) const;
};

struct CmaesResult {
    std::vector<double> best_x;
    double best_f = std::numeric_limits<double>::infinity();
    double initial_f = std::numeric_limits<double>::infinity();
    /// Best-so-far after the initial point and after every generation.
    std::vector<double> history;
    std::vector<double> final_mean;
    double final_sigma = 0.0;
    int evaluations = 0;
    int generations = 0;
};

using Objective = std::function<double(const std::vector<double>&)>;

/// Minimizes `objective` starting from x0. Offspring of a generation are
/// evaluated concurrently and gathered in index order, so results do not depend
/// on the thread count. The objective must be safe to call concurrently.
CmaesResult cmaes_minimize(const Objective& objective, const std::vector<double>& x0, const CmaesSettings& settings);

}  // namespace springid
