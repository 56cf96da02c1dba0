#include "springid/cmaes.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>

#include "springid/errors.hpp"

namespace springid {

int CmaesSettings::resolved_population(std::size_t dimension) const {
    if (population > 0) return population;
    return 4 + static_cast<int>(std::floor(3.0 * std::log(static_cast<double>(std::max<std::size_t>(dimension, 1)))));
}

void CmaesSettings::validate(std::size_t dimension) const {
    if (dimension == 0) throw ConfigError("cmaes: empty decision vector");
    const int lambda = resolved_population(dimension);
    if (lambda < 4) throw ConfigError("cmaes: population must be at least 4");
    if (max_evaluations < lambda) throw ConfigError("cmaes: max_evaluations must be at least the population");
    if (!(sigma0 > 0.0)) throw ConfigError("cmaes: sigma0 must be positive");
    if (stall_generations < 1) throw ConfigError("cmaes: stall_generations must be positive");
}

namespace {

double checked(double f, double penalty) {
    if (std::isnan(f) || (std::isinf(f) && f < 0.0)) throw NumericalError("cmaes: objective returned a non-finite value");
    if (std::isinf(f)) throw NumericalError("cmaes: objective returned +inf; return the penalty value instead");
    return std::min(f, penalty);
}

}  // namespace

CmaesResult cmaes_minimize(const Objective& objective, const std::vector<double>& x0, const CmaesSettings& settings) {
    const std::size_t n = x0.size();
    settings.validate(n);
    const int lambda = settings.resolved_population(n);
    const int mu = lambda / 2;
    const double dn = static_cast<double>(n);

    Eigen::VectorXd weights(mu);
    for (int i = 0; i < mu; ++i) weights[i] = std::log(mu + 0.5) - std::log(i + 1.0);
    weights /= weights.sum();
    const double mueff = 1.0 / weights.squaredNorm();

    const double cc = (4.0 + mueff / dn) / (dn + 4.0 + 2.0 * mueff / dn);
    const double cs = (mueff + 2.0) / (dn + mueff + 5.0);
    const double c1 = 2.0 / ((dn + 1.3) * (dn + 1.3) + mueff);
    const double cmu = std::min(1.0 - c1, 2.0 * (mueff - 2.0 + 1.0 / mueff) / ((dn + 2.0) * (dn + 2.0) + mueff));
    const double damps = 1.0 + 2.0 * std::max(0.0, std::sqrt((mueff - 1.0) / (dn + 1.0)) - 1.0) + cs;
    const double chi_n = std::sqrt(dn) * (1.0 - 1.0 / (4.0 * dn) + 1.0 / (21.0 * dn * dn));

    Eigen::VectorXd mean = Eigen::Map<const Eigen::VectorXd>(x0.data(), static_cast<Eigen::Index>(n));
    double sigma = settings.sigma0;
    Eigen::MatrixXd cov = Eigen::MatrixXd::Identity(n, n);
    Eigen::MatrixXd basis = Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd scales = Eigen::VectorXd::Ones(n);
    Eigen::VectorXd path_sigma = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd path_cov = Eigen::VectorXd::Zero(n);

    std::mt19937_64 rng(settings.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    CmaesResult result;
    result.best_x = x0;
    result.best_f = checked(objective(x0), settings.penalty);
    result.initial_f = result.best_f;
    result.evaluations = 1;
    result.history.push_back(result.best_f);

    std::vector<std::vector<double>> candidates(lambda, std::vector<double>(n));
    std::vector<Eigen::VectorXd> steps(lambda);
    std::vector<double> values(lambda);
    std::vector<std::exception_ptr> failures(lambda);

    while (result.generations < settings.max_generations && result.evaluations + lambda <= settings.max_evaluations) {
        for (int k = 0; k < lambda; ++k) {
            Eigen::VectorXd z(n);
            for (std::size_t d = 0; d < n; ++d) z[d] = gauss(rng);
            steps[k] = basis * scales.cwiseProduct(z);
            const Eigen::VectorXd x = mean + sigma * steps[k];
            std::copy(x.data(), x.data() + n, candidates[k].begin());
        }

#pragma omp parallel for schedule(dynamic, 1)
        for (int k = 0; k < lambda; ++k) {
            try {
                values[k] = objective(candidates[k]);
            } catch (...) {
                failures[k] = std::current_exception();
            }
        }
        for (int k = 0; k < lambda; ++k) {
            if (failures[k]) std::rethrow_exception(failures[k]);
            values[k] = checked(values[k], settings.penalty);
        }
        result.evaluations += lambda;
        ++result.generations;

        std::vector<int> order(lambda);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return values[a] < values[b]; });
        if (values[order[0]] < result.best_f) {
            result.best_f = values[order[0]];
            result.best_x = candidates[order[0]];
        }
        result.history.push_back(result.best_f);

        Eigen::VectorXd step_mean = Eigen::VectorXd::Zero(n);
        for (int i = 0; i < mu; ++i) step_mean += weights[i] * steps[order[i]];
        mean += sigma * step_mean;

        // C^{-1/2} * step_mean = B D^{-1} B^T step_mean
        const Eigen::VectorXd whitened = basis * (basis.transpose() * step_mean).cwiseQuotient(scales);
        path_sigma = (1.0 - cs) * path_sigma + std::sqrt(cs * (2.0 - cs) * mueff) * whitened;
        const double ps_norm = path_sigma.norm();
        const double decay = 1.0 - std::pow(1.0 - cs, 2.0 * result.generations);
        const bool hsig = ps_norm / std::sqrt(decay) / chi_n < 1.4 + 2.0 / (dn + 1.0);
        path_cov = (1.0 - cc) * path_cov + (hsig ? std::sqrt(cc * (2.0 - cc) * mueff) : 0.0) * step_mean;

        Eigen::MatrixXd rank_mu = Eigen::MatrixXd::Zero(n, n);
        for (int i = 0; i < mu; ++i) rank_mu += weights[i] * steps[order[i]] * steps[order[i]].transpose();
        const double hsig_correction = hsig ? 0.0 : cc * (2.0 - cc);
        cov = (1.0 - c1 - cmu) * cov + c1 * (path_cov * path_cov.transpose() + hsig_correction * cov) + cmu * rank_mu;
        sigma *= std::exp((cs / damps) * (ps_norm / chi_n - 1.0));

        cov = 0.5 * (cov + cov.transpose());
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
        basis = eig.eigenvectors();
        scales = eig.eigenvalues().cwiseMax(1e-300).cwiseSqrt();

        const auto g = result.history.size() - 1;
        if (g >= static_cast<std::size_t>(settings.stall_generations)) {
            const double earlier = result.history[g - settings.stall_generations];
            if (earlier - result.best_f < settings.tolerance) break;
        }
        if (!(sigma * scales.maxCoeff() > 1e-300) || !std::isfinite(sigma)) break;
    }

    result.final_mean.assign(mean.data(), mean.data() + n);
    result.final_sigma = sigma;
    return result;
}

}  // namespace springid
