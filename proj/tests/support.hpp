#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "ksim/knn.hpp"
#include "ksim/matrix.hpp"
#include "ksim/tape.hpp"

namespace ksim::testing {

inline constexpr double kFdStep = 1e-5;
inline constexpr double kFdRelTol = 1e-4;
inline constexpr int kFdTrials = 20;

inline Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Matrix m(rows, cols);
    for (double& v : m.values()) v = n(rng);
    return m;
}

/// Entries pushed at least `gap` away from zero, for ops with a kink there.
inline Matrix away_from_zero(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double gap = 0.05) {
    Matrix m = random_matrix(rng, rows, cols);
    for (double& v : m.values())
        if (std::abs(v) < gap) v = v < 0 ? v - gap : v + gap;
    return m;
}

/// |a - b| / max(|a|, |b|) in the L2 sense; 0 when both vanish.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double scale = std::sqrt(std::max(na, nb));
    return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

using TapeBuilder = std::function<NodeId(GradTape&, const std::vector<NodeId>&)>;

/// Records `build` on leaves holding `inputs`, contracts the output with a
/// random weight matrix, and compares the tape gradient of every input with
/// central differences. Returns the worst relative error over the inputs.
inline double tape_fd_error(const TapeBuilder& build, const std::vector<Matrix>& inputs, std::mt19937_64& rng) {
    auto evaluate = [&](const std::vector<Matrix>& xs, const Matrix* weight, std::vector<Matrix>* grads) {
        GradTape tape;
        std::vector<NodeId> leaves;
        for (const auto& x : xs) leaves.push_back(tape.leaf(x));
        const NodeId out = build(tape, leaves);
        const Matrix& v = tape.value(out);
        if (grads != nullptr) {
            const TapeGradients g = tape.backward(out, *weight);
            for (NodeId l : leaves) grads->push_back(g[l]);
        }
        double s = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) s += v.values()[i] * weight->values()[i];
        return s;
    };
    Matrix probe_shape;
    {
        GradTape tape;
        std::vector<NodeId> leaves;
        for (const auto& x : inputs) leaves.push_back(tape.leaf(x));
        const NodeId out = build(tape, leaves);
        probe_shape = tape.value(out);
    }
    const Matrix weight = random_matrix(rng, probe_shape.rows(), probe_shape.cols());
    std::vector<Matrix> analytic;
    evaluate(inputs, &weight, &analytic);

    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        std::vector<double> fd(inputs[k].size());
        for (std::size_t e = 0; e < inputs[k].size(); ++e) {
            std::vector<Matrix> plus = inputs, minus = inputs;
            plus[k].values()[e] += kFdStep;
            minus[k].values()[e] -= kFdStep;
            fd[e] = (evaluate(plus, &weight, nullptr) - evaluate(minus, &weight, nullptr)) / (2.0 * kFdStep);
        }
        worst = std::max(worst, relative_error(fd, analytic[k].values()));
    }
    return worst;
}

/// Central-difference gradient of a scalar function of a matrix.
inline Matrix numeric_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x) {
    Matrix g(x.rows(), x.cols());
    for (std::size_t e = 0; e < x.size(); ++e) {
        Matrix plus = x, minus = x;
        plus.values()[e] += kFdStep;
        minus.values()[e] -= kFdStep;
        g.values()[e] = (f(plus) - f(minus)) / (2.0 * kFdStep);
    }
    return g;
}

/// K nearest rows by a full stable sort of squared Euclidean distances.
inline std::vector<std::size_t> brute_force_neighbors(const Matrix& z, std::size_t anchor, std::size_t k) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t j = 0; j < z.rows(); ++j) {
        if (j == anchor) continue;
        double s = 0.0;
        for (std::size_t c = 0; c < z.cols(); ++c) s += (z(anchor, c) - z(j, c)) * (z(anchor, c) - z(j, c));
        d.emplace_back(s, j);
    }
    std::stable_sort(d.begin(), d.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back(d[i].second);
    return out;
}

/// Random batch; `ties` copies rows over others and snaps coordinates to a
/// coarse grid so equal distances are common.
inline Matrix knn_batch(std::mt19937_64& rng, std::size_t m, std::size_t dim, bool ties) {
    Matrix z = random_matrix(rng, m, dim);
    if (!ties) return z;
    for (double& v : z.values()) v = std::round(v);
    for (std::size_t i = 0; i < m / 3; ++i) {
        const std::size_t from = rng() % m, to = rng() % m;
        for (std::size_t c = 0; c < dim; ++c) z(to, c) = z(from, c);
    }
    return z;
}

}  // namespace ksim::testing
