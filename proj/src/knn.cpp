#include "ksim/knn.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace ksim {

namespace {

Neighborhood neighborhood_of(const Matrix& z, std::size_t anchor, std::size_t k) {
    const std::size_t m = z.rows();
    std::vector<double> dist(m);
    auto a = z.row(anchor);
    for (std::size_t j = 0; j < m; ++j) {
        auto b = z.row(j);
        double s = 0.0;
        for (std::size_t d = 0; d < a.size(); ++d) {
            const double diff = a[d] - b[d];
            s += diff * diff;
        }
        dist[j] = s;
    }
    std::vector<std::size_t> order;
    order.reserve(m - 1);
    for (std::size_t j = 0; j < m; ++j)
        if (j != anchor) order.push_back(j);
    auto closer = [&](std::size_t x, std::size_t y) { return dist[x] < dist[y] || (dist[x] == dist[y] && x < y); };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), closer);

    Neighborhood n;
    n.anchor = anchor;
    n.positives.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    n.negatives.assign(order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
    std::sort(n.negatives.begin(), n.negatives.end());
    return n;
}

}  // namespace

std::vector<Neighborhood> batch_neighborhoods(const Matrix& ssl_batch, std::size_t k, Execution exec) {
    const std::size_t m = ssl_batch.rows();
    if (k < 1 || k + 1 > m)
        throw ConfigError("K = " + std::to_string(k) + " needs a batch of at least K + 1 rows, got " + std::to_string(m));
    std::vector<Neighborhood> out(m);
    if (exec == Execution::parallel) {
        const auto n = static_cast<long long>(m);
#pragma omp parallel for schedule(static)
        for (long long j = 0; j < n; ++j)
            out[static_cast<std::size_t>(j)] = neighborhood_of(ssl_batch, static_cast<std::size_t>(j), k);
    } else {
        for (std::size_t j = 0; j < m; ++j) out[j] = neighborhood_of(ssl_batch, j, k);
    }
    return out;
}

}  // namespace ksim
