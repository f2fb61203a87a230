#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "ksim/matrix.hpp"
#include "ksim/parallel.hpp"

namespace ksim {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Positive and negative batch positions for one anchor.
struct Neighborhood {
    std::size_t anchor = 0;
    std::vector<std::size_t> positives;  // K nearest, closest first
    std::vector<std::size_t> negatives;  // everything else except the anchor, ascending
};

/// For each row of `ssl_batch` the K rows at smallest Euclidean distance
/// (excluding itself) become positives; ties go to the lower batch position.
/// Throws ConfigError unless 1 <= K <= rows - 1.
std::vector<Neighborhood> batch_neighborhoods(const Matrix& ssl_batch, std::size_t k,
                                              Execution exec = Execution::serial);

}  // namespace ksim
