#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <vector>

#include "ksim/data.hpp"
#include "ksim/matrix.hpp"

namespace ksim {

// Binary formats, little-endian:
//   FSKE: "FSKE", u32 version = 1, u64 rows, u64 cols, rows*cols float32 row-major
//   FSKL: "FSKL", u32 version = 1, u64 rows, u32 num_classes, rows u16 class ids

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A file could not be opened, read or written.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kFormatVersion = 1;

struct LabelFile {
    std::vector<Label> labels;
    std::size_t num_classes = 0;
};

/// Values are narrowed to float32 on write.
void write_matrix_file(const std::filesystem::path& path, const Matrix& m);
Matrix read_matrix_file(const std::filesystem::path& path);

void write_label_file(const std::filesystem::path& path, const LabelFile& labels);
LabelFile read_label_file(const std::filesystem::path& path);

/// Normalized store; `expected_rows` triggers an AlignmentError on mismatch.
EmbeddingStore load_embeddings(const std::filesystem::path& path, std::optional<std::size_t> expected_rows = {});

/// Features + clean labels, with an optional second label file of observed labels.
Dataset load_dataset(const std::filesystem::path& features_path, const std::filesystem::path& labels_path,
                     const std::optional<std::filesystem::path>& noisy_labels_path, Split split);

}  // namespace ksim
