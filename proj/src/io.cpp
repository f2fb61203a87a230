#include "ksim/io.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace ksim {

namespace {

class Writer {
public:
    explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw IoError("cannot open " + path.string() + " for writing");
    }
    void bytes(const char* p, std::size_t n) { out_.write(p, static_cast<std::streamsize>(n)); }
    template <typename T>
    void le(T v) {
        std::array<char, sizeof(T)> buf{};
        auto u = std::bit_cast<std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                                  std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>>(v);
        for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<char>((u >> (8 * i)) & 0xff);
        bytes(buf.data(), buf.size());
    }
    void finish(const std::filesystem::path& path) {
        out_.flush();
        if (!out_) throw IoError("write failed for " + path.string());
    }

private:
    std::ofstream out_;
};

class Reader {
public:
    explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw IoError("cannot open " + path.string());
    }
    void bytes(char* p, std::size_t n) {
        in_.read(p, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) throw FormatError(path_.string() + ": truncated file");
    }
    template <typename U>
    U le() {
        std::array<unsigned char, sizeof(U)> buf{};
        bytes(reinterpret_cast<char*>(buf.data()), buf.size());
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(buf[i]) << (8 * i));
        return v;
    }
    void expect_header(const char (&magic)[5]) {
        char got[4];
        bytes(got, 4);
        if (std::memcmp(got, magic, 4) != 0) throw FormatError(path_.string() + ": bad magic, expected " + magic);
        const auto version = le<std::uint32_t>();
        if (version != kFormatVersion)
            throw FormatError(path_.string() + ": unsupported version " + std::to_string(version));
    }
    void expect_end() {
        if (in_.peek() != std::char_traits<char>::eof()) throw FormatError(path_.string() + ": trailing bytes");
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::ifstream in_;
};

}  // namespace

void write_matrix_file(const std::filesystem::path& path, const Matrix& m) {
    Writer w(path);
    w.bytes("FSKE", 4);
    w.le<std::uint32_t>(kFormatVersion);
    w.le<std::uint64_t>(m.rows());
    w.le<std::uint64_t>(m.cols());
    for (double v : m.values()) w.le<float>(static_cast<float>(v));
    w.finish(path);
}

Matrix read_matrix_file(const std::filesystem::path& path) {
    Reader r(path);
    r.expect_header("FSKE");
    const auto rows = r.le<std::uint64_t>();
    const auto cols = r.le<std::uint64_t>();
    const auto expected = std::filesystem::file_size(path);
    if (cols != 0 && rows > (expected / 4) / cols) throw FormatError(path.string() + ": truncated file");
    if (expected < 24 || (expected - 24) / 4 < rows * cols) throw FormatError(path.string() + ": truncated file");
    std::vector<double> data(rows * cols);
    for (double& v : data) {
        const float f = std::bit_cast<float>(r.le<std::uint32_t>());
        if (!std::isfinite(f)) throw FormatError(path.string() + ": non-finite entry");
        v = f;
    }
    r.expect_end();
    return Matrix(rows, cols, std::move(data));
}

void write_label_file(const std::filesystem::path& path, const LabelFile& labels) {
    Writer w(path);
    w.bytes("FSKL", 4);
    w.le<std::uint32_t>(kFormatVersion);
    w.le<std::uint64_t>(labels.labels.size());
    w.le<std::uint32_t>(static_cast<std::uint32_t>(labels.num_classes));
    for (Label l : labels.labels) w.le<std::uint16_t>(l);
    w.finish(path);
}

LabelFile read_label_file(const std::filesystem::path& path) {
    Reader r(path);
    r.expect_header("FSKL");
    const auto rows = r.le<std::uint64_t>();
    LabelFile out;
    out.num_classes = r.le<std::uint32_t>();
    const auto size = std::filesystem::file_size(path);
    if (size < 20 || (size - 20) / 2 < rows) throw FormatError(path.string() + ": truncated file");
    out.labels.resize(rows);
    for (Label& l : out.labels) {
        l = r.le<std::uint16_t>();
        if (l >= out.num_classes) throw FormatError(path.string() + ": class id out of range");
    }
    r.expect_end();
    return out;
}

EmbeddingStore load_embeddings(const std::filesystem::path& path, std::optional<std::size_t> expected_rows) {
    const Matrix raw = read_matrix_file(path);
    if (expected_rows && raw.rows() != *expected_rows)
        throw AlignmentError(path.string() + ": " + std::to_string(raw.rows()) + " embedding rows, dataset has " +
                             std::to_string(*expected_rows));
    return EmbeddingStore::from_raw(raw, EmbeddingSource::file);
}

Dataset load_dataset(const std::filesystem::path& features_path, const std::filesystem::path& labels_path,
                     const std::optional<std::filesystem::path>& noisy_labels_path, Split split) {
    Matrix features = read_matrix_file(features_path);
    LabelFile clean = read_label_file(labels_path);
    if (clean.labels.size() != features.rows())
        throw AlignmentError(labels_path.string() + ": " + std::to_string(clean.labels.size()) +
                             " labels for " + std::to_string(features.rows()) + " feature rows");
    Dataset d = Dataset::make(std::move(features), std::move(clean.labels), clean.num_classes, split);
    if (noisy_labels_path) {
        LabelFile noisy = read_label_file(*noisy_labels_path);
        if (noisy.num_classes != d.num_classes)
            throw FormatError(noisy_labels_path->string() + ": class count differs from clean labels");
        if (noisy.labels.size() != d.size())
            throw AlignmentError(noisy_labels_path->string() + ": label count differs from clean labels");
        d.set_noisy_labels(std::move(noisy.labels));
    }
    d.validate();
    return d;
}

}  // namespace ksim
