#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ksim/matrix.hpp"
#include "ksim/tape.hpp"

namespace ksim {

/// Client classifier: hidden ReLU layers form the feature extractor, a linear
/// layer on top of the last hidden activation forms the head. An optional
/// linear adapter maps features into the SSL space (used by the AKD baseline).
struct MlpSpec {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_dims;
    std::size_t num_classes = 0;
    std::size_t adapter_dim = 0;  // 0 = no adapter

    std::size_t feature_dim() const { return hidden_dims.empty() ? 0 : hidden_dims.back(); }
    /// Throws std::invalid_argument on an unusable spec.
    void validate() const;

    friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

struct LayerSlice {
    std::size_t in = 0;
    std::size_t out = 0;
    std::size_t weight_offset = 0;  // in x out, row-major
    std::size_t bias_offset = 0;    // out
};

struct ParamLayout {
    std::vector<LayerSlice> extractor;
    LayerSlice head;
    std::optional<LayerSlice> adapter;
    std::size_t extractor_size = 0;  // params [0, extractor_size) belong to the feature extractor
    std::size_t total = 0;
};

ParamLayout layout_for(const MlpSpec& spec);

class ModelParams {
public:
    ModelParams() = default;
    static ModelParams zeros(const MlpSpec& spec);
    /// Throws DimensionError if `flat` does not match the spec's parameter count.
    static ModelParams unflatten(const MlpSpec& spec, std::vector<double> flat);

    const MlpSpec& spec() const { return spec_; }
    const ParamLayout& layout() const { return layout_; }
    std::span<const double> flat() const { return flat_; }
    std::span<double> flat() { return flat_; }
    std::vector<double> flatten() const { return flat_; }
    bool all_finite() const;

    Matrix weight(const LayerSlice& s) const;
    Matrix bias(const LayerSlice& s) const;

    friend bool operator==(const ModelParams& a, const ModelParams& b) {
        return a.spec_ == b.spec_ && a.flat_ == b.flat_;
    }

private:
    MlpSpec spec_;
    ParamLayout layout_;
    std::vector<double> flat_;
};

/// Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)); zero biases.
ModelParams init_params(const MlpSpec& spec, std::uint64_t seed);

struct ForwardOutput {
    Matrix features;  // post-activation output of the last hidden layer
    Matrix logits;    // head applied to the unnormalized features
};

ForwardOutput forward(const ModelParams& params, const Matrix& batch_x);

/// Extractor output only.
Matrix extract_features(const ModelParams& params, const Matrix& batch_x);

/// Adapter applied to features; requires spec().adapter_dim > 0.
Matrix apply_adapter(const ModelParams& params, const Matrix& features);

/// Handles to the nodes a forward pass recorded on a tape.
struct TapedModel {
    NodeId input = 0;
    NodeId features = 0;
    NodeId logits = 0;
    std::vector<NodeId> weights;  // extractor layers, then head, then adapter
    std::vector<NodeId> biases;
    std::vector<LayerSlice> slices;
    std::vector<NodeId> layer_inputs;   // per layer, the activation fed to its matmul
    std::vector<NodeId> layer_outputs;  // per layer, the pre-activation (after bias)

    /// Adapter output on `tape`; records the adapter layer on first use.
    NodeId adapter(GradTape& tape, const ModelParams& params);

private:
    std::optional<NodeId> adapter_out_;
};

TapedModel record_forward(GradTape& tape, const ModelParams& params, const Matrix& batch_x);

/// Flat gradient in the params' layout; slots of layers absent from the tape stay 0.
std::vector<double> collect_gradients(const TapedModel& taped, const TapeGradients& grads,
                                      const ParamLayout& layout);

}  // namespace ksim
