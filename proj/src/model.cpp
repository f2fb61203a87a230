#include "ksim/model.hpp"

#include <cmath>
#include <stdexcept>

#include "ksim/rng.hpp"

namespace ksim {

void MlpSpec::validate() const {
    if (input_dim == 0) throw std::invalid_argument("MlpSpec: input_dim must be >= 1");
    if (hidden_dims.empty()) throw std::invalid_argument("MlpSpec: at least one hidden layer is required");
    for (std::size_t h : hidden_dims)
        if (h == 0) throw std::invalid_argument("MlpSpec: hidden widths must be >= 1");
    if (num_classes < 2) throw std::invalid_argument("MlpSpec: num_classes must be >= 2");
}

ParamLayout layout_for(const MlpSpec& spec) {
    spec.validate();
    ParamLayout layout;
    std::size_t offset = 0;
    auto slice = [&](std::size_t in, std::size_t out) {
        LayerSlice s{in, out, offset, offset + in * out};
        offset += in * out + out;
        return s;
    };
    std::size_t in = spec.input_dim;
    for (std::size_t h : spec.hidden_dims) {
        layout.extractor.push_back(slice(in, h));
        in = h;
    }
    layout.extractor_size = offset;
    layout.head = slice(in, spec.num_classes);
    if (spec.adapter_dim > 0) layout.adapter = slice(in, spec.adapter_dim);
    layout.total = offset;
    return layout;
}

ModelParams ModelParams::zeros(const MlpSpec& spec) {
    ModelParams p;
    p.spec_ = spec;
    p.layout_ = layout_for(spec);
    p.flat_.assign(p.layout_.total, 0.0);
    return p;
}

ModelParams ModelParams::unflatten(const MlpSpec& spec, std::vector<double> flat) {
    ModelParams p = zeros(spec);
    if (flat.size() != p.flat_.size())
        throw DimensionError("unflatten", "expected " + std::to_string(p.flat_.size()) + " values, got " +
                                              std::to_string(flat.size()));
    p.flat_ = std::move(flat);
    return p;
}

bool ModelParams::all_finite() const {
    for (double v : flat_)
        if (!std::isfinite(v)) return false;
    return true;
}

Matrix ModelParams::weight(const LayerSlice& s) const {
    auto first = flat_.begin() + static_cast<std::ptrdiff_t>(s.weight_offset);
    return Matrix(s.in, s.out, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(s.in * s.out)));
}

Matrix ModelParams::bias(const LayerSlice& s) const {
    auto first = flat_.begin() + static_cast<std::ptrdiff_t>(s.bias_offset);
    return Matrix(1, s.out, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(s.out)));
}

ModelParams init_params(const MlpSpec& spec, std::uint64_t seed) {
    ModelParams p = ModelParams::zeros(spec);
    Rng rng = make_rng(seed, {tag(Stream::init)});
    auto fill = [&](const LayerSlice& s) {
        const double a = std::sqrt(6.0 / static_cast<double>(s.in + s.out));
        std::uniform_real_distribution<double> dist(-a, a);
        auto w = p.flat().subspan(s.weight_offset, s.in * s.out);
        for (double& v : w) v = dist(rng);
    };
    for (const auto& s : p.layout().extractor) fill(s);
    fill(p.layout().head);
    if (p.layout().adapter) fill(*p.layout().adapter);
    return p;
}

namespace {

void affine_inplace(Matrix& out, const Matrix& x, const ModelParams& p, const LayerSlice& s, bool relu) {
    out = matmul(x, p.weight(s));
    auto b = p.flat().subspan(s.bias_offset, s.out);
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto r = out.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) {
            r[j] += b[j];
            if (relu && !(r[j] > 0.0)) r[j] = 0.0;
        }
    }
}

}  // namespace

Matrix extract_features(const ModelParams& params, const Matrix& batch_x) {
    if (batch_x.cols() != params.spec().input_dim)
        throw DimensionError("forward", "input has " + std::to_string(batch_x.cols()) + " columns, model expects " +
                                            std::to_string(params.spec().input_dim));
    Matrix h = batch_x;
    Matrix next;
    for (const auto& s : params.layout().extractor) {
        affine_inplace(next, h, params, s, true);
        std::swap(h, next);
    }
    return h;
}

ForwardOutput forward(const ModelParams& params, const Matrix& batch_x) {
    ForwardOutput out;
    out.features = extract_features(params, batch_x);
    affine_inplace(out.logits, out.features, params, params.layout().head, false);
    return out;
}

Matrix apply_adapter(const ModelParams& params, const Matrix& features) {
    if (!params.layout().adapter) throw DimensionError("adapter", "model has no adapter layer");
    Matrix out;
    affine_inplace(out, features, params, *params.layout().adapter, false);
    return out;
}

TapedModel record_forward(GradTape& tape, const ModelParams& params, const Matrix& batch_x) {
    if (batch_x.cols() != params.spec().input_dim)
        throw DimensionError("forward", "input has " + std::to_string(batch_x.cols()) + " columns, model expects " +
                                            std::to_string(params.spec().input_dim));
    TapedModel t;
    t.input = tape.leaf(batch_x);
    auto layer = [&](NodeId x, const LayerSlice& s) {
        const NodeId w = tape.leaf(params.weight(s));
        const NodeId b = tape.leaf(params.bias(s));
        t.weights.push_back(w);
        t.biases.push_back(b);
        t.slices.push_back(s);
        t.layer_inputs.push_back(x);
        t.layer_outputs.push_back(tape.bias_add(tape.matmul(x, w), b));
        return t.layer_outputs.back();
    };
    NodeId h = t.input;
    for (const auto& s : params.layout().extractor) h = tape.relu(layer(h, s));
    t.features = h;
    t.logits = layer(h, params.layout().head);
    return t;
}

NodeId TapedModel::adapter(GradTape& tape, const ModelParams& params) {
    if (adapter_out_) return *adapter_out_;
    if (!params.layout().adapter) throw DimensionError("adapter", "model has no adapter layer");
    const LayerSlice& s = *params.layout().adapter;
    const NodeId w = tape.leaf(params.weight(s));
    const NodeId b = tape.leaf(params.bias(s));
    weights.push_back(w);
    biases.push_back(b);
    slices.push_back(s);
    layer_inputs.push_back(features);
    adapter_out_ = tape.bias_add(tape.matmul(features, w), b);
    layer_outputs.push_back(*adapter_out_);
    return *adapter_out_;
}

std::vector<double> collect_gradients(const TapedModel& taped, const TapeGradients& grads,
                                      const ParamLayout& layout) {
    std::vector<double> flat(layout.total, 0.0);
    for (std::size_t l = 0; l < taped.slices.size(); ++l) {
        const LayerSlice& s = taped.slices[l];
        const Matrix& gw = grads[taped.weights[l]];
        const Matrix& gb = grads[taped.biases[l]];
        std::copy(gw.values().begin(), gw.values().end(), flat.begin() + static_cast<std::ptrdiff_t>(s.weight_offset));
        std::copy(gb.values().begin(), gb.values().end(), flat.begin() + static_cast<std::ptrdiff_t>(s.bias_offset));
    }
    return flat;
}

}  // namespace ksim
