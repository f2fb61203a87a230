#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ksim/data.hpp"
#include "ksim/knn.hpp"
#include "ksim/matrix.hpp"
#include "ksim/model.hpp"
#include "ksim/tape.hpp"

namespace ksim {

enum class Method { fedavg_ce, ours, symce, logitclip, akd };

const char* to_string(Method m);
/// Accepts the names produced by to_string; throws ConfigError otherwise.
Method parse_method(const std::string& name);

struct LossConfig {
    Method method = Method::ours;
    double lambda = 3.0;
    double temperature = 0.3;
    std::size_t k = 4;
    double symce_alpha = 0.5;
    double symce_beta = 0.5;
    double rce_log_clamp = -4.0;  // log 0 replacement for the reverse term
    double logitclip_bound = 1.0;
    double akd_weight = 10.0;
    bool kcl_include_self = false;  // keep <z_j, z_j> in the contrastive denominator

    void validate() const;
};

/// Batch-mean loss and its gradient with respect to the loss input.
struct LossValue {
    double value = 0.0;
    Matrix grad;
};

// Standalone losses. Each returns the batch mean.

LossValue ce_loss(const Matrix& logits, std::span<const Label> labels);

/// InfoNCE over the classifier features: each anchor's K SSL-space neighbours
/// form the numerator, every other batch row the denominator. Features are
/// L2-normalized inside the loss, so similarities are cosines.
LossValue kcl_loss(const Matrix& features, const std::vector<Neighborhood>& neighborhoods, double temperature,
                   bool include_self = false);

/// alpha * CE + beta * RCE, log 0 in the one-hot target replaced by `log_clamp`.
LossValue symce_loss(const Matrix& logits, std::span<const Label> labels, double alpha, double beta,
                     double log_clamp = -4.0);

/// Rows with L2 norm above `bound` are rescaled to norm `bound`.
Matrix logitclip(const Matrix& logits, double bound);

/// CE on clipped logits; the gradient is with respect to the raw logits.
LossValue logitclip_ce_loss(const Matrix& logits, std::span<const Label> labels, double bound);

/// weight * mean |adapter_output - ssl| over all entries; gradient w.r.t. adapter_output.
LossValue akd_loss(const Matrix& adapter_output, const Matrix& ssl_batch, double weight);

struct CombinedValue {
    double value = 0.0;
    double ce = 0.0;
    double kcl = 0.0;
    Matrix grad_logits;
    Matrix grad_features;  // contrastive part only; CE reaches features through the head
};

/// CE + lambda * L_CL on a (logits, features) pair.
CombinedValue combined_loss(const Matrix& logits, const Matrix& features, std::span<const Label> labels,
                            const std::vector<Neighborhood>& neighborhoods, const LossConfig& cfg);

// Tape builders. Each appends nodes and returns a rows x 1 per-sample loss node.

NodeId record_ce(GradTape& tape, NodeId logits, std::span<const Label> labels);
NodeId record_kcl(GradTape& tape, NodeId features, const std::vector<Neighborhood>& neighborhoods,
                  double temperature, bool include_self);
NodeId record_symce(GradTape& tape, NodeId logits, std::span<const Label> labels, double alpha, double beta,
                    double log_clamp);
NodeId record_akd(GradTape& tape, NodeId adapter_output, const Matrix& ssl_batch, double weight);

/// Per-sample terms of a training objective recorded on a tape.
struct RecordedObjective {
    NodeId total = 0;                 // per-sample configured loss
    NodeId ce = 0;                    // per-sample CE on the (possibly clipped) logits
    std::optional<NodeId> regularizer;  // per-sample L_CL or AKD term, unweighted
};

/// The configured method's objective on top of a recorded model forward.
/// `ssl_batch` and `neighborhoods` are read only by the methods that need them.
RecordedObjective record_objective(GradTape& tape, TapedModel& model, const ModelParams& params,
                                   std::span<const Label> labels, const Matrix& ssl_batch,
                                   const std::vector<Neighborhood>& neighborhoods, const LossConfig& cfg);

/// Row i = d(loss_i)/d(logits_i) for the configured objective. The contrastive
/// and AKD terms do not read the logits, so this is the logit-layer gradient of
/// the full objective.
Matrix per_sample_logit_gradients(const Matrix& logits, std::span<const Label> labels, const LossConfig& cfg);

/// Per-sample CE values.
std::vector<double> per_sample_ce(const Matrix& logits, std::span<const Label> labels);

}  // namespace ksim
