#pragma once

// MTIO-Transformer viewport predictor: M stacked input trajectories, an
// attention encoder, a convolution + max-pool distillation stage and an
// autoregressive decoder whose last position feeds M output heads.

#include "mansy/autodiff.hpp"
#include "mansy/checkpoint.hpp"
#include "mansy/geometry.hpp"
#include "mansy/nn.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace mansy::vp {

struct PredictorConfig {
  int io_heads = 3;          ///< M: input/output head pairs
  int embed_dim = 512;       ///< d_e
  int attention_heads = 8;   ///< N_ah
  int key_dim = 64;          ///< d_k
  int value_dim = 64;        ///< d_v
  int blocks = 2;            ///< encoder and decoder depth
  int history_len = 5;       ///< samples per history window
  int horizon_len = 5;       ///< samples predicted autoregressively
  int ffn_width = 2048;

  void validate() const;
};

nlohmann::json to_json(const PredictorConfig& c);
PredictorConfig predictor_config_from_json(const nlohmann::json& j);

/// One predicted trajectory per output head.
struct PredictionSet {
  std::vector<Trajectory> trajectories;
};

/// softmax(Q K^T / sqrt(d_k)) V on plain matrices.
ad::Matrix<double> attention(const ad::Matrix<double>& q, const ad::Matrix<double>& k, const ad::Matrix<double>& v);

/// concat_j(Attention(xq Wq_j, xk Wk_j, xv Wv_j)) Wo, with the per-head
/// projections packed column-wise in "<prefix>.wq|wk|wv" and the output
/// projection in "<prefix>.wo". Inputs are segmented sequences of lq / lk rows.
template <typename T>
ad::Var<T> multi_head_attention(const Binder<T>& p, const std::string& prefix, ad::Var<T> xq, ad::Var<T> xk,
                                ad::Var<T> xv, int heads, Eigen::Index lq, Eigen::Index lk, bool causal = false) {
  const auto q = ad::matmul(xq, p(prefix + ".wq"));
  const auto k = ad::matmul(xk, p(prefix + ".wk"));
  const auto v = ad::matmul(xv, p(prefix + ".wv"));
  return ad::matmul(ad::attention(q, k, v, heads, lq, lk, causal), p(prefix + ".wo"));
}

/// Same-padded kernel-3 convolution ("<prefix>.w" is 3C x C) followed by
/// max-pooling (kernel 3, stride 2, padding 1). Segments of length 1 pass
/// through unchanged. `out_len` receives the distilled segment length.
template <typename T>
ad::Var<T> distill(const Binder<T>& p, const std::string& prefix, ad::Var<T> x, Eigen::Index seq_len,
                   Eigen::Index* out_len = nullptr) {
  if (seq_len <= 1) {
    if (out_len) *out_len = seq_len;
    return x;
  }
  const auto conv = ad::linear(ad::unfold_same(x, seq_len, 3), p(prefix + ".w"), p(prefix + ".b"));
  if (out_len) *out_len = ad::pooled_length(seq_len);
  return ad::max_pool_seq(conv, seq_len);
}

/// Sinusoidal positional encoding, `len` x `width`.
template <typename T>
ad::Matrix<T> positional_encoding(Eigen::Index len, Eigen::Index width);

struct ParamShape {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
};

/// Every parameter the model owns, in creation order.
std::vector<ParamShape> parameter_shapes(const PredictorConfig& c);

template <typename T>
class MtioTransformer {
 public:
  /// Called with (step, predicted normalised coordinates B x 2M); may modify
  /// the prediction, which then feeds later decoding steps as a constant.
  using StepHook = std::function<void(int, ad::Matrix<T>&)>;

  MtioTransformer(const PredictorConfig& config, const TileGrid& frame, std::uint64_t seed);

  const PredictorConfig& config() const { return config_; }
  const TileGrid& frame() const { return frame_; }
  std::uint64_t seed() const { return seed_; }
  ParameterStore<T>& parameters() { return params_; }
  const ParameterStore<T>& parameters() const { return params_; }

  /// Runs the network on a batch. `history` is (B*h) x 2M normalised
  /// coordinates: row b*h + s holds sample s of every head's history for batch
  /// item b. Returns `horizon_len` predictions, each B x 2M in [0,1].
  std::vector<ad::Var<T>> forward(const Binder<T>& p, const ad::Matrix<T>& history,
                                  const StepHook* hook = nullptr) const;

  /// Sum over heads, steps and batch of the periodic distance in pixels.
  /// `truth[j]` is B x 2M normalised ground truth for step j.
  ad::Var<T> loss(const std::vector<ad::Var<T>>& predictions, const std::vector<ad::Matrix<T>>& truth) const;

  /// Packs one history per head (M trajectories of length h) into row form.
  ad::Matrix<T> encode_histories(std::span<const Trajectory* const> histories) const;
  ad::Matrix<T> encode_targets(std::span<const Trajectory* const> futures, int step) const;

  /// Predicts `horizon_len` points per head from M histories.
  PredictionSet predict(std::span<const Trajectory> histories) const;

  /// Batched predict; `batch[b]` holds the M histories of item b.
  std::vector<PredictionSet> predict_batch(const std::vector<std::vector<const Trajectory*>>& batch,
                                           const StepHook* hook = nullptr) const;

  Checkpoint to_checkpoint() const;
  static MtioTransformer from_checkpoint(const Checkpoint& ckpt);

 private:
  ad::Var<T> encoder_block(const Binder<T>& p, int block, ad::Var<T> x, Eigen::Index len) const;
  ad::Var<T> decoder_block(const Binder<T>& p, int block, ad::Var<T> y, Eigen::Index len, ad::Var<T> memory,
                           Eigen::Index mem_len) const;
  ad::Var<T> feed_forward(const Binder<T>& p, const std::string& prefix, ad::Var<T> x) const;

  PredictorConfig config_;
  TileGrid frame_;
  std::uint64_t seed_ = 0;
  ParameterStore<T> params_;
};

/// Sum over heads and steps of wrap_distance(pred, truth).
double mtio_loss(const PredictionSet& pred, std::span<const Trajectory> truth, const TileGrid& grid);

/// Per-step arithmetic mean of the head predictions, then reduced into the
/// frame (x modulo width, y clamped). No seam-aware averaging.
Trajectory ensemble(const PredictionSet& pred, const TileGrid& grid);

struct ModelCost {
  std::size_t parameters = 0;
  double flops = 0.0;  ///< one inference: encoder, distillation, full autoregressive decode
};

ModelCost count_params_flops(const PredictorConfig& config);

extern template class MtioTransformer<float>;
extern template class MtioTransformer<double>;

}  // namespace mansy::vp
