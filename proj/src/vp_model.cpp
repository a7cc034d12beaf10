#include "mansy/vp_model.hpp"

#include <cmath>
#include <stdexcept>

namespace mansy::vp {

void PredictorConfig::validate() const {
  auto positive = [](int v, const char* what) {
    if (v < 1) throw std::invalid_argument(std::string("predictor config: ") + what + " must be >= 1");
  };
  positive(io_heads, "io_heads");
  positive(embed_dim, "embed_dim");
  positive(attention_heads, "attention_heads");
  positive(key_dim, "key_dim");
  positive(value_dim, "value_dim");
  positive(blocks, "blocks");
  positive(history_len, "history_len");
  positive(horizon_len, "horizon_len");
  positive(ffn_width, "ffn_width");
}

nlohmann::json to_json(const PredictorConfig& c) {
  return {{"io_heads", c.io_heads},       {"embed_dim", c.embed_dim}, {"attention_heads", c.attention_heads},
          {"key_dim", c.key_dim},         {"value_dim", c.value_dim}, {"blocks", c.blocks},
          {"history_len", c.history_len}, {"horizon_len", c.horizon_len}, {"ffn_width", c.ffn_width}};
}

PredictorConfig predictor_config_from_json(const nlohmann::json& j) {
  PredictorConfig c;
  c.io_heads = j.at("io_heads").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.attention_heads = j.at("attention_heads").get<int>();
  c.key_dim = j.at("key_dim").get<int>();
  c.value_dim = j.at("value_dim").get<int>();
  c.blocks = j.at("blocks").get<int>();
  c.history_len = j.at("history_len").get<int>();
  c.horizon_len = j.at("horizon_len").get<int>();
  c.ffn_width = j.at("ffn_width").get<int>();
  c.validate();
  return c;
}

ad::Matrix<double> attention(const ad::Matrix<double>& q, const ad::Matrix<double>& k, const ad::Matrix<double>& v) {
  if (q.cols() != k.cols()) throw std::invalid_argument("attention: Q and K key widths differ");
  if (k.rows() != v.rows()) throw std::invalid_argument("attention: K and V lengths differ");
  if (k.rows() == 0) throw std::invalid_argument("attention: empty key set");
  const ad::Matrix<double> scores = (q * k.transpose()) / std::sqrt(static_cast<double>(q.cols()));
  return ad::softmax_rows_value(scores) * v;
}

template <typename T>
ad::Matrix<T> positional_encoding(Eigen::Index len, Eigen::Index width) {
  ad::Matrix<T> pe(len, width);
  for (Eigen::Index pos = 0; pos < len; ++pos)
    for (Eigen::Index i = 0; i < width; ++i) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
      pe(pos, i) = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  return pe;
}

template ad::Matrix<float> positional_encoding<float>(Eigen::Index, Eigen::Index);
template ad::Matrix<double> positional_encoding<double>(Eigen::Index, Eigen::Index);

std::vector<ParamShape> parameter_shapes(const PredictorConfig& c) {
  const Eigen::Index d = c.embed_dim;
  const Eigen::Index io = 2 * c.io_heads;
  const Eigen::Index qk = static_cast<Eigen::Index>(c.attention_heads) * c.key_dim;
  const Eigen::Index vw = static_cast<Eigen::Index>(c.attention_heads) * c.value_dim;
  std::vector<ParamShape> s;
  auto attn = [&](const std::string& p) {
    s.push_back({p + ".wq", d, qk});
    s.push_back({p + ".wk", d, qk});
    s.push_back({p + ".wv", d, vw});
    s.push_back({p + ".wo", vw, d});
  };
  auto norm = [&](const std::string& p) {
    s.push_back({p + ".g", 1, d});
    s.push_back({p + ".b", 1, d});
  };
  auto ffn = [&](const std::string& p) {
    s.push_back({p + ".ffn1.w", d, c.ffn_width});
    s.push_back({p + ".ffn1.b", 1, c.ffn_width});
    s.push_back({p + ".ffn2.w", c.ffn_width, d});
    s.push_back({p + ".ffn2.b", 1, d});
  };

  s.push_back({"enc_in.w", io, d});
  s.push_back({"enc_in.b", 1, d});
  for (int l = 0; l < c.blocks; ++l) {
    const std::string p = "enc" + std::to_string(l);
    attn(p + ".attn");
    norm(p + ".ln1");
    ffn(p);
    norm(p + ".ln2");
  }
  s.push_back({"distill.w", 3 * d, d});
  s.push_back({"distill.b", 1, d});
  s.push_back({"dec_in.w", io, d});
  s.push_back({"dec_in.b", 1, d});
  for (int l = 0; l < c.blocks; ++l) {
    const std::string p = "dec" + std::to_string(l);
    attn(p + ".self");
    norm(p + ".ln1");
    attn(p + ".cross");
    norm(p + ".ln2");
    ffn(p);
    norm(p + ".ln3");
  }
  s.push_back({"out.w", d, io});
  s.push_back({"out.b", 1, io});
  return s;
}

namespace {
bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Per-head projections get their own seed so heads start out distinct.
template <typename T>
ad::Matrix<T> init_parameter(const ParamShape& shape, std::uint64_t seed, int io_heads) {
  if (ends_with(shape.name, ".g")) return ad::Matrix<T>::Ones(shape.rows, shape.cols);
  if (ends_with(shape.name, ".b")) return ad::Matrix<T>::Zero(shape.rows, shape.cols);
  const bool per_head_rows = shape.name == "enc_in.w" || shape.name == "dec_in.w";
  const bool per_head_cols = shape.name == "out.w";
  if (!per_head_rows && !per_head_cols) {
    std::mt19937_64 rng(derive_seed(seed, shape.name));
    return glorot<T>(shape.rows, shape.cols, rng);
  }
  const double limit = std::sqrt(6.0 / static_cast<double>(shape.rows + shape.cols));
  ad::Matrix<T> m(shape.rows, shape.cols);
  for (int h = 0; h < io_heads; ++h) {
    std::mt19937_64 rng(derive_seed(seed, shape.name + "/head" + std::to_string(h)));
    std::uniform_real_distribution<double> dist(-limit, limit);
    if (per_head_rows) {
      for (Eigen::Index r = 2 * h; r < 2 * h + 2; ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = static_cast<T>(dist(rng));
    } else {
      for (Eigen::Index c = 2 * h; c < 2 * h + 2; ++c)
        for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = static_cast<T>(dist(rng));
    }
  }
  return m;
}

template <typename T>
ad::Matrix<T> tile_rows(const ad::Matrix<T>& block, Eigen::Index times) {
  ad::Matrix<T> out(block.rows() * times, block.cols());
  for (Eigen::Index i = 0; i < times; ++i) out.middleRows(i * block.rows(), block.rows()) = block;
  return out;
}
}  // namespace

template <typename T>
MtioTransformer<T>::MtioTransformer(const PredictorConfig& config, const TileGrid& frame, std::uint64_t seed)
    : config_(config), frame_(frame), seed_(seed) {
  config_.validate();
  frame_.validate();
  for (const auto& shape : parameter_shapes(config_))
    params_.add(shape.name, init_parameter<T>(shape, seed_, config_.io_heads));
}

template <typename T>
ad::Var<T> MtioTransformer<T>::feed_forward(const Binder<T>& p, const std::string& prefix, ad::Var<T> x) const {
  return dense(p, prefix + ".ffn2", ad::relu(dense(p, prefix + ".ffn1", x)));
}

template <typename T>
ad::Var<T> MtioTransformer<T>::encoder_block(const Binder<T>& p, int block, ad::Var<T> x, Eigen::Index len) const {
  const std::string pre = "enc" + std::to_string(block);
  const auto a = multi_head_attention(p, pre + ".attn", x, x, x, config_.attention_heads, len, len);
  x = ad::layer_norm(ad::add(x, a), p(pre + ".ln1.g"), p(pre + ".ln1.b"));
  const auto f = feed_forward(p, pre, x);
  return ad::layer_norm(ad::add(x, f), p(pre + ".ln2.g"), p(pre + ".ln2.b"));
}

template <typename T>
ad::Var<T> MtioTransformer<T>::decoder_block(const Binder<T>& p, int block, ad::Var<T> y, Eigen::Index len,
                                             ad::Var<T> memory, Eigen::Index mem_len) const {
  const std::string pre = "dec" + std::to_string(block);
  const auto s = multi_head_attention(p, pre + ".self", y, y, y, config_.attention_heads, len, len, true);
  y = ad::layer_norm(ad::add(y, s), p(pre + ".ln1.g"), p(pre + ".ln1.b"));
  const auto c = multi_head_attention(p, pre + ".cross", y, memory, memory, config_.attention_heads, len, mem_len);
  y = ad::layer_norm(ad::add(y, c), p(pre + ".ln2.g"), p(pre + ".ln2.b"));
  const auto f = feed_forward(p, pre, y);
  return ad::layer_norm(ad::add(y, f), p(pre + ".ln3.g"), p(pre + ".ln3.b"));
}

template <typename T>
std::vector<ad::Var<T>> MtioTransformer<T>::forward(const Binder<T>& p, const ad::Matrix<T>& history,
                                                    const StepHook* hook) const {
  ad::Tape<T>& tape = p.tape();
  const Eigen::Index h = config_.history_len;
  const Eigen::Index io = 2 * config_.io_heads;
  if (history.cols() != io || history.rows() == 0 || history.rows() % h != 0)
    throw std::invalid_argument("MtioTransformer::forward: history must be (B*history_len) x 2M");
  const Eigen::Index batch = history.rows() / h;
  const Eigen::Index d = config_.embed_dim;

  auto x = ad::add(dense(p, "enc_in", tape.constant(history)),
                   tape.constant(tile_rows(positional_encoding<T>(h, d), batch)));
  for (int l = 0; l < config_.blocks; ++l) x = encoder_block(p, l, x, h);
  Eigen::Index mem_len = 0;
  const auto memory = distill(p, "distill", x, h, &mem_len);

  ad::Matrix<T> start(batch, io);
  for (Eigen::Index b = 0; b < batch; ++b) start.row(b) = history.row(b * h + h - 1);
  std::vector<ad::Var<T>> inputs{tape.constant(std::move(start))};
  std::vector<ad::Var<T>> predictions;
  for (int step = 0; step < config_.horizon_len; ++step) {
    const Eigen::Index len = static_cast<Eigen::Index>(inputs.size());
    auto y = ad::add(dense(p, "dec_in", ad::stack_time(inputs)),
                     tape.constant(tile_rows(positional_encoding<T>(len, d), batch)));
    for (int l = 0; l < config_.blocks; ++l) y = decoder_block(p, l, y, len, memory, mem_len);
    std::vector<Eigen::Index> last(static_cast<std::size_t>(batch));
    for (Eigen::Index b = 0; b < batch; ++b) last[static_cast<std::size_t>(b)] = b * len + len - 1;
    auto pred = ad::sigmoid(dense(p, "out", ad::gather_rows(y, std::move(last))));
    if (hook && *hook) {
      ad::Matrix<T> edited = pred.value();
      (*hook)(step, edited);
      if (edited != pred.value()) pred = tape.constant(std::move(edited));
    }
    predictions.push_back(pred);
    inputs.push_back(pred);
  }
  return predictions;
}

template <typename T>
ad::Var<T> MtioTransformer<T>::loss(const std::vector<ad::Var<T>>& predictions,
                                    const std::vector<ad::Matrix<T>>& truth) const {
  if (predictions.size() != truth.size() || predictions.empty())
    throw std::invalid_argument("MtioTransformer::loss: one target per predicted step required");
  const Eigen::Index io = 2 * config_.io_heads;
  const Eigen::Index batch = predictions.front().rows();
  ad::Tape<T>& tape = *predictions.front().tape;
  // Normalised error scaled back to pixels: x terms by W^2/2, y terms by H^2/2,
  // averaged over the batch.
  ad::Matrix<T> weight(batch, io);
  for (Eigen::Index c = 0; c < io; ++c) {
    const double extent = c % 2 == 0 ? frame_.video_width : frame_.video_height;
    weight.col(c).setConstant(static_cast<T>(extent * extent / 2.0 / static_cast<double>(batch)));
  }
  const auto w = tape.constant(std::move(weight));
  const std::vector<T> periods(static_cast<std::size_t>(io), T(1));
  std::vector<ad::Var<T>> terms;
  for (std::size_t j = 0; j < predictions.size(); ++j)
    terms.push_back(ad::mul(ad::wrap_squared_error(predictions[j], truth[j], periods), w));
  return ad::sum(ad::concat_cols(terms));
}

template <typename T>
ad::Matrix<T> MtioTransformer<T>::encode_histories(std::span<const Trajectory* const> histories) const {
  if (static_cast<int>(histories.size()) != config_.io_heads)
    throw std::invalid_argument("expected one history per input head");
  const int h = config_.history_len;
  ad::Matrix<T> out(h, 2 * config_.io_heads);
  for (int i = 0; i < config_.io_heads; ++i) {
    const Trajectory& tr = *histories[static_cast<std::size_t>(i)];
    if (static_cast<int>(tr.size()) != h)
      throw std::invalid_argument("history length " + std::to_string(tr.size()) + " != " + std::to_string(h));
    for (int s = 0; s < h; ++s) {
      out(s, 2 * i) = static_cast<T>(tr.points[static_cast<std::size_t>(s)].x / frame_.video_width);
      out(s, 2 * i + 1) = static_cast<T>(tr.points[static_cast<std::size_t>(s)].y / frame_.video_height);
    }
  }
  return out;
}

template <typename T>
ad::Matrix<T> MtioTransformer<T>::encode_targets(std::span<const Trajectory* const> futures, int step) const {
  ad::Matrix<T> out(1, 2 * config_.io_heads);
  for (int i = 0; i < config_.io_heads; ++i) {
    const auto& pt = futures[static_cast<std::size_t>(i)]->points.at(static_cast<std::size_t>(step));
    out(0, 2 * i) = static_cast<T>(pt.x / frame_.video_width);
    out(0, 2 * i + 1) = static_cast<T>(pt.y / frame_.video_height);
  }
  return out;
}

template <typename T>
std::vector<PredictionSet> MtioTransformer<T>::predict_batch(const std::vector<std::vector<const Trajectory*>>& batch,
                                                             const StepHook* hook) const {
  if (batch.empty()) return {};
  const int h = config_.history_len;
  ad::Matrix<T> history(static_cast<Eigen::Index>(batch.size()) * h, 2 * config_.io_heads);
  for (std::size_t b = 0; b < batch.size(); ++b)
    history.middleRows(static_cast<Eigen::Index>(b) * h, h) = encode_histories(batch[b]);

  ad::Tape<T> tape;
  const Binder<T> p(tape, params_);
  const auto preds = forward(p, history, hook);

  std::vector<PredictionSet> out(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const double dt = batch[b].front()->timestep_duration;
    out[b].trajectories.assign(static_cast<std::size_t>(config_.io_heads), Trajectory{{}, dt});
    for (const auto& step : preds)
      for (int i = 0; i < config_.io_heads; ++i) {
        const auto row = static_cast<Eigen::Index>(b);
        ViewportPoint pt{static_cast<double>(step.value()(row, 2 * i)) * frame_.video_width,
                         static_cast<double>(step.value()(row, 2 * i + 1)) * frame_.video_height};
        out[b].trajectories[static_cast<std::size_t>(i)].points.push_back(wrap_into_frame(pt, frame_));
      }
  }
  return out;
}

template <typename T>
PredictionSet MtioTransformer<T>::predict(std::span<const Trajectory> histories) const {
  std::vector<const Trajectory*> ptrs;
  for (const auto& h : histories) ptrs.push_back(&h);
  return predict_batch({ptrs}).front();
}

template <typename T>
Checkpoint MtioTransformer<T>::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.kind = "mtio-transformer";
  ckpt.seed = seed_;
  ckpt.config = {{"predictor", to_json(config_)},
                 {"frame",
                  {{"rows", frame_.rows},
                   {"cols", frame_.cols},
                   {"width", frame_.video_width},
                   {"height", frame_.video_height}}}};
  append_store(ckpt, params_);
  return ckpt;
}

template <typename T>
MtioTransformer<T> MtioTransformer<T>::from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "mtio-transformer") throw std::runtime_error("checkpoint kind '" + ckpt.kind + "' is not a predictor");
  const auto& f = ckpt.config.at("frame");
  TileGrid grid{f.at("rows").get<int>(), f.at("cols").get<int>(), f.at("width").get<double>(),
                f.at("height").get<double>()};
  MtioTransformer model(predictor_config_from_json(ckpt.config.at("predictor")), grid, ckpt.seed);
  restore_store(model.params_, ckpt);
  return model;
}

template class MtioTransformer<float>;
template class MtioTransformer<double>;

double mtio_loss(const PredictionSet& pred, std::span<const Trajectory> truth, const TileGrid& grid) {
  if (pred.trajectories.size() != truth.size()) throw std::invalid_argument("mtio_loss: head count mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto& p = pred.trajectories[i].points;
    const auto& t = truth[i].points;
    if (p.size() != t.size()) throw std::invalid_argument("mtio_loss: horizon mismatch");
    for (std::size_t j = 0; j < p.size(); ++j) total += wrap_distance(p[j], t[j], grid);
  }
  return total;
}

Trajectory ensemble(const PredictionSet& pred, const TileGrid& grid) {
  if (pred.trajectories.empty()) throw std::invalid_argument("ensemble: no predictions");
  const auto& first = pred.trajectories.front();
  Trajectory out{{}, first.timestep_duration};
  const double m = static_cast<double>(pred.trajectories.size());
  for (std::size_t j = 0; j < first.size(); ++j) {
    ViewportPoint mean{0.0, 0.0};
    for (const auto& tr : pred.trajectories) {
      if (tr.size() != first.size()) throw std::invalid_argument("ensemble: heads disagree on horizon");
      mean.x += tr.points[j].x / m;
      mean.y += tr.points[j].y / m;
    }
    out.points.push_back(wrap_into_frame(mean, grid));
  }
  return out;
}

namespace {
// FLOP cost model: a (n x in) * (in x out) product costs 2*n*in*out, adding a
// bias n*out; element-wise maps cost one FLOP per element except sigmoid (4)
// and softmax (3 per logit); layer normalisation costs 8 per element; a
// residual add one per element. Attention per head costs 2*lq*lk*dk for
// scores, 3*lq*lk softmax and 2*lq*lk*dv for the weighted sum.
struct CostModel {
  const PredictorConfig& c;

  double linear(double n, double in, double out) const { return 2.0 * n * in * out + n * out; }
  double norm(double n) const { return 8.0 * n * c.embed_dim + n * c.embed_dim; }

  double mha(double lq, double lk) const {
    const double d = c.embed_dim;
    const double heads = c.attention_heads;
    double f = 2.0 * lq * d * heads * c.key_dim + 2.0 * lk * d * heads * c.key_dim + 2.0 * lk * d * heads * c.value_dim;
    f += heads * (2.0 * lq * lk * c.key_dim + 3.0 * lq * lk + 2.0 * lq * lk * c.value_dim);
    f += 2.0 * lq * heads * c.value_dim * d;
    return f;
  }
  double ffn(double n) const {
    return linear(n, c.embed_dim, c.ffn_width) + n * c.ffn_width + linear(n, c.ffn_width, c.embed_dim);
  }
};
}  // namespace

ModelCost count_params_flops(const PredictorConfig& config) {
  config.validate();
  ModelCost cost;
  for (const auto& s : parameter_shapes(config)) cost.parameters += static_cast<std::size_t>(s.rows * s.cols);

  const CostModel m{config};
  const double d = config.embed_dim;
  const double io = 2.0 * config.io_heads;
  const double h = config.history_len;
  double f = m.linear(h, io, d) + h * d;  // input projection + positional encoding
  for (int l = 0; l < config.blocks; ++l) f += m.mha(h, h) + m.norm(h) + m.ffn(h) + m.norm(h);
  double mem = h;
  if (h > 1) {
    mem = static_cast<double>(ad::pooled_length(config.history_len));
    f += m.linear(h, 3.0 * d, d) + 2.0 * mem * d;  // convolution + pooling comparisons
  }
  for (int step = 0; step < config.horizon_len; ++step) {
    const double n = step + 1.0;  // decoder reprocesses the whole prefix each step
    f += m.linear(n, io, d) + n * d;
    for (int l = 0; l < config.blocks; ++l)
      f += m.mha(n, n) + m.norm(n) + m.mha(n, mem) + m.norm(n) + m.ffn(n) + m.norm(n);
    f += m.linear(1.0, d, io) + 4.0 * io;
  }
  cost.flops = f;
  return cost;
}

}  // namespace mansy::vp
