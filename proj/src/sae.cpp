#include "orthoeraser/sae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "orthoeraser/adam.hpp"
#include "orthoeraser/codec.hpp"
#include "orthoeraser/error.hpp"
#include "orthoeraser/rng.hpp"

namespace orthoeraser {

using codec::Json;

void SaeModel::validate() const {
  const Eigen::Index d = decoder_weight.rows();
  const Eigen::Index n = decoder_weight.cols();
  require(d > 0 && n > 0, ErrorCode::kInvalidArgument, "SAE has empty dimensions");
  require(encoder_weight.rows() == n && encoder_weight.cols() == d && encoder_bias.size() == n &&
              decoder_bias.size() == d,
          ErrorCode::kDimensionInconsistency, "SAE parameter shapes disagree");
  require(k >= 1 && k <= static_cast<std::size_t>(n), ErrorCode::kInvalidArgument,
          "k must lie in [1, D_sae]");
}

bool same_model(const SaeModel& a, const SaeModel& b) {
  return a.k == b.k && identical(a.encoder_weight, b.encoder_weight) &&
         identical(a.encoder_bias, b.encoder_bias) && identical(a.decoder_weight, b.decoder_weight) &&
         identical(a.decoder_bias, b.decoder_bias);
}

std::size_t SparseCode::nonzeros() const { return static_cast<std::size_t>((values.array() != 0.0).count()); }

std::vector<Eigen::Index> SparseCode::active() const {
  std::vector<Eigen::Index> out;
  for (Eigen::Index i = 0; i < values.size(); ++i)
    if (values[i] != 0.0) out.push_back(i);
  return out;
}

void EncodeWorkspace::reserve(const SaeModel& model) {
  centered.resize(model.input_dim());
  preactivation.resize(model.feature_count());
  order.resize(static_cast<std::size_t>(model.feature_count()));
}

std::size_t select_top_k(const Vector& preactivation, std::size_t k, std::vector<Eigen::Index>& order) {
  const auto n = static_cast<std::size_t>(preactivation.size());
  order.resize(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const std::size_t keep = std::min(k, n);
  auto before = [&](Eigen::Index a, Eigen::Index b) {
    return preactivation[a] > preactivation[b] || (preactivation[a] == preactivation[b] && a < b);
  };
  if (keep < n) std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), before);
  // ReLU: only strictly positive pre-activations survive.
  std::size_t kept = 0;
  for (std::size_t i = 0; i < keep; ++i)
    if (preactivation[order[i]] > 0.0) order[kept++] = order[i];
  return kept;
}

void encode_into(const SaeModel& model, const Vector& h, EncodeWorkspace& workspace, Vector& code) {
  if (h.size() != model.input_dim())
    fail(ErrorCode::kDimensionMismatch, "activation has length " + std::to_string(h.size()) + ", SAE expects " +
                                            std::to_string(model.input_dim()));
  workspace.centered.noalias() = h - model.decoder_bias;
  workspace.preactivation.noalias() = model.encoder_weight * workspace.centered;
  workspace.preactivation += model.encoder_bias;
  const std::size_t kept = select_top_k(workspace.preactivation, model.k, workspace.order);
  if (code.size() != model.feature_count()) code.resize(model.feature_count());
  code.setZero();
  for (std::size_t i = 0; i < kept; ++i) code[workspace.order[i]] = workspace.preactivation[workspace.order[i]];
}

SparseCode encode(const SaeModel& model, const Vector& h) {
  EncodeWorkspace workspace;
  workspace.reserve(model);
  SparseCode z;
  encode_into(model, h, workspace, z.values);
  return z;
}

Vector decode(const SaeModel& model, const SparseCode& z) {
  require(z.values.size() == model.feature_count(), ErrorCode::kDimensionMismatch,
          "code has length " + std::to_string(z.values.size()) + ", SAE has " +
              std::to_string(model.feature_count()) + " features");
  Vector out = model.decoder_bias;
  for (Eigen::Index i = 0; i < z.values.size(); ++i)
    if (z.values[i] != 0.0) out.noalias() += z.values[i] * model.decoder_weight.col(i);
  return out;
}

void TrainConfig::validate() const {
  require(learning_rate > 0.0 && batch_size > 0 && expansion_factor > 0 && k > 0,
          ErrorCode::kInvalidArgument, "training hyperparameters must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && epsilon > 0.0,
          ErrorCode::kInvalidArgument, "Adam moments must lie in [0, 1)");
}

SaeModel initialize_sae(Eigen::Index input_dim, const TrainConfig& config) {
  config.validate();
  require(input_dim > 0, ErrorCode::kInvalidArgument, "input dimension must be positive");
  const Eigen::Index features = input_dim * static_cast<Eigen::Index>(config.expansion_factor);
  require(config.k <= static_cast<std::size_t>(features), ErrorCode::kInvalidArgument,
          "k exceeds the number of SAE features");
  Rng rng(Rng::derive(config.seed, 0x5AE));
  SaeModel model;
  model.k = config.k;
  model.decoder_weight.resize(input_dim, features);
  for (Eigen::Index j = 0; j < features; ++j) {
    for (Eigen::Index i = 0; i < input_dim; ++i) model.decoder_weight(i, j) = rng.normal();
    model.decoder_weight.col(j).normalize();
  }
  model.encoder_weight = model.decoder_weight.transpose();
  model.encoder_bias = Vector::Zero(features);
  model.decoder_bias = Vector::Zero(input_dim);
  return model;
}

namespace {

double max_norm_error(const Matrix& decoder) {
  return (decoder.colwise().norm().array() - 1.0).abs().maxCoeff();
}

}  // namespace

TrainResult train(const Matrix& data, const TrainConfig& config) {
  config.validate();
  require(data.cols() > 0, ErrorCode::kEmptyInput, "cannot train on an empty corpus");
  require(data.allFinite(), ErrorCode::kInvalidArgument, "training data has non-finite entries");

  TrainResult result;
  result.model = initialize_sae(data.rows(), config);
  SaeModel& m = result.model;
  const Eigen::Index d = m.input_dim();
  const Eigen::Index features = m.feature_count();
  const auto n = static_cast<std::size_t>(data.cols());

  const AdamHyper hyper{config.learning_rate, config.beta1, config.beta2, config.epsilon};
  AdamSlot<Matrix> enc_w_slot(m.encoder_weight), dec_w_slot(m.decoder_weight);
  AdamSlot<Vector> enc_b_slot(m.encoder_bias), dec_b_slot(m.decoder_bias);

  Rng rng(Rng::derive(config.seed, 0xBA7C));
  std::vector<Eigen::Index> permutation(n);
  std::iota(permutation.begin(), permutation.end(), Eigen::Index{0});

  Matrix batch, centered, pre, recon;
  Matrix grad_enc_w(features, d), grad_dec_w(d, features);
  Vector grad_enc_b(features), grad_dec_b(d);
  std::vector<Eigen::Index> order;
  std::vector<std::vector<Eigen::Index>> active;
  long step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(std::span<Eigen::Index>(permutation));
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t stop = std::min(n, start + config.batch_size);
      const auto b = static_cast<Eigen::Index>(stop - start);
      batch.resize(d, b);
      for (Eigen::Index s = 0; s < b; ++s) batch.col(s) = data.col(permutation[start + static_cast<std::size_t>(s)]);

      centered = batch.colwise() - m.decoder_bias;
      pre.noalias() = m.encoder_weight * centered;
      pre.colwise() += m.encoder_bias;

      active.resize(static_cast<std::size_t>(b));
      recon = m.decoder_bias.replicate(1, b);
      Vector column(features);
      for (Eigen::Index s = 0; s < b; ++s) {
        column = pre.col(s);
        const std::size_t kept = select_top_k(column, m.k, order);
        auto& slot = active[static_cast<std::size_t>(s)];
        slot.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kept));
        for (Eigen::Index i : slot) recon.col(s).noalias() += pre(i, s) * m.decoder_weight.col(i);
      }

      // L = (1/B) sum_s ||recon_s - x_s||^2
      const Matrix residual = recon - batch;
      const double loss = residual.squaredNorm() / static_cast<double>(b);
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "loss became " << loss << " at epoch " << epoch << ", step " << step + 1
            << " (max |W_dec| = " << m.decoder_weight.cwiseAbs().maxCoeff()
            << ", max |W_enc| = " << m.encoder_weight.cwiseAbs().maxCoeff() << ")";
        fail(ErrorCode::kNonFiniteLoss, msg.str());
      }
      epoch_loss += loss;
      ++batches;

      const Matrix grad_out = (2.0 / static_cast<double>(b)) * residual;
      grad_dec_w.setZero();
      grad_enc_w.setZero();
      grad_enc_b.setZero();
      grad_dec_b = grad_out.rowwise().sum();
      for (Eigen::Index s = 0; s < b; ++s) {
        for (Eigen::Index i : active[static_cast<std::size_t>(s)]) {
          grad_dec_w.col(i).noalias() += pre(i, s) * grad_out.col(s);
          const double grad_code = m.decoder_weight.col(i).dot(grad_out.col(s));
          grad_enc_w.row(i).noalias() += grad_code * centered.col(s).transpose();
          grad_enc_b[i] += grad_code;
          // The encoder sees h - b_dec, so b_dec also receives -W_enc^T dL/da.
          grad_dec_b.noalias() -= grad_code * m.encoder_weight.row(i).transpose();
        }
      }

      ++step;
      enc_w_slot.update(m.encoder_weight, grad_enc_w, hyper, step);
      enc_b_slot.update(m.encoder_bias, grad_enc_b, hyper, step);
      dec_w_slot.update(m.decoder_weight, grad_dec_w, hyper, step);
      dec_b_slot.update(m.decoder_bias, grad_dec_b, hyper, step);
      m.decoder_weight.colwise().normalize();
    }
    result.loss_history.push_back(epoch_loss / static_cast<double>(batches));
  }
  result.steps = static_cast<std::size_t>(step);
  result.max_decoder_norm_error = max_norm_error(m.decoder_weight);
  return result;
}

TrainResult train(const Corpus& corpus, const TrainConfig& config) {
  require(!corpus.activations.empty(), ErrorCode::kEmptyInput, "cannot train on an empty corpus");
  return train(corpus.stacked(), config);
}

double reconstruction_error(const SaeModel& model, const Matrix& data) {
  require(data.cols() > 0, ErrorCode::kEmptyInput, "reconstruction error of an empty corpus");
  EncodeWorkspace workspace;
  workspace.reserve(model);
  SparseCode z;
  double total = 0.0;
  for (Eigen::Index j = 0; j < data.cols(); ++j) {
    const Vector h = data.col(j);
    encode_into(model, h, workspace, z.values);
    const double err = (decode(model, z) - h).norm();
    const double scale = h.norm();
    total += scale > 0.0 ? err / scale : (err > 0.0 ? 1.0 : 0.0);
  }
  return total / static_cast<double>(data.cols());
}

double reconstruction_error(const SaeModel& model, const Corpus& corpus) {
  require(!corpus.activations.empty(), ErrorCode::kEmptyInput, "reconstruction error of an empty corpus");
  return reconstruction_error(model, corpus.stacked());
}

void save(const SaeModel& model, const std::filesystem::path& path) {
  model.validate();
  codec::write_document(path, kSaeSchema, kSaeVersion,
                        Json{{"input_dim", model.input_dim()},
                             {"features", model.feature_count()},
                             {"k", model.k},
                             {"encoder_weight", codec::encode_matrix(model.encoder_weight)},
                             {"encoder_bias", codec::encode_vector(model.encoder_bias)},
                             {"decoder_weight", codec::encode_matrix(model.decoder_weight)},
                             {"decoder_bias", codec::encode_vector(model.decoder_bias)}});
}

SaeModel load_sae(const std::filesystem::path& path) {
  const Json doc = codec::read_document(path, kSaeSchema, kSaeVersion);
  try {
    const auto d = codec::field(doc, "input_dim").get<Eigen::Index>();
    const auto features = codec::field(doc, "features").get<Eigen::Index>();
    SaeModel model;
    model.k = codec::field(doc, "k").get<std::size_t>();
    model.encoder_weight = codec::decode_matrix(codec::field(doc, "encoder_weight"), features, d);
    model.encoder_bias = codec::decode_vector(codec::field(doc, "encoder_bias"), features);
    model.decoder_weight = codec::decode_matrix(codec::field(doc, "decoder_weight"), d, features);
    model.decoder_bias = codec::decode_vector(codec::field(doc, "decoder_bias"), d);
    model.validate();
    return model;
  } catch (const Json::exception& e) {
    fail(ErrorCode::kMalformedFile, std::string("SAE field has the wrong type: ") + e.what());
  }
}

}  // namespace orthoeraser
