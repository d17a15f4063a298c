#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "orthoeraser/corpus.hpp"
#include "orthoeraser/types.hpp"

namespace orthoeraser {

/// Top-K sparse autoencoder with a pre-encoder decoder-bias shift:
///   a = W_enc (h - b_dec) + b_enc,  z = TopK(ReLU(a)),  h_hat = W_dec z + b_dec.
struct SaeModel {
  Matrix encoder_weight;  // D_sae x d
  Vector encoder_bias;    // D_sae
  Matrix decoder_weight;  // d x D_sae; column i is the decoder direction of feature i
  Vector decoder_bias;    // d
  std::size_t k = 1;

  Eigen::Index input_dim() const { return decoder_weight.rows(); }
  Eigen::Index feature_count() const { return decoder_weight.cols(); }

  void validate() const;
};

bool same_model(const SaeModel& a, const SaeModel& b);

struct SparseCode {
  Vector values;  // D_sae; at most k entries are non-zero, all of them positive

  std::size_t nonzeros() const;
  std::vector<Eigen::Index> active() const;
};

/// Scratch buffers for allocation-free encoding.
struct EncodeWorkspace {
  Vector centered;
  Vector preactivation;
  std::vector<Eigen::Index> order;

  void reserve(const SaeModel& model);
};

SparseCode encode(const SaeModel& model, const Vector& h);

/// Writes the code into `code` (resized only when its size differs), using
/// the caller's workspace.
void encode_into(const SaeModel& model, const Vector& h, EncodeWorkspace& workspace, Vector& code);

/// Keeps the k largest strictly positive entries of `preactivation`; ties go
/// to the lower index. Returns the kept indices (unordered) in `order[0..n)`.
std::size_t select_top_k(const Vector& preactivation, std::size_t k, std::vector<Eigen::Index>& order);

Vector decode(const SaeModel& model, const SparseCode& z);

struct TrainConfig {
  double learning_rate = 4e-4;
  std::size_t batch_size = 256;
  std::size_t epochs = 2000;
  std::uint64_t seed = 0;
  std::size_t expansion_factor = 4;
  std::size_t k = 8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

struct TrainResult {
  SaeModel model;
  std::vector<double> loss_history;  // mean mini-batch loss per epoch
  std::size_t steps = 0;
  /// max_i | ||w_i^dec|| - 1 | observed after the last step.
  double max_decoder_norm_error = 0.0;
};

/// Seeded Gaussian decoder with unit columns, tied encoder, zero biases.
SaeModel initialize_sae(Eigen::Index input_dim, const TrainConfig& config);

/// Adam on mean squared reconstruction error over shuffled mini-batches,
/// renormalizing decoder columns after every step.
TrainResult train(const Matrix& data, const TrainConfig& config);
TrainResult train(const Corpus& corpus, const TrainConfig& config);

/// Mean of ||h - decode(encode(h))|| / ||h|| over the corpus.
double reconstruction_error(const SaeModel& model, const Matrix& data);
double reconstruction_error(const SaeModel& model, const Corpus& corpus);

inline constexpr const char* kSaeSchema = "orthoeraser-sae";
inline constexpr int kSaeVersion = 1;

void save(const SaeModel& model, const std::filesystem::path& path);
SaeModel load_sae(const std::filesystem::path& path);

}  // namespace orthoeraser
