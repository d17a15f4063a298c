#include <doctest.h>

#include <cmath>

#include "orthoeraser/codec.hpp"
#include "orthoeraser/sae.hpp"
#include "support.hpp"

using namespace orthoeraser;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

/// Multiples of one unit direction in d = 4.
Matrix single_feature_data(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Vector u = test::gaussian(4, rng);
  u.normalize();
  Matrix data(4, static_cast<Eigen::Index>(n));
  for (Eigen::Index j = 0; j < data.cols(); ++j) data.col(j) = rng.uniform(0.5, 1.5) * u;
  return data;
}

}  // namespace

TEST_SUITE("sae") {
  TEST_CASE("identity encoder keeps the k largest positive entries") {
    SaeModel m = test::tied_model(Matrix::Identity(3, 3), 1);
    CHECK(encode(m, vec({3, 5, -2})).values == vec({0, 5, 0}));
    CHECK(encode(m, vec({2, 2, 1})).values == vec({2, 0, 0}));
    m.k = 2;
    CHECK(encode(m, vec({3, 5, -2})).values == vec({3, 5, 0}));
    // Negative pre-activations never survive even if k allows it.
    m.k = 3;
    CHECK(encode(m, vec({-1, -2, 4})).nonzeros() == 1);
  }

  TEST_CASE("decode of zero is the decoder bias and of e_i is column i plus bias") {
    Rng rng(2);
    SaeModel m = test::tied_model(test::gaussian(5, 7, rng), 2);
    m.decoder_bias = test::gaussian(5, rng);
    CHECK(decode(m, SparseCode{Vector::Zero(7)}) == m.decoder_bias);
    for (Eigen::Index i = 0; i < 7; ++i)
      CHECK((decode(m, SparseCode{test::unit(7, i)}) - (m.decoder_weight.col(i) + m.decoder_bias)).norm() < 1e-15);
  }

  TEST_CASE("encode_into matches encode and reuses buffers") {
    Rng rng(4);
    SaeModel m = test::tied_model(test::gaussian(6, 24, rng), 4);
    m.encoder_bias = 0.1 * test::gaussian(24, rng);
    m.decoder_bias = 0.1 * test::gaussian(6, rng);
    EncodeWorkspace ws;
    ws.reserve(m);
    Vector code;
    for (int t = 0; t < 20; ++t) {
      const Vector h = test::gaussian(6, rng);
      encode_into(m, h, ws, code);
      CHECK(code == encode(m, h).values);
      CHECK((code.array() >= 0.0).all());
    }
    CHECK(test::error_code([&] { encode_into(m, Vector::Zero(5), ws, code); }) == ErrorCode::kDimensionMismatch);
  }

  TEST_CASE("permuting features permutes the code") {
    Rng rng(8);
    SaeModel m = test::tied_model(test::gaussian(6, 12, rng), 3);
    m.encoder_bias = 0.2 * test::gaussian(12, rng);
    Eigen::PermutationMatrix<Eigen::Dynamic> perm(12);
    perm.setIdentity();
    for (Eigen::Index i = 11; i > 0; --i) std::swap(perm.indices()(i), perm.indices()(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(i) + 1))));
    SaeModel p = m;
    p.encoder_weight = perm * m.encoder_weight;
    p.encoder_bias = perm * m.encoder_bias;
    p.decoder_weight = m.decoder_weight * perm.transpose();
    for (int t = 0; t < 10; ++t) {
      const Vector h = test::gaussian(6, rng);
      CHECK((encode(p, h).values - perm * encode(m, h).values).norm() == 0.0);
      CHECK((decode(p, encode(p, h)) - decode(m, encode(m, h))).norm() < 1e-12);
    }
  }

  TEST_CASE("zero epochs return the initialization") {
    const Matrix data = single_feature_data(32, 1);
    TrainConfig c;
    c.epochs = 0;
    c.expansion_factor = 2;
    c.k = 1;
    const TrainResult r = train(data, c);
    CHECK(same_model(r.model, initialize_sae(4, c)));
    CHECK(r.steps == 0);
    const SaeModel& m = r.model;
    CHECK(m.encoder_weight == m.decoder_weight.transpose());
    for (Eigen::Index i = 0; i < m.feature_count(); ++i) CHECK(std::abs(m.decoder_weight.col(i).norm() - 1.0) < 1e-12);
  }

  TEST_CASE("training is deterministic for a fixed seed") {
    const Matrix data = single_feature_data(100, 3);
    TrainConfig c;
    c.epochs = 20;
    c.batch_size = 16;
    c.expansion_factor = 2;
    c.k = 2;
    const TrainResult a = train(data, c);
    const TrainResult b = train(data, c);
    CHECK(same_model(a.model, b.model));
    CHECK(a.loss_history == b.loss_history);
    c.seed = 1;
    CHECK_FALSE(same_model(a.model, train(data, c).model));
  }

  TEST_CASE("a single planted direction is reconstructed") {
    const Matrix data = single_feature_data(256, 5);
    TrainConfig c;
    c.expansion_factor = 1;
    c.k = 1;
    c.batch_size = 32;
    c.epochs = 1500;
    const TrainResult r = train(data, c);
    CHECK(reconstruction_error(r.model, data) < 1e-2);
  }

  TEST_CASE("trained codes are k-sparse and decoder columns stay unit norm") {
    CorpusConfig cc;
    cc.dim = 16;
    cc.features = 16;
    cc.active_benign = 3;
    cc.n_sensitive = 64;
    cc.n_non_sensitive = 64;
    const Corpus corpus = generate(cc);
    TrainConfig c;
    c.epochs = 30;
    c.batch_size = 32;
    c.k = 4;
    const TrainResult r = train(corpus, c);
    CHECK(r.max_decoder_norm_error < 1e-6);
    for (const auto& a : corpus.activations) CHECK(encode(r.model, a.values).nonzeros() <= 4);
    CHECK(r.loss_history.size() == 30);
    CHECK(r.loss_history.back() < r.loss_history.front());
  }

  TEST_CASE("reconstruction error of an all-zero model is one") {
    SaeModel m = test::tied_model(Matrix::Zero(4, 4), 1);
    CHECK(reconstruction_error(m, single_feature_data(10, 7)) == doctest::Approx(1.0));
  }

  TEST_CASE("bad shapes and configurations are rejected") {
    TrainConfig c;
    c.k = 0;
    CHECK(test::error_code([&] { c.validate(); }) == ErrorCode::kInvalidArgument);
    c = TrainConfig{};
    c.expansion_factor = 1;
    c.k = 5;
    CHECK(test::error_code([&] { initialize_sae(4, c); }) == ErrorCode::kInvalidArgument);
    CHECK(test::error_code([&] { train(Matrix(4, 0), TrainConfig{}); }) == ErrorCode::kEmptyInput);
    SaeModel m = test::tied_model(Matrix::Identity(3, 3), 1);
    m.encoder_bias = Vector::Zero(2);
    CHECK(test::error_code([&] { m.validate(); }) == ErrorCode::kDimensionInconsistency);
    m = test::tied_model(Matrix::Identity(3, 3), 4);
    CHECK(test::error_code([&] { m.validate(); }) == ErrorCode::kInvalidArgument);
    m = test::tied_model(Matrix::Identity(3, 3), 1);
    CHECK(test::error_code([&] { decode(m, SparseCode{Vector::Zero(4)}); }) == ErrorCode::kDimensionMismatch);
  }

  TEST_CASE("saved models load bit-exactly") {
    Rng rng(6);
    SaeModel m = test::tied_model(test::gaussian(5, 10, rng), 3);
    m.encoder_bias = test::gaussian(10, rng);
    m.decoder_bias = test::gaussian(5, rng);
    test::TempDir dir("sae");
    save(m, dir / "m.json");
    CHECK(same_model(load_sae(dir / "m.json"), m));
    auto doc = codec::Json::parse(codec::read_file(dir / "m.json"));
    doc["version"] = 7;
    codec::write_file(dir / "v7.json", doc.dump());
    CHECK(test::error_code([&] { load_sae(dir / "v7.json"); }) == ErrorCode::kVersionMismatch);
  }
}
