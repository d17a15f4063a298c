#include <doctest.h>

#include <cmath>
#include <fstream>

#include "orthoeraser/codec.hpp"
#include "orthoeraser/corpus.hpp"
#include "orthoeraser/error.hpp"
#include "support.hpp"

using namespace orthoeraser;

namespace {

CorpusConfig small_config() {
  CorpusConfig c;
  c.dim = 8;
  c.features = 6;
  c.sensitive_features = 1;
  c.n_sensitive = 20;
  c.n_non_sensitive = 20;
  c.active_benign = 2;
  c.seed = 11;
  return c;
}

// Residual of projecting the columns of `a` onto the span of `basis`.
double out_of_span(const Matrix& basis, const Matrix& a) {
  const Eigen::ColPivHouseholderQR<Matrix> qr(basis);
  const Matrix q = qr.householderQ() * Matrix::Identity(basis.rows(), qr.rank());
  return (a - q * (q.transpose() * a)).cwiseAbs().maxCoeff();
}

}  // namespace

TEST_SUITE("corpus") {
  TEST_CASE("noise-free activations lie in the span of their planted columns") {
    CorpusConfig c;
    c.dim = 8;
    c.features = 2;
    c.sensitive_features = 1;
    c.overlap = 0.0;
    c.noise = 0.0;
    c.n_sensitive = 1;
    c.n_non_sensitive = 1;
    c.active_benign = 1;
    const Corpus corpus = generate(c);
    REQUIRE(corpus.activations.size() == 2);
    const Matrix& dict = corpus.ground_truth->dictionary;
    CHECK(out_of_span(dict, corpus.stacked(PromptClass::kSensitive)) < 1e-12);
    // The non-sensitive activation uses the benign column only.
    CHECK(out_of_span(dict.col(1), corpus.stacked(PromptClass::kNonSensitive)) < 1e-12);
  }

  TEST_CASE("requested overlap is realised exactly for every pair") {
    for (double overlap : {0.0, 0.3, 0.6, 0.95}) {
      CorpusConfig c;
      c.overlap = overlap;
      c.sensitive_features = 3;
      const GroundTruth truth = plant_dictionary(c);
      for (auto [s, b] : truth.pairs) {
        const double cosine = truth.dictionary.col(static_cast<Eigen::Index>(s))
                                  .dot(truth.dictionary.col(static_cast<Eigen::Index>(b)));
        CHECK(std::abs(cosine - overlap) < 1e-6);
      }
      for (Eigen::Index j = 0; j < truth.dictionary.cols(); ++j)
        CHECK(std::abs(truth.dictionary.col(j).norm() - 1.0) < 1e-9);
    }
  }

  TEST_CASE("same seed gives byte-identical corpora") {
    CorpusConfig c = small_config();
    c.traces = TraceConfig{};
    const Corpus a = generate(c);
    const Corpus b = generate(c);
    CHECK(same_corpus(a, b));
    test::TempDir dir("corpus-det");
    save(a, dir / "a.json");
    save(b, dir / "b.json");
    CHECK(codec::read_file(dir / "a.json") == codec::read_file(dir / "b.json"));
    c.seed += 1;
    CHECK_FALSE(same_corpus(a, generate(c)));
  }

  TEST_CASE("sensitive-class activations carry a sensitive column, non-sensitive ones never do") {
    CorpusConfig c = small_config();
    c.noise = 0.0;
    const Corpus corpus = generate(c);
    const Matrix u = corpus.ground_truth->sensitive_directions();
    const Matrix benign = corpus.ground_truth->benign_directions();
    for (const auto& a : corpus.activations) {
      const Eigen::Index n = benign.cols();
      // Least-squares coefficients on the full dictionary recover the draw.
      const Vector coef = corpus.ground_truth->dictionary.colPivHouseholderQr().solve(a.values);
      const double sensitive_part = coef.head(u.cols()).cwiseAbs().maxCoeff();
      if (a.prompt_class == PromptClass::kSensitive) {
        CHECK(sensitive_part >= c.sensitive_lo - 1e-9);
      } else {
        CHECK(sensitive_part < 1e-9);
      }
      CHECK((coef.tail(n).array() >= -1e-9).all());
    }
  }

  TEST_CASE("planted energy lies inside the dictionary span when noise is zero") {
    CorpusConfig c;
    c.noise = 0.0;
    c.n_sensitive = 64;
    c.n_non_sensitive = 8;
    const Corpus corpus = generate(c);
    const Matrix dict = corpus.ground_truth->dictionary;
    const Matrix sens = corpus.stacked(PromptClass::kSensitive);
    const Eigen::ColPivHouseholderQR<Matrix> qr(dict);
    const Matrix q = qr.householderQ() * Matrix::Identity(dict.rows(), qr.rank());
    for (Eigen::Index j = 0; j < sens.cols(); ++j) CHECK((sens.col(j) - q * (q.transpose() * sens.col(j))).norm() < 1e-9);
  }

  TEST_CASE("generator rejects impossible requests") {
    CorpusConfig c = small_config();
    c.overlap = 1.0;
    CHECK(test::error_code([&] { generate(c); }) == ErrorCode::kInvalidArgument);
    c = small_config();
    c.sensitive_features = 5;  // needs 10 columns and 10 frame vectors in d = 8
    CHECK(test::error_code([&] { generate(c); }) == ErrorCode::kDimensionMismatch);
    c = small_config();
    c.dim = 3;
    CHECK(test::error_code([&] { generate(c); }) == ErrorCode::kInvalidArgument);
    c = small_config();
    c.noise = -1.0;
    CHECK(test::error_code([&] { generate(c); }) == ErrorCode::kInvalidArgument);
    c = small_config();
    c.n_sensitive = 0;
    CHECK(test::error_code([&] { generate(c); }) == ErrorCode::kInvalidArgument);
    c = small_config();
    c.features = 33;
    CHECK(test::error_code([&] { generate(c); }) == ErrorCode::kInvalidArgument);
  }

  TEST_CASE("features beyond d are placed in superposition") {
    CorpusConfig c;
    c.dim = 8;
    c.features = 20;
    c.sensitive_features = 2;
    const GroundTruth truth = plant_dictionary(c);
    CHECK(truth.dictionary.cols() == 20);
    truth.validate();
  }

  TEST_CASE("sensitive scale changes only the sensitive coefficients") {
    CorpusConfig c = small_config();
    c.noise = 0.0;
    const Corpus full = generate(c);
    c.sensitive_scale = 0.0;
    const Corpus none = generate(c);
    for (std::size_t i = 0; i < full.activations.size(); ++i) {
      const Vector diff = full.activations[i].values - none.activations[i].values;
      if (full.activations[i].prompt_class == PromptClass::kNonSensitive) {
        CHECK(diff.norm() == 0.0);
      } else {
        const Matrix u = full.ground_truth->sensitive_directions();
        CHECK(out_of_span(u, diff) < 1e-12);
      }
    }
  }
}

TEST_SUITE("codec") {
  TEST_CASE("base64 round-trips arbitrary bytes") {
    for (std::string s : {std::string(""), std::string("a"), std::string("ab"), std::string("abc"),
                          std::string("\0\xff\x10 z", 5)})
      CHECK(codec::base64_decode(codec::base64_encode(s)) == s);
    CHECK(codec::base64_encode("abc") == "YWJj");
  }

  TEST_CASE("float arrays survive a round trip bit-exactly") {
    Rng rng(3);
    const Matrix m = test::gaussian(5, 3, rng) * 1e-300;
    CHECK(identical(codec::decode_matrix(codec::encode_matrix(m), 5, 3), m));
    const Vector v = test::gaussian(7, rng);
    CHECK(identical(codec::decode_vector(codec::encode_vector(v), 7), v));
    CHECK(test::error_code([&] { codec::decode_vector(codec::encode_vector(v), 8); }) == ErrorCode::kDimensionInconsistency);
  }

  TEST_CASE("corpus save and load is the identity") {
    CorpusConfig c = small_config();
    c.traces = TraceConfig{};
    Corpus corpus = generate(c);
    corpus.provenance = ErasureProvenance{"abc123", 3.0, "ortho"};
    test::TempDir dir("corpus-rt");
    save(corpus, dir / "c.json");
    CHECK(same_corpus(load_corpus(dir / "c.json"), corpus));
  }

  TEST_CASE("damaged corpus files are rejected with the right error") {
    test::TempDir dir("corpus-bad");
    const Corpus corpus = generate(small_config());
    save(corpus, dir / "c.json");
    const std::string text = codec::read_file(dir / "c.json");

    codec::write_file(dir / "truncated.json", text.substr(0, text.size() / 2));
    CHECK(test::error_code([&] { load_corpus(dir / "truncated.json"); }) == ErrorCode::kMalformedFile);

    auto doc = codec::Json::parse(text);
    doc["version"] = 2;
    doc["schema"] = "orthoeraser-corpus/2";
    codec::write_file(dir / "v2.json", doc.dump());
    CHECK(test::error_code([&] { load_corpus(dir / "v2.json"); }) == ErrorCode::kVersionMismatch);

    doc = codec::Json::parse(text);
    doc["schema"] = "something-else/1";
    codec::write_file(dir / "other.json", doc.dump());
    CHECK(test::error_code([&] { load_corpus(dir / "other.json"); }) == ErrorCode::kMalformedFile);

    // Header says d = 8 but the first vector holds 7 values.
    doc = codec::Json::parse(text);
    const Vector short_vector = corpus.activations[0].values.head(7);
    doc["activations"][0]["values"] = codec::encode_vector(short_vector);
    codec::write_file(dir / "short.json", doc.dump());
    CHECK(test::error_code([&] { load_corpus(dir / "short.json"); }) == ErrorCode::kDimensionInconsistency);

    CHECK(test::error_code([&] { load_corpus(dir / "missing.json"); }) == ErrorCode::kIo);
  }

  TEST_CASE("sha256 of a known string") {
    CHECK(codec::sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  }
}
