#include "orthoeraser/codec.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>
#include <openssl/sha.h>

#include "orthoeraser/error.hpp"

namespace orthoeraser::codec {

namespace {

std::string pack_doubles(const double* data, Eigen::Index count) {
  std::string bytes(static_cast<std::size_t>(count) * sizeof(double), '\0');
  for (Eigen::Index i = 0; i < count; ++i) {
    auto bits = std::bit_cast<std::uint64_t>(data[i]);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    std::memcpy(bytes.data() + i * sizeof(double), &bits, sizeof(bits));
  }
  return bytes;
}

void unpack_doubles(std::string_view bytes, double* out, Eigen::Index count) {
  for (Eigen::Index i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, bytes.data() + i * sizeof(double), sizeof(bits));
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    out[i] = std::bit_cast<double>(bits);
  }
}

std::string payload(const Json& node, Eigen::Index expected_count) {
  const Json& data = field(node, "data");
  if (!data.is_string()) fail(ErrorCode::kMalformedFile, "array payload is not a string");
  std::string bytes = base64_decode(data.get_ref<const std::string&>());
  if (bytes.size() != static_cast<std::size_t>(expected_count) * sizeof(double)) {
    fail(ErrorCode::kDimensionInconsistency,
         "array payload holds " + std::to_string(bytes.size() / sizeof(double)) +
             " values, shape declares " + std::to_string(expected_count));
  }
  return bytes;
}

Eigen::Index shape_entry(const Json& shape, std::size_t i) {
  if (!shape[i].is_number_integer() || shape[i].get<long long>() < 0) {
    fail(ErrorCode::kMalformedFile, "array shape must hold non-negative integers");
  }
  return static_cast<Eigen::Index>(shape[i].get<long long>());
}

}  // namespace

std::string base64_encode(std::string_view bytes) {
  if (bytes.empty()) return {};
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int written =
      EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                      reinterpret_cast<const unsigned char*>(bytes.data()),
                      static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(written));
  return out;
}

std::string base64_decode(std::string_view text) {
  if (text.empty()) return {};
  if (text.size() % 4 != 0) fail(ErrorCode::kMalformedFile, "base-64 length is not a multiple of 4");
  std::string out(3 * (text.size() / 4), '\0');
  const int written = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                      reinterpret_cast<const unsigned char*>(text.data()),
                                      static_cast<int>(text.size()));
  if (written < 0) fail(ErrorCode::kMalformedFile, "invalid base-64 payload");
  // EVP_DecodeBlock keeps the zero bytes produced by '=' padding.
  std::size_t padding = 0;
  if (text.back() == '=') ++padding;
  if (text.size() >= 2 && text[text.size() - 2] == '=') ++padding;
  out.resize(static_cast<std::size_t>(written) - padding);
  return out;
}

Json encode_vector(const Eigen::VectorXd& v) {
  return Json{{"shape", {v.size()}}, {"data", base64_encode(pack_doubles(v.data(), v.size()))}};
}

Json encode_matrix(const Eigen::MatrixXd& m) {
  return Json{{"shape", {m.rows(), m.cols()}},
              {"order", "column-major"},
              {"data", base64_encode(pack_doubles(m.data(), m.size()))}};
}

Eigen::VectorXd decode_vector(const Json& node, Eigen::Index expected_size) {
  const Json& shape = field(node, "shape");
  if (!shape.is_array() || shape.size() != 1) fail(ErrorCode::kMalformedFile, "vector shape must have rank 1");
  const Eigen::Index n = shape_entry(shape, 0);
  if (expected_size >= 0 && n != expected_size) {
    fail(ErrorCode::kDimensionInconsistency,
         "vector of length " + std::to_string(n) + " where " + std::to_string(expected_size) +
             " is required");
  }
  const std::string bytes = payload(node, n);
  Eigen::VectorXd v(n);
  unpack_doubles(bytes, v.data(), n);
  return v;
}

Eigen::MatrixXd decode_matrix(const Json& node, Eigen::Index expected_rows,
                              Eigen::Index expected_cols) {
  const Json& shape = field(node, "shape");
  if (!shape.is_array() || shape.size() != 2) fail(ErrorCode::kMalformedFile, "matrix shape must have rank 2");
  const Eigen::Index rows = shape_entry(shape, 0);
  const Eigen::Index cols = shape_entry(shape, 1);
  if ((expected_rows >= 0 && rows != expected_rows) || (expected_cols >= 0 && cols != expected_cols)) {
    fail(ErrorCode::kDimensionInconsistency,
         "matrix " + std::to_string(rows) + "x" + std::to_string(cols) + " does not match the header");
  }
  if (node.contains("order") && node["order"] != "column-major") {
    fail(ErrorCode::kMalformedFile, "only column-major matrices are supported");
  }
  const std::string bytes = payload(node, rows * cols);
  Eigen::MatrixXd m(rows, cols);
  unpack_doubles(bytes, m.data(), rows * cols);
  return m;
}

const Json& field(const Json& node, std::string_view key) {
  if (!node.is_object()) fail(ErrorCode::kMalformedFile, "expected a JSON object around '" + std::string(key) + "'");
  auto it = node.find(key);
  if (it == node.end()) fail(ErrorCode::kMalformedFile, "missing field '" + std::string(key) + "'");
  return *it;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) fail(ErrorCode::kIo, "short write to " + path.string());
}

void write_document(const std::filesystem::path& path, std::string_view schema, int version,
                    Json body) {
  Json doc = Json::object();
  doc["schema"] = std::string(schema) + "/" + std::to_string(version);
  doc["version"] = version;
  for (auto& [key, value] : body.items()) doc[key] = std::move(value);
  write_file(path, doc.dump(1) + "\n");
}

Json read_document(const std::filesystem::path& path, std::string_view schema_family, int version) {
  const std::string text = read_file(path);
  Json doc = Json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded()) fail(ErrorCode::kMalformedFile, path.string() + " is not valid JSON");
  const Json& schema = field(doc, "schema");
  const Json& declared = field(doc, "version");
  if (!schema.is_string() || !declared.is_number_integer()) {
    fail(ErrorCode::kMalformedFile, "schema header has the wrong types");
  }
  const std::string& name = schema.get_ref<const std::string&>();
  const std::string prefix = std::string(schema_family) + "/";
  if (name.rfind(prefix, 0) != 0) {
    fail(ErrorCode::kMalformedFile, "expected a '" + std::string(schema_family) + "' document, found '" + name + "'");
  }
  const std::string expected = prefix + std::to_string(version);
  if (name != expected || declared.get<int>() != version) {
    fail(ErrorCode::kVersionMismatch, "document is '" + name + "', this build reads '" + expected + "'");
  }
  return doc;
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * SHA256_DIGEST_LENGTH);
  for (unsigned char byte : digest) {
    out.push_back(kHex[byte >> 4]);
    out.push_back(kHex[byte & 0xF]);
  }
  return out;
}

}  // namespace orthoeraser::codec
