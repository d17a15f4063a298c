#pragma once

// JSON document plumbing shared by every persisted artifact: float arrays are
// stored as base-64 of little-endian IEEE-754 doubles so values survive a
// round trip bit-exactly, while headers stay human-readable.

#include <filesystem>
#include <string>
#include <string_view>

#include <Eigen/Core>
#include <json.hpp>

namespace orthoeraser::codec {

using Json = nlohmann::json;

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

Json encode_vector(const Eigen::VectorXd& v);
Json encode_matrix(const Eigen::MatrixXd& m);

/// Decoders throw kMalformedFile on structural problems and
/// kDimensionInconsistency when the payload length disagrees with the shape
/// or with `expected_size` / `expected_rows` (pass -1 to skip the check).
Eigen::VectorXd decode_vector(const Json& node, Eigen::Index expected_size = -1);
Eigen::MatrixXd decode_matrix(const Json& node, Eigen::Index expected_rows = -1,
                              Eigen::Index expected_cols = -1);

/// Writes {"schema": schema, "version": version, ...body}.
void write_document(const std::filesystem::path& path, std::string_view schema, int version,
                    Json body);

/// Parses and validates the schema header. Unknown schema names are
/// malformed; a known name with a different version is a version mismatch.
Json read_document(const std::filesystem::path& path, std::string_view schema_family, int version);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

std::string sha256_hex(std::string_view bytes);

/// Typed field access; missing or mistyped fields are kMalformedFile.
const Json& field(const Json& node, std::string_view key);

}  // namespace orthoeraser::codec
