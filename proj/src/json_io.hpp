#pragma once

// nlohmann/json conversions shared by the model, table and CLI writers.

#include <json.hpp>

#include <set>
#include <string>

#include "lutnet/common.hpp"
#include "lutnet/topology.hpp"

namespace lutnet::detail {

using Json = nlohmann::ordered_json;

Json topology_to_json(const TopologySpec& spec);
TopologySpec topology_from_json(const Json& j);

Json matrix_to_json(const MatrixXd& m);
MatrixXd matrix_from_json(const Json& j, const std::string& what);
Json vector_to_json(const VectorXd& v);
VectorXd vector_from_json(const Json& j, const std::string& what);

/// Throws InvalidSpec naming the first key of `j` outside `known`.
void reject_unknown(const Json& j, const std::set<std::string>& known, const std::string& where);

/// Wraps nlohmann exceptions into lutnet::Error(ErrorKind::Parse).
Json parse_json(const std::string& text, const std::string& what);
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& contents);

}  // namespace lutnet::detail
