#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "store/nn.hpp"
#include "store/tensor.hpp"

namespace store {

// Tensors are stored as {"shape": [...], "values": [...]}; doubles are printed
// in shortest round-trip form so a save/load cycle is bit-exact.
nlohmann::json to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j, bool requires_grad = true);

nlohmann::json to_json(const Linear& layer);
Linear linear_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Mlp& mlp);
Mlp mlp_from_json(const nlohmann::json& j);

// Artifact files: one magic line followed by a JSON document.
void write_artifact(const std::filesystem::path& path, std::string_view magic, const nlohmann::json& body);
nlohmann::json read_artifact(const std::filesystem::path& path, std::string_view magic);

// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace store
