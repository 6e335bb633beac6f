#include "store/serialize.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace store {

nlohmann::json to_json(const Tensor& t) {
  return {{"shape", t.shape()}, {"values", std::vector<double>(t.values().begin(), t.values().end())}};
}

Tensor tensor_from_json(const nlohmann::json& j, bool requires_grad) {
  return Tensor::from_values(j.at("shape").get<Shape>(), j.at("values").get<std::vector<double>>(), requires_grad);
}

nlohmann::json to_json(const Linear& layer) {
  nlohmann::json j{{"weight", to_json(layer.weight)}};
  if (layer.bias.defined()) j["bias"] = to_json(layer.bias);
  return j;
}

Linear linear_from_json(const nlohmann::json& j) {
  Linear layer;
  layer.weight = tensor_from_json(j.at("weight"));
  if (j.contains("bias")) layer.bias = tensor_from_json(j.at("bias"));
  return layer;
}

nlohmann::json to_json(const Mlp& mlp) {
  return {{"hidden", to_json(mlp.hidden)}, {"output", to_json(mlp.output)}, {"activation", to_string(mlp.act)}};
}

Mlp mlp_from_json(const nlohmann::json& j) {
  Mlp m;
  m.hidden = linear_from_json(j.at("hidden"));
  m.output = linear_from_json(j.at("output"));
  m.act = parse_activation(j.at("activation").get<std::string>());
  return m;
}

void write_artifact(const std::filesystem::path& path, std::string_view magic, const nlohmann::json& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << magic << '\n' << body.dump() << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

nlohmann::json read_artifact(const std::filesystem::path& path, std::string_view magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string first;
  std::getline(in, first);
  if (first != magic) {
    throw std::runtime_error(path.string() + ": bad magic '" + first + "', expected '" + std::string(magic) + "'");
  }
  std::stringstream rest;
  rest << in.rdbuf();
  try {
    return nlohmann::json::parse(rest.str());
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("format_double: conversion failed");
  return std::string(buf, end);
}

}  // namespace store
