#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tract/autodiff.hpp"
#include "tract/errors.hpp"

namespace tract::nn {

inline constexpr const char* kParamFileFormat = "tract-params-v1";

// Parameter checkpoint: a versioned JSON map of parameter name -> shape and
// row-major values. Doubles are written with shortest round-trip formatting,
// so save/load restores values bitwise.
inline void save_params(const std::filesystem::path& path, const ParamSet& params,
                        const nlohmann::json& meta = nlohmann::json::object()) {
  nlohmann::json j;
  j["format"] = kParamFileFormat;
  j["meta"] = meta;
  nlohmann::json p = nlohmann::json::object();
  for (const Value& v : params.all()) {
    const Array& a = v.data();
    nlohmann::json entry;
    entry["shape"] = {a.rows(), a.cols()};
    entry["values"] = std::vector<double>(a.data(), a.data() + a.size());
    p[v.name()] = std::move(entry);
  }
  j["params"] = std::move(p);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint file " + path.string());
  out << j.dump() << "\n";
}

inline ParamSet load_params(const std::filesystem::path& path,
                            nlohmann::json* meta_out = nullptr) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read checkpoint file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  if (!j.contains("format") || j["format"] != kParamFileFormat)
    throw DataError("checkpoint " + path.string() + " has unknown format header");
  if (meta_out) *meta_out = j.value("meta", nlohmann::json::object());
  ParamSet params;
  for (const auto& [name, entry] : j.at("params").items()) {
    const auto shape = entry.at("shape").get<std::vector<int>>();
    if (shape.size() != 2) throw DataError("checkpoint parameter '" + name + "' has bad shape");
    const auto values = entry.at("values").get<std::vector<double>>();
    Array a(shape[0], shape[1]);
    if (values.size() != a.size())
      throw DataError("checkpoint parameter '" + name + "' has " +
                      std::to_string(values.size()) + " values for shape " + a.shape_str());
    for (std::size_t i = 0; i < values.size(); ++i) a[i] = values[i];
    params.add(name, std::move(a));
  }
  return params;
}

}  // namespace tract::nn
