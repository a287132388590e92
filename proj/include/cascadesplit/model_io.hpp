#pragma once

#include <ostream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "cascadesplit/errors.hpp"
#include "cascadesplit/mlp.hpp"
#include "cascadesplit/textio.hpp"

namespace cascadesplit {

inline constexpr const char* kModelFormat = "cascadesplit-mlp/1";

/// Writes the model as a JSON object. Every real is printed with 17
/// significant digits so that loading reproduces the parameters bit-exactly.
inline void write_model(std::ostream& os, const MlpModel& m) {
  os << "{\"format\":\"" << kModelFormat << "\",\"widths\":[";
  const auto w = m.widths();
  for (std::size_t i = 0; i < w.size(); ++i) os << (i ? "," : "") << w[i];
  os << "],\"layers\":[";
  for (std::size_t k = 0; k < m.layers.size(); ++k) {
    const auto& l = m.layers[k];
    os << (k ? "," : "") << "\n{\"activation\":\"" << to_string(l.activation) << "\",\"weights\":";
    textio::write_reals(os, l.weights);
    os << ",\"bias\":";
    textio::write_reals(os, l.bias);
    os << '}';
  }
  os << "],\"skips\":[";
  for (std::size_t k = 0; k < m.skips.size(); ++k) {
    const auto& s = m.skips[k];
    os << (k ? "," : "") << "\n{\"src\":" << s.src << ",\"dst\":" << s.dst << ",\"weights\":";
    textio::write_reals(os, s.weights);
    os << '}';
  }
  os << "]}";
}

inline std::string model_to_string(const MlpModel& m) {
  std::ostringstream ss;
  write_model(ss, m);
  return ss.str();
}

inline MlpModel model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kModelFormat)
      throw DataError("unsupported model format '" + j.at("format").get<std::string>() + "'");
    const auto widths = j.at("widths").get<std::vector<std::size_t>>();
    const auto& layers = j.at("layers");
    if (widths.size() < 2 || layers.size() + 1 != widths.size())
      throw DataError("model widths and layer count disagree");
    MlpModel m;
    for (std::size_t k = 0; k < layers.size(); ++k) {
      DenseLayer l;
      l.in = widths[k];
      l.out = widths[k + 1];
      const auto act = layers[k].at("activation").get<std::string>();
      if (act == "relu") l.activation = Activation::Relu;
      else if (act == "identity") l.activation = Activation::Identity;
      else throw DataError("unknown activation '" + act + "'");
      l.weights = layers[k].at("weights").get<std::vector<double>>();
      l.bias = layers[k].at("bias").get<std::vector<double>>();
      m.layers.push_back(std::move(l));
    }
    for (const auto& s : j.at("skips"))
      m.skips.push_back(SkipEdge{s.at("src").get<std::size_t>(), s.at("dst").get<std::size_t>(),
                                 s.at("weights").get<std::vector<double>>()});
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed model document: ") + e.what());
  } catch (const DomainError& e) {
    throw DataError(std::string("invalid model: ") + e.what());
  }
}

inline MlpModel parse_model(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model file is not valid JSON: ") + e.what());
  }
  return model_from_json(j);
}

inline void save_model(const MlpModel& m, const std::string& path) {
  textio::write_file(path, model_to_string(m) + "\n");
}

inline MlpModel load_model(const std::string& path) {
  return parse_model(textio::read_file(path));
}

}  // namespace cascadesplit
