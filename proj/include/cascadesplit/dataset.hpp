#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cascadesplit/errors.hpp"
#include "cascadesplit/sample.hpp"
#include "cascadesplit/textio.hpp"

namespace cascadesplit {

/// Gaussian-cluster classification problem. Each class is a mixture of
/// `clusters_per_class` unit-variance blobs; centers are rescaled so that the
/// closest pair of centers belonging to different classes sits `separation`
/// noise standard deviations apart.
struct SyntheticSpec {
  std::size_t classes = 2;
  std::vector<std::size_t> samples_per_class{100, 100};
  std::size_t input_dim = 2;
  double separation = 6.0;
  std::size_t clusters_per_class = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (classes < 2) throw DomainError("synthetic spec needs at least 2 classes");
    if (samples_per_class.size() != classes)
      throw DomainError("samples_per_class must list one count per class");
    for (auto c : samples_per_class)
      if (c == 0) throw DomainError("every class needs at least one sample");
    if (input_dim == 0) throw DomainError("input dimension must be positive");
    if (!(separation > 0.0)) throw DomainError("separation must be positive");
    if (clusters_per_class == 0) throw DomainError("clusters_per_class must be positive");
  }
};

inline Dataset gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  const std::size_t k = spec.clusters_per_class;
  std::vector<std::vector<double>> centers(spec.classes * k, std::vector<double>(spec.input_dim));
  for (auto& c : centers)
    for (double& v : c) v = normal(rng);

  double closest = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < centers.size(); ++a)
    for (std::size_t b = a + 1; b < centers.size(); ++b) {
      if (a / k == b / k) continue;
      double d2 = 0.0;
      for (std::size_t i = 0; i < spec.input_dim; ++i)
        d2 += (centers[a][i] - centers[b][i]) * (centers[a][i] - centers[b][i]);
      closest = std::min(closest, std::sqrt(d2));
    }
  if (!(closest > 0.0)) throw DomainError("degenerate cluster centers");
  const double factor = spec.separation / closest;
  for (auto& c : centers)
    for (double& v : c) v *= factor;

  Dataset data;
  for (std::size_t cls = 0; cls < spec.classes; ++cls)
    for (std::size_t i = 0; i < spec.samples_per_class[cls]; ++i) {
      const auto& center = centers[cls * k + i % k];
      Sample s;
      s.label = cls;
      s.x.resize(spec.input_dim);
      for (std::size_t d = 0; d < spec.input_dim; ++d) s.x[d] = center[d] + normal(rng);
      data.push_back(std::move(s));
    }
  std::shuffle(data.begin(), data.end(), rng);
  return data;
}

struct SplitFractions {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

struct DataSplits {
  Dataset train;
  Dataset validation;
  Dataset test;
};

/// Seeded shuffle followed by a cut. Validation and test sizes are floored;
/// the remainder goes to training.
inline DataSplits split(const Dataset& data, SplitFractions f, std::uint64_t seed) {
  if (f.train < 0.0 || f.validation < 0.0 || f.test < 0.0 ||
      std::abs(f.train + f.validation + f.test - 1.0) > 1e-9)
    throw DomainError("split fractions must be non-negative and sum to 1");
  const std::size_t n = data.size();
  const auto count = [n](double frac) {
    return static_cast<std::size_t>(std::floor(frac * static_cast<double>(n) + 1e-9));
  };
  const std::size_t n_val = count(f.validation);
  const std::size_t n_test = count(f.test);
  const std::size_t n_train = n - n_val - n_test;
  if (n > 0 && (n_val == 0 || n_test == 0 || n_train == 0))
    throw DomainError("split of " + std::to_string(n) + " samples leaves an empty partition");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  DataSplits out;
  for (std::size_t i = 0; i < n; ++i) {
    const Sample& s = data[order[i]];
    if (i < n_train) out.train.push_back(s);
    else if (i < n_train + n_val) out.validation.push_back(s);
    else out.test.push_back(s);
  }
  return out;
}

inline std::size_t class_count(const Dataset& data) {
  std::size_t n = 0;
  for (const auto& s : data) n = std::max(n, s.label + 1);
  return n;
}

/// One JSON record per line: {"id":i,"x":[...],"label":k}.
inline std::string dataset_to_string(const Dataset& data) {
  std::ostringstream os;
  for (std::size_t i = 0; i < data.size(); ++i) {
    os << "{\"id\":" << i << ",\"x\":";
    textio::write_reals(os, data[i].x);
    os << ",\"label\":" << data[i].label << "}\n";
  }
  return os.str();
}

inline void save_dataset(const Dataset& data, const std::string& path) {
  textio::write_file(path, dataset_to_string(data));
}

inline Dataset parse_dataset(const std::string& text) {
  Dataset data;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::size_t dim = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Sample s;
      s.x = j.at("x").get<std::vector<double>>();
      s.label = j.at("label").get<std::size_t>();
      if (s.x.empty()) throw DataError("empty feature vector");
      if (data.empty()) dim = s.x.size();
      else if (s.x.size() != dim) throw DataError("feature width differs from earlier rows");
      for (double v : s.x)
        if (!std::isfinite(v)) throw DataError("non-finite feature");
      data.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("dataset line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("dataset line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return data;
}

inline Dataset load_dataset(const std::string& path) {
  return parse_dataset(textio::read_file(path));
}

}  // namespace cascadesplit
