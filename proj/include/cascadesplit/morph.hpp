#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cascadesplit/errors.hpp"
#include "cascadesplit/mlp.hpp"

// Function-preserving architecture edits on dense networks. Each operation
// returns a larger model whose outputs match the input model's outputs up to
// floating-point rounding.

namespace cascadesplit {

/// Adds `new_width - width(node)` units to hidden node `node`. New units copy
/// the incoming weights of a randomly chosen existing unit; the outgoing
/// weights of every replicated unit are split between its copies with random
/// positive shares summing to one, which keeps the function and breaks the
/// symmetry between copies.
inline MlpModel widen(const MlpModel& model, std::size_t node, std::size_t new_width,
                      std::uint64_t seed = 0) {
  model.validate();
  if (node == 0 || node >= model.depth())
    throw DomainError("widen targets a hidden node in [1, " + std::to_string(model.depth() - 1) + "]");
  const std::size_t old_width = model.width(node);
  if (new_width <= old_width) throw DomainError("widen must increase the width");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, old_width - 1);
  std::vector<std::size_t> origin(new_width);
  for (std::size_t c = 0; c < new_width; ++c) origin[c] = c < old_width ? c : pick(rng);

  std::uniform_real_distribution<double> share_dist(0.5, 1.5);
  std::vector<double> share(new_width);
  std::vector<double> share_total(old_width, 0.0);
  for (std::size_t c = 0; c < new_width; ++c) {
    share[c] = share_dist(rng);
    share_total[origin[c]] += share[c];
  }
  for (std::size_t c = 0; c < new_width; ++c) share[c] /= share_total[origin[c]];

  MlpModel out = model;
  // Incoming side: rows of the layer producing `node` and of skips into it.
  {
    const DenseLayer& src = model.layers[node - 1];
    DenseLayer& dst = out.layers[node - 1];
    dst.out = new_width;
    dst.weights.resize(new_width * dst.in);
    dst.bias.resize(new_width);
    for (std::size_t c = old_width; c < new_width; ++c) {
      for (std::size_t i = 0; i < dst.in; ++i) dst.w(c, i) = src.w(origin[c], i);
      dst.bias[c] = src.bias[origin[c]];
    }
  }
  for (std::size_t k = 0; k < model.skips.size(); ++k) {
    const SkipEdge& s = model.skips[k];
    if (s.dst != node) continue;
    const std::size_t sw = model.width(s.src);
    auto& w = out.skips[k].weights;
    w.resize(new_width * sw);
    for (std::size_t c = old_width; c < new_width; ++c)
      for (std::size_t i = 0; i < sw; ++i) w[c * sw + i] = s.weights[origin[c] * sw + i];
  }
  // Outgoing side: columns of the next layer and of skips leaving `node`.
  const auto split_columns = [&](const std::vector<double>& w_old, std::size_t rows) {
    std::vector<double> w_new(rows * new_width);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < new_width; ++c)
        w_new[r * new_width + c] = w_old[r * old_width + origin[c]] * share[c];
    return w_new;
  };
  {
    DenseLayer& next = out.layers[node];
    next.weights = split_columns(model.layers[node].weights, next.out);
    next.in = new_width;
  }
  for (std::size_t k = 0; k < model.skips.size(); ++k) {
    const SkipEdge& s = model.skips[k];
    if (s.src != node) continue;
    out.skips[k].weights = split_columns(s.weights, model.width(s.dst));
  }
  return out;
}

/// Inserts an identity-initialized rectifier layer directly after hidden node
/// `position`. Hidden activations are non-negative, so relu(I h) == h.
inline MlpModel deepen(const MlpModel& model, std::size_t position) {
  model.validate();
  if (position == 0 || position >= model.depth())
    throw DomainError("deepen position must be a hidden node in [1, " +
                      std::to_string(model.depth() - 1) + "]");
  const std::size_t w = model.width(position);
  DenseLayer id;
  id.in = w;
  id.out = w;
  id.weights.assign(w * w, 0.0);
  for (std::size_t i = 0; i < w; ++i) id.w(i, i) = 1.0;
  id.bias.assign(w, 0.0);
  id.activation = Activation::Relu;

  MlpModel out = model;
  out.layers.insert(out.layers.begin() + static_cast<std::ptrdiff_t>(position), std::move(id));
  for (auto& s : out.skips) {
    if (s.src > position) ++s.src;
    if (s.dst > position) ++s.dst;
  }
  return out;
}

/// Adds a zero-initialized additive skip from node `src` into node `dst`.
inline MlpModel add_skip(const MlpModel& model, std::size_t src, std::size_t dst) {
  model.validate();
  if (src >= dst || dst > model.depth()) throw DomainError("skip edges must point forward");
  if (model.has_skip(src, dst)) throw DomainError("skip edge already exists");
  MlpModel out = model;
  out.skips.push_back(SkipEdge{src, dst, std::vector<double>(model.width(dst) * model.width(src), 0.0)});
  return out;
}

struct MorphOp {
  enum class Kind { Widen, Deepen, AddSkip };

  Kind kind = Kind::Deepen;
  /// Widen: node; Deepen: position; AddSkip: source node.
  std::size_t first = 0;
  /// Widen: new width; AddSkip: destination node; unused for Deepen.
  std::size_t second = 0;
  std::uint64_t seed = 0;

  std::string describe() const {
    switch (kind) {
      case Kind::Widen:
        return "widen(" + std::to_string(first) + "," + std::to_string(second) + ")";
      case Kind::Deepen:
        return "deepen(" + std::to_string(first) + ")";
      case Kind::AddSkip:
        return "add_skip(" + std::to_string(first) + "," + std::to_string(second) + ")";
    }
    return "?";
  }

  friend bool operator==(const MorphOp&, const MorphOp&) = default;
};

inline MlpModel apply_morph(const MlpModel& model, const MorphOp& op) {
  switch (op.kind) {
    case MorphOp::Kind::Widen:
      return widen(model, op.first, op.second, op.seed);
    case MorphOp::Kind::Deepen:
      return deepen(model, op.first);
    case MorphOp::Kind::AddSkip:
      return add_skip(model, op.first, op.second);
  }
  throw DomainError("unknown morph kind");
}

/// Draws a morph that is valid for `model`: a widening by up to half the
/// current width (at least one unit), an identity layer, or a skip edge that
/// spans at least one layer and does not exist yet.
inline MorphOp random_morph(const MlpModel& model, std::mt19937_64& rng) {
  const std::size_t depth = model.depth();
  std::vector<std::pair<std::size_t, std::size_t>> free_skips;
  for (std::size_t s = 0; s <= depth; ++s)
    for (std::size_t d = s + 2; d <= depth; ++d)
      if (!model.has_skip(s, d)) free_skips.emplace_back(s, d);

  std::vector<MorphOp::Kind> kinds;
  if (depth >= 2) {
    kinds.push_back(MorphOp::Kind::Widen);
    kinds.push_back(MorphOp::Kind::Deepen);
  }
  if (!free_skips.empty()) kinds.push_back(MorphOp::Kind::AddSkip);
  if (kinds.empty()) throw DomainError("model admits no morphism (no hidden layer)");

  MorphOp op;
  op.kind = kinds[std::uniform_int_distribution<std::size_t>(0, kinds.size() - 1)(rng)];
  op.seed = rng();
  switch (op.kind) {
    case MorphOp::Kind::Widen: {
      op.first = std::uniform_int_distribution<std::size_t>(1, depth - 1)(rng);
      const std::size_t w = model.width(op.first);
      op.second = w + std::uniform_int_distribution<std::size_t>(1, std::max<std::size_t>(1, w / 2))(rng);
      break;
    }
    case MorphOp::Kind::Deepen:
      op.first = std::uniform_int_distribution<std::size_t>(1, depth - 1)(rng);
      break;
    case MorphOp::Kind::AddSkip: {
      const auto& e = free_skips[std::uniform_int_distribution<std::size_t>(0, free_skips.size() - 1)(rng)];
      op.first = e.first;
      op.second = e.second;
      break;
    }
  }
  return op;
}

}  // namespace cascadesplit
