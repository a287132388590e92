#pragma once

#include <optional>
#include <sstream>
#include <string>
#include <utility>

#include <json.hpp>

#include "cascadesplit/errors.hpp"
#include "cascadesplit/mlp.hpp"
#include "cascadesplit/model_io.hpp"
#include "cascadesplit/textio.hpp"

namespace cascadesplit {

/// A client network with an early exit: `head` classifies the activation of
/// `exit_node` inside `backbone`; the backbone's own output is the final exit.
struct TwoExitModel {
  MlpModel backbone;
  std::size_t exit_node = 0;
  MlpModel head;

  struct Outputs {
    LogitVector exit1;
    LogitVector exit2;
  };

  Outputs forward(std::span<const double> x) const {
    MlpModel::Trace t;
    backbone.run(x, t);
    return {head.forward(t.post[exit_node]), std::move(t.post.back())};
  }

  LogitVector exit1_logits(std::span<const double> x) const {
    return head.forward(backbone.activation_at(x, exit_node));
  }

  LogitVector exit2_logits(std::span<const double> x) const { return backbone.forward(x); }

  void validate() const {
    backbone.validate();
    head.validate();
    if (exit_node == 0 || exit_node >= backbone.depth())
      throw DomainError("exit node must be strictly inside the backbone");
    if (head.depth() != 1 || head.input_width() != backbone.width(exit_node) ||
        head.output_width() != backbone.output_width())
      throw DomainError("exit head must be one linear layer from the exit node to the classes");
  }

  friend bool operator==(const TwoExitModel&, const TwoExitModel&) = default;
};

/// The middle of the network: node floor(depth / 2).
inline std::size_t default_exit_node(const MlpModel& model) { return model.depth() / 2; }

/// Attaches a zero-initialized linear exit head at `node` (default: the middle
/// node). The backbone is left untouched, so exit-2 outputs are unchanged. A
/// zero head emits all-zero logits and therefore predicts class 0 until it is
/// trained.
inline TwoExitModel attach_exit(const MlpModel& model, std::optional<std::size_t> node = std::nullopt) {
  model.validate();
  const std::size_t at = node.value_or(default_exit_node(model));
  if (at == 0 || at >= model.depth())
    throw DomainError("exit position must be strictly inside the network");
  TwoExitModel m;
  m.backbone = model;
  m.exit_node = at;
  m.head = make_mlp({model.width(at), model.output_width()}, 0);
  m.head.set_zero();
  return m;
}

struct ExitTrainConfig {
  TrainConfig head;
  /// Fine-tune the backbone (exit 2) on hard labels before fitting the head.
  bool finetune_backbone = false;
  TrainConfig backbone;
};

/// Fits the exit-1 head on frozen backbone features. With
/// `finetune_backbone` the backbone is fine-tuned first, so the head is
/// always fitted to the final shared prefix.
inline TwoExitModel train_exits(TwoExitModel model, std::span<const Sample> data,
                                const ExitTrainConfig& cfg) {
  model.validate();
  if (cfg.finetune_backbone) model.backbone = train(std::move(model.backbone), data, cfg.backbone).model;
  if (cfg.head.epochs == 0) return model;
  Dataset features;
  features.reserve(data.size());
  for (const auto& s : data) features.push_back(Sample{model.backbone.activation_at(s.x, model.exit_node), s.label});
  model.head = train(std::move(model.head), features, cfg.head).model;
  return model;
}

inline constexpr const char* kTwoExitFormat = "cascadesplit-two-exit/1";

inline std::string two_exit_to_string(const TwoExitModel& m) {
  std::ostringstream os;
  os << "{\"format\":\"" << kTwoExitFormat << "\",\"exit_node\":" << m.exit_node << ",\n\"backbone\":";
  write_model(os, m.backbone);
  os << ",\n\"head\":";
  write_model(os, m.head);
  os << "}\n";
  return os.str();
}

inline void save_two_exit(const TwoExitModel& m, const std::string& path) {
  textio::write_file(path, two_exit_to_string(m));
}

inline TwoExitModel load_two_exit(const std::string& path) {
  try {
    const auto j = nlohmann::json::parse(textio::read_file(path));
    if (j.at("format").get<std::string>() != kTwoExitFormat)
      throw DataError("unsupported two-exit model format");
    TwoExitModel m;
    m.exit_node = j.at("exit_node").get<std::size_t>();
    m.backbone = model_from_json(j.at("backbone"));
    m.head = model_from_json(j.at("head"));
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed two-exit model '" + path + "': " + e.what());
  } catch (const DomainError& e) {
    throw DataError("invalid two-exit model '" + path + "': " + e.what());
  }
}

}  // namespace cascadesplit
