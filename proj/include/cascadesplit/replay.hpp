#pragma once

#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cascadesplit/errors.hpp"
#include "cascadesplit/softmax.hpp"
#include "cascadesplit/textio.hpp"

namespace cascadesplit {

/// Externally produced logits for one sample at every stage of the cascade.
struct ReplayRow {
  std::size_t id = 0;
  std::size_t label = 0;
  LogitVector exit1;
  LogitVector exit2;
  std::optional<LogitVector> server;

  std::size_t class_count() const { return exit1.size(); }

  friend bool operator==(const ReplayRow&, const ReplayRow&) = default;
};

namespace detail {

inline void check_logits(const LogitVector& v, const char* key) {
  if (v.size() < 2) throw DataError(std::string("'") + key + "' needs at least 2 logits");
  for (double z : v)
    if (!std::isfinite(z)) throw DataError(std::string("'") + key + "' has a non-finite logit");
}

}  // namespace detail

inline void validate_row(const ReplayRow& r) {
  detail::check_logits(r.exit1, "exit1");
  detail::check_logits(r.exit2, "exit2");
  if (r.exit2.size() != r.exit1.size())
    throw DataError("exit1 and exit2 class counts differ");
  if (r.server) {
    detail::check_logits(*r.server, "server");
    if (r.server->size() != r.exit1.size()) throw DataError("server and exit1 class counts differ");
  }
  if (r.label >= r.exit1.size()) throw DataError("label exceeds class count");
}

inline std::string replay_to_string(const std::vector<ReplayRow>& rows) {
  std::ostringstream os;
  for (const auto& r : rows) {
    os << "{\"id\":" << r.id << ",\"label\":" << r.label << ",\"exit1\":";
    textio::write_reals(os, r.exit1);
    os << ",\"exit2\":";
    textio::write_reals(os, r.exit2);
    if (r.server) {
      os << ",\"server\":";
      textio::write_reals(os, *r.server);
    }
    os << "}\n";
  }
  return os.str();
}

inline void save_replay(const std::vector<ReplayRow>& rows, const std::string& path) {
  for (const auto& r : rows) validate_row(r);
  textio::write_file(path, replay_to_string(rows));
}

/// Parses line-delimited replay records. Malformed rows and rows whose class
/// count disagrees with earlier rows are rejected with their line number.
inline std::vector<ReplayRow> parse_replay(const std::string& text) {
  std::vector<ReplayRow> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ReplayRow r;
      r.id = j.at("id").get<std::size_t>();
      r.label = j.at("label").get<std::size_t>();
      r.exit1 = j.at("exit1").get<LogitVector>();
      r.exit2 = j.at("exit2").get<LogitVector>();
      if (j.contains("server")) r.server = j.at("server").get<LogitVector>();
      validate_row(r);
      if (!rows.empty() && rows.front().class_count() != r.class_count())
        throw DataError("class count differs from earlier rows");
      rows.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("replay line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("replay line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

inline std::vector<ReplayRow> load_replay(const std::string& path) {
  return parse_replay(textio::read_file(path));
}

}  // namespace cascadesplit
