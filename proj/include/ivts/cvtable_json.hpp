#pragma once

#include <json.hpp>

#include "ivts/stattests.hpp"

// JSON serialization of Monte Carlo critical-value tables.

namespace ivts::stattests {

inline nlohmann::json cv_table_to_json(const CvTable& t) {
  nlohmann::json j;
  j["test"] = kind_name(t.kind);
  j["harmonic"] = t.harmonic;
  j["sample_size"] = t.sample_size;
  j["levels"] = t.levels;
  j["quantiles"] = t.quantiles;
  j["replications"] = t.replications;
  j["seed"] = t.seed;
  return j;
}

inline CvTable cv_table_from_json(const nlohmann::json& j) {
  CvTable t;
  const std::string kind = j.at("test").get<std::string>();
  if (kind == "rw") t.kind = CvTestKind::rw;
  else if (kind == "rwd") t.kind = CvTestKind::rwd;
  else if (kind == "irw") t.kind = CvTestKind::irw;
  else if (kind == "seasonal_freq") t.kind = CvTestKind::seasonal_freq;
  else if (kind == "seasonal_group2") t.kind = CvTestKind::seasonal_group2;
  else throw ValidationError("cv_table_from_json: unknown test kind '" + kind + "'");
  t.harmonic = j.value("harmonic", 0);
  t.sample_size = j.at("sample_size").get<int>();
  t.levels = j.at("levels").get<std::vector<double>>();
  t.quantiles = j.at("quantiles").get<std::vector<double>>();
  if (t.levels.size() != t.quantiles.size())
    throw ValidationError("cv_table_from_json: levels/quantiles length mismatch");
  t.replications = j.value("replications", 0);
  t.seed = j.value("seed", std::uint64_t{0});
  return t;
}

}  // namespace ivts::stattests
