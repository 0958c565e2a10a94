#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tract/errors.hpp"
#include "tract/geometry.hpp"

namespace tract::data {

inline constexpr const char* kDatasetSchema = "tract-dataset-v1";

enum class Maneuver { straight, curve, turn, stop_and_go, evasive, u_turn };

inline constexpr int kNumManeuvers = 6;

inline const char* maneuver_name(Maneuver m) {
  switch (m) {
    case Maneuver::straight: return "straight";
    case Maneuver::curve: return "curve";
    case Maneuver::turn: return "turn";
    case Maneuver::stop_and_go: return "stop_and_go";
    case Maneuver::evasive: return "evasive";
    case Maneuver::u_turn: return "u_turn";
  }
  return "straight";
}

inline Maneuver maneuver_from_name(const std::string& s) {
  for (int i = 0; i < kNumManeuvers; ++i) {
    Maneuver m = static_cast<Maneuver>(i);
    if (s == maneuver_name(m)) return m;
  }
  throw DataError("unknown maneuver label '" + s + "'");
}

// Tail maneuvers are the infrequent, hard-to-extrapolate ones.
inline bool is_tail_maneuver(Maneuver m) {
  return m == Maneuver::stop_and_go || m == Maneuver::evasive || m == Maneuver::u_turn;
}

// One agent's observed/future trajectory plus neighbor tracks and drivable
// area. The maneuver label is generator-internal ground truth used only by
// tests and reports, never by the model input path.
struct Scenario {
  std::int64_t sample_id = 0;
  std::vector<geom::Vec2> history;                 // L points
  std::vector<geom::Vec2> future;                  // T points
  std::vector<std::vector<geom::Vec2>> neighbors;  // fixed slot count, L points each
  std::vector<int> neighbor_mask;                  // 1 = valid slot
  std::vector<geom::ConvexPolygon> drivable;
  Maneuver maneuver = Maneuver::straight;
};

struct DatasetMeta {
  std::string schema = kDatasetSchema;
  std::string config_hash;
  std::uint64_t seed = 0;
  int history_len = 8;
  int future_len = 6;
  int neighbor_slots = 4;
  double dt = 0.5;
  int count = 0;
};

// Heading of the last observed displacement; walks backwards past stationary
// steps so slow stop-and-go histories still yield a stable frame.
inline double ego_heading(const Scenario& s) {
  for (std::size_t i = s.history.size() - 1; i >= 1; --i) {
    geom::Vec2 d = s.history[i] - s.history[i - 1];
    if (d.norm() > 1e-9) return std::atan2(d.y, d.x);
  }
  return 0.0;
}

inline geom::Pose ego_pose(const Scenario& s) {
  return geom::Pose{s.history.back(), ego_heading(s)};
}

// Rigid transform of the whole scenario into the ego frame: last observed
// point at the origin, last heading along +x.
inline Scenario ego_normalized(const Scenario& s) {
  geom::Pose pose = ego_pose(s);
  Scenario out = s;
  for (auto& p : out.history) p = pose.to_local(p);
  for (auto& p : out.future) p = pose.to_local(p);
  for (auto& nb : out.neighbors)
    for (auto& p : nb) p = pose.to_local(p);
  for (auto& poly : out.drivable) poly = geom::to_local(pose, poly);
  return out;
}

inline void validate_scenario(const Scenario& s, int history_len, int future_len) {
  auto fail = [&](const std::string& what) {
    throw DataError("scenario " + std::to_string(s.sample_id) + ": " + what);
  };
  if (static_cast<int>(s.history.size()) != history_len)
    fail("expected " + std::to_string(history_len) + " history points, got " +
         std::to_string(s.history.size()));
  if (static_cast<int>(s.future.size()) != future_len)
    fail("expected " + std::to_string(future_len) + " future points, got " +
         std::to_string(s.future.size()));
  auto finite = [](geom::Vec2 p) { return std::isfinite(p.x) && std::isfinite(p.y); };
  for (auto p : s.history)
    if (!finite(p)) fail("non-finite history coordinate");
  for (auto p : s.future)
    if (!finite(p)) fail("non-finite future coordinate");
  if (s.neighbors.size() != s.neighbor_mask.size()) fail("neighbor mask size mismatch");
  for (const auto& nb : s.neighbors) {
    if (static_cast<int>(nb.size()) != history_len) fail("neighbor track length mismatch");
    for (auto p : nb)
      if (!finite(p)) fail("non-finite neighbor coordinate");
  }
  // Kinematic continuity between the observed and future segments.
  double max_step = 0.0;
  for (std::size_t i = 1; i < s.history.size(); ++i)
    max_step = std::max(max_step, geom::dist(s.history[i], s.history[i - 1]));
  double gap = geom::dist(s.future.front(), s.history.back());
  if (gap > 1.5 * (max_step + 0.5)) fail("future start breaks kinematic continuity");
  // Ground truth must stay on the drivable area.
  for (auto p : s.future)
    if (!geom::point_in_union(s.drivable, p)) fail("future point off the drivable area");
}

// ---------------------------------------------------------------------------
// JSONL serialization

namespace detail {

inline nlohmann::json points_json(const std::vector<geom::Vec2>& pts) {
  nlohmann::json arr = nlohmann::json::array();
  for (auto p : pts) arr.push_back({p.x, p.y});
  return arr;
}

inline std::vector<geom::Vec2> points_from_json(const nlohmann::json& arr) {
  std::vector<geom::Vec2> pts;
  pts.reserve(arr.size());
  for (const auto& p : arr) pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  return pts;
}

}  // namespace detail

inline nlohmann::json scenario_to_json(const Scenario& s) {
  nlohmann::json j;
  j["sample_id"] = s.sample_id;
  j["history"] = detail::points_json(s.history);
  j["future"] = detail::points_json(s.future);
  nlohmann::json nbs = nlohmann::json::array();
  for (const auto& nb : s.neighbors) nbs.push_back(detail::points_json(nb));
  j["neighbors"] = std::move(nbs);
  j["neighbor_mask"] = s.neighbor_mask;
  nlohmann::json polys = nlohmann::json::array();
  for (const auto& poly : s.drivable) polys.push_back(detail::points_json(poly.pts));
  j["drivable"] = std::move(polys);
  j["maneuver_label"] = maneuver_name(s.maneuver);
  return j;
}

inline Scenario scenario_from_json(const nlohmann::json& j) {
  Scenario s;
  s.sample_id = j.at("sample_id").get<std::int64_t>();
  s.history = detail::points_from_json(j.at("history"));
  s.future = detail::points_from_json(j.at("future"));
  for (const auto& nb : j.at("neighbors")) s.neighbors.push_back(detail::points_from_json(nb));
  s.neighbor_mask = j.at("neighbor_mask").get<std::vector<int>>();
  for (const auto& poly : j.at("drivable"))
    s.drivable.push_back(geom::ConvexPolygon{detail::points_from_json(poly)});
  s.maneuver = maneuver_from_name(j.at("maneuver_label").get<std::string>());
  return s;
}

// First line is a meta object carrying the schema version, config hash and
// seed; each following line is one scenario.
inline void write_dataset_jsonl(const std::filesystem::path& path,
                                std::span<const Scenario> scenarios, const DatasetMeta& meta) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset file " + path.string());
  nlohmann::json m;
  m["schema"] = meta.schema;
  m["config_hash"] = meta.config_hash;
  m["seed"] = meta.seed;
  m["history_len"] = meta.history_len;
  m["future_len"] = meta.future_len;
  m["neighbor_slots"] = meta.neighbor_slots;
  m["dt"] = meta.dt;
  m["count"] = scenarios.size();
  out << m.dump() << "\n";
  for (const auto& s : scenarios) out << scenario_to_json(s).dump() << "\n";
}

inline std::vector<Scenario> read_dataset_jsonl(const std::filesystem::path& path,
                                                DatasetMeta* meta_out = nullptr) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read dataset file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("dataset file " + path.string() + " is empty");
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed dataset meta in " + path.string() + ": " + e.what());
  }
  if (m.value("schema", "") != kDatasetSchema)
    throw DataError("dataset " + path.string() + " has unknown schema version");
  DatasetMeta meta;
  meta.schema = m.at("schema").get<std::string>();
  meta.config_hash = m.value("config_hash", "");
  meta.seed = m.value("seed", std::uint64_t{0});
  meta.history_len = m.at("history_len").get<int>();
  meta.future_len = m.at("future_len").get<int>();
  meta.neighbor_slots = m.at("neighbor_slots").get<int>();
  meta.dt = m.value("dt", 0.5);
  meta.count = m.value("count", 0);
  if (meta_out) *meta_out = meta;
  std::vector<Scenario> scenarios;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      scenarios.push_back(scenario_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("malformed scenario line in " + path.string() + ": " + e.what());
    }
  }
  return scenarios;
}

}  // namespace tract::data
