#pragma once

// Deterministic synthetic driving scenarios and the on-disk dataset format.
//
// Layout of a dataset directory:
//   manifest.json     schema_version, render config, class counts, records
//   frames/<id>.rgb   16 x H x W x 3 raw unsigned 8-bit RGB, row-major
//   meta/<id>.json    sensor reading, texts, action, scenario parameters

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "mmx/error.hpp"
#include "mmx/rng.hpp"

namespace mmx {

inline constexpr int kActionCount = 5;

/// Fixed integer encoding 0-4.
enum class ActionLabel : int { accelerate = 0, decelerate = 1, turn_left = 2, turn_right = 3, stop = 4 };

inline constexpr std::array<const char*, kActionCount> kActionNames = {
    "accelerate", "decelerate", "turn_left", "turn_right", "stop"};

inline const char* action_name(ActionLabel a) { return kActionNames.at(static_cast<std::size_t>(a)); }

inline ActionLabel action_from_index(int i) {
  require(i >= 0 && i < kActionCount, ErrorCode::invalid_argument,
          "action code out of range: " + std::to_string(i));
  return static_cast<ActionLabel>(i);
}

inline ActionLabel parse_action(const std::string& name) {
  for (int i = 0; i < kActionCount; ++i)
    if (name == kActionNames[static_cast<std::size_t>(i)]) return static_cast<ActionLabel>(i);
  fail(ErrorCode::invalid_argument, "unknown action '" + name + "'");
}

enum class ScenarioKind : int {
  pedestrian_crossing = 0,
  traffic_light_red = 1,
  sharp_curve = 2,
  merging_traffic = 3,
  left_turn = 4,
  free_road = 5,
};

inline constexpr int kScenarioKindCount = 6;

inline constexpr std::array<const char*, kScenarioKindCount> kScenarioNames = {
    "pedestrian_crossing", "traffic_light_red", "sharp_curve",
    "merging_traffic",     "left_turn",         "free_road"};

inline const char* kind_name(ScenarioKind k) {
  const auto i = static_cast<int>(k);
  require(i >= 0 && i < kScenarioKindCount, ErrorCode::invalid_argument,
          "invalid scenario kind " + std::to_string(i));
  return kScenarioNames[static_cast<std::size_t>(i)];
}

inline ScenarioKind parse_kind(const std::string& name) {
  for (int i = 0; i < kScenarioKindCount; ++i)
    if (name == kScenarioNames[static_cast<std::size_t>(i)]) return static_cast<ScenarioKind>(i);
  fail(ErrorCode::invalid_argument, "unknown scenario kind '" + name + "'");
}

/// Ground-truth scenario -> action mapping.
inline ActionLabel action_for(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::pedestrian_crossing: return ActionLabel::decelerate;
    case ScenarioKind::traffic_light_red: return ActionLabel::stop;
    case ScenarioKind::sharp_curve: return ActionLabel::decelerate;
    case ScenarioKind::merging_traffic: return ActionLabel::turn_right;
    case ScenarioKind::left_turn: return ActionLabel::turn_left;
    case ScenarioKind::free_road: return ActionLabel::accelerate;
  }
  fail(ErrorCode::invalid_argument, "invalid scenario kind");
}

/// Scenario-specific scalars; every field is a fraction in [0, 1].
struct Geometry {
  double object_x = 0.5;
  double object_y = 0.5;
  double curve = 0.0;
  double light_phase = 0.0;
  friend bool operator==(const Geometry&, const Geometry&) = default;
};

struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::free_road;
  std::uint64_t seed = 0;
  Geometry geometry;

  /// Geometry drawn from the seed.
  static ScenarioSpec sample(ScenarioKind kind, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x6E0));
    ScenarioSpec spec{kind, seed, {}};
    spec.geometry.object_x = rng.uniform();
    spec.geometry.object_y = rng.uniform();
    spec.geometry.curve = kind == ScenarioKind::sharp_curve ? rng.uniform(0.6, 1.0) : 0.0;
    spec.geometry.light_phase = rng.uniform();
    return spec;
  }

  void validate() const {
    kind_name(kind);
    for (double g : {geometry.object_x, geometry.object_y, geometry.curve, geometry.light_phase})
      require(std::isfinite(g) && g >= 0.0 && g <= 1.0, ErrorCode::invalid_argument,
              "scenario geometry fraction outside [0,1]");
  }
};

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

struct Palette {
  Rgb sky{135, 190, 235};
  Rgb grass{60, 120, 50};
  Rgb road{90, 90, 95};
  Rgb ego{245, 245, 245};
  Rgb pedestrian{240, 200, 40};
  Rgb light_housing{25, 25, 25};
  Rgb light_red{230, 20, 20};
  Rgb curve_sign{250, 140, 0};
  Rgb merging_car{40, 80, 220};
  Rgb turn_sign{40, 230, 150};
  friend bool operator==(const Palette&, const Palette&) = default;
};

struct RenderConfig {
  int size = 64;  // H == W
  Palette palette;
  friend bool operator==(const RenderConfig&, const RenderConfig&) = default;
};

/// 16 frames of H x W RGB, raw 8-bit, index order (frame, y, x, channel).
struct VideoClip {
  static constexpr int kFrames = 16;
  int size = 0;
  std::vector<std::uint8_t> pixels;

  static VideoClip blank(int size) {
    return VideoClip{size, std::vector<std::uint8_t>(byte_count(size), 0)};
  }
  static std::size_t byte_count(int size) {
    return static_cast<std::size_t>(kFrames) * static_cast<std::size_t>(size) *
           static_cast<std::size_t>(size) * 3;
  }
  std::size_t index(int f, int y, int x, int c) const {
    return ((static_cast<std::size_t>(f) * size + y) * size + x) * 3 + c;
  }
  std::uint8_t at(int f, int y, int x, int c) const { return pixels[index(f, y, x, c)]; }
  friend bool operator==(const VideoClip&, const VideoClip&) = default;
};

struct SensorReading {
  double speed = 0.0;      // m/s
  double latitude = 0.0;   // degrees
  double longitude = 0.0;  // degrees
  friend bool operator==(const SensorReading&, const SensorReading&) = default;

  std::array<double, 3> values() const { return {speed, latitude, longitude}; }
};

struct Sample {
  std::string id;
  ScenarioKind kind = ScenarioKind::free_road;
  std::uint64_t seed = 0;
  Geometry geometry;
  VideoClip clip;
  SensorReading sensor;
  std::string description;
  std::string explanation;
  ActionLabel action = ActionLabel::accelerate;
  friend bool operator==(const Sample&, const Sample&) = default;
};

namespace detail {

inline void fill_rect(VideoClip& clip, int f, int x0, int y0, int x1, int y1, Rgb c) {
  x0 = std::clamp(x0, 0, clip.size);
  x1 = std::clamp(x1, 0, clip.size);
  y0 = std::clamp(y0, 0, clip.size);
  y1 = std::clamp(y1, 0, clip.size);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      const auto i = clip.index(f, y, x, 0);
      clip.pixels[i] = c.r;
      clip.pixels[i + 1] = c.g;
      clip.pixels[i + 2] = c.b;
    }
}

inline int px(double fraction, int size) { return static_cast<int>(std::floor(fraction * size)); }

inline void render(VideoClip& clip, const ScenarioSpec& spec, double speed, const Palette& pal) {
  const int n = clip.size;
  const int horizon = n / 4;
  const int obj = std::max(2, n / 6);
  const Geometry& g = spec.geometry;
  const int drift = std::max(1, n / 64);

  for (int f = 0; f < VideoClip::kFrames; ++f) {
    fill_rect(clip, f, 0, 0, n, horizon, pal.sky);
    fill_rect(clip, f, 0, horizon, n, n, pal.grass);

    for (int y = horizon; y < n; ++y) {
      const double t = static_cast<double>(y - horizon) / static_cast<double>(n - horizon);
      const double half = n * (0.06 + 0.20 * t);
      const double center = n * 0.5 + g.curve * 0.35 * n * (1.0 - t) * (1.0 - t);
      fill_rect(clip, f, static_cast<int>(std::floor(center - half)), y,
                static_cast<int>(std::ceil(center + half)), y + 1, pal.road);
    }

    // Ego marker advances with speed and wraps inside the bottom quarter.
    const int travel = static_cast<int>(std::floor(f * speed * 0.05 * n / 64.0)) % std::max(1, n / 4);
    const int ego_h = std::max(2, n / 16);
    const int ego_y = n - 2 - ego_h - travel;
    fill_rect(clip, f, n / 2 - n / 16, ego_y, n / 2 + n / 16, ego_y + ego_h, pal.ego);

    switch (spec.kind) {
      case ScenarioKind::pedestrian_crossing: {
        const int x0 = px(0.38 + 0.14 * g.object_x, n) + (f * drift) / 2;
        const int y0 = px(0.46 + 0.10 * g.object_y, n);
        fill_rect(clip, f, x0, y0, x0 + std::max(1, obj * 3 / 5), y0 + obj, pal.pedestrian);
        break;
      }
      case ScenarioKind::traffic_light_red: {
        const int x0 = px(0.44 + 0.06 * g.object_x, n);
        const int y0 = px(0.01 + 0.03 * g.object_y, n);
        const int w = std::max(2, obj * 4 / 5);
        const int h = std::max(3, obj * 8 / 5);
        fill_rect(clip, f, x0, y0, x0 + w, y0 + h, pal.light_housing);
        const double glow = 0.75 + 0.25 * g.light_phase;
        const Rgb lamp{static_cast<std::uint8_t>(std::floor(pal.light_red.r * glow)),
                       static_cast<std::uint8_t>(std::floor(pal.light_red.g * glow)),
                       static_cast<std::uint8_t>(std::floor(pal.light_red.b * glow))};
        fill_rect(clip, f, x0 + 1, y0 + 1, x0 + w - 1, y0 + h / 2, lamp);
        break;
      }
      case ScenarioKind::sharp_curve: {
        const int x0 = px(0.72 + 0.10 * g.object_x, n);
        const int y0 = px(0.28 + 0.08 * g.object_y, n);
        fill_rect(clip, f, x0, y0, x0 + obj, y0 + obj, pal.curve_sign);
        break;
      }
      case ScenarioKind::merging_traffic: {
        const int x0 = px(0.66 + 0.10 * g.object_x, n) - (f * drift) / 2;
        const int y0 = px(0.55 + 0.12 * g.object_y, n);
        fill_rect(clip, f, x0, y0, x0 + obj * 6 / 5, y0 + std::max(1, obj * 4 / 5), pal.merging_car);
        break;
      }
      case ScenarioKind::left_turn: {
        fill_rect(clip, f, 0, px(0.36, n), n / 2, px(0.46, n), pal.road);
        const int x0 = px(0.06 + 0.10 * g.object_x, n);
        const int y0 = px(0.20 + 0.06 * g.object_y, n);
        fill_rect(clip, f, x0, y0, x0 + obj, y0 + std::max(1, obj * 3 / 5), pal.turn_sign);
        break;
      }
      case ScenarioKind::free_road:
        break;
    }
  }
}

// Road-context phrases shared by pairs of scenario kinds, so the description
// alone narrows the action down to two candidates.
inline const std::array<const char*, 2>& context_phrases(ScenarioKind kind) {
  static const std::array<const char*, 2> city{"driving on a busy city street",
                                               "moving through dense urban traffic"};
  static const std::array<const char*, 2> junction{"approaching an intersection",
                                                   "nearing a signalized junction"};
  static const std::array<const char*, 2> open{"cruising on an open road",
                                               "traveling along a rural highway"};
  switch (kind) {
    case ScenarioKind::pedestrian_crossing:
    case ScenarioKind::merging_traffic: return city;
    case ScenarioKind::traffic_light_red:
    case ScenarioKind::left_turn: return junction;
    default: return open;
  }
}

inline const std::array<const char*, 2>& explanation_templates(ScenarioKind kind) {
  static const std::array<std::array<const char*, 2>, kScenarioKindCount> table{{
      {"slow down because of pedestrian", "reduce speed due to pedestrian ahead"},
      {"stop because of red light", "stop at red light ahead"},
      {"reduce speed because of sharp curve", "slow down due to sharp curve ahead"},
      {"change lane right due to merging", "switch to right lane for merging"},
      {"turn left at the intersection", "turn left because the road turns left"},
      {"accelerate because the road is clear", "speed up on the open road"},
  }};
  return table[static_cast<std::size_t>(kind)];
}

inline double mean_speed(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::pedestrian_crossing: return 7.0;
    case ScenarioKind::traffic_light_red: return 3.0;
    case ScenarioKind::sharp_curve: return 9.0;
    case ScenarioKind::merging_traffic: return 10.0;
    case ScenarioKind::left_turn: return 6.0;
    case ScenarioKind::free_road: return 14.0;
  }
  return 0.0;
}

}  // namespace detail

/// Boxes standing in for the two collection regions.
struct GeoBox {
  const char* city;
  double lat_lo, lat_hi, lon_lo, lon_hi;
};
inline constexpr std::array<GeoBox, 2> kRegions{{
    {"boston", 42.33, 42.37, -71.08, -71.04},
    {"singapore", 1.28, 1.32, 103.83, 103.87},
}};

inline Sample generate_scenario(const ScenarioSpec& spec, const RenderConfig& render) {
  spec.validate();
  require(render.size >= 16, ErrorCode::invalid_argument,
          "render size must be at least 16, got " + std::to_string(render.size));

  Rng rng(mix_seed(spec.seed, 0x5CE7));
  Sample s;
  s.kind = spec.kind;
  s.seed = spec.seed;
  s.geometry = spec.geometry;
  s.action = action_for(spec.kind);

  const auto& region = kRegions[rng.below(2)];
  s.sensor.speed = std::max(0.0, rng.approx_normal(detail::mean_speed(spec.kind), 2.5));
  s.sensor.latitude = rng.uniform(region.lat_lo, region.lat_hi);
  s.sensor.longitude = rng.uniform(region.lon_lo, region.lon_hi);

  // The time-of-day phrase in the description selects the explanation wording.
  const auto variant = rng.below(2);
  const auto context = rng.below(2);
  s.description = std::string(detail::context_phrases(spec.kind)[context]) +
                  (variant == 0 ? " during the day" : " at night") + " in " + region.city;
  s.explanation = detail::explanation_templates(spec.kind)[variant];

  s.clip = VideoClip::blank(render.size);
  detail::render(s.clip, spec, s.sensor.speed, render.palette);
  return s;
}

// ---------------------------------------------------------------------------
// Dataset generation and I/O

inline constexpr int kDatasetSchemaVersion = 1;

using ClassFractions = std::array<double, kActionCount>;
using ClassCounts = std::array<int, kActionCount>;

/// stop .25, decelerate .25, accelerate .20, turn_left .15, turn_right .15
inline ClassFractions default_distribution() { return {0.20, 0.25, 0.15, 0.15, 0.25}; }

/// Hamilton apportionment: floors first, then the largest fractional parts
/// (ties to the lower class index) receive the remaining units.
inline ClassCounts largest_remainder_counts(int n, const ClassFractions& fractions) {
  const double total = std::accumulate(fractions.begin(), fractions.end(), 0.0);
  require(std::abs(total - 1.0) <= 1e-9, ErrorCode::invalid_argument,
          "class fractions must sum to 1");
  ClassCounts counts{};
  std::array<double, kActionCount> rem{};
  int assigned = 0;
  for (int i = 0; i < kActionCount; ++i) {
    require(fractions[static_cast<std::size_t>(i)] >= 0.0, ErrorCode::invalid_argument,
            "negative class fraction");
    const double exact = n * fractions[static_cast<std::size_t>(i)];
    counts[static_cast<std::size_t>(i)] = static_cast<int>(std::floor(exact));
    rem[static_cast<std::size_t>(i)] = exact - std::floor(exact);
    assigned += counts[static_cast<std::size_t>(i)];
  }
  std::array<int, kActionCount> order{};
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return rem[static_cast<std::size_t>(a)] > rem[static_cast<std::size_t>(b)];
  });
  for (int k = 0; assigned < n; ++k, ++assigned) ++counts[static_cast<std::size_t>(order[static_cast<std::size_t>(k % kActionCount)])];
  return counts;
}

struct DatasetRecord {
  std::string id;
  ActionLabel action = ActionLabel::accelerate;
  ScenarioKind kind = ScenarioKind::free_road;
  std::string frames_path;
  std::uint64_t frames_bytes = 0;
  std::string frames_checksum;  // FNV-1a 64, hex
  std::string meta_path;
  std::uint64_t meta_bytes = 0;
  std::string description;
  std::string explanation;
};

struct DatasetManifest {
  int schema_version = kDatasetSchemaVersion;
  std::uint64_t seed = 0;
  RenderConfig render;
  ClassFractions target = default_distribution();
  ClassCounts counts{};
  std::vector<DatasetRecord> records;
};

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

inline nlohmann::json to_json(const Rgb& c) { return nlohmann::json::array({c.r, c.g, c.b}); }

inline Rgb rgb_from_json(const nlohmann::json& j) {
  return Rgb{j.at(0).get<std::uint8_t>(), j.at(1).get<std::uint8_t>(), j.at(2).get<std::uint8_t>()};
}

inline nlohmann::json to_json(const RenderConfig& r) {
  const Palette& p = r.palette;
  return {{"size", r.size},
          {"frames", VideoClip::kFrames},
          {"palette",
           {{"sky", to_json(p.sky)},
            {"grass", to_json(p.grass)},
            {"road", to_json(p.road)},
            {"ego", to_json(p.ego)},
            {"pedestrian", to_json(p.pedestrian)},
            {"light_housing", to_json(p.light_housing)},
            {"light_red", to_json(p.light_red)},
            {"curve_sign", to_json(p.curve_sign)},
            {"merging_car", to_json(p.merging_car)},
            {"turn_sign", to_json(p.turn_sign)}}}};
}

inline RenderConfig render_from_json(const nlohmann::json& j) {
  RenderConfig r;
  r.size = j.at("size").get<int>();
  if (j.contains("palette")) {
    const auto& p = j.at("palette");
    auto get = [&](const char* key, Rgb& out) {
      if (p.contains(key)) out = rgb_from_json(p.at(key));
    };
    get("sky", r.palette.sky);
    get("grass", r.palette.grass);
    get("road", r.palette.road);
    get("ego", r.palette.ego);
    get("pedestrian", r.palette.pedestrian);
    get("light_housing", r.palette.light_housing);
    get("light_red", r.palette.light_red);
    get("curve_sign", r.palette.curve_sign);
    get("merging_car", r.palette.merging_car);
    get("turn_sign", r.palette.turn_sign);
  }
  return r;
}

inline nlohmann::json fractions_to_json(const ClassFractions& f) {
  nlohmann::json j = nlohmann::json::object();
  for (int i = 0; i < kActionCount; ++i) j[kActionNames[static_cast<std::size_t>(i)]] = f[static_cast<std::size_t>(i)];
  return j;
}

inline ClassFractions fractions_from_json(const nlohmann::json& j) {
  ClassFractions f{};
  for (auto it = j.begin(); it != j.end(); ++it)
    f[static_cast<std::size_t>(parse_action(it.key()))] = it.value().get<double>();
  return f;
}

inline nlohmann::json sample_meta_json(const Sample& s) {
  return {{"id", s.id},
          {"kind", kind_name(s.kind)},
          {"seed", s.seed},
          {"geometry",
           {{"object_x", s.geometry.object_x},
            {"object_y", s.geometry.object_y},
            {"curve", s.geometry.curve},
            {"light_phase", s.geometry.light_phase}}},
          {"sensor",
           {{"speed", s.sensor.speed},
            {"latitude", s.sensor.latitude},
            {"longitude", s.sensor.longitude}}},
          {"description", s.description},
          {"explanation", s.explanation},
          {"action", action_name(s.action)},
          {"frame_size", s.clip.size}};
}

/// Fills every field except the clip pixels.
inline Sample sample_from_meta(const nlohmann::json& j) {
  Sample s;
  s.id = j.at("id").get<std::string>();
  s.kind = parse_kind(j.at("kind").get<std::string>());
  s.seed = j.at("seed").get<std::uint64_t>();
  const auto& g = j.at("geometry");
  s.geometry = {g.at("object_x").get<double>(), g.at("object_y").get<double>(),
                g.at("curve").get<double>(), g.at("light_phase").get<double>()};
  const auto& sr = j.at("sensor");
  s.sensor = {sr.at("speed").get<double>(), sr.at("latitude").get<double>(),
              sr.at("longitude").get<double>()};
  s.description = j.at("description").get<std::string>();
  s.explanation = j.at("explanation").get<std::string>();
  s.action = parse_action(j.at("action").get<std::string>());
  s.clip.size = j.at("frame_size").get<int>();
  return s;
}

inline void validate_sample(const Sample& s) {
  require(!s.description.empty(), ErrorCode::corrupt_record, s.id + ": empty description");
  require(!s.explanation.empty(), ErrorCode::corrupt_record, s.id + ": empty explanation");
  const auto code = static_cast<int>(s.action);
  require(code >= 0 && code < kActionCount, ErrorCode::corrupt_record, s.id + ": bad action");
  require(s.clip.pixels.size() == VideoClip::byte_count(s.clip.size), ErrorCode::corrupt_record,
          s.id + ": frame payload size mismatch");
  for (double v : s.sensor.values())
    require(std::isfinite(v), ErrorCode::corrupt_record, s.id + ": non-finite sensor value");
  require(s.sensor.speed >= 0.0 && std::abs(s.sensor.latitude) <= 90.0 &&
              std::abs(s.sensor.longitude) <= 180.0,
          ErrorCode::corrupt_record, s.id + ": sensor value out of range");
}

/// Sample seeds depend only on (seed, index), so any subset can be regenerated.
inline std::uint64_t sample_seed(std::uint64_t dataset_seed, std::size_t index) {
  return mix_seed(dataset_seed, static_cast<std::uint64_t>(index));
}

inline std::string sample_id(std::size_t index) {
  std::string digits = std::to_string(index);
  if (digits.size() < 6) digits.insert(0, 6 - digits.size(), '0');
  return "s" + digits;
}

inline ScenarioKind kind_for_action(ActionLabel action, std::uint64_t seed) {
  switch (action) {
    case ActionLabel::decelerate:
      return (mix_seed(seed, 0xDEC) & 1U) ? ScenarioKind::sharp_curve
                                          : ScenarioKind::pedestrian_crossing;
    case ActionLabel::stop: return ScenarioKind::traffic_light_red;
    case ActionLabel::turn_right: return ScenarioKind::merging_traffic;
    case ActionLabel::turn_left: return ScenarioKind::left_turn;
    case ActionLabel::accelerate: return ScenarioKind::free_road;
  }
  fail(ErrorCode::invalid_argument, "invalid action");
}

/// Action label per dataset index: exact apportioned counts, seeded shuffle.
inline std::vector<ActionLabel> dataset_labels(int n, std::uint64_t seed,
                                               const ClassFractions& fractions) {
  const ClassCounts counts = largest_remainder_counts(n, fractions);
  std::vector<ActionLabel> labels;
  labels.reserve(static_cast<std::size_t>(n));
  for (int a = 0; a < kActionCount; ++a)
    labels.insert(labels.end(), static_cast<std::size_t>(counts[static_cast<std::size_t>(a)]),
                  static_cast<ActionLabel>(a));
  Rng rng(mix_seed(seed, 0x1ABE1));
  rng.shuffle(labels.begin(), labels.end());
  return labels;
}

inline Sample generate_indexed_sample(std::size_t index, ActionLabel action,
                                      std::uint64_t dataset_seed, const RenderConfig& render) {
  const std::uint64_t seed = sample_seed(dataset_seed, index);
  Sample s = generate_scenario(ScenarioSpec::sample(kind_for_action(action, seed), seed), render);
  s.id = sample_id(index);
  return s;
}

namespace detail {

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::io_error, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::io_error, "write failed: " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::io_error, "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec && std::filesystem::is_directory(dir), ErrorCode::io_error,
          "cannot create directory " + dir.string());
}

}  // namespace detail

inline nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : m.records)
    records.push_back({{"id", r.id},
                       {"action", action_name(r.action)},
                       {"kind", kind_name(r.kind)},
                       {"frames", r.frames_path},
                       {"frames_bytes", r.frames_bytes},
                       {"frames_fnv1a64", r.frames_checksum},
                       {"meta", r.meta_path},
                       {"meta_bytes", r.meta_bytes},
                       {"description", r.description},
                       {"explanation", r.explanation}});
  nlohmann::json counts = nlohmann::json::object();
  for (int i = 0; i < kActionCount; ++i) counts[kActionNames[static_cast<std::size_t>(i)]] = m.counts[static_cast<std::size_t>(i)];
  return {{"schema_version", m.schema_version},
          {"generator", "mmx-synth"},
          {"generation_seed", m.seed},
          {"n", m.records.size()},
          {"render", to_json(m.render)},
          {"target_distribution", fractions_to_json(m.target)},
          {"class_counts", counts},
          {"samples", records}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.schema_version = j.at("schema_version").get<int>();
  require(m.schema_version == kDatasetSchemaVersion, ErrorCode::incompatible_schema,
          "dataset schema_version " + std::to_string(m.schema_version) + " (expected " +
              std::to_string(kDatasetSchemaVersion) + ")");
  m.seed = j.at("generation_seed").get<std::uint64_t>();
  m.render = render_from_json(j.at("render"));
  m.target = fractions_from_json(j.at("target_distribution"));
  for (auto it = j.at("class_counts").begin(); it != j.at("class_counts").end(); ++it)
    m.counts[static_cast<std::size_t>(parse_action(it.key()))] = it.value().get<int>();
  std::unordered_set<std::string> seen;
  for (const auto& r : j.at("samples")) {
    DatasetRecord rec;
    rec.id = r.at("id").get<std::string>();
    require(seen.insert(rec.id).second, ErrorCode::corrupt_record, "duplicate sample id " + rec.id);
    rec.action = parse_action(r.at("action").get<std::string>());
    rec.kind = parse_kind(r.at("kind").get<std::string>());
    rec.frames_path = r.at("frames").get<std::string>();
    rec.frames_bytes = r.at("frames_bytes").get<std::uint64_t>();
    rec.frames_checksum = r.at("frames_fnv1a64").get<std::string>();
    rec.meta_path = r.at("meta").get<std::string>();
    rec.meta_bytes = r.at("meta_bytes").get<std::uint64_t>();
    rec.description = r.at("description").get<std::string>();
    rec.explanation = r.at("explanation").get<std::string>();
    m.records.push_back(std::move(rec));
  }
  return m;
}

/// Writes one payload pair per sample, then the manifest (single writer).
inline DatasetManifest write_dataset(const std::vector<Sample>& samples, std::uint64_t seed,
                                     const ClassFractions& target, const RenderConfig& render,
                                     const std::filesystem::path& out) {
  detail::ensure_dir(out / "frames");
  detail::ensure_dir(out / "meta");
  DatasetManifest m;
  m.seed = seed;
  m.render = render;
  m.target = target;
  for (const auto& s : samples) {
    const std::string_view frames(reinterpret_cast<const char*>(s.clip.pixels.data()),
                                  s.clip.pixels.size());
    const std::string meta = sample_meta_json(s).dump(2) + "\n";
    DatasetRecord rec{s.id,
                      s.action,
                      s.kind,
                      "frames/" + s.id + ".rgb",
                      frames.size(),
                      hex64(fnv1a64(frames)),
                      "meta/" + s.id + ".json",
                      meta.size(),
                      s.description,
                      s.explanation};
    detail::write_file(out / rec.frames_path, frames);
    detail::write_file(out / rec.meta_path, meta);
    ++m.counts[static_cast<std::size_t>(s.action)];
    m.records.push_back(std::move(rec));
  }
  detail::write_file(out / "manifest.json", to_json(m).dump(2) + "\n");
  return m;
}

inline std::vector<Sample> generate_samples(int n, std::uint64_t seed, const ClassFractions& target,
                                            const RenderConfig& render) {
  require(render.size >= 16, ErrorCode::invalid_argument, "render size must be at least 16");
  const auto labels = dataset_labels(n, seed, target);
  std::vector<Sample> samples;
  samples.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    samples.push_back(generate_indexed_sample(i, labels[i], seed, render));
  return samples;
}

/// `min_count` guards the n >= 20 precondition; tests of degenerate
/// distributions may lower it.
inline DatasetManifest generate_dataset(int n, std::uint64_t seed, const ClassFractions& target,
                                        const RenderConfig& render, const std::filesystem::path& out,
                                        int min_count = 20) {
  require(n >= min_count, ErrorCode::invalid_argument,
          "dataset size must be at least " + std::to_string(min_count));
  return write_dataset(generate_samples(n, seed, target, render), seed, target, render, out);
}

inline DatasetManifest read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  require(std::filesystem::exists(path), ErrorCode::io_error, "missing " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::corrupt_record, "manifest.json: " + std::string(e.what()));
  }
  return manifest_from_json(j);
}

inline Sample load_record(const std::filesystem::path& dir, const DatasetRecord& rec) {
  const auto frames_path = dir / rec.frames_path;
  const auto meta_path = dir / rec.meta_path;
  require(std::filesystem::exists(frames_path) && std::filesystem::exists(meta_path),
          ErrorCode::corrupt_record, rec.id + ": missing payload file");
  const std::string frames = detail::read_file(frames_path);
  require(frames.size() == rec.frames_bytes, ErrorCode::corrupt_record,
          rec.id + ": frames payload is " + std::to_string(frames.size()) + " bytes, manifest says " +
              std::to_string(rec.frames_bytes));
  require(hex64(fnv1a64(frames)) == rec.frames_checksum, ErrorCode::corrupt_record,
          rec.id + ": frames checksum mismatch");
  const std::string meta = detail::read_file(meta_path);
  require(meta.size() == rec.meta_bytes, ErrorCode::corrupt_record, rec.id + ": meta length mismatch");
  Sample s;
  try {
    s = sample_from_meta(nlohmann::json::parse(meta));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::corrupt_record, rec.id + ": " + e.what());
  }
  require(s.id == rec.id, ErrorCode::corrupt_record, rec.id + ": id mismatch in meta");
  s.clip.pixels.assign(frames.begin(), frames.end());
  validate_sample(s);
  return s;
}

/// Samples in manifest order, validated on read.
inline std::vector<Sample> load_dataset(const std::filesystem::path& dir) {
  const DatasetManifest m = read_manifest(dir);
  std::vector<Sample> out;
  out.reserve(m.records.size());
  for (const auto& rec : m.records) out.push_back(load_record(dir, rec));
  return out;
}

/// Stable content hash over the manifest bytes.
inline std::string dataset_fingerprint(const std::filesystem::path& dir) {
  return hex64(fnv1a64(detail::read_file(dir / "manifest.json")));
}

}  // namespace mmx
