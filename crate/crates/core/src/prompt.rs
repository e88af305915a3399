//! Deterministic prompt grammar: parse a constrained street-view prompt into
//! a [`SceneSpec`], render a spec back to its canonical prompt, and split the
//! spec into the three condition texts consumed by the downstream generators.
//!
//! The grammar is a fixed clause template ("a street-view image with the
//! crossing, 3 lanes, 4 cars and 1 truck driving on a sunny day"). Clauses are
//! matched by keyword, so their order does not matter and unknown words are
//! skipped rather than rejected.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// Maximum number of traffic objects in one scene.
pub const MAX_OBJECTS: u8 = 8;
/// Lane counts of 5 or more collapse into the single ">= 5" class.
pub const MAX_LANE_CLASS: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadKind {
    Straight,
    Crossing,
}

impl fmt::Display for RoadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RoadKind::Straight => write!(f, "straight"),
            RoadKind::Crossing => write!(f, "crossing"),
        }
    }
}

/// Traffic object categories recognised by the grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Car,
    Truck,
    Pedestrian,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Car, Category::Truck, Category::Pedestrian];

    pub fn id(self) -> usize {
        match self {
            Category::Car => 0,
            Category::Truck => 1,
            Category::Pedestrian => 2,
        }
    }

    pub fn from_id(id: usize) -> Option<Category> {
        Category::ALL.get(id).copied()
    }

    pub fn singular(self) -> &'static str {
        match self {
            Category::Car => "car",
            Category::Truck => "truck",
            Category::Pedestrian => "pedestrian",
        }
    }

    pub fn plural(self) -> &'static str {
        match self {
            Category::Car => "cars",
            Category::Truck => "trucks",
            Category::Pedestrian => "pedestrians",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.singular())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Weather {
    #[serde(rename = "sunny day")]
    SunnyDay,
    #[serde(rename = "sunny night")]
    SunnyNight,
    #[serde(rename = "rainy day")]
    RainyDay,
    #[serde(rename = "rainy night")]
    RainyNight,
}

impl Weather {
    pub const ALL: [Weather; 4] = [
        Weather::SunnyDay,
        Weather::SunnyNight,
        Weather::RainyDay,
        Weather::RainyNight,
    ];

    pub fn id(self) -> usize {
        match self {
            Weather::SunnyDay => 0,
            Weather::SunnyNight => 1,
            Weather::RainyDay => 2,
            Weather::RainyNight => 3,
        }
    }

    pub fn from_id(id: usize) -> Option<Weather> {
        Weather::ALL.get(id).copied()
    }

    pub fn is_night(self) -> bool {
        matches!(self, Weather::SunnyNight | Weather::RainyNight)
    }

    pub fn is_rainy(self) -> bool {
        matches!(self, Weather::RainyDay | Weather::RainyNight)
    }

    fn from_parts(rainy: bool, night: bool) -> Weather {
        match (rainy, night) {
            (false, false) => Weather::SunnyDay,
            (false, true) => Weather::SunnyNight,
            (true, false) => Weather::RainyDay,
            (true, true) => Weather::RainyNight,
        }
    }
}

impl fmt::Display for Weather {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Weather::SunnyDay => "sunny day",
            Weather::SunnyNight => "sunny night",
            Weather::RainyDay => "rainy day",
            Weather::RainyNight => "rainy night",
        };
        write!(f, "{s}")
    }
}

/// Parsed road topology / traffic status / weather description of one scene.
///
/// This is the cross-module scene exchange format; it serialises to a JSON
/// object with keys `road_kind`, `lane_count`, `object_counts`, `weather`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub road_kind: RoadKind,
    /// Number of lane lines, 0..=5 where 5 means ">= 5".
    pub lane_count: u8,
    /// Requested object count per category; zero counts are never stored.
    pub object_counts: BTreeMap<Category, u8>,
    pub weather: Weather,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            road_kind: RoadKind::Straight,
            lane_count: 0,
            object_counts: BTreeMap::new(),
            weather: Weather::SunnyDay,
        }
    }
}

impl SceneSpec {
    pub fn total_objects(&self) -> u8 {
        self.object_counts.values().sum()
    }

    pub fn count(&self, cat: Category) -> u8 {
        self.object_counts.get(&cat).copied().unwrap_or(0)
    }

    /// Checks the spec invariants: lane count within the grammar range,
    /// total object count within [`MAX_OBJECTS`], no stored zero counts.
    pub fn validate(&self) -> Result<(), ParseError> {
        if self.lane_count > MAX_LANE_CLASS {
            return Err(ParseError::LaneCountOutOfRange(self.lane_count as u32));
        }
        if self.object_counts.values().any(|&c| c == 0) {
            return Err(ParseError::ZeroCountStored);
        }
        let total = self.total_objects() as u32;
        if total > MAX_OBJECTS as u32 {
            return Err(ParseError::TooManyObjects(total));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionTexts {
    pub topology_text: String,
    pub traffic_text: String,
    pub weather_text: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("prompt longer than 512 characters ({0})")]
    TooLong(usize),
    #[error("prompt contains non-ASCII characters")]
    NonAscii,
    #[error("lane count token {0} exceeds the grammar range")]
    LaneCountOutOfRange(u32),
    #[error("total object count {0} exceeds the maximum of 8")]
    TooManyObjects(u32),
    #[error("object counts must not store zero entries")]
    ZeroCountStored,
}

fn number_token(tok: &str) -> Option<u32> {
    match tok {
        "zero" => Some(0),
        "one" => Some(1),
        "two" => Some(2),
        "three" => Some(3),
        "four" => Some(4),
        "five" => Some(5),
        "six" => Some(6),
        "seven" => Some(7),
        "eight" => Some(8),
        _ => {
            if !tok.is_empty() && tok.chars().all(|c| c.is_ascii_digit()) {
                tok.parse::<u32>().ok()
            } else {
                None
            }
        }
    }
}

fn category_token(tok: &str) -> Option<Category> {
    match tok {
        "car" | "cars" => Some(Category::Car),
        "truck" | "trucks" => Some(Category::Truck),
        "pedestrian" | "pedestrians" => Some(Category::Pedestrian),
        _ => None,
    }
}

fn is_lane_token(tok: &str) -> bool {
    matches!(tok, "lane" | "lanes")
}

/// Splits a prompt into lowercase word tokens; punctuation acts as whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_ascii_lowercase()
        .split(|c: char| !(c.is_ascii_alphanumeric() || c == '-'))
        .filter(|t| !t.is_empty())
        .map(|t| t.to_string())
        .collect()
}

/// Parses a constrained street-view prompt into a fully populated [`SceneSpec`].
///
/// Recognised clauses may appear in any order; unrecognised words are skipped.
/// Numeric words ("one".."eight") and digits are both accepted, as are
/// singular and plural noun forms. Lane counts of 5 or more collapse to 5.
pub fn parse_prompt(text: &str) -> Result<SceneSpec, ParseError> {
    if text.len() > 512 {
        return Err(ParseError::TooLong(text.len()));
    }
    if !text.is_ascii() {
        return Err(ParseError::NonAscii);
    }
    let tokens = tokenize(text);
    let mut spec = SceneSpec::default();
    let mut rainy = false;
    let mut night = false;
    let mut saw_weather = false;

    let mut i = 0;
    while i < tokens.len() {
        let tok = tokens[i].as_str();
        if tok == "crossing" {
            spec.road_kind = RoadKind::Crossing;
        } else if tok == "straight" {
            spec.road_kind = RoadKind::Straight;
        } else if tok == "sunny" {
            rainy = false;
            saw_weather = true;
        } else if tok == "rainy" {
            rainy = true;
            saw_weather = true;
        } else if tok == "night" {
            night = true;
            saw_weather = true;
        } else if tok == "day" {
            night = false;
            saw_weather = true;
        } else if let Some(n) = number_token(tok) {
            // A number binds to the immediately following noun; a bare number
            // is skipped like any other unrecognised word.
            if let Some(next) = tokens.get(i + 1) {
                if is_lane_token(next) {
                    if n > 9 {
                        return Err(ParseError::LaneCountOutOfRange(n));
                    }
                    spec.lane_count = (n as u8).min(MAX_LANE_CLASS);
                    i += 1;
                } else if let Some(cat) = category_token(next) {
                    // Later clauses win over earlier ones for the same category.
                    if n == 0 {
                        spec.object_counts.remove(&cat);
                    } else {
                        spec.object_counts.insert(cat, n.min(255) as u8);
                    }
                    i += 1;
                }
            }
        }
        i += 1;
    }

    if saw_weather {
        spec.weather = Weather::from_parts(rainy, night);
    }
    let total: u32 = spec.object_counts.values().map(|&c| c as u32).sum();
    if total > MAX_OBJECTS as u32 {
        return Err(ParseError::TooManyObjects(total));
    }
    Ok(spec)
}

fn lane_phrase(n: u8) -> String {
    if n == 1 {
        "1 lane".to_string()
    } else {
        format!("{n} lanes")
    }
}

fn count_phrase(n: u8, cat: Category) -> String {
    if n == 1 {
        format!("1 {}", cat.singular())
    } else {
        format!("{n} {}", cat.plural())
    }
}

fn traffic_phrase(spec: &SceneSpec) -> Option<String> {
    let parts: Vec<String> = Category::ALL
        .iter()
        .filter_map(|&cat| {
            let n = spec.count(cat);
            (n > 0).then(|| count_phrase(n, cat))
        })
        .collect();
    match parts.len() {
        0 => None,
        1 => Some(parts[0].clone()),
        _ => {
            let (last, head) = parts.split_last().unwrap();
            Some(format!("{} and {}", head.join(", "), last))
        }
    }
}

fn road_phrase(kind: RoadKind) -> &'static str {
    match kind {
        RoadKind::Straight => "straight road",
        RoadKind::Crossing => "crossing",
    }
}

/// Renders the canonical prompt for a spec; `parse_prompt` inverts it exactly.
pub fn render_prompt(spec: &SceneSpec) -> String {
    let mut s = format!(
        "a street-view image with the {}, {}",
        road_phrase(spec.road_kind),
        lane_phrase(spec.lane_count)
    );
    if let Some(traffic) = traffic_phrase(spec) {
        s.push_str(", ");
        s.push_str(&traffic);
    }
    s.push_str(&format!(" driving on a {}", spec.weather));
    s
}

/// Splits a spec into the three condition texts fed to the generators.
pub fn split_conditions(spec: &SceneSpec) -> ConditionTexts {
    ConditionTexts {
        topology_text: format!(
            "{}, {}",
            road_phrase(spec.road_kind),
            lane_phrase(spec.lane_count)
        ),
        traffic_text: traffic_phrase(spec).unwrap_or_else(|| "no traffic objects".to_string()),
        weather_text: spec.weather.to_string(),
    }
}

/// Samples a uniformly random valid spec (used by the synthetic world and
/// by the round-trip property tests).
pub fn sample_spec<R: rand::Rng>(rng: &mut R) -> SceneSpec {
    let road_kind = if rng.gen_bool(0.5) {
        RoadKind::Crossing
    } else {
        RoadKind::Straight
    };
    let lane_count = rng.gen_range(0..=MAX_LANE_CLASS);
    let weather = Weather::ALL[rng.gen_range(0..Weather::ALL.len())];
    let total = rng.gen_range(0..=MAX_OBJECTS);
    let mut object_counts = BTreeMap::new();
    for _ in 0..total {
        let cat = Category::ALL[rng.gen_range(0..Category::ALL.len())];
        *object_counts.entry(cat).or_insert(0u8) += 1;
    }
    SceneSpec {
        road_kind,
        lane_count,
        object_counts,
        weather,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(kind: RoadKind, lanes: u8, counts: &[(Category, u8)], weather: Weather) -> SceneSpec {
        SceneSpec {
            road_kind: kind,
            lane_count: lanes,
            object_counts: counts.iter().copied().collect(),
            weather,
        }
    }

    #[test]
    fn parses_reference_prompt() {
        let s = parse_prompt(
            "a street-view image with the crossing, 3 lanes, 4 cars and 1 truck driving on a sunny day",
        )
        .unwrap();
        assert_eq!(
            s,
            spec(
                RoadKind::Crossing,
                3,
                &[(Category::Car, 4), (Category::Truck, 1)],
                Weather::SunnyDay
            )
        );
    }

    #[test]
    fn parses_zero_default_case() {
        let s = parse_prompt("a street-view image with the straight road, 0 lanes on a rainy night")
            .unwrap();
        assert_eq!(s, spec(RoadKind::Straight, 0, &[], Weather::RainyNight));
    }

    #[test]
    fn renders_default_case() {
        let s = spec(RoadKind::Straight, 0, &[], Weather::SunnyDay);
        assert_eq!(
            render_prompt(&s),
            "a street-view image with the straight road, 0 lanes driving on a sunny day"
        );
    }

    #[test]
    fn renders_reference_prompt() {
        let s = spec(
            RoadKind::Crossing,
            3,
            &[(Category::Car, 4), (Category::Truck, 1)],
            Weather::SunnyDay,
        );
        assert_eq!(
            render_prompt(&s),
            "a street-view image with the crossing, 3 lanes, 4 cars and 1 truck driving on a sunny day"
        );
    }

    #[test]
    fn splits_reference_conditions() {
        let s = spec(
            RoadKind::Crossing,
            3,
            &[(Category::Car, 4), (Category::Truck, 1)],
            Weather::SunnyDay,
        );
        let c = split_conditions(&s);
        assert_eq!(c.topology_text, "crossing, 3 lanes");
        assert_eq!(c.traffic_text, "4 cars and 1 truck");
        assert_eq!(c.weather_text, "sunny day");
    }

    #[test]
    fn splits_empty_traffic() {
        let s = spec(RoadKind::Straight, 2, &[], Weather::RainyDay);
        assert_eq!(split_conditions(&s).traffic_text, "no traffic objects");
    }

    #[test]
    fn numeric_words_accepted() {
        let s =
            parse_prompt("the crossing with three lanes, two cars and one pedestrian on a rainy day")
                .unwrap();
        assert_eq!(
            s,
            spec(
                RoadKind::Crossing,
                3,
                &[(Category::Car, 2), (Category::Pedestrian, 1)],
                Weather::RainyDay
            )
        );
    }

    #[test]
    fn lane_count_collapses_at_five() {
        let s = parse_prompt("a road with 7 lanes").unwrap();
        assert_eq!(s.lane_count, 5);
    }

    #[test]
    fn lane_count_out_of_grammar_range() {
        assert_eq!(
            parse_prompt("a road with 12 lanes"),
            Err(ParseError::LaneCountOutOfRange(12))
        );
    }

    #[test]
    fn too_many_objects_rejected() {
        assert_eq!(
            parse_prompt("5 cars and 4 trucks on a sunny day"),
            Err(ParseError::TooManyObjects(9))
        );
    }

    #[test]
    fn clause_order_is_irrelevant() {
        let a = parse_prompt("driving on a rainy night, 2 lanes, the crossing, 1 car").unwrap();
        let b = parse_prompt("the crossing, 1 car, 2 lanes driving on a rainy night").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_words_are_skipped() {
        let s =
            parse_prompt("a gloomy futuristic street-view image with the crossing, 2 lanes").unwrap();
        assert_eq!(s.road_kind, RoadKind::Crossing);
        assert_eq!(s.lane_count, 2);
    }

    #[test]
    fn non_ascii_rejected() {
        assert_eq!(
            parse_prompt("une rue avec des voitures — nuit"),
            Err(ParseError::NonAscii)
        );
    }

    #[test]
    fn overlong_prompt_rejected() {
        let long = "a ".repeat(300);
        assert!(matches!(parse_prompt(&long), Err(ParseError::TooLong(_))));
    }

    #[test]
    fn round_trip_over_random_specs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let s = sample_spec(&mut rng);
            s.validate().unwrap();
            let parsed = parse_prompt(&render_prompt(&s)).unwrap();
            assert_eq!(parsed, s, "round-trip failed for {s:?}");
        }
    }

    #[test]
    fn deterministic_parse() {
        let p = "a street-view image with the crossing, 2 lanes, 1 car driving on a rainy night";
        assert_eq!(parse_prompt(p), parse_prompt(p));
    }

    #[test]
    fn scene_spec_json_shape() {
        let s = spec(
            RoadKind::Crossing,
            3,
            &[(Category::Car, 4), (Category::Truck, 1)],
            Weather::SunnyDay,
        );
        let json = serde_json::to_value(&s).unwrap();
        assert_eq!(json["road_kind"], "crossing");
        assert_eq!(json["lane_count"], 3);
        assert_eq!(json["object_counts"]["car"], 4);
        assert_eq!(json["weather"], "sunny day");
        let back: SceneSpec = serde_json::from_value(json).unwrap();
        assert_eq!(back, s);
    }
}
