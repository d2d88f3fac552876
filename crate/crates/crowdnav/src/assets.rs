//! Map and scenario files, and the built-in set shipped with the binary.
//!
//! Both formats are TOML. A map lists axis-aligned obstacle rectangles in
//! meters; a scenario names its map and gives poses as `[x, y, theta]`.
//! The `schema` key versions each file.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use crowdnav_core::geometry::Pose2D;
use crowdnav_core::nav::NavParams;
use crowdnav_core::scenario::{validate_scenario, Endpoints, Environment, Landmark, Scenario, Violation};
use crowdnav_core::{OccupancyGrid, SocialForceParams};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAP_SCHEMA: &str = "crowdnav.map/1";
pub const SCENARIO_SCHEMA: &str = "crowdnav.scenario/1";

const BUILTIN_MAPS: &[(&str, &str)] = &[
    ("lab.toml", include_str!("../assets/maps/lab.toml")),
    ("warehouse.toml", include_str!("../assets/maps/warehouse.toml")),
];

const BUILTIN_SCENARIOS: &[(&str, &str)] = &[
    ("lab_a.toml", include_str!("../assets/scenarios/lab_a.toml")),
    ("lab_b.toml", include_str!("../assets/scenarios/lab_b.toml")),
    ("lab_c.toml", include_str!("../assets/scenarios/lab_c.toml")),
    ("warehouse_a.toml", include_str!("../assets/scenarios/warehouse_a.toml")),
    ("warehouse_b.toml", include_str!("../assets/scenarios/warehouse_b.toml")),
    ("warehouse_c.toml", include_str!("../assets/scenarios/warehouse_c.toml")),
];

#[derive(Debug, Error)]
pub enum AssetError {
    #[error("{file}: {source}")]
    Parse {
        file: String,
        #[source]
        source: toml::de::Error,
    },
    #[error("{file}: schema {found:?}, expected {expected:?}")]
    Schema {
        file: String,
        found: String,
        expected: &'static str,
    },
    #[error("{file}: {message}")]
    Invalid { file: String, message: String },
    #[error("{file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
    #[error("scenario {scenario} refers to unknown map {map:?}")]
    UnknownMap { scenario: String, map: String },
    #[error("{kind} id {id:?} defined twice")]
    Duplicate { kind: &'static str, id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapFile {
    pub schema: String,
    pub id: String,
    /// meters per cell
    pub resolution: f64,
    /// meters
    pub width: f64,
    pub height: f64,
    /// `[x0, y0, x1, y1]` in meters
    #[serde(default)]
    pub obstacles: Vec<[f64; 4]>,
}

impl MapFile {
    pub fn parse(file: &str, text: &str) -> Result<Self, AssetError> {
        let map: MapFile = toml::from_str(text).map_err(|source| AssetError::Parse {
            file: file.into(),
            source,
        })?;
        check_schema(file, &map.schema, MAP_SCHEMA)?;
        Ok(map)
    }

    pub fn grid(&self) -> Result<OccupancyGrid, AssetError> {
        OccupancyGrid::from_rectangles(self.width, self.height, self.resolution, &self.obstacles).map_err(|e| {
            AssetError::Invalid {
                file: self.id.clone(),
                message: e.to_string(),
            }
        })
    }
}

fn check_schema(file: &str, found: &str, expected: &'static str) -> Result<(), AssetError> {
    if found == expected {
        Ok(())
    } else {
        Err(AssetError::Schema {
            file: file.into(),
            found: found.into(),
            expected,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointsFile {
    pub start: [f64; 3],
    pub goal: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkFile {
    pub pose: [f64; 3],
    pub tag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema: String,
    pub id: String,
    pub environment: Environment,
    pub map: String,
    /// seconds
    pub time_limit: f64,
    pub avatar: EndpointsFile,
    pub robot: EndpointsFile,
    pub landmark: LandmarkFile,
    #[serde(default, rename = "npc")]
    pub npcs: Vec<EndpointsFile>,
    #[serde(default)]
    pub social_force: Option<SocialForceParams>,
}

fn pose(p: [f64; 3]) -> Pose2D {
    Pose2D::new(p[0], p[1], p[2])
}

fn endpoints(e: &EndpointsFile) -> Endpoints {
    Endpoints {
        start: pose(e.start),
        goal: pose(e.goal),
    }
}

impl ScenarioFile {
    pub fn parse(file: &str, text: &str) -> Result<Self, AssetError> {
        let s: ScenarioFile = toml::from_str(text).map_err(|source| AssetError::Parse {
            file: file.into(),
            source,
        })?;
        check_schema(file, &s.schema, SCENARIO_SCHEMA)?;
        Ok(s)
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            id: self.id.clone(),
            environment: self.environment,
            map: self.map.clone(),
            time_limit: self.time_limit,
            avatar: endpoints(&self.avatar),
            robot: endpoints(&self.robot),
            landmark: Landmark {
                pose: pose(self.landmark.pose),
                tag: self.landmark.tag.clone(),
            },
            npcs: self.npcs.iter().map(endpoints).collect(),
            social_force: self.social_force.unwrap_or_default(),
        }
    }
}

/// Maps and scenarios by id.
#[derive(Debug, Clone, Default)]
pub struct AssetStore {
    maps: BTreeMap<String, (MapFile, Arc<OccupancyGrid>)>,
    scenarios: BTreeMap<String, Scenario>,
}

impl AssetStore {
    /// The shipped maps and scenarios.
    pub fn builtin() -> Self {
        let mut store = Self::default();
        for (file, text) in BUILTIN_MAPS {
            store.add_map(MapFile::parse(file, text).expect("built-in map parses")).expect("built-in map is unique");
        }
        for (file, text) in BUILTIN_SCENARIOS {
            let s = ScenarioFile::parse(file, text).expect("built-in scenario parses");
            store.add_scenario(s.scenario()).expect("built-in scenario is consistent");
        }
        store
    }

    pub fn add_map(&mut self, map: MapFile) -> Result<(), AssetError> {
        if self.maps.contains_key(&map.id) {
            return Err(AssetError::Duplicate { kind: "map", id: map.id });
        }
        let grid = Arc::new(map.grid()?);
        self.maps.insert(map.id.clone(), (map, grid));
        Ok(())
    }

    pub fn add_scenario(&mut self, scenario: Scenario) -> Result<(), AssetError> {
        if !self.maps.contains_key(&scenario.map) {
            return Err(AssetError::UnknownMap {
                scenario: scenario.id,
                map: scenario.map,
            });
        }
        if self.scenarios.contains_key(&scenario.id) {
            return Err(AssetError::Duplicate {
                kind: "scenario",
                id: scenario.id,
            });
        }
        self.scenarios.insert(scenario.id.clone(), scenario);
        Ok(())
    }

    /// Adds every `maps/*.toml` and `scenarios/*.toml` under `dir`.
    pub fn load_dir(&mut self, dir: &Path) -> Result<(), AssetError> {
        for (sub, is_map) in [("maps", true), ("scenarios", false)] {
            let path = dir.join(sub);
            if !path.is_dir() {
                continue;
            }
            let io = |source| AssetError::Io {
                file: path.display().to_string(),
                source,
            };
            let mut files: Vec<_> = std::fs::read_dir(&path)
                .map_err(io)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "toml"))
                .collect();
            files.sort();
            for file in files {
                let name = file.display().to_string();
                let text = std::fs::read_to_string(&file).map_err(|source| AssetError::Io {
                    file: name.clone(),
                    source,
                })?;
                if is_map {
                    self.add_map(MapFile::parse(&name, &text)?)?;
                } else {
                    self.add_scenario(ScenarioFile::parse(&name, &text)?.scenario())?;
                }
            }
        }
        Ok(())
    }

    pub fn scenario(&self, id: &str) -> Option<&Scenario> {
        self.scenarios.get(id)
    }

    pub fn scenarios(&self) -> impl Iterator<Item = &Scenario> {
        self.scenarios.values()
    }

    pub fn grid(&self, map: &str) -> Option<Arc<OccupancyGrid>> {
        self.maps.get(map).map(|(_, g)| Arc::clone(g))
    }

    pub fn map_file(&self, map: &str) -> Option<&MapFile> {
        self.maps.get(map).map(|(m, _)| m)
    }

    pub fn validate(&self, scenario: &Scenario, nav: &NavParams) -> Result<(), Vec<Violation>> {
        let grid = self.grid(&scenario.map).expect("scenario map was checked on insert");
        validate_scenario(scenario, &grid, nav)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LintReport {
    pub file: String,
    pub scenario: Option<String>,
    pub errors: Vec<String>,
}

impl LintReport {
    pub fn ok(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Parses and validates one scenario file against the maps in `store`.
pub fn lint_scenario(store: &AssetStore, file: &str, text: &str, nav: &NavParams) -> LintReport {
    let mut report = LintReport {
        file: file.into(),
        scenario: None,
        errors: Vec::new(),
    };
    let parsed = match ScenarioFile::parse(file, text) {
        Ok(p) => p,
        Err(e) => {
            report.errors.push(e.to_string());
            return report;
        }
    };
    let scenario = parsed.scenario();
    report.scenario = Some(scenario.id.clone());
    let Some(grid) = store.grid(&scenario.map) else {
        report.errors.push(format!("unknown map {:?}", scenario.map));
        return report;
    };
    if let Err(violations) = validate_scenario(&scenario, &grid, nav) {
        report.errors.extend(violations.iter().map(|v| v.to_string()));
    }
    report
}
