use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsl::WorldCatalog;

pub const WORLD_SCHEMA: &str = "world/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Place {
    pub name: String,
    /// Meters.
    pub x: f64,
    pub y: f64,
}

/// A flat map of named places the robot can drive between in straight
/// lines, and who is standing where at the start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WorldModel {
    pub schema: String,
    pub places: Vec<Place>,
    /// Where the robot is parked when a run starts.
    pub start: String,
    /// Meters per second.
    pub speed: f64,
    #[serde(default)]
    pub persons: BTreeMap<String, bool>,
}

#[derive(Debug, thiserror::Error)]
pub enum WorldError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

impl WorldModel {
    pub fn parse(text: &str) -> Result<Self, WorldError> {
        let w: WorldModel = serde_json::from_str(text)?;
        w.check()?;
        Ok(w)
    }

    pub fn load(path: &Path) -> Result<Self, WorldError> {
        let text = std::fs::read_to_string(path).map_err(|source| WorldError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn check(&self) -> Result<(), WorldError> {
        let bad = |m: String| Err(WorldError::Invalid(m));
        if self.schema != WORLD_SCHEMA {
            return bad(format!("unsupported world schema `{}`", self.schema));
        }
        if !(self.speed.is_finite() && self.speed > 0.0) {
            return bad(format!("speed must be positive, got {}", self.speed));
        }
        for (i, p) in self.places.iter().enumerate() {
            if p.name.trim().is_empty() {
                return bad("place with an empty name".into());
            }
            if !(p.x.is_finite() && p.y.is_finite()) {
                return bad(format!("place `{}` has non-finite coordinates", p.name));
            }
            if self.places[..i].iter().any(|q| q.name == p.name) {
                return bad(format!("place `{}` listed twice", p.name));
            }
        }
        if self.place(&self.start).is_none() {
            return bad(format!("start place `{}` is not a place", self.start));
        }
        if let Some(name) = self.persons.keys().find(|n| self.place(n).is_none()) {
            return bad(format!("persons map names unknown place `{name}`"));
        }
        Ok(())
    }

    pub fn place(&self, name: &str) -> Option<&Place> {
        let canonical = self.catalog().resolve(name)?.to_string();
        self.places.iter().find(|p| p.name == canonical)
    }

    pub fn catalog(&self) -> WorldCatalog {
        WorldCatalog::new(self.places.iter().map(|p| p.name.clone()))
    }

    /// Virtual milliseconds to drive between two places; at least 1 ms
    /// between distinct places.
    pub fn travel_ms(&self, from: &Place, to: &Place) -> u64 {
        if from.name == to.name {
            return 0;
        }
        let d = ((to.x - from.x).powi(2) + (to.y - from.y).powi(2)).sqrt();
        ((d / self.speed * 1000.0).ceil() as u64).max(1)
    }

    /// The place closest to a point, ties going to the earlier place.
    pub fn nearest(&self, x: f64, y: f64) -> &Place {
        self.places
            .iter()
            .min_by(|a, b| {
                let da = (a.x - x).powi(2) + (a.y - y).powi(2);
                let db = (b.x - x).powi(2) + (b.y - y).powi(2);
                da.total_cmp(&db)
            })
            .expect("a checked world has a start place")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two() -> WorldModel {
        WorldModel::parse(
            r#"{"schema":"world/v1","start":"A","speed":0.5,
                "places":[{"name":"A","x":0,"y":0},{"name":"B","x":3,"y":4}],
                "persons":{"B":true}}"#,
        )
        .unwrap()
    }

    #[test]
    fn travel_time() {
        let w = two();
        let (a, b) = (&w.places[0], &w.places[1]);
        assert_eq!(w.travel_ms(a, b), 10_000);
        assert_eq!(w.travel_ms(a, a), 0);
        assert_eq!(w.place("b").unwrap().name, "B");
        assert_eq!(w.nearest(1.0, 1.0).name, "A");
        assert_eq!(w.nearest(2.0, 3.0).name, "B");
    }

    #[test]
    fn rejects_bad_worlds() {
        let mut w = two();
        w.start = "C".into();
        assert!(w.check().is_err());
        let mut w = two();
        w.speed = 0.0;
        assert!(w.check().is_err());
        let mut w = two();
        w.places.push(w.places[0].clone());
        assert!(w.check().is_err());
    }
}
