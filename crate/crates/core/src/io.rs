//! Dataset ingestion and serialization.
//!
//! Input is a pair of JSON feature-collection files: one of Polygon features
//! carrying a `community` property, one of Point features carrying
//! `community`, integer `year`, positive `panel_area`, and an optional `id`.
//! Schema violations abort with the offending feature index; geometric
//! defects (self-intersection, holes, degenerate rings) become per-community
//! hard errors in the validation report; orphan events are listed and
//! excluded.
//!
//! The same schema is written back by [`write_polygons`] / [`write_events`],
//! so generated datasets round-trip losslessly (f64 coordinates serialize in
//! shortest round-trip form).

use crate::domain::{
    validate_dataset, Community, HardError, PVInstallation, Timeline, ValidationReport,
};
use crate::geom::{Point, Polygon};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid JSON: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: feature {feature}: {message}")]
    Schema { path: PathBuf, feature: usize, message: String },
    #[error("timeline: {0}")]
    Timeline(String),
}

/// A validated ingestion product: communities joined to their events.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub communities: Vec<Community>,
    pub timeline: Timeline,
}

#[derive(Serialize, Deserialize)]
struct FeatureCollection {
    #[serde(rename = "type")]
    kind: String,
    features: Vec<Feature>,
}

#[derive(Serialize, Deserialize)]
struct Feature {
    #[serde(rename = "type")]
    kind: String,
    #[serde(default)]
    properties: serde_json::Map<String, Value>,
    geometry: GeometryJson,
}

#[derive(Serialize, Deserialize)]
struct GeometryJson {
    #[serde(rename = "type")]
    kind: String,
    coordinates: Value,
}

fn read_collection(path: &Path) -> Result<FeatureCollection, IoError> {
    let text = fs::read_to_string(path)
        .map_err(|source| IoError::File { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|source| IoError::Parse { path: path.to_path_buf(), source })
}

fn schema_err(path: &Path, feature: usize, message: impl Into<String>) -> IoError {
    IoError::Schema { path: path.to_path_buf(), feature, message: message.into() }
}

fn property_string(props: &serde_json::Map<String, Value>, key: &str) -> Option<String> {
    match props.get(key)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn coord_pair(value: &Value) -> Option<Point> {
    let arr = value.as_array()?;
    if arr.len() < 2 {
        return None;
    }
    Some(Point::new(arr[0].as_f64()?, arr[1].as_f64()?))
}

/// Reads and joins the polygon and event files. Returns every community
/// that could be constructed plus a validation report covering geometric
/// hard errors, orphan events, placement/year violations, and the
/// minimum-count rule. When `timeline` is `None` it is inferred from the
/// distinct event years.
pub fn ingest(
    polygons_path: &Path,
    events_path: &Path,
    timeline: Option<Timeline>,
) -> Result<(Dataset, ValidationReport), IoError> {
    let polygons = read_collection(polygons_path)?;
    let events = read_collection(events_path)?;

    // Polygon features → rings keyed by community id.
    let mut rings: BTreeMap<String, Vec<Point>> = BTreeMap::new();
    let mut hard_errors: Vec<HardError> = Vec::new();
    for (idx, feature) in polygons.features.iter().enumerate() {
        let id = property_string(&feature.properties, "community")
            .ok_or_else(|| schema_err(polygons_path, idx, "missing 'community' property"))?;
        if feature.geometry.kind != "Polygon" {
            return Err(schema_err(
                polygons_path,
                idx,
                format!("expected Polygon geometry, got {}", feature.geometry.kind),
            ));
        }
        let outer = feature
            .geometry
            .coordinates
            .as_array()
            .ok_or_else(|| schema_err(polygons_path, idx, "coordinates must be an array of rings"))?;
        if outer.is_empty() {
            return Err(schema_err(polygons_path, idx, "no rings in Polygon"));
        }
        if outer.len() > 1 {
            // Holes are rejected per community, not per file.
            hard_errors.push(HardError {
                community_id: id.clone(),
                message: "polygons with holes are not supported".into(),
            });
            continue;
        }
        let ring: Option<Vec<Point>> =
            outer[0].as_array().map(|pts| pts.iter().filter_map(coord_pair).collect());
        let ring = match ring {
            Some(r) if outer[0].as_array().map(|a| a.len()) == Some(r.len()) => r,
            _ => return Err(schema_err(polygons_path, idx, "malformed ring coordinates")),
        };
        if rings.insert(id.clone(), ring).is_some() {
            return Err(schema_err(polygons_path, idx, format!("duplicate community id '{id}'")));
        }
    }

    // Event features grouped by community.
    let mut grouped: BTreeMap<String, Vec<PVInstallation>> = BTreeMap::new();
    let mut orphans: Vec<String> = Vec::new();
    let mut all_years: Vec<i32> = Vec::new();
    for (idx, feature) in events.features.iter().enumerate() {
        let community = property_string(&feature.properties, "community")
            .ok_or_else(|| schema_err(events_path, idx, "missing 'community' property"))?;
        let year = feature
            .properties
            .get("year")
            .and_then(Value::as_i64)
            .ok_or_else(|| schema_err(events_path, idx, "missing integer 'year' property"))?
            as i32;
        let panel_area = feature
            .properties
            .get("panel_area")
            .and_then(Value::as_f64)
            .ok_or_else(|| schema_err(events_path, idx, "missing numeric 'panel_area' property"))?;
        let id = property_string(&feature.properties, "id").unwrap_or_else(|| format!("evt-{idx}"));
        if !(panel_area > 0.0) {
            return Err(schema_err(
                events_path,
                idx,
                format!("event '{id}': panel_area must be positive, got {panel_area}"),
            ));
        }
        if feature.geometry.kind != "Point" {
            return Err(schema_err(
                events_path,
                idx,
                format!("expected Point geometry, got {}", feature.geometry.kind),
            ));
        }
        let location = coord_pair(&feature.geometry.coordinates)
            .ok_or_else(|| schema_err(events_path, idx, "malformed Point coordinates"))?;
        if !rings.contains_key(&community) {
            orphans.push(id);
            continue;
        }
        all_years.push(year);
        grouped
            .entry(community)
            .or_default()
            .push(PVInstallation { id, location, year, panel_area });
    }

    let timeline = match timeline {
        Some(t) => t,
        None => {
            all_years.sort_unstable();
            all_years.dedup();
            Timeline::new(all_years)
                .map_err(|e| IoError::Timeline(format!("cannot infer timeline: {e}")))?
        }
    };

    let mut communities = Vec::new();
    for (id, ring) in rings {
        if hard_errors.iter().any(|h| h.community_id == id) {
            continue;
        }
        let events = grouped.remove(&id).unwrap_or_default();
        match Polygon::new(ring) {
            Ok(polygon) => match Community::new(id.clone(), polygon, events) {
                Ok(c) => communities.push(c),
                Err(e) => {
                    hard_errors.push(HardError { community_id: id, message: e.to_string() })
                }
            },
            Err(e) => hard_errors.push(HardError { community_id: id, message: e.to_string() }),
        }
    }

    let mut report = validate_dataset(&communities, &timeline);
    report.hard_errors = hard_errors;
    report.orphan_events = orphans;
    Ok((Dataset { communities, timeline }, report))
}

fn polygon_feature(community: &Community) -> Feature {
    let mut ring: Vec<[f64; 2]> =
        community.polygon.vertices().iter().map(|p| [p.x, p.y]).collect();
    // GeoJSON rings close on themselves.
    if let Some(&first) = ring.first() {
        ring.push(first);
    }
    let mut properties = serde_json::Map::new();
    properties.insert("community".into(), Value::String(community.id.clone()));
    Feature {
        kind: "Feature".into(),
        properties,
        geometry: GeometryJson {
            kind: "Polygon".into(),
            coordinates: serde_json::to_value(vec![ring]).unwrap(),
        },
    }
}

fn event_feature(community_id: &str, event: &PVInstallation) -> Feature {
    let mut properties = serde_json::Map::new();
    properties.insert("community".into(), Value::String(community_id.to_string()));
    properties.insert("id".into(), Value::String(event.id.clone()));
    properties.insert("year".into(), Value::from(event.year));
    properties.insert("panel_area".into(), Value::from(event.panel_area));
    Feature {
        kind: "Feature".into(),
        properties,
        geometry: GeometryJson {
            kind: "Point".into(),
            coordinates: serde_json::to_value([event.location.x, event.location.y]).unwrap(),
        },
    }
}

fn write_collection(path: &Path, features: Vec<Feature>) -> Result<(), IoError> {
    let collection = FeatureCollection { kind: "FeatureCollection".into(), features };
    let text = serde_json::to_string_pretty(&collection).expect("serializable");
    fs::write(path, text).map_err(|source| IoError::File { path: path.to_path_buf(), source })
}

/// Writes the polygon feature collection for a set of communities.
pub fn write_polygons(path: &Path, communities: &[Community]) -> Result<(), IoError> {
    write_collection(path, communities.iter().map(polygon_feature).collect())
}

/// Writes the event feature collection for a set of communities.
pub fn write_events(path: &Path, communities: &[Community]) -> Result<(), IoError> {
    let mut features = Vec::new();
    for c in communities {
        for e in &c.events {
            features.push(event_feature(&c.id, e));
        }
    }
    write_collection(path, features)
}

/// Serializes a float with 17 significant digits so the text round-trips to
/// the identical bit pattern.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.16e}")
    }
}

/// Minimal CSV quoting: fields containing separators or quotes are quoted.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes a CSV table with a manifest-hash comment line, a header, and
/// pre-formatted rows.
pub fn write_csv(
    path: &Path,
    manifest_hash: &str,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<(), IoError> {
    let file = fs::File::create(path)
        .map_err(|source| IoError::File { path: path.to_path_buf(), source })?;
    let mut out = std::io::BufWriter::new(file);
    let mut write = |line: &str| -> Result<(), IoError> {
        writeln!(out, "{line}").map_err(|source| IoError::File { path: path.to_path_buf(), source })
    };
    write(&format!("# manifest {manifest_hash}"))?;
    write(&header.join(","))?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|f| csv_field(f)).collect();
        write(&line.join(","))?;
    }
    out.flush().map_err(|source| IoError::File { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_region, RegionConfig};

    #[test]
    fn synth_round_trip_has_no_violations() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RegionConfig {
            n_communities: 4,
            years: vec![2012, 2015, 2016],
            process: crate::synth::ProcessKind::Cstr,
            master_seed: 3,
            area_range: (8_000.0, 20_000.0),
            events_range: (60, 90),
        };
        let communities = generate_region(&cfg).unwrap();
        let polys = dir.path().join("polygons.json");
        let events = dir.path().join("events.json");
        write_polygons(&polys, &communities).unwrap();
        write_events(&events, &communities).unwrap();

        let (dataset, report) = ingest(&polys, &events, None).unwrap();
        assert_eq!(dataset.communities.len(), 4);
        assert!(report.hard_errors.is_empty());
        assert!(report.orphan_events.is_empty());
        assert!(report.communities.iter().all(|c| c.violations.is_empty()));
        assert_eq!(dataset.timeline.years(), &[2012, 2015, 2016]);
        // Bit-exact coordinate round trip.
        for (orig, loaded) in communities.iter().zip(&dataset.communities) {
            assert_eq!(orig.id, loaded.id);
            for (a, b) in orig.events.iter().zip(&loaded.events) {
                assert_eq!(a.location.x, b.location.x);
                assert_eq!(a.location.y, b.location.y);
                assert_eq!(a.panel_area, b.panel_area);
            }
        }
    }

    fn write_file(dir: &Path, name: &str, contents: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, contents).unwrap();
        p
    }

    const GOOD_POLY: &str = r#"{"type":"FeatureCollection","features":[
        {"type":"Feature","properties":{"community":"A"},
         "geometry":{"type":"Polygon","coordinates":[[[0,0],[100,0],[100,100],[0,100],[0,0]]]}}]}"#;

    #[test]
    fn orphan_events_are_listed_and_excluded() {
        let dir = tempfile::tempdir().unwrap();
        let polys = write_file(dir.path(), "p.json", GOOD_POLY);
        let events = write_file(
            dir.path(),
            "e.json",
            r#"{"type":"FeatureCollection","features":[
             {"type":"Feature","properties":{"community":"A","year":2012,"panel_area":4.0,"id":"a0"},
              "geometry":{"type":"Point","coordinates":[10,10]}},
             {"type":"Feature","properties":{"community":"A","year":2016,"panel_area":4.0,"id":"a1"},
              "geometry":{"type":"Point","coordinates":[12,10]}},
             {"type":"Feature","properties":{"community":"GHOST","year":2015,"panel_area":4.0,"id":"lost"},
              "geometry":{"type":"Point","coordinates":[10,10]}}]}"#,
        );
        let (dataset, report) = ingest(&polys, &events, None).unwrap();
        assert_eq!(report.orphan_events, vec!["lost".to_string()]);
        assert_eq!(dataset.communities[0].events.len(), 2);
        // Orphan years do not leak into the inferred timeline.
        assert_eq!(dataset.timeline.years(), &[2012, 2016]);
    }

    #[test]
    fn missing_community_property_names_feature() {
        let dir = tempfile::tempdir().unwrap();
        let polys = write_file(
            dir.path(),
            "p.json",
            r#"{"type":"FeatureCollection","features":[
             {"type":"Feature","properties":{},
              "geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,0]]]}}]}"#,
        );
        let events = write_file(
            dir.path(),
            "e.json",
            r#"{"type":"FeatureCollection","features":[]}"#,
        );
        let err = ingest(&polys, &events, Some(Timeline::default_snapshots())).unwrap_err();
        match err {
            IoError::Schema { feature, message, .. } => {
                assert_eq!(feature, 0);
                assert!(message.contains("community"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn self_intersecting_polygon_is_a_community_hard_error() {
        let dir = tempfile::tempdir().unwrap();
        let polys = write_file(
            dir.path(),
            "p.json",
            r#"{"type":"FeatureCollection","features":[
             {"type":"Feature","properties":{"community":"X"},
              "geometry":{"type":"Polygon","coordinates":[[[0,0],[4,0],[0,3],[4,3],[0,0]]]}}]}"#,
        );
        let events = write_file(
            dir.path(),
            "e.json",
            r#"{"type":"FeatureCollection","features":[
             {"type":"Feature","properties":{"community":"X","year":2012,"panel_area":1.0},
              "geometry":{"type":"Point","coordinates":[1,1]}}]}"#,
        );
        let (dataset, report) = ingest(&polys, &events, Some(Timeline::default_snapshots())).unwrap();
        assert!(dataset.communities.is_empty());
        assert_eq!(report.hard_errors.len(), 1);
        assert!(report.is_fatal());
    }

    #[test]
    fn holes_are_rejected_per_community() {
        let dir = tempfile::tempdir().unwrap();
        let polys = write_file(
            dir.path(),
            "p.json",
            r#"{"type":"FeatureCollection","features":[
             {"type":"Feature","properties":{"community":"H"},
              "geometry":{"type":"Polygon","coordinates":[
                [[0,0],[100,0],[100,100],[0,100],[0,0]],
                [[40,40],[60,40],[60,60],[40,60],[40,40]]]}}]}"#,
        );
        let events =
            write_file(dir.path(), "e.json", r#"{"type":"FeatureCollection","features":[]}"#);
        let (dataset, report) = ingest(&polys, &events, Some(Timeline::default_snapshots())).unwrap();
        assert!(dataset.communities.is_empty());
        assert!(report.hard_errors[0].message.contains("holes"));
    }

    #[test]
    fn float_formatting_round_trips() {
        for v in [0.1, 1.0 / 3.0, 1e-300, 2.5e17, -std::f64::consts::PI] {
            let s = fmt_f64(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{s}");
        }
    }

    #[test]
    fn csv_quoting() {
        assert_eq!(csv_field("plain"), "plain");
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("q\"q"), "\"q\"\"q\"");
    }
}
