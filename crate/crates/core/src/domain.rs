//! Core data model: adoption events, communities, the snapshot timeline,
//! year-pair cohorts, and dataset validation.
//!
//! All types are immutable after construction and safe to share across
//! parallel workers.

use crate::geom::{GeometrySummary, Point, Polygon};
use serde::Serialize;
use thiserror::Error;

/// Minimum observed events for a community to enter the analysis.
pub const MIN_EVENTS_FOR_ANALYSIS: usize = 50;

/// Snapshot years of the default dataset timeline.
pub const DEFAULT_TIMELINE_YEARS: [i32; 7] = [2012, 2015, 2016, 2017, 2020, 2021, 2022];

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("timeline needs at least two strictly increasing years")]
    InvalidTimeline,
    #[error("community {0}: {1}")]
    BadPolygon(String, crate::geom::GeometryError),
    #[error("event {0}: panel_area must be positive, got {1}")]
    NonPositivePanelArea(String, f64),
}

/// One adoption event: a panel observed at a location in a snapshot year.
#[derive(Debug, Clone, Serialize)]
pub struct PVInstallation {
    pub id: String,
    pub location: Point,
    /// First snapshot year in which the panel is visible.
    pub year: i32,
    /// Panel surface area, m².
    pub panel_area: f64,
}

/// Strictly increasing sequence of snapshot years.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Timeline {
    years: Vec<i32>,
}

impl Timeline {
    pub fn new(years: Vec<i32>) -> Result<Self, DomainError> {
        if years.len() < 2 || years.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DomainError::InvalidTimeline);
        }
        Ok(Self { years })
    }

    pub fn default_snapshots() -> Self {
        Self { years: DEFAULT_TIMELINE_YEARS.to_vec() }
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn contains(&self, year: i32) -> bool {
        self.years.binary_search(&year).is_ok()
    }

    pub fn first(&self) -> i32 {
        self.years[0]
    }

    pub fn last(&self) -> i32 {
        *self.years.last().unwrap()
    }

    /// Temporal span |T| in years.
    pub fn span(&self) -> f64 {
        f64::from(self.last() - self.first())
    }
}

/// A bounded community: polygon, derived geometry, and its event set.
#[derive(Debug, Clone)]
pub struct Community {
    pub id: String,
    pub polygon: Polygon,
    pub geometry: GeometrySummary,
    pub events: Vec<PVInstallation>,
}

impl Community {
    /// Builds a community; malformed polygons and non-positive panel areas
    /// are hard errors. Event-level placement rules are checked separately
    /// by [`validate_dataset`].
    pub fn new(
        id: impl Into<String>,
        polygon: Polygon,
        events: Vec<PVInstallation>,
    ) -> Result<Self, DomainError> {
        let id = id.into();
        for ev in &events {
            if !(ev.panel_area > 0.0) {
                return Err(DomainError::NonPositivePanelArea(ev.id.clone(), ev.panel_area));
            }
        }
        let geometry = GeometrySummary::from_polygon(&polygon);
        Ok(Self { id, polygon, geometry, events })
    }

    /// Built-up area `Ba`, m² (the polygon area).
    pub fn built_area(&self) -> f64 {
        self.geometry.area
    }

    pub fn event_points(&self) -> Vec<Point> {
        self.events.iter().map(|e| e.location).collect()
    }
}

/// Prior/new event split for one ordered year pair `(t, t')`.
///
/// `prior` holds events first observed at or before `t`; `new` holds events
/// first observed exactly at `t'`. `prior_rows` gives each prior point's
/// index into the owning community's event list, which addresses rows of the
/// community's edge-weight table.
#[derive(Debug, Clone)]
pub struct CohortPair {
    pub t: i32,
    pub t_prime: i32,
    /// Calendar lag `t' - t`, years.
    pub lag: u32,
    pub prior: Vec<Point>,
    pub prior_rows: Vec<u32>,
    pub new: Vec<Point>,
}

/// Builds one cohort pair per ordered year pair of the timeline.
///
/// Deterministic: pairs ordered by `(t, t')`, points in event order.
pub fn build_cohorts(community: &Community, timeline: &Timeline) -> Vec<CohortPair> {
    let years = timeline.years();
    let mut pairs = Vec::with_capacity(years.len() * (years.len() - 1) / 2);
    for (i, &t) in years.iter().enumerate() {
        for &t_prime in &years[i + 1..] {
            let mut prior = Vec::new();
            let mut prior_rows = Vec::new();
            let mut new = Vec::new();
            for (row, ev) in community.events.iter().enumerate() {
                if ev.year <= t {
                    prior.push(ev.location);
                    prior_rows.push(row as u32);
                } else if ev.year == t_prime {
                    new.push(ev.location);
                }
            }
            pairs.push(CohortPair {
                t,
                t_prime,
                lag: (t_prime - t) as u32,
                prior,
                prior_rows,
                new,
            });
        }
    }
    pairs
}

/// One rule violation found during validation.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    EventOutsidePolygon { event_id: String },
    UnknownYear { event_id: String, year: i32 },
    TooFewEvents { count: usize },
}

/// Validation outcome for one community.
#[derive(Debug, Clone, Serialize)]
pub struct CommunityReport {
    pub community_id: String,
    pub violations: Vec<Violation>,
    /// Excluded from analysis (too few events) but kept in the dataset.
    pub excluded: bool,
}

/// A community that could not be constructed at all.
#[derive(Debug, Clone, Serialize)]
pub struct HardError {
    pub community_id: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub hard_errors: Vec<HardError>,
    pub communities: Vec<CommunityReport>,
    /// Events referencing an unknown community id (populated by ingestion).
    pub orphan_events: Vec<String>,
}

impl ValidationReport {
    pub fn is_fatal(&self) -> bool {
        !self.hard_errors.is_empty()
    }

    pub fn excluded_ids(&self) -> Vec<&str> {
        self.communities
            .iter()
            .filter(|c| c.excluded)
            .map(|c| c.community_id.as_str())
            .collect()
    }
}

/// Checks event placement, year membership, and the minimum-count rule.
/// Communities failing the count rule are flagged excluded, not deleted.
pub fn validate_dataset(communities: &[Community], timeline: &Timeline) -> ValidationReport {
    let mut report = ValidationReport::default();
    for community in communities {
        let mut violations = Vec::new();
        for ev in &community.events {
            if !timeline.contains(ev.year) {
                violations.push(Violation::UnknownYear { event_id: ev.id.clone(), year: ev.year });
            }
            if !community.polygon.contains(ev.location) {
                violations.push(Violation::EventOutsidePolygon { event_id: ev.id.clone() });
            }
        }
        let mut excluded = false;
        if community.events.len() < MIN_EVENTS_FOR_ANALYSIS {
            violations.push(Violation::TooFewEvents { count: community.events.len() });
            excluded = true;
        }
        report.communities.push(CommunityReport {
            community_id: community.id.clone(),
            violations,
            excluded,
        });
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point;

    fn square_poly(side: f64) -> Polygon {
        Polygon::new(vec![
            Point::new(0.0, 0.0),
            Point::new(side, 0.0),
            Point::new(side, side),
            Point::new(0.0, side),
        ])
        .unwrap()
    }

    fn event(id: &str, x: f64, y: f64, year: i32) -> PVInstallation {
        PVInstallation { id: id.into(), location: Point::new(x, y), year, panel_area: 4.0 }
    }

    fn community_with_events(n: usize, year: i32) -> Community {
        let events = (0..n)
            .map(|i| event(&format!("e{i}"), 10.0 + i as f64 % 80.0, 20.0, year))
            .collect();
        Community::new("c", square_poly(100.0), events).unwrap()
    }

    #[test]
    fn default_timeline_has_21_cohort_pairs() {
        let tl = Timeline::default_snapshots();
        let c = community_with_events(3, 2012);
        let pairs = build_cohorts(&c, &tl);
        assert_eq!(pairs.len(), 21);
    }

    #[test]
    fn two_year_timeline_single_pair() {
        let tl = Timeline::new(vec![2012, 2015]).unwrap();
        let c = community_with_events(3, 2012);
        let pairs = build_cohorts(&c, &tl);
        assert_eq!(pairs.len(), 1);
        assert_eq!((pairs[0].t, pairs[0].t_prime, pairs[0].lag), (2012, 2015, 3));
    }

    #[test]
    fn cohort_membership_rules() {
        let tl = Timeline::default_snapshots();
        let events = vec![
            event("a", 10.0, 10.0, 2012),
            event("b", 20.0, 10.0, 2015),
            event("c", 30.0, 10.0, 2016),
            event("d", 40.0, 10.0, 2022),
        ];
        let c = Community::new("c", square_poly(100.0), events).unwrap();
        let pairs = build_cohorts(&c, &tl);
        let p = pairs.iter().find(|p| p.t == 2012 && p.t_prime == 2015).unwrap();
        assert_eq!(p.prior.len(), 1); // only the 2012 event
        assert_eq!(p.new.len(), 1); // only the 2015 event, not 2016
        let p = pairs.iter().find(|p| p.t == 2015 && p.t_prime == 2022).unwrap();
        assert_eq!(p.prior.len(), 2);
        assert_eq!(p.new.len(), 1);
        // prior_rows index into the community event list.
        assert_eq!(p.prior_rows, vec![0, 1]);
    }

    #[test]
    fn every_event_is_new_exactly_in_pairs_ending_at_its_year() {
        let tl = Timeline::default_snapshots();
        let events: Vec<_> = [2015, 2016, 2017, 2020, 2021, 2022]
            .iter()
            .enumerate()
            .map(|(i, &y)| event(&format!("e{i}"), 5.0 + i as f64, 5.0, y))
            .collect();
        let c = Community::new("c", square_poly(100.0), events).unwrap();
        let pairs = build_cohorts(&c, &tl);
        for (i, year) in [2015, 2016, 2017, 2020, 2021, 2022].iter().enumerate() {
            let appearances: usize = pairs
                .iter()
                .filter(|p| p.t_prime == *year)
                .map(|p| {
                    p.new
                        .iter()
                        .filter(|pt| (pt.x - (5.0 + i as f64)).abs() < 1e-12)
                        .count()
                })
                .sum();
            let expected = pairs.iter().filter(|p| p.t_prime == *year).count();
            assert_eq!(appearances, expected, "year {year}");
        }
    }

    #[test]
    fn cohorts_are_pure() {
        let tl = Timeline::default_snapshots();
        let c = community_with_events(5, 2015);
        let a = build_cohorts(&c, &tl);
        let b = build_cohorts(&c, &tl);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!((x.t, x.t_prime), (y.t, y.t_prime));
            assert_eq!(x.prior.len(), y.prior.len());
        }
    }

    #[test]
    fn validation_flags() {
        let tl = Timeline::default_snapshots();
        // 49 events: excluded.
        let small = community_with_events(49, 2012);
        let report = validate_dataset(&[small], &tl);
        assert!(report.communities[0].excluded);
        assert!(matches!(
            report.communities[0].violations.last(),
            Some(Violation::TooFewEvents { count: 49 })
        ));

        // Unknown year + outside polygon.
        let mut events: Vec<_> =
            (0..50).map(|i| event(&format!("e{i}"), 50.0, 50.0, 2012)).collect();
        events.push(event("bad-year", 10.0, 10.0, 2013));
        events.push(event("outside", 500.0, 500.0, 2012));
        let c = Community::new("c", square_poly(100.0), events).unwrap();
        let report = validate_dataset(&[c], &tl);
        let viols = &report.communities[0].violations;
        assert!(viols
            .iter()
            .any(|v| matches!(v, Violation::UnknownYear { year: 2013, .. })));
        assert!(viols
            .iter()
            .any(|v| matches!(v, Violation::EventOutsidePolygon { event_id } if event_id == "outside")));
        assert!(!report.communities[0].excluded);
        assert!(!report.is_fatal());
    }

    #[test]
    fn clean_dataset_has_no_violations() {
        let tl = Timeline::default_snapshots();
        let c = community_with_events(60, 2016);
        let report = validate_dataset(&[c], &tl);
        assert!(report.communities[0].violations.is_empty());
        assert!(!report.communities[0].excluded);
    }

    #[test]
    fn timeline_rules() {
        assert!(Timeline::new(vec![2012]).is_err());
        assert!(Timeline::new(vec![2012, 2012]).is_err());
        assert!(Timeline::new(vec![2015, 2012]).is_err());
        let tl = Timeline::default_snapshots();
        assert_eq!(tl.span(), 10.0);
        assert!(tl.contains(2016));
        assert!(!tl.contains(2013));
    }

    #[test]
    fn panel_area_must_be_positive() {
        let bad = PVInstallation {
            id: "z".into(),
            location: Point::new(1.0, 1.0),
            year: 2012,
            panel_area: 0.0,
        };
        assert!(Community::new("c", square_poly(10.0), vec![bad]).is_err());
    }
}
