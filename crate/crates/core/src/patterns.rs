//! SSC pattern classification and transition typing.
//!
//! Communities are dichotomized on two dimensions — contagion intensity
//! (CI) and contagion range (R, R*) — into four patterns: high-long,
//! high-short, low-long, low-short. Ties at a threshold go to the lower
//! class (strict `>`). Transitions compare classifications across
//! consecutive year pairs, per dimension.

use serde::Serialize;
use std::fmt;

/// Fixed whole-period thresholds: CI > 1.15 is high; range is long when
/// R > 105.8 m or R* > 0.86.
pub const GLOBAL_THRESHOLDS: Thresholds = Thresholds {
    ci_cut: 1.15,
    r_cut: 105.8,
    r_rel_cut: 0.86,
    provenance: ThresholdProvenance::FixedGlobal,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityClass {
    High,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeClass {
    Long,
    Short,
}

/// One of the four SSC patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PatternLabel {
    pub intensity: IntensityClass,
    pub range: RangeClass,
}

impl fmt::Display for PatternLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = match self.intensity {
            IntensityClass::High => "high",
            IntensityClass::Low => "low",
        };
        let r = match self.range {
            RangeClass::Long => "long",
            RangeClass::Short => "short",
        };
        write!(f, "{i}-{r}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdProvenance {
    FixedGlobal,
    PeriodSpecific,
}

/// Classification cuts for the two dimensions.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Thresholds {
    pub ci_cut: f64,
    pub r_cut: f64,
    pub r_rel_cut: f64,
    pub provenance: ThresholdProvenance,
}

/// Classifies one community's metrics against thresholds. Intensity is high
/// iff `ci > ci_cut`; range is long iff `r_abs > r_cut` OR `r_rel >
/// r_rel_cut`, short only when both are at or below their cuts.
pub fn classify_pattern(ci: f64, r_abs: f64, r_rel: f64, cuts: &Thresholds) -> PatternLabel {
    let intensity =
        if ci > cuts.ci_cut { IntensityClass::High } else { IntensityClass::Low };
    let range = if r_abs > cuts.r_cut || r_rel > cuts.r_rel_cut {
        RangeClass::Long
    } else {
        RangeClass::Short
    };
    PatternLabel { intensity, range }
}

/// Period-specific thresholds: the contemporaneous means of CI, R, and R*
/// over communities with valid metrics for one year pair. `None` when no
/// community has valid metrics.
pub fn period_thresholds(values: &[(f64, f64, f64)]) -> Option<Thresholds> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let (mut ci, mut r, mut rr) = (0.0, 0.0, 0.0);
    for &(c, ra, rl) in values {
        ci += c;
        r += ra;
        rr += rl;
    }
    Some(Thresholds {
        ci_cut: ci / n,
        r_cut: r / n,
        r_rel_cut: rr / n,
        provenance: ThresholdProvenance::PeriodSpecific,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Intensity,
    Range,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionType {
    Upward,
    Downward,
    Stable,
}

/// Types the change of one dimension between two classifications:
/// low→high / short→long is upward, the reverse is downward, else stable.
pub fn transition_type(
    before: PatternLabel,
    after: PatternLabel,
    dimension: Dimension,
) -> TransitionType {
    match dimension {
        Dimension::Intensity => match (before.intensity, after.intensity) {
            (IntensityClass::Low, IntensityClass::High) => TransitionType::Upward,
            (IntensityClass::High, IntensityClass::Low) => TransitionType::Downward,
            _ => TransitionType::Stable,
        },
        Dimension::Range => match (before.range, after.range) {
            (RangeClass::Short, RangeClass::Long) => TransitionType::Upward,
            (RangeClass::Long, RangeClass::Short) => TransitionType::Downward,
            _ => TransitionType::Stable,
        },
    }
}

/// A transition window: two consecutive year pairs compared against each
/// other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TransitionWindow {
    /// Window index, 1-based; windows are named T1, T2, …
    pub index: usize,
    pub initial_pair: (i32, i32),
    pub final_pair: (i32, i32),
}

impl TransitionWindow {
    pub fn name(&self) -> String {
        format!("T{}", self.index)
    }
}

/// Transition windows over the default snapshot timeline:
/// T1 = (2012,2015)→(2015,2017), T2 = (2015,2017)→(2017,2020),
/// T3 = (2017,2020)→(2020,2022).
pub fn default_transition_windows() -> Vec<TransitionWindow> {
    windows_from_chain(&[2012, 2015, 2017, 2020, 2022])
}

/// Builds windows from a chain of years: consecutive year pairs
/// `(c[i], c[i+1])` compared pairwise.
pub fn windows_from_chain(chain: &[i32]) -> Vec<TransitionWindow> {
    let pairs: Vec<(i32, i32)> = chain.windows(2).map(|w| (w[0], w[1])).collect();
    pairs
        .windows(2)
        .enumerate()
        .map(|(i, w)| TransitionWindow { index: i + 1, initial_pair: w[0], final_pair: w[1] })
        .collect()
}

/// Derives a comparison chain from an arbitrary timeline: starting at the
/// first year, each next chain year is the earliest snapshot at least two
/// years later (falling back to the immediate successor). Reproduces the
/// default windows on the default timeline.
pub fn chain_for_timeline(years: &[i32]) -> Vec<i32> {
    let mut chain = vec![years[0]];
    let mut current = years[0];
    loop {
        let next = years
            .iter()
            .copied()
            .find(|&y| y >= current + 2)
            .or_else(|| years.iter().copied().find(|&y| y > current));
        match next {
            Some(y) => {
                chain.push(y);
                current = y;
            }
            None => break,
        }
    }
    chain
}

/// One community × window × dimension transition row.
#[derive(Debug, Clone, Serialize)]
pub struct TransitionRecord {
    pub community_id: String,
    /// Window index (1 = T1).
    pub window: usize,
    pub dimension: Dimension,
    pub transition: TransitionType,
    /// Relative adoption change over the window.
    pub delta_ai: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_centroid_fixtures_classify_as_labeled() {
        let cuts = &GLOBAL_THRESHOLDS;
        let cases = [
            (1.58, 127.91, 0.92, "high-long"),
            (1.62, 58.37, 0.79, "high-short"),
            (0.71, 138.31, 0.91, "low-long"),
            (0.61, 66.90, 0.71, "low-short"),
        ];
        for (ci, r, rr, expected) in cases {
            assert_eq!(classify_pattern(ci, r, rr, cuts).to_string(), expected);
        }
    }

    #[test]
    fn ties_go_to_the_lower_class() {
        let cuts = &GLOBAL_THRESHOLDS;
        let label = classify_pattern(1.15, 105.8, 0.86, cuts);
        assert_eq!(label.intensity, IntensityClass::Low);
        assert_eq!(label.range, RangeClass::Short);
    }

    #[test]
    fn period_thresholds_are_means() {
        let cuts = period_thresholds(&[(1.0, 100.0, 0.8), (3.0, 200.0, 0.9)]).unwrap();
        assert_eq!(cuts.ci_cut, 2.0);
        assert_eq!(cuts.r_cut, 150.0);
        assert!((cuts.r_rel_cut - 0.85).abs() < 1e-12);
        assert_eq!(cuts.provenance, ThresholdProvenance::PeriodSpecific);
        assert!(period_thresholds(&[]).is_none());

        // A single community sits exactly at its own means: strict > puts it
        // in the low/short classes.
        let cuts = period_thresholds(&[(1.3, 90.0, 0.7)]).unwrap();
        let label = classify_pattern(1.3, 90.0, 0.7, &cuts);
        assert_eq!(label.to_string(), "low-short");
    }

    #[test]
    fn transition_rules() {
        let ll = PatternLabel { intensity: IntensityClass::Low, range: RangeClass::Long };
        let hl = PatternLabel { intensity: IntensityClass::High, range: RangeClass::Long };
        let hs = PatternLabel { intensity: IntensityClass::High, range: RangeClass::Short };
        assert_eq!(transition_type(ll, hl, Dimension::Intensity), TransitionType::Upward);
        assert_eq!(transition_type(hl, ll, Dimension::Intensity), TransitionType::Downward);
        assert_eq!(transition_type(hl, hl, Dimension::Range), TransitionType::Stable);
        assert_eq!(transition_type(hl, hs, Dimension::Range), TransitionType::Downward);
        assert_eq!(transition_type(hs, hl, Dimension::Range), TransitionType::Upward);
        // Identity is stable on both dimensions.
        for dim in [Dimension::Intensity, Dimension::Range] {
            assert_eq!(transition_type(hs, hs, dim), TransitionType::Stable);
        }
    }

    #[test]
    fn default_windows_match_snapshot_chain() {
        let w = default_transition_windows();
        assert_eq!(w.len(), 3);
        assert_eq!(w[0].initial_pair, (2012, 2015));
        assert_eq!(w[0].final_pair, (2015, 2017));
        assert_eq!(w[1].initial_pair, (2015, 2017));
        assert_eq!(w[1].final_pair, (2017, 2020));
        assert_eq!(w[2].initial_pair, (2017, 2020));
        assert_eq!(w[2].final_pair, (2020, 2022));
        assert_eq!(w[2].name(), "T3");
    }

    #[test]
    fn chain_derivation_reproduces_default() {
        let years = crate::domain::DEFAULT_TIMELINE_YEARS;
        assert_eq!(chain_for_timeline(&years), vec![2012, 2015, 2017, 2020, 2022]);
        // Two-year timeline: a single pair, no windows.
        assert_eq!(chain_for_timeline(&[2000, 2001]), vec![2000, 2001]);
        assert!(windows_from_chain(&[2000, 2001]).is_empty());
    }

    #[test]
    fn classification_partitions_and_is_monotone_in_cuts() {
        let metrics = [
            (0.5, 50.0, 0.5),
            (1.2, 110.0, 0.9),
            (2.0, 60.0, 0.3),
            (1.16, 105.9, 0.87),
        ];
        let mut counts = std::collections::HashMap::new();
        for &(ci, r, rr) in &metrics {
            *counts
                .entry(classify_pattern(ci, r, rr, &GLOBAL_THRESHOLDS).to_string())
                .or_insert(0usize) += 1;
        }
        assert_eq!(counts.values().sum::<usize>(), metrics.len());

        // Raising the CI cut can only move communities from high to low.
        let mut higher = GLOBAL_THRESHOLDS;
        higher.ci_cut = 5.0;
        for &(ci, r, rr) in &metrics {
            let before = classify_pattern(ci, r, rr, &GLOBAL_THRESHOLDS).intensity;
            let after = classify_pattern(ci, r, rr, &higher).intensity;
            assert!(!(before == IntensityClass::Low && after == IntensityClass::High));
        }
    }
}
