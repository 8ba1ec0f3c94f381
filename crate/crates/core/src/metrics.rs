//! Front quality measures: exact 2-D hypervolume, the chopped and classical
//! HV comparisons, the per-level f1 difference and the rank-sum test.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

pub type Point = (f64, f64);

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{0} sample is empty")]
    EmptySample(&'static str),
    #[error("no {0} runs to compare")]
    NoRuns(&'static str),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn weakly_dominates(a: Point, b: Point) -> bool {
    a.0 <= b.0 && a.1 <= b.1
}

/// Mutually non-dominated, deduplicated subset sorted by ascending f1.
pub fn non_dominated(points: &[Point]) -> Vec<Point> {
    let mut sorted: Vec<Point> = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut out: Vec<Point> = Vec::new();
    for p in sorted {
        match out.last() {
            Some(&last) if weakly_dominates(last, p) => {}
            _ => out.push(p),
        }
    }
    out
}

/// Area dominated by `points` and bounded by `reference`.
pub fn hypervolume_2d(points: &[Point], reference: Point) -> f64 {
    let inside: Vec<Point> = points
        .iter()
        .copied()
        .filter(|&p| {
            let keep = weakly_dominates(p, reference) && p != reference;
            if !keep {
                log::warn!("point ({}, {}) does not dominate the reference; dropped", p.0, p.1);
            }
            keep
        })
        .collect();
    let front = non_dominated(&inside);
    let mut area = 0.0;
    let mut ceiling = reference.1;
    for p in front {
        area += (reference.0 - p.0) * (ceiling - p.1);
        ceiling = p.1;
    }
    area
}

/// A DEMOA run's final front with f2 counted over all dynamic customers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalFront {
    pub points: Vec<Point>,
    pub upper_bound_f2: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HvMode {
    /// Chop every front at the smallest final upper bound, then pick the
    /// reference from the union of chopped fronts.
    #[default]
    Chopped,
    /// Reference from the pooled fronts, no chopping.
    Classical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HvSample {
    pub hv: f64,
    /// HV of the union of all compared fronts minus `hv`; lower is better.
    pub indicator: f64,
    /// Nothing survived chopping.
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HvComparison {
    pub reference: Point,
    pub bound: Option<f64>,
    pub union_hv: f64,
    pub demoa: Vec<HvSample>,
    pub emoa: Vec<HvSample>,
}

pub const DEFAULT_MARGIN: Point = (1.0, 1.0);

/// Scores every front against one reference taken from the (optionally
/// chopped) union plus `margin`.
pub fn score_fronts(fronts: &[Vec<Point>], bound: Option<f64>, margin: Point) -> (Point, f64, Vec<HvSample>) {
    let filtered: Vec<Vec<Point>> = fronts
        .iter()
        .map(|f| {
            f.iter()
                .copied()
                .filter(|p| bound.is_none_or(|u| p.1 <= u))
                .collect()
        })
        .collect();
    let union: Vec<Point> = filtered.iter().flatten().copied().collect();
    let max = union
        .iter()
        .fold((f64::NEG_INFINITY, f64::NEG_INFINITY), |m, p| (m.0.max(p.0), m.1.max(p.1)));
    let reference = if union.is_empty() {
        margin
    } else {
        (max.0 + margin.0, max.1 + margin.1)
    };
    let union_hv = hypervolume_2d(&union, reference);
    let samples = filtered
        .iter()
        .map(|f| {
            let hv = hypervolume_2d(f, reference);
            HvSample {
                hv,
                indicator: union_hv - hv,
                empty: f.is_empty(),
            }
        })
        .collect();
    (reference, union_hv, samples)
}

pub fn chopped_hv_comparison(
    demoa_runs: &[FinalFront],
    emoa_runs: &[Vec<Point>],
    margin: Point,
    mode: HvMode,
) -> Result<HvComparison, MetricsError> {
    if demoa_runs.is_empty() {
        return Err(MetricsError::NoRuns("DEMOA"));
    }
    if emoa_runs.is_empty() {
        return Err(MetricsError::NoRuns("EMOA"));
    }
    let bound = match mode {
        HvMode::Chopped => demoa_runs.iter().map(|r| r.upper_bound_f2).min().map(|u| u as f64),
        HvMode::Classical => None,
    };
    let fronts: Vec<Vec<Point>> = demoa_runs
        .iter()
        .map(|r| r.points.clone())
        .chain(emoa_runs.iter().cloned())
        .collect();
    let (reference, union_hv, mut samples) = score_fronts(&fronts, bound, margin);
    let emoa = samples.split_off(demoa_runs.len());
    Ok(HvComparison {
        reference,
        bound,
        union_hv,
        demoa: samples,
        emoa,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Measure {
    /// (f2 level, DEMOA f1 minus best reference f1 at that level).
    pub entries: Vec<(usize, f64)>,
    pub skipped: usize,
}

pub fn f1_measure(demoa_final: &[Point], emoa_ref: &[Point]) -> F1Measure {
    let mut entries = Vec::new();
    let mut skipped = 0;
    for &(f1, f2) in demoa_final {
        let best = emoa_ref
            .iter()
            .filter(|q| q.1 == f2)
            .map(|q| q.0)
            .min_by(f64::total_cmp);
        match best {
            Some(b) => entries.push((f2 as usize, f1 - b)),
            None => skipped += 1,
        }
    }
    F1Measure { entries, skipped }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankSum {
    /// min(U_a, U_b).
    pub u: f64,
    pub p_value: f64,
    pub exact: bool,
}

const EXACT_LIMIT: usize = 400;

/// Midranks (1-based) of the pooled sample.
fn midranks(pooled: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        let rank = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided Wilcoxon-Mann-Whitney test.
pub fn rank_sum_test(sample_a: &[f64], sample_b: &[f64]) -> Result<RankSum, MetricsError> {
    if sample_a.is_empty() {
        return Err(MetricsError::EmptySample("first"));
    }
    if sample_b.is_empty() {
        return Err(MetricsError::EmptySample("second"));
    }
    let (na, nb) = (sample_a.len(), sample_b.len());
    let pooled: Vec<f64> = sample_a.iter().chain(sample_b).copied().collect();
    let ranks = midranks(&pooled);
    let rank_sum_a: f64 = ranks[..na].iter().sum();
    let u_a = rank_sum_a - (na * (na + 1)) as f64 / 2.0;
    let u = u_a.min((na * nb) as f64 - u_a);
    if pooled.iter().all(|&x| x == pooled[0]) {
        return Ok(RankSum {
            u,
            p_value: 1.0,
            exact: na * nb <= EXACT_LIMIT,
        });
    }
    if na * nb <= EXACT_LIMIT {
        let p_value = exact_p(&ranks, na, rank_sum_a);
        return Ok(RankSum {
            u,
            p_value,
            exact: true,
        });
    }
    let n = (na + nb) as f64;
    let mut tie_term = 0.0;
    let mut sorted = ranks.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let mean = (na * nb) as f64 / 2.0;
    let var = (na * nb) as f64 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let z = ((u_a - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::standard();
    let p_value = (2.0 * (1.0 - normal.cdf(z))).min(1.0);
    Ok(RankSum {
        u,
        p_value,
        exact: false,
    })
}

/// Permutation distribution of the first sample's rank sum, counted over
/// doubled midranks so the sums stay integral.
fn exact_p(ranks: &[f64], na: usize, observed: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    // ways[k][s]: subsets of size k with doubled rank sum s
    let mut ways = vec![vec![0.0f64; max_sum + 1]; na + 1];
    ways[0][0] = 1.0;
    for &r in &doubled {
        for k in (1..=na).rev() {
            for s in (r..=max_sum).rev() {
                let add = ways[k - 1][s - r];
                if add != 0.0 {
                    ways[k][s] += add;
                }
            }
        }
    }
    let total: f64 = ways[na].iter().sum();
    let n = ranks.len() as f64;
    let centre = na as f64 * (n + 1.0);
    let distance = (2.0 * observed - centre).abs();
    let extreme: f64 = ways[na]
        .iter()
        .enumerate()
        .filter(|&(s, _)| (s as f64 - centre).abs() >= distance - 1e-9)
        .map(|(_, &w)| w)
        .sum();
    (extreme / total).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HvRow {
    pub instance: String,
    pub algorithm: String,
    pub n_vehicles: usize,
    pub d: Option<f64>,
    pub run: usize,
    pub hv: f64,
    pub indicator_hv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Row {
    pub instance: String,
    pub n_vehicles: usize,
    pub d: f64,
    pub run: usize,
    pub f2: usize,
    pub delta_f1: f64,
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<(), MetricsError> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, MetricsError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    Ok(reader.deserialize().collect::<Result<_, _>>()?)
}
