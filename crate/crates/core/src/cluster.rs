//! Airport operational archetypes: per-airport features, k-means with
//! k-means++ seeding, and silhouette-based choice of K.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use log::warn;
use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{fmt_f64, ObservationRecord};

pub const FEATURE_NAMES: [&str; 3] = ["mean_flight", "mean_delay", "mean_log_flights"];
pub const MAX_LLOYD_ITERATIONS: usize = 300;
pub const DEFAULT_RESTARTS: usize = 10;
const SILHOUETTE_TIE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("feature {0:?} has zero variance")]
    DegenerateFeature(String),
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("invalid K = {k} for {points} points")]
    InvalidK { k: usize, points: usize },
    #[error("invalid K range {k_min}..={k_max} for {points} points")]
    InvalidRange {
        k_min: usize,
        k_max: usize,
        points: usize,
    },
    #[error("restarts must be at least 1")]
    NoRestarts,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("assignment file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AirportFeatures {
    pub airport: String,
    pub mean_flight: f64,
    pub mean_delay: f64,
    pub mean_log_flights: f64,
}

impl AirportFeatures {
    pub fn as_array(&self) -> [f64; 3] {
        [self.mean_flight, self.mean_delay, self.mean_log_flights]
    }
}

/// One feature row per distinct airport, sorted by airport code.
pub fn compute_airport_features(records: &[ObservationRecord]) -> Vec<AirportFeatures> {
    #[derive(Default)]
    struct Acc {
        flights: f64,
        rows: usize,
        delay: f64,
        log_flights: f64,
        positive: usize,
    }
    let mut by_airport: BTreeMap<&str, Acc> = BTreeMap::new();
    for r in records {
        let acc = by_airport.entry(r.airport.as_str()).or_default();
        acc.flights += r.arr_flights;
        acc.rows += 1;
        if r.arr_flights > 0.0 {
            acc.delay += r.arr_del15 / r.arr_flights;
            acc.log_flights += r.arr_flights.ln();
            acc.positive += 1;
        } else {
            warn!(
                "{} {}-{:02} {}: zero arrivals excluded from delay and log-volume means",
                r.airport, r.year, r.month, r.carrier
            );
        }
    }
    by_airport
        .into_iter()
        .filter_map(|(airport, acc)| {
            if acc.positive == 0 {
                warn!("{airport}: no records with positive volume, dropped from clustering");
                return None;
            }
            Some(AirportFeatures {
                airport: airport.to_string(),
                mean_flight: acc.flights / acc.rows as f64,
                mean_delay: acc.delay / acc.positive as f64,
                mean_log_flights: acc.log_flights / acc.positive as f64,
            })
        })
        .collect()
}

pub fn feature_matrix(features: &[AirportFeatures]) -> Array2<f64> {
    let mut m = Array2::zeros((features.len(), FEATURE_NAMES.len()));
    for (mut row, f) in m.axis_iter_mut(Axis(0)).zip(features) {
        for (cell, v) in row.iter_mut().zip(f.as_array()) {
            *cell = v;
        }
    }
    m
}

/// Per-dimension centering and scaling applied by [`standardize_features`].
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Centers each column and divides by its standard deviation (divisor `n`),
/// so every column ends with mean 0 and standard deviation 1.
pub fn standardize_features(
    matrix: ArrayView2<f64>,
    names: &[&str],
) -> Result<(Array2<f64>, Standardization), ClusterError> {
    let n = matrix.nrows();
    if n < 2 {
        return Err(ClusterError::TooFewPoints { needed: 2, got: n });
    }
    let mut out = matrix.to_owned();
    let mut mean = Vec::with_capacity(matrix.ncols());
    let mut scale = Vec::with_capacity(matrix.ncols());
    for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let m = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if !(sd > 1e-12 * m.abs().max(1.0)) {
            let name = names.get(j).map(|s| s.to_string()).unwrap_or_else(|| format!("column {j}"));
            return Err(ClusterError::DegenerateFeature(name));
        }
        col.mapv_inplace(|v| (v - m) / sd);
        mean.push(m);
        scale.push(sd);
    }
    Ok((out, Standardization { mean, scale }))
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Within-cluster sum of squared distances to the given centroids.
pub fn wcss(points: ArrayView2<f64>, labels: &[usize], centroids: ArrayView2<f64>) -> f64 {
    points
        .axis_iter(Axis(0))
        .zip(labels)
        .map(|(p, &l)| sq_dist(p, centroids.row(l)))
        .sum()
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub k: usize,
    pub labels: Vec<usize>,
    pub centroids: Array2<f64>,
    pub wcss: f64,
    pub iterations: usize,
    /// WCSS after every centroid update of the winning restart.
    pub wcss_trace: Vec<f64>,
    pub restart: usize,
}

/// Best-of-`restarts` Lloyd's algorithm with k-means++ seeding. Restart `r`
/// draws from ChaCha stream `r` of `seed`, so results do not depend on
/// scheduling.
pub fn fit_kmeans(
    points: ArrayView2<f64>,
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<KMeansFit, ClusterError> {
    let n = points.nrows();
    if k < 1 || k > n {
        return Err(ClusterError::InvalidK { k, points: n });
    }
    if restarts == 0 {
        return Err(ClusterError::NoRestarts);
    }
    let fits: Vec<KMeansFit> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            lloyd(points, k, &mut rng, r)
        })
        .collect();
    let best = fits
        .into_iter()
        .reduce(|best, f| if f.wcss < best.wcss { f } else { best })
        .expect("restarts >= 1");
    Ok(canonicalize(best))
}

/// Relabels clusters in order of first appearance so equal partitions carry
/// equal labels.
fn canonicalize(mut fit: KMeansFit) -> KMeansFit {
    let mut map = vec![usize::MAX; fit.k];
    let mut next = 0;
    for &l in &fit.labels {
        if map[l] == usize::MAX {
            map[l] = next;
            next += 1;
        }
    }
    let mut centroids = fit.centroids.clone();
    for (old, &new) in map.iter().enumerate() {
        centroids.row_mut(new).assign(&fit.centroids.row(old));
    }
    fit.labels.iter_mut().for_each(|l| *l = map[*l]);
    fit.centroids = centroids;
    fit
}

fn kmeans_plus_plus<R: Rng>(points: ArrayView2<f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = points.nrows();
    let mut centroids = Array2::zeros((k, points.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&points.row(first));
    let mut d2: Vec<f64> = points
        .axis_iter(Axis(0))
        .map(|p| sq_dist(p, centroids.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&points.row(pick));
        for (i, p) in points.axis_iter(Axis(0)).enumerate() {
            d2[i] = d2[i].min(sq_dist(p, centroids.row(c)));
        }
    }
    centroids
}

fn assign(points: ArrayView2<f64>, centroids: &Array2<f64>, labels: &mut [usize]) {
    for (p, label) in points.axis_iter(Axis(0)).zip(labels.iter_mut()) {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, centroid) in centroids.axis_iter(Axis(0)).enumerate() {
            let d = sq_dist(p, centroid);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        *label = best;
    }
}

fn update_centroids(points: ArrayView2<f64>, labels: &mut [usize], centroids: &mut Array2<f64>) {
    let k = centroids.nrows();
    loop {
        let mut counts = vec![0usize; k];
        let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
        for (p, &l) in points.axis_iter(Axis(0)).zip(labels.iter()) {
            counts[l] += 1;
            let mut row = sums.row_mut(l);
            row += &p;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            for (c, mut row) in centroids.axis_iter_mut(Axis(0)).enumerate() {
                row.assign(&(&sums.row(c) / counts[c] as f64));
            }
            return;
        };
        // Re-seed the empty cluster at the point farthest from its centroid,
        // taken from a cluster that can spare it.
        let donor = points
            .axis_iter(Axis(0))
            .enumerate()
            .filter(|(i, _)| counts[labels[*i]] >= 2)
            .map(|(i, p)| (i, sq_dist(p, centroids.row(labels[i]))))
            .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            })
            .map(|(i, _)| i)
            .expect("k <= n guarantees a cluster with two members");
        labels[donor] = empty;
        centroids.row_mut(empty).assign(&points.row(donor));
    }
}

fn lloyd<R: Rng>(points: ArrayView2<f64>, k: usize, rng: &mut R, restart: usize) -> KMeansFit {
    let n = points.nrows();
    let mut centroids = kmeans_plus_plus(points, k, rng);
    let mut labels = vec![0usize; n];
    let mut previous = vec![usize::MAX; n];
    let mut trace = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_LLOYD_ITERATIONS {
        assign(points, &centroids, &mut labels);
        if labels == previous {
            break;
        }
        update_centroids(points, &mut labels, &mut centroids);
        trace.push(wcss(points, &labels, centroids.view()));
        previous.copy_from_slice(&labels);
        iterations += 1;
    }
    KMeansFit {
        k,
        wcss: wcss(points, &labels, centroids.view()),
        labels,
        centroids,
        iterations,
        wcss_trace: trace,
        restart,
    }
}

/// Per-point silhouette values with Euclidean distance. Points in singleton
/// clusters score 0.
pub fn silhouette_samples(
    points: ArrayView2<f64>,
    labels: &[usize],
    k: usize,
) -> Result<Vec<f64>, ClusterError> {
    let n = points.nrows();
    if k < 2 || k >= n {
        return Err(ClusterError::InvalidK { k, points: n });
    }
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let own = labels[i];
        if sizes[own] == 1 {
            out.push(0.0);
            continue;
        }
        let mut sums = vec![0.0; k];
        for j in 0..n {
            if i != j {
                sums[labels[j]] += sq_dist(points.row(i), points.row(j)).sqrt();
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        out.push(if denom > 0.0 { (b - a) / denom } else { 0.0 });
    }
    Ok(out)
}

pub fn silhouette_score(points: ArrayView2<f64>, labels: &[usize], k: usize) -> Result<f64, ClusterError> {
    let s = silhouette_samples(points, labels, k)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

#[derive(Debug, Clone)]
pub struct KSelection {
    pub k: usize,
    /// `(K, mean silhouette)` for every K evaluated.
    pub scores: Vec<(usize, f64)>,
    pub fit: KMeansFit,
}

/// Fits every K in `k_min..=k_max` and keeps the one with the highest mean
/// silhouette; ties within 1e-9 go to the smaller K.
pub fn select_k(
    points: ArrayView2<f64>,
    k_min: usize,
    k_max: usize,
    seed: u64,
    restarts: usize,
) -> Result<KSelection, ClusterError> {
    let n = points.nrows();
    if k_min < 2 || k_min > k_max || k_max + 1 > n {
        return Err(ClusterError::InvalidRange { k_min, k_max, points: n });
    }
    let mut scores = Vec::new();
    let mut best: Option<(f64, KMeansFit)> = None;
    for k in k_min..=k_max {
        let fit = fit_kmeans(points, k, seed, restarts)?;
        let s = silhouette_score(points, &fit.labels, k)?;
        scores.push((k, s));
        if best.as_ref().is_none_or(|(bs, _)| s > bs + SILHOUETTE_TIE) {
            best = Some((s, fit));
        }
    }
    let (_, fit) = best.expect("non-empty K range");
    Ok(KSelection { k: fit.k, scores, fit })
}

/// Final airport → cluster mapping used as the model's spatial grouping.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub k: usize,
    labels: BTreeMap<String, usize>,
    /// Centroids in standardized feature space (empty when loaded from disk).
    pub centroids: Vec<Vec<f64>>,
    pub silhouette: f64,
}

impl ClusterAssignment {
    pub fn new(k: usize, labels: BTreeMap<String, usize>, centroids: Vec<Vec<f64>>, silhouette: f64) -> Self {
        Self { k, labels, centroids, silhouette }
    }

    pub fn label(&self, airport: &str) -> Option<usize> {
        self.labels.get(airport).copied()
    }

    pub fn labels(&self) -> &BTreeMap<String, usize> {
        &self.labels
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), ClusterError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["airport", "cluster_id"])?;
        for (a, l) in &self.labels {
            w.write_record([a.as_str(), &l.to_string()])?;
        }
        w.flush().map_err(|e| ClusterError::Format(e.to_string()))?;
        Ok(())
    }

    /// Reads an `airport,cluster_id` file. K is inferred as `max id + 1` and
    /// every id below it must be used.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, ClusterError> {
        #[derive(Deserialize)]
        struct Row {
            airport: String,
            cluster_id: usize,
        }
        let mut labels = BTreeMap::new();
        for row in csv::Reader::from_reader(reader).deserialize() {
            let row: Row = row?;
            if labels.insert(row.airport.clone(), row.cluster_id).is_some() {
                return Err(ClusterError::Format(format!("airport {} listed twice", row.airport)));
            }
        }
        let k = labels.values().max().map_or(0, |m| m + 1);
        for c in 0..k {
            if !labels.values().any(|&l| l == c) {
                return Err(ClusterError::Format(format!("cluster {c} has no airports")));
            }
        }
        Ok(Self { k, labels, centroids: Vec::new(), silhouette: f64::NAN })
    }
}

/// Result of the full clustering step on a filtered corpus.
#[derive(Debug, Clone)]
pub struct ClusteringOutcome {
    pub features: Vec<AirportFeatures>,
    pub standardization: Standardization,
    pub assignment: ClusterAssignment,
    pub scores: Vec<(usize, f64)>,
}

pub fn cluster_airports(
    records: &[ObservationRecord],
    k_min: usize,
    k_max: usize,
    seed: u64,
    restarts: usize,
) -> Result<ClusteringOutcome, ClusterError> {
    let features = compute_airport_features(records);
    let raw = feature_matrix(&features);
    let (z, standardization) = standardize_features(raw.view(), &FEATURE_NAMES)?;
    let sel = select_k(z.view(), k_min, k_max, seed, restarts)?;
    let silhouette = sel
        .scores
        .iter()
        .find(|(k, _)| *k == sel.k)
        .map(|(_, s)| *s)
        .unwrap_or(f64::NAN);
    let labels = features
        .iter()
        .zip(&sel.fit.labels)
        .map(|(f, &l)| (f.airport.clone(), l))
        .collect();
    let centroids = sel.fit.centroids.axis_iter(Axis(0)).map(|r| r.to_vec()).collect();
    Ok(ClusteringOutcome {
        features,
        standardization,
        assignment: ClusterAssignment::new(sel.k, labels, centroids, silhouette),
        scores: sel.scores,
    })
}

/// Per-cluster summary in the layout of the cluster profile table. Both the
/// mean of per-airport log volumes and the log of the mean volume are kept.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterProfile {
    pub cluster_id: usize,
    pub airport_count: usize,
    pub mean_log_flights: f64,
    pub log_mean_flights: f64,
    pub mean_delay_rate: f64,
}

pub fn cluster_profiles(features: &[AirportFeatures], assignment: &ClusterAssignment) -> Vec<ClusterProfile> {
    (0..assignment.k)
        .map(|c| {
            let members: Vec<&AirportFeatures> = features
                .iter()
                .filter(|f| assignment.label(&f.airport) == Some(c))
                .collect();
            let m = members.len().max(1) as f64;
            ClusterProfile {
                cluster_id: c,
                airport_count: members.len(),
                mean_log_flights: members.iter().map(|f| f.mean_log_flights).sum::<f64>() / m,
                log_mean_flights: (members.iter().map(|f| f.mean_flight).sum::<f64>() / m).ln(),
                mean_delay_rate: members.iter().map(|f| f.mean_delay).sum::<f64>() / m,
            }
        })
        .collect()
}

pub fn write_profiles<W: Write>(writer: W, profiles: &[ClusterProfile]) -> Result<(), ClusterError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "cluster_id",
        "airport_count",
        "mean_log_flights",
        "log_mean_flights",
        "mean_delay_rate",
    ])?;
    for p in profiles {
        w.write_record([
            p.cluster_id.to_string(),
            p.airport_count.to_string(),
            fmt_f64(p.mean_log_flights),
            fmt_f64(p.log_mean_flights),
            fmt_f64(p.mean_delay_rate),
        ])?;
    }
    w.flush().map_err(|e| ClusterError::Format(e.to_string()))?;
    Ok(())
}
