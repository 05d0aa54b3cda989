//! Symptom-severity cohorts: K-means over the four trait scales with
//! silhouette-based choice of K, and nearest-centroid routing of unseen
//! participants.

use std::fmt;
use std::ops::RangeInclusive;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ParticipantProfile;
use crate::error::{Error, Result};
use crate::featurize::NormalizationScaler;
use crate::seed;

pub const KMEANS_MAX_ITER: usize = 300;
pub const KMEANS_RESTARTS: usize = 10;
pub const DEFAULT_K_RANGE: RangeInclusive<usize> = 2..=5;
pub const SCALE_NAMES: [&str; 4] = ["dass", "sias", "bfne", "ders"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    HighSx,
    LowSx,
}

impl Group {
    pub const ALL: [Group; 2] = [Group::HighSx, Group::LowSx];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::HighSx => "high_sx",
            Group::LowSx => "low_sx",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Group::HighSx => 0,
            Group::LowSx => 1,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansFit {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
}

fn inertia(points: &[Vec<f64>], assignment: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum()
}

/// Lloyd iterations from fixed initial centroids. Returns the fit and the
/// inertia after every assignment step. Empty clusters keep their centroid.
pub fn lloyd(points: &[Vec<f64>], init: Vec<Vec<f64>>, max_iter: usize) -> (KMeansFit, Vec<f64>) {
    let k = init.len();
    let dim = init.first().map_or(0, Vec::len);
    let mut centroids = init;
    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    let mut trace = vec![inertia(points, &assignment, &centroids)];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        trace.push(inertia(points, &next, &centroids));
        let done = next == assignment;
        assignment = next;
        if done {
            break;
        }
    }
    let inertia = *trace.last().expect("trace nonempty");
    (
        KMeansFit {
            assignment,
            centroids,
            inertia,
            iterations,
        },
        trace,
    )
}

fn kmeans_pp_init(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points[idx].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

/// K-means with k-means++ seeding, best of ten restarts by inertia.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansFit> {
    if k < 2 || points.len() < k {
        return Err(Error::TooFewPoints { n: points.len(), k });
    }
    if points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::SchemaViolation("k-means points must be finite".into()));
    }
    let mut best: Option<KMeansFit> = None;
    for r in 0..KMEANS_RESTARTS {
        let mut rng = seed::rng(seed::derive_indexed(seed, "kmeans-restart", r as u64));
        let init = kmeans_pp_init(points, k, &mut rng);
        let (fit, _) = lloyd(points, init, KMEANS_MAX_ITER);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Mean silhouette with Euclidean distances; singleton-cluster points score 0.
pub fn silhouette(points: &[Vec<f64>], assignment: &[usize]) -> Result<f64> {
    if points.len() != assignment.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} points but {} labels",
            points.len(),
            assignment.len()
        )));
    }
    let k = assignment.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &a in assignment {
        sizes[a] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::DegenerateClustering);
    }
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let own = assignment[i];
        if sizes[own] == 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for (j, q) in points.iter().enumerate() {
            if i != j {
                sums[assignment[j]] += sq_dist(p, q).sqrt();
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / points.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KScore {
    pub k: usize,
    /// `None` when the clustering for this k collapsed to one cluster.
    pub silhouette: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KSelection {
    pub best_k: usize,
    pub scores: Vec<KScore>,
    pub best_fit: KMeansFit,
}

/// Choose k by maximum silhouette; ties go to the smaller k. The range is
/// clipped to the number of points.
pub fn select_k(points: &[Vec<f64>], k_range: RangeInclusive<usize>, seed: u64) -> Result<KSelection> {
    let lo = (*k_range.start()).max(2);
    let hi = (*k_range.end()).min(points.len());
    if points.len() < lo || hi < lo {
        return Err(Error::TooFewPoints { n: points.len(), k: lo });
    }
    let mut scores = Vec::new();
    let mut best: Option<(usize, f64, KMeansFit)> = None;
    for k in lo..=hi {
        let fit = kmeans(points, k, seed::derive_indexed(seed, "select-k", k as u64))?;
        let score = match silhouette(points, &fit.assignment) {
            Ok(s) => Some(s),
            Err(Error::DegenerateClustering) => None,
            Err(e) => return Err(e),
        };
        scores.push(KScore { k, silhouette: score });
        if let Some(s) = score {
            if best.as_ref().is_none_or(|(_, b, _)| s > *b) {
                best = Some((k, s, fit));
            }
        }
    }
    let (best_k, _, best_fit) = best.ok_or(Error::DegenerateClustering)?;
    Ok(KSelection {
        best_k,
        scores,
        best_fit,
    })
}

/// Fitted cohort model: centroids live in min-max normalized scale space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub scale_normalizer: NormalizationScaler,
    /// Group label for each cluster index.
    pub group_order: Vec<Group>,
    pub silhouettes: Vec<KScore>,
    pub training_ids: Vec<String>,
    pub training_assignment: Vec<usize>,
}

impl ClusterModel {
    pub fn normalize(&self, profile: &ParticipantProfile) -> Result<Vec<f64>> {
        self.scale_normalizer.transform(&profile.scales())
    }

    /// Nearest-centroid cluster index; ties go to the lower index.
    pub fn assign_cluster(&self, profile: &ParticipantProfile) -> Result<usize> {
        Ok(nearest(&self.normalize(profile)?, &self.centroids))
    }

    pub fn assign_group(&self, profile: &ParticipantProfile) -> Result<Group> {
        Ok(self.group_order[self.assign_cluster(profile)?])
    }

    /// Severity score of each cluster: sum of its normalized centroid coordinates.
    pub fn severities(&self) -> Vec<f64> {
        self.centroids.iter().map(|c| c.iter().sum()).collect()
    }
}

/// Clusters ranked by severity; the upper half (rounded down, at least one)
/// is HighSx.
fn order_groups(centroids: &[Vec<f64>]) -> Vec<Group> {
    let sev: Vec<f64> = centroids.iter().map(|c| c.iter().sum()).collect();
    let mut rank: Vec<usize> = (0..centroids.len()).collect();
    rank.sort_by(|&a, &b| sev[b].total_cmp(&sev[a]).then(a.cmp(&b)));
    let n_high = (centroids.len() / 2).max(1);
    let mut order = vec![Group::LowSx; centroids.len()];
    for &c in &rank[..n_high] {
        order[c] = Group::HighSx;
    }
    order
}

pub fn fit_cohorts(profiles: &[ParticipantProfile], seed: u64) -> Result<ClusterModel> {
    fit_cohorts_with_range(profiles, DEFAULT_K_RANGE, seed)
}

pub fn fit_cohorts_with_range(
    profiles: &[ParticipantProfile],
    k_range: RangeInclusive<usize>,
    seed: u64,
) -> Result<ClusterModel> {
    if profiles.len() < 4 {
        return Err(Error::TooFewPoints {
            n: profiles.len(),
            k: 4,
        });
    }
    let raw: Vec<[f64; 4]> = profiles.iter().map(ParticipantProfile::scales).collect();
    let normalizer = NormalizationScaler::fit(&raw)?;
    let points: Vec<Vec<f64>> = raw
        .iter()
        .map(|r| normalizer.transform(r))
        .collect::<Result<_>>()?;
    let sel = select_k(&points, k_range, seed)?;
    let group_order = order_groups(&sel.best_fit.centroids);
    Ok(ClusterModel {
        k: sel.best_k,
        centroids: sel.best_fit.centroids,
        scale_normalizer: normalizer,
        group_order,
        silhouettes: sel.scores,
        training_ids: profiles.iter().map(|p| p.participant_id.clone()).collect(),
        training_assignment: sel.best_fit.assignment,
    })
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must have equal length");
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().flatten().map(|&v| c2(v)).sum();
    let rows: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| c2(table.iter().map(|r| r[j]).sum())).sum();
    let total = c2(n as u64);
    let expected = if total > 0.0 { rows * cols / total } else { 0.0 };
    let max = 0.5 * (rows + cols);
    if (max - expected).abs() < 1e-12 {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleSummary {
    pub scale: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupProfile {
    pub group: Group,
    pub n: usize,
    pub scales: Vec<ScaleSummary>,
}

/// Cluster report: silhouettes per k, the chosen k, centroids and per-group
/// scale means and sample standard deviations in raw units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub silhouettes: Vec<KScore>,
    pub chosen_k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub group_order: Vec<Group>,
    pub groups: Vec<GroupProfile>,
    pub assignments: Vec<(String, Group)>,
}

pub fn cohort_report(model: &ClusterModel, profiles: &[ParticipantProfile]) -> Result<CohortReport> {
    let mut assignments = Vec::with_capacity(profiles.len());
    for p in profiles {
        assignments.push((p.participant_id.clone(), model.assign_group(p)?));
    }
    let groups = Group::ALL
        .iter()
        .map(|&g| {
            let members: Vec<[f64; 4]> = profiles
                .iter()
                .zip(&assignments)
                .filter(|(_, (_, a))| *a == g)
                .map(|(p, _)| p.scales())
                .collect();
            let n = members.len();
            let scales = SCALE_NAMES
                .iter()
                .enumerate()
                .map(|(j, name)| {
                    let mean = if n > 0 { members.iter().map(|m| m[j]).sum::<f64>() / n as f64 } else { 0.0 };
                    let var = if n > 1 {
                        members.iter().map(|m| (m[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64
                    } else {
                        0.0
                    };
                    ScaleSummary {
                        scale: name.to_string(),
                        mean,
                        std: var.sqrt(),
                    }
                })
                .collect();
            GroupProfile { group: g, n, scales }
        })
        .collect();
    Ok(CohortReport {
        silhouettes: model.silhouettes.clone(),
        chosen_k: model.k,
        centroids: model.centroids.clone(),
        group_order: model.group_order.clone(),
        groups,
        assignments,
    })
}
