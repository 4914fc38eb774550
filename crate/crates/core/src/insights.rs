//! Quantitative readings of projected trajectories: gaps, anomaly scores,
//! clusters, and agreement with ground truth.

use std::collections::{BTreeMap, HashMap};

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datastore::GroundTruth;
use crate::projector::{ProjectionResult, WindowSpan};
use crate::{Error, Result};

pub const DEFAULT_ANOMALY_K: usize = 10;
pub const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITERS: usize = 300;

fn dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryGap {
    pub rank: usize,
    /// Edge from window `from` to window `from + 1`.
    pub from: usize,
    pub length: f64,
    pub from_window: WindowSpan,
    pub to_window: WindowSpan,
}

impl TrajectoryGap {
    /// Time span covered by both endpoint windows.
    pub fn span(&self) -> (usize, usize) {
        (
            self.from_window.start.min(self.to_window.start),
            self.from_window.end.max(self.to_window.end),
        )
    }

    /// Whether the endpoint windows come within `tol` of `t`.
    pub fn near(&self, t: usize, tol: usize) -> bool {
        let (a, b) = self.span();
        a <= t + tol && t < b + tol
    }
}

/// The `top_k` longest edges between temporally consecutive points.
pub fn trajectory_gaps(proj: &ProjectionResult, top_k: usize) -> Result<Vec<TrajectoryGap>> {
    let n = proj.len();
    if n < 2 {
        return Err(Error::invalid(format!("trajectory needs at least 2 points, got {n}")));
    }
    let mut edges: Vec<(usize, f64)> = (0..n - 1)
        .map(|i| (i, dist(&proj.points[i], &proj.points[i + 1])))
        .collect();
    edges.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(edges
        .into_iter()
        .take(top_k)
        .enumerate()
        .map(|(r, (i, length))| TrajectoryGap {
            rank: r + 1,
            from: i,
            length,
            from_window: proj.windows[i],
            to_window: proj.windows[i + 1],
        })
        .collect())
}

/// Mean distance from each point to its `k` nearest other points.
pub fn anomaly_scores(points: &[[f64; 2]], k: usize) -> Result<Vec<f64>> {
    let n = points.len();
    if k == 0 || n <= k {
        return Err(Error::invalid(format!(
            "anomaly score needs more than k={k} points, got {n}"
        )));
    }
    let mut row = Vec::with_capacity(n);
    Ok((0..n)
        .map(|i| {
            row.clear();
            row.extend((0..n).filter(|&j| j != i).map(|j| dist(&points[i], &points[j])));
            row.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
            row[..k].iter().sum::<f64>() / k as f64
        })
        .collect())
}

/// Linear-interpolated percentile, `q` in `[0, 100]`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of an empty set");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = (q / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Percentage of `samples` strictly below `value`.
pub fn percentile_rank(value: f64, samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    100.0 * samples.iter().filter(|&&s| s < value).count() as f64 / samples.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub labels: Vec<usize>,
    pub centroids: Vec<[f64; 2]>,
    pub inertia: f64,
}

fn sq(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn plus_plus(points: &[[f64; 2]], k: usize, rng: &mut crate::Rng) -> Vec<[f64; 2]> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)]];
    let mut d: Vec<f64> = points.iter().map(|p| sq(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &di) in d.iter().enumerate() {
                if u < di {
                    idx = i;
                    break;
                }
                u -= di;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick];
        for (di, p) in d.iter_mut().zip(points) {
            *di = di.min(sq(p, &c));
        }
        centers.push(c);
    }
    centers
}

fn lloyd(points: &[[f64; 2]], mut centers: Vec<[f64; 2]>) -> KMeans {
    let n = points.len();
    let k = centers.len();
    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| sq(p, &centers[a]).total_cmp(&sq(p, &centers[b])))
                .expect("k > 0");
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![[0.0f64; 2]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            sums[l][0] += p[0];
            sums[l][1] += p[1];
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = [sums[c][0] / counts[c] as f64, sums[c][1] / counts[c] as f64];
            } else {
                // move an empty centre onto the worst-served point
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq(&points[a], &centers[labels[a]]).total_cmp(&sq(&points[b], &centers[labels[b]]))
                    })
                    .expect("n > 0");
                centers[c] = points[far];
                labels[far] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| sq(p, &centers[l]))
        .sum();
    KMeans {
        labels,
        centroids: centers,
        inertia,
    }
}

/// Seeded k-means with k-means++ seeding; the best of `restarts` runs.
pub fn kmeans(points: &[[f64; 2]], k: usize, restarts: usize, seed: u64) -> Result<KMeans> {
    let n = points.len();
    if k < 2 {
        return Err(Error::invalid(format!("k-means needs k >= 2, got {k}")));
    }
    if k >= n {
        return Err(Error::invalid(format!(
            "k-means needs fewer clusters than points (k={k}, N={n})"
        )));
    }
    let mut distinct: Vec<[u64; 2]> = points.iter().map(|p| [p[0].to_bits(), p[1].to_bits()]).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::invalid(format!(
            "only {} distinct points for k={k} clusters",
            distinct.len()
        )));
    }
    let mut rng = crate::seeded_rng(seed);
    let mut best: Option<KMeans> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(points, plus_plus(points, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Mean silhouette coefficient; points alone in their cluster count as 0.
pub fn silhouette(points: &[[f64; 2]], labels: &[usize]) -> Result<f64> {
    let n = points.len();
    if labels.len() != n {
        return Err(Error::shape("one label per point is required"));
    }
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let k = ids.len();
    if k < 2 || k >= n {
        return Err(Error::invalid(format!(
            "silhouette is undefined for {k} clusters over {n} points"
        )));
    }
    let index: HashMap<usize, usize> = ids.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let lab: Vec<usize> = labels.iter().map(|l| index[l]).collect();
    let mut sizes = vec![0usize; k];
    for &l in &lab {
        sizes[l] += 1;
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[lab[j]] += dist(&points[i], &points[j]);
            }
        }
        let own = lab[i];
        if sizes[own] == 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    pub labels: Vec<usize>,
    pub silhouette: f64,
    pub sizes: Vec<usize>,
    /// Majority label of the windows covering each time step; `None` where
    /// no window covers it.
    pub timestep_labels: Vec<Option<usize>>,
}

/// Per-step majority vote over covering windows; ties go to the label of
/// the earliest covering window among the tied ones.
pub fn vote_timesteps(windows: &[WindowSpan], labels: &[usize], series_len: usize) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..windows.len()).collect();
    order.sort_by_key(|&i| (windows[i].start, i));
    let mut out = vec![None; series_len];
    let mut first = 0usize;
    let mut votes: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (t, slot) in out.iter_mut().enumerate() {
        while first < order.len() && windows[order[first]].end <= t {
            first += 1;
        }
        votes.clear();
        for (rank, &i) in order[first..].iter().enumerate() {
            let w = windows[i];
            if w.start > t {
                break;
            }
            if w.end > t {
                let e = votes.entry(labels[i]).or_insert((0, rank));
                e.0 += 1;
            }
        }
        *slot = votes
            .iter()
            .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
            .map(|(&l, _)| l);
    }
    out
}

pub fn cluster_segments(proj: &ProjectionResult, k: usize, seed: u64, series_len: usize) -> Result<Clustering> {
    let km = kmeans(&proj.points, k, KMEANS_RESTARTS, seed)?;
    let sil = silhouette(&proj.points, &km.labels)?;
    let mut sizes = vec![0; k];
    for &l in &km.labels {
        sizes[l] += 1;
    }
    Ok(Clustering {
        k,
        timestep_labels: vote_timesteps(&proj.windows, &km.labels, series_len),
        labels: km.labels,
        silhouette: sil,
        sizes,
    })
}

/// Adjusted Rand index of two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "labelings have different lengths ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Ok(1.0);
    }
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut ra: HashMap<usize, u64> = HashMap::new();
    let mut rb: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.values().map(|&v| c2(v)).sum();
    let sa: f64 = ra.values().map(|&v| c2(v)).sum();
    let sb: f64 = rb.values().map(|&v| c2(v)).sum();
    let expected = sa * sb / c2(n as u64);
    let max = 0.5 * (sa + sb);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Segment id of every step given sorted changepoints; `merge` maps segment
/// ids onto others (e.g. `[(2, 0)]` treats the third segment as the first).
pub fn segment_labels(changepoints: &[usize], len: usize, merge: &[(usize, usize)]) -> Vec<usize> {
    let mut cps = changepoints.to_vec();
    cps.sort_unstable();
    let remap: HashMap<usize, usize> = merge.iter().copied().collect();
    (0..len)
        .map(|t| {
            let seg = cps.iter().filter(|&&c| c <= t).count();
            remap.get(&seg).copied().unwrap_or(seg)
        })
        .collect()
}

/// ARI over the steps that carry a predicted label.
pub fn timestep_ari(predicted: &[Option<usize>], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::shape(format!(
            "label sequences differ in length ({} vs {})",
            predicted.len(),
            truth.len()
        )));
    }
    let (p, t): (Vec<usize>, Vec<usize>) = predicted
        .iter()
        .zip(truth)
        .filter_map(|(p, &t)| p.map(|p| (p, t)))
        .unzip();
    adjusted_rand_index(&p, &t)
}

fn overlaps(w: WindowSpan, iv: (usize, usize)) -> bool {
    w.start < iv.1 && iv.0 < w.end
}

/// Indices of windows intersecting any of the half-open intervals.
pub fn windows_overlapping(windows: &[WindowSpan], intervals: &[(usize, usize)]) -> Vec<usize> {
    (0..windows.len())
        .filter(|&i| intervals.iter().any(|&iv| overlaps(windows[i], iv)))
        .collect()
}

/// Share of the `k` highest-scoring windows that overlap an interval.
pub fn precision_at_k(scores: &[f64], windows: &[WindowSpan], intervals: &[(usize, usize)], k: usize) -> Result<f64> {
    if scores.len() != windows.len() {
        return Err(Error::shape("one score per window is required"));
    }
    if k == 0 || k > scores.len() {
        return Err(Error::invalid(format!("k={k} outside [1, {}]", scores.len())));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let hits = order[..k]
        .iter()
        .filter(|&&i| intervals.iter().any(|&iv| overlaps(windows[i], iv)))
        .count();
    Ok(hits as f64 / k as f64)
}

/// 1-based rank of every window by decreasing score.
pub fn score_ranks(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; scores.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r + 1;
    }
    ranks
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotifMetric {
    pub windows: (usize, usize),
    pub distance: f64,
    /// Percentage of random pairs closer than the motif pair.
    pub percentile: f64,
    pub n_pairs: usize,
}

/// Window whose start is closest to `t` (earlier on ties).
pub fn window_at(windows: &[WindowSpan], t: usize) -> Option<usize> {
    (0..windows.len()).min_by_key(|&i| (windows[i].start.abs_diff(t), i))
}

/// Embedding distance between the windows at the first two motif
/// occurrences, ranked among `n_pairs` random distinct window pairs.
pub fn motif_rank(
    embeddings: ArrayView2<'_, f64>,
    windows: &[WindowSpan],
    truth: &GroundTruth,
    n_pairs: usize,
    seed: u64,
) -> Result<MotifMetric> {
    let n = embeddings.nrows();
    if windows.len() != n {
        return Err(Error::shape("one window per embedding row is required"));
    }
    if truth.motif_occurrences.len() < 2 {
        return Err(Error::invalid("ground truth needs two motif occurrences"));
    }
    if n < 2 || n_pairs == 0 {
        return Err(Error::invalid("need at least two windows and one random pair"));
    }
    let start = |o: usize| truth.motif_occurrences[o].0 .0;
    let a = window_at(windows, start(0)).expect("non-empty");
    let b = window_at(windows, start(1)).expect("non-empty");
    let d = |i: usize, j: usize| {
        embeddings
            .row(i)
            .iter()
            .zip(embeddings.row(j))
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut rng = crate::seeded_rng(seed);
    let random: Vec<f64> = (0..n_pairs)
        .map(|_| {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            d(i, j)
        })
        .collect();
    let distance = d(a, b);
    Ok(MotifMetric {
        windows: (a, b),
        distance,
        percentile: percentile_rank(distance, &random),
        n_pairs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotifCandidate {
    pub first: WindowSpan,
    pub second: WindowSpan,
    pub distance: f64,
}

fn spans_overlap(a: WindowSpan, b: WindowSpan) -> bool {
    a.start < b.end && b.start < a.end
}

/// The `k` closest pairs of non-overlapping windows in embedding space.
/// Windows overlapping an already reported pair are skipped, so every
/// candidate is a distinct region pair.
pub fn motif_candidates(embeddings: ArrayView2<'_, f64>, windows: &[WindowSpan], k: usize) -> Result<Vec<MotifCandidate>> {
    let n = embeddings.nrows();
    if windows.len() != n {
        return Err(Error::shape("one window per embedding row is required"));
    }
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if spans_overlap(windows[i], windows[j]) {
                continue;
            }
            let d = embeddings
                .row(i)
                .iter()
                .zip(embeddings.row(j))
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            pairs.push((d, i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut out: Vec<MotifCandidate> = Vec::new();
    for (d, i, j) in pairs {
        if out.len() == k {
            break;
        }
        let taken = |w: WindowSpan| out.iter().any(|c| spans_overlap(c.first, w) || spans_overlap(c.second, w));
        if taken(windows[i]) || taken(windows[j]) {
            continue;
        }
        out.push(MotifCandidate {
            first: windows[i],
            second: windows[j],
            distance: d,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ari: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision_at_k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub motif: Option<MotifMetric>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaConfig {
    pub w: usize,
    pub s: usize,
    pub method: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyPercentiles {
    pub p50: f64,
    pub p90: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
}

impl AnomalyPercentiles {
    pub fn of(scores: &[f64]) -> Self {
        Self {
            p50: percentile(scores, 50.0),
            p90: percentile(scores, 90.0),
            p95: percentile(scores, 95.0),
            p99: percentile(scores, 99.0),
            max: percentile(scores, 100.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub dataset: String,
    pub encoder: String,
    pub va_config: VaConfig,
    pub gaps: Vec<TrajectoryGap>,
    pub anomaly_percentiles: AnomalyPercentiles,
    pub clusters: Clustering,
    pub metrics: Metrics,
}

/// Options for [`analyze`].
#[derive(Clone, Debug)]
pub struct AnalysisOptions {
    pub top_gaps: usize,
    pub anomaly_k: usize,
    pub clusters: usize,
    pub seed: u64,
    /// Segment merges applied to the true labels before the ARI.
    pub merge_segments: Vec<(usize, usize)>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            top_gaps: 3,
            anomaly_k: DEFAULT_ANOMALY_K,
            clusters: 3,
            seed: 0,
            merge_segments: Vec::new(),
        }
    }
}

pub struct AnalysisInput<'a> {
    pub dataset: &'a str,
    pub encoder: &'a str,
    pub w: usize,
    pub s: usize,
    pub series_len: usize,
    pub projection: &'a ProjectionResult,
    pub embeddings: Option<ArrayView2<'a, f64>>,
    pub truth: Option<&'a GroundTruth>,
}

/// Gaps, anomaly percentiles and clusters, plus truth metrics where the
/// ground truth has the relevant parts.
pub fn analyze(input: &AnalysisInput<'_>, opts: &AnalysisOptions) -> Result<AnalysisReport> {
    let proj = input.projection;
    let gaps = trajectory_gaps(proj, opts.top_gaps)?;
    let scores = anomaly_scores(&proj.points, opts.anomaly_k)?;
    let clusters = cluster_segments(proj, opts.clusters, opts.seed, input.series_len)?;
    let mut metrics = Metrics::default();
    if let Some(truth) = input.truth {
        if !truth.changepoints.is_empty() {
            let labels = segment_labels(&truth.changepoints, input.series_len, &opts.merge_segments);
            metrics.ari = Some(timestep_ari(&clusters.timestep_labels, &labels)?);
        }
        if !truth.anomaly_intervals.is_empty() {
            let k = windows_overlapping(&proj.windows, &truth.anomaly_intervals).len().max(1);
            metrics.precision_at_k = Some(precision_at_k(&scores, &proj.windows, &truth.anomaly_intervals, k)?);
        }
        if truth.motif_occurrences.len() >= 2 {
            if let Some(e) = input.embeddings {
                metrics.motif = Some(motif_rank(e, &proj.windows, truth, 1000, opts.seed)?);
            }
        }
    }
    Ok(AnalysisReport {
        dataset: input.dataset.to_string(),
        encoder: input.encoder.to_string(),
        va_config: VaConfig {
            w: input.w,
            s: input.s,
            method: proj.method.to_string(),
        },
        gaps,
        anomaly_percentiles: AnomalyPercentiles::of(&scores),
        clusters,
        metrics,
    })
}

/// Rows as 2D points (first two columns).
pub fn as_points(y: &Array2<f64>) -> Vec<[f64; 2]> {
    y.rows().into_iter().map(|r| [r[0], r[1]]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projector::Method;

    #[test]
    fn motif_candidates_skip_trivial_matches() {
        let windows: Vec<WindowSpan> = (0..6).map(|i| WindowSpan { start: i * 5, end: i * 5 + 10 }).collect();
        // rows 0 and 4 coincide; rows 0 and 1 are close but overlap in time
        let e = Array2::from_shape_vec((6, 1), vec![0.0, 0.01, 5.0, 9.0, 0.0, 20.0]).unwrap();
        let c = motif_candidates(e.view(), &windows, 3).unwrap();
        assert_eq!((c[0].first.start, c[0].second.start), (0, 20));
        assert_eq!(c[0].distance, 0.0);
        assert!(c.iter().skip(1).all(|p| !spans_overlap(p.first, c[0].first) && !spans_overlap(p.second, c[0].second)));
    }

    fn proj(points: Vec<[f64; 2]>, w: usize, s: usize) -> ProjectionResult {
        let windows = (0..points.len())
            .map(|i| WindowSpan {
                start: i * s,
                end: i * s + w,
            })
            .collect();
        ProjectionResult {
            method: Method::Pca,
            seed: 0,
            config: serde_json::json!({}),
            points,
            windows,
            warnings: vec![],
        }
    }

    #[test]
    fn single_gap_ranks_first() {
        let mut pts: Vec<[f64; 2]> = (0..10).map(|i| [i as f64, 0.0]).collect();
        for p in pts.iter_mut().skip(6) {
            p[0] += 9.0;
        }
        let g = trajectory_gaps(&proj(pts, 4, 1), 2).unwrap();
        assert_eq!(g[0].from, 5);
        assert!((g[0].length - 10.0).abs() < 1e-12);
        let flat = trajectory_gaps(&proj(vec![[1.0, 1.0]; 5], 4, 1), 4).unwrap();
        assert!(flat.iter().all(|g| g.length == 0.0));
    }

    #[test]
    fn outlier_has_max_score() {
        let mut pts: Vec<[f64; 2]> = (0..30).map(|i| [(i % 5) as f64 * 0.1, (i / 5) as f64 * 0.1]).collect();
        pts.push([20.0, 20.0]);
        let s = anomaly_scores(&pts, 10).unwrap();
        let arg = (0..s.len()).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
        assert_eq!(arg, 30);
        assert!(anomaly_scores(&[[0.0, 0.0]; 12], 10).unwrap().iter().all(|&v| v == 0.0));
        assert!(anomaly_scores(&pts[..10], 10).is_err());
    }

    #[test]
    fn kmeans_preconditions() {
        let pts: Vec<[f64; 2]> = (0..6).map(|i| [i as f64, 0.0]).collect();
        assert!(kmeans(&pts, 1, 10, 0).is_err());
        assert!(kmeans(&pts, 6, 10, 0).is_err());
        assert!(silhouette(&pts, &[0, 1, 2, 3, 4, 5]).is_err());
    }

    #[test]
    fn tie_goes_to_earlier_window() {
        let windows = vec![WindowSpan { start: 0, end: 2 }, WindowSpan { start: 1, end: 3 }];
        let v = vote_timesteps(&windows, &[7, 3], 4);
        assert_eq!(v, vec![Some(7), Some(7), Some(3), None]);
    }

    #[test]
    fn ari_identity_and_symmetry() {
        let a = [0, 0, 1, 1, 2, 2];
        let b = [5, 5, 9, 9, 1, 1];
        assert!((adjusted_rand_index(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let c = [0, 1, 0, 1, 2, 2];
        assert_eq!(adjusted_rand_index(&a, &c).unwrap(), adjusted_rand_index(&c, &a).unwrap());
    }

    #[test]
    fn merged_segments() {
        let l = segment_labels(&[2, 4], 6, &[(2, 0)]);
        assert_eq!(l, vec![0, 0, 1, 1, 0, 0]);
    }

    #[test]
    fn percentiles() {
        let v: Vec<f64> = (0..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 95.0), 95.0);
        assert_eq!(percentile(&[1.0, 2.0], 50.0), 1.5);
        assert_eq!(percentile_rank(10.0, &v), 10.0 / 101.0 * 100.0);
    }
}
