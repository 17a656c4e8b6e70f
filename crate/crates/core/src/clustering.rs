//! Response vectors, k-means, silhouette scores and exact t-SNE.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::{SplitAssignment, SplitLabel};
use crate::sampler::{ModelConfig, SamplerContext};
use crate::training::{predict_true_action_probabilities, TrainedModel};
use crate::util::sha256_hex;
use crate::{derive_seed, Error, Result};

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_RESTARTS: usize = 10;
pub const DEFAULT_MAX_ITERS: usize = 300;
pub const DEFAULT_SILHOUETTE_SAMPLE: usize = 2000;
pub const DEFAULT_PERPLEXITY: f64 = 80.0;
pub const DEFAULT_TSNE_ITERS: usize = 1000;
pub const TSNE_POOLED_SAMPLE: usize = 10_000;
pub const TSNE_GAME_SAMPLE: usize = 1_000;

/// True-action probabilities of the six models for one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseVector {
    pub game_id: String,
    pub state: usize,
    pub subject_id: Option<String>,
    /// Ordered A–F.
    pub z: [f64; 6],
}

/// One vector per `label` state that is valid for all six configurations.
pub fn collect_response_vectors(
    models: &[TrainedModel],
    ctx: &SamplerContext<'_>,
    split: &SplitAssignment,
    label: SplitLabel,
) -> Result<Vec<ResponseVector>> {
    let fingerprint = split.fingerprint();
    let mut ordered = Vec::with_capacity(6);
    for config in ModelConfig::ALL {
        let m = models
            .iter()
            .find(|m| m.config == config)
            .ok_or(Error::MissingModel(config.letter()))?;
        if m.split_fingerprint != fingerprint {
            return Err(Error::InvalidArgument(format!(
                "model {config} was trained on a different split"
            )));
        }
        ordered.push(m);
    }
    let mut valid = vec![true; ctx.store().len()];
    for config in ModelConfig::ALL {
        let mut ok = vec![false; valid.len()];
        for i in ctx.valid_indices(config, Some((split, label)))? {
            ok[i] = true;
        }
        valid.iter_mut().zip(&ok).for_each(|(v, &o)| *v &= o);
    }
    let indices: Vec<usize> = (0..valid.len()).filter(|&i| valid[i]).collect();
    if indices.is_empty() {
        return Ok(Vec::new());
    }
    let mut columns = Vec::with_capacity(6);
    for m in &ordered {
        columns.push(predict_true_action_probabilities(&m.network, ctx, &indices)?);
    }
    let store = ctx.store();
    Ok(indices
        .iter()
        .enumerate()
        .map(|(row, &i)| ResponseVector {
            game_id: store.game_id.clone(),
            state: i,
            subject_id: store.subject_of(i).map(str::to_string),
            z: std::array::from_fn(|m| columns[m][row]),
        })
        .collect())
}

#[inline]
fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid by Euclidean distance, lowest index on ties.
pub fn nearest(centroids: &[Vec<f64>], z: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = dist2(c, z);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub k: usize,
    pub restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            restarts: DEFAULT_RESTARTS,
            max_iters: DEFAULT_MAX_ITERS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub centroids: Vec<Vec<f64>>,
    pub seed: u64,
    /// SHA-256 of the fitted points.
    pub fingerprint: String,
    pub wcss: f64,
    /// Within-cluster sum of squares after every assignment step of the
    /// winning restart.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn assign(&self, z: &[f64]) -> usize {
        nearest(&self.centroids, z)
    }
}

pub fn assign(model: &ClusterModel, z: &[f64]) -> usize {
    model.assign(z)
}

fn points_fingerprint<P: AsRef<[f64]> + Sync>(points: &[P]) -> String {
    let bytes: Vec<u8> = points
        .iter()
        .flat_map(|p| p.as_ref().iter().flat_map(|v| v.to_le_bytes()))
        .collect();
    sha256_hex(&bytes)
}

fn kmeans_pp<P: AsRef<[f64]> + Sync, R: Rng>(points: &[P], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].as_ref().to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p.as_ref(), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].as_ref().to_vec();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p.as_ref(), &c));
        }
        centroids.push(c);
    }
    centroids
}

struct Lloyd {
    centroids: Vec<Vec<f64>>,
    wcss: f64,
    trace: Vec<f64>,
    iterations: usize,
}

fn member_means<P: AsRef<[f64]>>(points: &[P], labels: &[usize], k: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let dim = points[0].as_ref().len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (&l, p) in labels.iter().zip(points) {
        counts[l] += 1;
        sums[l].iter_mut().zip(p.as_ref()).for_each(|(s, v)| *s += v);
    }
    let means = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| s.into_iter().map(|v| if c > 0 { v / c as f64 } else { 0.0 }).collect())
        .collect();
    (means, counts)
}

/// Single-point transfers after Lloyd has converged: a point moves when the
/// exact change in WCSS, counting the shift of both centroids, is negative.
/// This escapes some Lloyd fixed points and ends at another one.
fn refine<P: AsRef<[f64]>>(points: &[P], labels: &mut [usize], k: usize, trace: &mut Vec<f64>) -> (Vec<Vec<f64>>, f64) {
    let (mut means, mut counts) = member_means(points, labels, k);
    let mut moved = true;
    let mut passes = 0;
    while moved && passes < 100 {
        moved = false;
        passes += 1;
        for (i, p) in points.iter().enumerate() {
            let x = p.as_ref();
            let a = labels[i];
            if counts[a] < 2 {
                continue;
            }
            let na = counts[a] as f64;
            let remove = na / (na - 1.0) * dist2(x, &means[a]);
            let mut best = None;
            let mut best_add = remove * (1.0 - 1e-12);
            for b in 0..k {
                if b == a {
                    continue;
                }
                let nb = counts[b] as f64;
                let add = nb / (nb + 1.0) * dist2(x, &means[b]);
                if add < best_add {
                    best = Some(b);
                    best_add = add;
                }
            }
            if let Some(b) = best {
                let (na, nb) = (counts[a] as f64, counts[b] as f64);
                for d in 0..x.len() {
                    means[a][d] = (means[a][d] * na - x[d]) / (na - 1.0);
                    means[b][d] = (means[b][d] * nb + x[d]) / (nb + 1.0);
                }
                counts[a] -= 1;
                counts[b] += 1;
                labels[i] = b;
                moved = true;
            }
        }
        if moved {
            // exact means, without drift from the running updates
            means = member_means(points, labels, k).0;
            trace.push(points.iter().zip(labels.iter()).map(|(p, &l)| dist2(p.as_ref(), &means[l])).sum());
        }
    }
    let wcss = points.iter().zip(labels.iter()).map(|(p, &l)| dist2(p.as_ref(), &means[l])).sum();
    (means, wcss)
}

fn lloyd<P: AsRef<[f64]> + Sync>(points: &[P], mut centroids: Vec<Vec<f64>>, max_iters: usize) -> Lloyd {
    let k = centroids.len();
    let dim = centroids[0].len();
    let mut labels = vec![usize::MAX; points.len()];
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let mut changed = false;
        let mut wcss = 0.0;
        for (l, p) in labels.iter_mut().zip(points) {
            let j = nearest(&centroids, p.as_ref());
            wcss += dist2(p.as_ref(), &centroids[j]);
            changed |= *l != j;
            *l = j;
        }
        trace.push(wcss);
        if !changed || iterations == max_iters {
            let (centroids, wcss) = refine(points, &mut labels, k, &mut trace);
            return Lloyd {
                centroids,
                wcss,
                trace,
                iterations,
            };
        }
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&l, p) in labels.iter().zip(points) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p.as_ref()).for_each(|(s, v)| *s += v);
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        let mut taken = vec![false; points.len()];
        for j in 0..k {
            if counts[j] == 0 {
                // reseed at the point worst served by its current centroid
                let mut far = None;
                let mut far_d = 0.0;
                for (i, p) in points.iter().enumerate() {
                    let d = dist2(p.as_ref(), &centroids[labels[i]]);
                    if !taken[i] && d > far_d {
                        far = Some(i);
                        far_d = d;
                    }
                }
                // every point already sits on a centroid: nothing to gain
                if let Some(i) = far {
                    centroids[j] = points[i].as_ref().to_vec();
                    taken[i] = true;
                }
            }
        }
    }
}

/// k-means++ seeding followed by Lloyd iterations, best of `restarts` by
/// within-cluster sum of squares.
pub fn kmeans_fit<P: AsRef<[f64]> + Sync>(points: &[P], params: &KMeansParams) -> Result<ClusterModel> {
    if params.k == 0 || points.len() < params.k {
        return Err(Error::TooFewPoints {
            needed: params.k.max(1),
            got: points.len(),
        });
    }
    let dim = points[0].as_ref().len();
    if points.iter().any(|p| p.as_ref().len() != dim) {
        return Err(Error::ShapeMismatch("points differ in dimension".into()));
    }
    let mut best: Option<Lloyd> = None;
    for r in 0..params.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, r as u64));
        let run = lloyd(points, kmeans_pp(points, params.k, &mut rng), params.max_iters);
        if best.as_ref().is_none_or(|b| run.wcss < b.wcss) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    Ok(ClusterModel {
        centroids: best.centroids,
        seed: params.seed,
        fingerprint: points_fingerprint(points),
        wcss: best.wcss,
        trace: best.trace,
        iterations: best.iterations,
    })
}

/// Sum of squared distances of each point to its labelled centroid.
pub fn wcss<P: AsRef<[f64]> + Sync>(points: &[P], centroids: &[Vec<f64>], labels: &[usize]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| dist2(p.as_ref(), &centroids[l]))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComposition {
    pub group: String,
    pub counts: Vec<usize>,
    pub proportions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterProfiles {
    /// Mean vector per cluster; `None` for clusters with no points.
    pub means: Vec<Option<Vec<f64>>>,
    pub counts: Vec<usize>,
    pub proportions: Vec<f64>,
    /// Composition per group (game), groups in first-appearance order.
    pub per_group: Vec<GroupComposition>,
}

fn proportions(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    counts
        .iter()
        .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
        .collect()
}

pub fn cluster_profiles<P: AsRef<[f64]> + Sync>(k: usize, points: &[P], labels: &[usize], groups: &[&str]) -> Result<ClusterProfiles> {
    if points.len() != labels.len() || points.len() != groups.len() {
        return Err(Error::ShapeMismatch("points, labels and groups differ in length".into()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!("label {l} outside 0..{k}")));
    }
    let dim = points.first().map_or(0, |p| p.as_ref().len());
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    let mut per_group: Vec<(String, Vec<usize>)> = Vec::new();
    for ((p, &l), &g) in points.iter().zip(labels).zip(groups) {
        counts[l] += 1;
        sums[l].iter_mut().zip(p.as_ref()).for_each(|(s, v)| *s += v);
        match per_group.iter_mut().find(|(name, _)| name == g) {
            Some((_, c)) => c[l] += 1,
            None => {
                let mut c = vec![0; k];
                c[l] = 1;
                per_group.push((g.to_string(), c));
            }
        }
    }
    Ok(ClusterProfiles {
        means: sums
            .into_iter()
            .zip(&counts)
            .map(|(s, &c)| (c > 0).then(|| s.iter().map(|v| v / c as f64).collect()))
            .collect(),
        proportions: proportions(&counts),
        counts,
        per_group: per_group
            .into_iter()
            .map(|(group, counts)| GroupComposition {
                group,
                proportions: proportions(&counts),
                counts,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Silhouette {
    /// Indices into the input that were scored, ascending.
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
    /// Mean score per cluster label; `None` when the label is absent.
    pub cluster_means: Vec<Option<f64>>,
    pub overall: f64,
}

/// Silhouette scores on a seeded subsample of at most `subsample_size` points.
pub fn silhouette<P: AsRef<[f64]> + Sync>(points: &[P], labels: &[usize], subsample_size: usize, seed: u64) -> Result<Silhouette> {
    if points.len() != labels.len() {
        return Err(Error::ShapeMismatch("points and labels differ in length".into()));
    }
    let indices: Vec<usize> = if points.len() > subsample_size {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = sample(&mut rng, points.len(), subsample_size).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..points.len()).collect()
    };
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &i in &indices {
        sizes[labels[i]] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::SingleCluster);
    }
    let scores: Vec<f64> = indices
        .par_iter()
        .map(|&i| {
            let own = labels[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for &j in &indices {
                if j != i {
                    sums[labels[j]] += dist2(points[i].as_ref(), points[j].as_ref()).sqrt();
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect();
    let mut cluster_sums = vec![0.0; k];
    for (&i, &s) in indices.iter().zip(&scores) {
        cluster_sums[labels[i]] += s;
    }
    let cluster_means = cluster_sums
        .iter()
        .zip(&sizes)
        .map(|(&s, &n)| (n > 0).then(|| s / n as f64))
        .collect();
    let overall = scores.iter().sum::<f64>() / scores.len() as f64;
    Ok(Silhouette {
        indices,
        scores,
        cluster_means,
        overall,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneParams {
    pub perplexity: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: DEFAULT_PERPLEXITY,
            iterations: DEFAULT_TSNE_ITERS,
            seed: 0,
        }
    }
}

pub const EARLY_EXAGGERATION: f64 = 12.0;
pub const EXAGGERATION_ITERS: usize = 250;
pub const TSNE_LEARNING_RATE: f64 = 200.0;
const PERPLEXITY_TOL: f64 = 1e-5;
const MIN_GAIN: f64 = 0.01;

fn squared_distances<P: AsRef<[f64]> + Sync>(points: &[P]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    d.par_chunks_exact_mut(n).enumerate().for_each(|(i, row)| {
        for (j, v) in row.iter_mut().enumerate() {
            *v = dist2(points[i].as_ref(), points[j].as_ref());
        }
    });
    d
}

/// Row `i` of the conditional distribution for precision `beta`, and its
/// Shannon entropy in nats.
fn conditional_row(d: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    // shift by the nearest neighbour so the largest weight is 1
    let dmin = d
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, (o, &dj)) in out.iter_mut().zip(d).enumerate() {
        *o = if j == i { 0.0 } else { (-(dj - dmin) * beta).exp() };
        sum += *o;
    }
    let mut h = 0.0;
    for o in out.iter_mut() {
        *o /= sum;
        if *o > 0.0 {
            h -= *o * o.ln();
        }
    }
    h
}

/// Conditional affinities `p_{j|i}` (row-major `n × n`) with each row's
/// Gaussian precision found by bisection so its perplexity matches.
pub fn conditional_affinities<P: AsRef<[f64]> + Sync>(points: &[P], perplexity: f64) -> Result<Vec<f64>> {
    let n = points.len();
    if !(perplexity > 0.0) || n < 2 || perplexity > (n - 1) as f64 / 3.0 {
        return Err(Error::PerplexityTooLarge { perplexity, points: n });
    }
    let d = squared_distances(points);
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    p.par_chunks_exact_mut(n).enumerate().for_each(|(i, row)| {
        let di = &d[i * n..(i + 1) * n];
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut beta = 1.0;
        for _ in 0..200 {
            let h = conditional_row(di, i, beta, row);
            if (h - target).abs() < PERPLEXITY_TOL {
                break;
            }
            // entropy falls as precision grows
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
    });
    Ok(p)
}

/// Symmetrized joint affinities `(p_{j|i} + p_{i|j}) / 2n`.
pub fn joint_affinities<P: AsRef<[f64]> + Sync>(points: &[P], perplexity: f64) -> Result<Vec<f64>> {
    let n = points.len();
    let c = conditional_affinities(points, perplexity)?;
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (c[i * n + j] + c[j * n + i]) / (2.0 * n as f64);
        }
    }
    Ok(p)
}

/// Exact t-SNE into two dimensions.
pub fn tsne_embed<P: AsRef<[f64]> + Sync>(points: &[P], params: &TsneParams) -> Result<Vec<[f64; 2]>> {
    let n = points.len();
    let p = joint_affinities(points, params.perplexity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let normal = Normal::new(0.0, 1e-2).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let mut update = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0f64; n * n];
    for iter in 0..params.iterations {
        let (exag, momentum) = if iter < EXAGGERATION_ITERS {
            (EARLY_EXAGGERATION, 0.5)
        } else {
            (1.0, 0.8)
        };
        let yr = &y;
        let row_sums: Vec<f64> = num
            .par_chunks_exact_mut(n)
            .enumerate()
            .map(|(i, row)| {
                let mut s = 0.0;
                for (j, v) in row.iter_mut().enumerate() {
                    let dx = yr[i][0] - yr[j][0];
                    let dy = yr[i][1] - yr[j][1];
                    *v = if i == j { 0.0 } else { 1.0 / (1.0 + dx * dx + dy * dy) };
                    s += *v;
                }
                s
            })
            .collect();
        let z: f64 = row_sums.iter().sum::<f64>().max(f64::MIN_POSITIVE);
        let grad: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let (pr, nr) = (&p[i * n..(i + 1) * n], &num[i * n..(i + 1) * n]);
                let mut g = [0.0; 2];
                for j in 0..n {
                    let m = (exag * pr[j] - nr[j] / z) * nr[j];
                    g[0] += m * (yr[i][0] - yr[j][0]);
                    g[1] += m * (yr[i][1] - yr[j][1]);
                }
                [4.0 * g[0], 4.0 * g[1]]
            })
            .collect();
        for i in 0..n {
            for d in 0..2 {
                let same_sign = (grad[i][d] > 0.0) == (update[i][d] > 0.0);
                gains[i][d] = if same_sign { gains[i][d] * 0.8 } else { gains[i][d] + 0.2 };
                gains[i][d] = gains[i][d].max(MIN_GAIN);
                update[i][d] = momentum * update[i][d] - TSNE_LEARNING_RATE * gains[i][d] * grad[i][d];
                y[i][d] += update[i][d];
            }
        }
        let mean = y.iter().fold([0.0; 2], |a, v| [a[0] + v[0], a[1] + v[1]]);
        let mean = [mean[0] / n as f64, mean[1] / n as f64];
        y.iter_mut().for_each(|v| {
            v[0] -= mean[0];
            v[1] -= mean[1];
        });
    }
    Ok(y)
}
