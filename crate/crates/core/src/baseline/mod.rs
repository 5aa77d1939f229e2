//! Temporal-mean features, PCA and k-nearest-neighbour classification.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::CsiStream;
use crate::dataset::{Dataset, Split};
use crate::eval::ConfusionMatrix;
use crate::nn::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid state: {0}")]
    State(String),
}

pub type Result<T> = std::result::Result<T, BaselineError>;

/// Per-channel arithmetic mean over time.
pub fn temporal_mean_features(stream: &CsiStream) -> Result<Tensor> {
    if stream.n_samples == 0 || stream.n_channels == 0 {
        return Err(BaselineError::Argument("stream has no samples".into()));
    }
    let means = (0..stream.n_channels)
        .map(|c| stream.row(c).iter().sum::<f64>() / stream.n_samples as f64)
        .collect();
    Ok(Tensor::vector(means))
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let d = points.first().map(Vec::len).ok_or_else(|| BaselineError::Argument("no points".into()))?;
    if d == 0 || points.iter().any(|p| p.len() != d) {
        return Err(BaselineError::Argument("points must share one non-zero dimension".into()));
    }
    Ok(d)
}

/// Per-dimension z-scoring fitted on training features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation; zero-variance dimensions use 1.
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(points: &[Vec<f64>]) -> Result<Self> {
        let d = check_points(points)?;
        let n = points.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n).collect();
        let scale = (0..d)
            .map(|j| {
                let s = (points.iter().map(|p| (p[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt();
                if s > 1e-12 { s } else { 1.0 }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `p` orthonormal principal directions, each of length `D`.
    pub components: Vec<Vec<f64>>,
    /// Sample-covariance eigenvalue of each component, non-increasing.
    pub explained_variance: Vec<f64>,
}

/// Top-`p` eigenvectors of the sample covariance `XᵀX / (n-1)`.
///
/// Each component's sign is fixed so its largest-magnitude entry is positive.
pub fn pca_fit(points: &[Vec<f64>], p: usize) -> Result<PcaModel> {
    let d = check_points(points)?;
    let n = points.len();
    if n < 2 {
        return Err(BaselineError::Argument("PCA needs at least two points".into()));
    }
    if p == 0 || p > d.min(n - 1) {
        return Err(BaselineError::Argument(format!("components must be in 1..={}, got {p}", d.min(n - 1))));
    }
    let mean: Vec<f64> = (0..d).map(|j| points.iter().map(|x| x[j]).sum::<f64>() / n as f64).collect();
    let centered = DMatrix::from_fn(n, d, |i, j| points[i][j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut components = Vec::with_capacity(p);
    let mut explained_variance = Vec::with_capacity(p);
    for &i in order.iter().take(p) {
        let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        let pivot = v.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        explained_variance.push(eig.eigenvalues[i].max(0.0));
    }
    Ok(PcaModel { mean, components, explained_variance })
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `Cᵀ (x - mean)`.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(BaselineError::Argument(format!("feature has {} values, PCA expects {}", x.len(), self.dim())));
        }
        Ok(self
            .components
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((c, x), m)| c * (x - m)).sum())
            .collect())
    }

    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let mut x = self.mean.clone();
        for (c, &zi) in self.components.iter().zip(z) {
            for (xj, cj) in x.iter_mut().zip(c) {
                *xj += zi * cj;
            }
        }
        x
    }

    /// Mean squared residual `‖x - reconstruct(transform(x))‖²` over `points`.
    pub fn reconstruction_error(&self, points: &[Vec<f64>]) -> Result<f64> {
        let mut total = 0.0;
        for x in points {
            let r = self.reconstruct(&self.transform(x)?);
            total += x.iter().zip(&r).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        Ok(total / points.len().max(1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    k: usize,
    points: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

pub fn knn_fit(points: Vec<Vec<f64>>, labels: Vec<usize>, k: usize) -> Result<KnnModel> {
    if points.len() != labels.len() {
        return Err(BaselineError::Argument(format!("{} points but {} labels", points.len(), labels.len())));
    }
    if !points.is_empty() {
        check_points(&points)?;
    }
    if k == 0 || k > points.len().max(1) {
        return Err(BaselineError::Argument(format!("k must be in 1..={}, got {k}", points.len())));
    }
    Ok(KnnModel { k, points, labels })
}

impl KnnModel {
    pub fn k(&self) -> usize {
        self.k
    }

    /// Majority vote of the `k` nearest references (Euclidean).
    ///
    /// Equal distances are ordered by reference index. Vote ties go to the
    /// label with the smallest mean neighbour distance, then the lowest label.
    pub fn predict(&self, query: &[f64]) -> Result<usize> {
        if self.points.is_empty() {
            return Err(BaselineError::State("k-NN model has no reference points".into()));
        }
        if query.len() != self.points[0].len() {
            return Err(BaselineError::Argument(format!(
                "query has {} values, references have {}",
                query.len(),
                self.points[0].len()
            )));
        }
        let mut dist: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (p.iter().zip(query).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(), i))
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        // label -> (votes, distance sum)
        let mut tally: Vec<(usize, usize, f64)> = Vec::new();
        for &(d, i) in dist.iter().take(self.k) {
            let l = self.labels[i];
            match tally.iter_mut().find(|t| t.0 == l) {
                Some(t) => {
                    t.1 += 1;
                    t.2 += d;
                }
                None => tally.push((l, 1, d)),
            }
        }
        tally.sort_by(|a, b| {
            b.1.cmp(&a.1)
                .then((a.2 / a.1 as f64).total_cmp(&(b.2 / b.1 as f64)))
                .then(a.0.cmp(&b.0))
        });
        Ok(tally[0].0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub components: usize,
    pub k: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { components: 20, k: 5 }
    }
}

/// Fitted standardise → PCA → k-NN pipeline.
#[derive(Debug, Clone)]
pub struct BaselinePipeline {
    pub standardizer: Standardizer,
    pub pca: PcaModel,
    pub knn: KnnModel,
}

impl BaselinePipeline {
    pub fn fit(features: &[Vec<f64>], labels: &[usize], cfg: &BaselineConfig) -> Result<Self> {
        let standardizer = Standardizer::fit(features)?;
        let z: Vec<Vec<f64>> = features.iter().map(|f| standardizer.apply(f)).collect();
        let pca = pca_fit(&z, cfg.components)?;
        let proj = z.iter().map(|x| pca.transform(x)).collect::<Result<Vec<_>>>()?;
        let knn = knn_fit(proj, labels.to_vec(), cfg.k)?;
        Ok(Self { standardizer, pca, knn })
    }

    pub fn predict(&self, feature: &[f64]) -> Result<usize> {
        self.knn.predict(&self.pca.transform(&self.standardizer.apply(feature))?)
    }
}

fn split_features(dataset: &Dataset, split: Split) -> (Vec<Vec<f64>>, Vec<usize>) {
    dataset
        .indices(split)
        .into_iter()
        .map(|i| {
            let c = &dataset.clips[i];
            (c.stream_mean.iter().map(|&v| v as f64).collect(), c.label)
        })
        .unzip()
}

/// Fit on the `fit_on` split's stream-mean features and evaluate on `eval_on`.
pub fn run_baseline_on(dataset: &Dataset, cfg: &BaselineConfig, fit_on: Split, eval_on: Split) -> Result<ConfusionMatrix> {
    let (train_x, train_y) = split_features(dataset, fit_on);
    let (test_x, test_y) = split_features(dataset, eval_on);
    if train_x.is_empty() || test_x.is_empty() {
        return Err(BaselineError::Argument("dataset needs clips in both splits".into()));
    }
    let pipe = BaselinePipeline::fit(&train_x, &train_y, cfg)?;
    let pred = test_x.par_iter().map(|x| pipe.predict(x)).collect::<Result<Vec<_>>>()?;
    ConfusionMatrix::from_labels(&test_y, &pred, dataset.class_names.clone())
        .map_err(|e| BaselineError::Argument(e.to_string()))
}

/// Train on the train split, evaluate on the test split.
pub fn run_baseline(dataset: &Dataset, cfg: &BaselineConfig) -> Result<ConfusionMatrix> {
    run_baseline_on(dataset, cfg, Split::Train, Split::Test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{CsiClip, NormStats, WindowingParams};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Anisotropic so eigenvalues are well separated.
        (0..n).map(|_| (0..d).map(|j| rng.random_range(-1.0..1.0) * (1.0 + j as f64)).collect()).collect()
    }

    #[test]
    fn temporal_means() {
        let s = CsiStream { label: 0, n_channels: 2, n_samples: 4, samples: vec![3.0; 8], sample_rate: 1.0 };
        assert_eq!(temporal_mean_features(&s).unwrap().data(), &[3.0, 3.0]);
        let s = CsiStream { label: 0, n_channels: 1, n_samples: 4, samples: vec![1.5, -2.0, -1.5, 2.0], sample_rate: 1.0 };
        assert_eq!(temporal_mean_features(&s).unwrap().data(), &[0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples: Vec<f64> = (0..35).map(|_| rng.random_range(0.0..5.0)).collect();
        let s = CsiStream { label: 0, n_channels: 5, n_samples: 7, samples: samples.clone(), sample_rate: 1.0 };
        let f = temporal_mean_features(&s).unwrap();
        for c in 0..5 {
            let mut acc = 0.0;
            for t in 0..7 {
                acc += samples[c * 7 + t];
            }
            assert!((f.data()[c] - acc / 7.0).abs() < 1e-12);
        }
        let empty = CsiStream { label: 0, n_channels: 2, n_samples: 0, samples: vec![], sample_rate: 1.0 };
        assert!(temporal_mean_features(&empty).is_err());
    }

    #[test]
    fn pca_recovers_a_line_and_full_rank_is_lossless() {
        let dir = [0.6, -0.8, 0.0];
        let pts: Vec<Vec<f64>> = (0..10).map(|i| dir.iter().map(|d| 1.0 + d * i as f64).collect()).collect();
        let m = pca_fit(&pts, 1).unwrap();
        assert!(m.reconstruction_error(&pts).unwrap() < 1e-20);
        let full = random_points(12, 4, 2);
        assert!(pca_fit(&full, 4).unwrap().reconstruction_error(&full).unwrap() < 1e-20);
        assert!(pca_fit(&full, 0).is_err());
        assert!(pca_fit(&full, 5).is_err());
        assert!(pca_fit(&full[..1], 1).is_err());
    }

    /// Power iteration with deflation, an eigen-solver independent of nalgebra.
    fn power_iteration_top(points: &[Vec<f64>], p: usize) -> Vec<f64> {
        let n = points.len();
        let d = points[0].len();
        let mean: Vec<f64> = (0..d).map(|j| points.iter().map(|x| x[j]).sum::<f64>() / n as f64).collect();
        let mut cov = vec![vec![0.0; d]; d];
        for x in points {
            for a in 0..d {
                for b in 0..d {
                    cov[a][b] += (x[a] - mean[a]) * (x[b] - mean[b]) / (n - 1) as f64;
                }
            }
        }
        let mut vals = Vec::new();
        for _ in 0..p {
            let mut v = vec![1.0; d];
            let mut lambda = 0.0;
            for _ in 0..5000 {
                let w: Vec<f64> = (0..d).map(|a| (0..d).map(|b| cov[a][b] * v[b]).sum()).collect();
                let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                lambda = norm;
                v = w.into_iter().map(|x| x / norm).collect();
            }
            vals.push(lambda);
            for a in 0..d {
                for b in 0..d {
                    cov[a][b] -= lambda * v[a] * v[b];
                }
            }
        }
        vals
    }

    #[test]
    fn projected_variance_equals_top_eigenvalues() {
        let pts = random_points(60, 6, 3);
        let m = pca_fit(&pts, 3).unwrap();
        let oracle = power_iteration_top(&pts, 3);
        for (a, b) in m.explained_variance.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8 * b.max(1.0), "{a} vs {b}");
        }
        // Sample variance of the projections.
        let z: Vec<Vec<f64>> = pts.iter().map(|x| m.transform(x).unwrap()).collect();
        let var: f64 = (0..3).map(|j| z.iter().map(|r| r[j] * r[j]).sum::<f64>() / 59.0).sum();
        assert!((var - oracle.iter().sum::<f64>()).abs() < 1e-8);
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = m.components[i].iter().zip(&m.components[j]).map(|(a, b)| a * b).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-8);
            }
        }
        assert!(m.explained_variance.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn transform_of_mean_and_components() {
        let pts = random_points(30, 5, 4);
        let m = pca_fit(&pts, 3).unwrap();
        assert!(m.transform(&m.mean).unwrap().iter().all(|v| v.abs() < 1e-12));
        for i in 0..3 {
            let x: Vec<f64> = m.mean.iter().zip(&m.components[i]).map(|(a, b)| a + b).collect();
            let z = m.transform(&x).unwrap();
            for (j, v) in z.iter().enumerate() {
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
        let x = &pts[7];
        let z = m.transform(x).unwrap();
        for j in 0..3 {
            let direct: f64 = (0..5).map(|a| m.components[j][a] * (x[a] - m.mean[a])).sum();
            assert!((z[j] - direct).abs() < 1e-12);
        }
        assert!(m.transform(&[0.0; 4]).is_err());
    }

    proptest! {
        #[test]
        fn reconstruction_error_is_non_increasing_in_p(seed in 0u64..1000) {
            let pts = random_points(20, 6, seed);
            let errs: Vec<f64> = (1..=6).map(|p| pca_fit(&pts, p).unwrap().reconstruction_error(&pts).unwrap()).collect();
            for w in errs.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9);
            }
        }
    }

    fn brute_force_knn(points: &[Vec<f64>], labels: &[usize], k: usize, q: &[f64]) -> usize {
        let mut d: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(), i))
            .collect();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let kmax = labels.iter().max().unwrap() + 1;
        let mut votes = vec![0usize; kmax];
        let mut sums = vec![0.0; kmax];
        for &(dist, i) in &d[..k] {
            votes[labels[i]] += 1;
            sums[labels[i]] += dist;
        }
        let mut best = None::<(usize, f64, usize)>;
        for l in 0..kmax {
            if votes[l] == 0 {
                continue;
            }
            let cand = (votes[l], sums[l] / votes[l] as f64, l);
            best = match best {
                None => Some(cand),
                Some(b) if cand.0 > b.0 || (cand.0 == b.0 && cand.1 < b.1) => Some(cand),
                keep => keep,
            };
        }
        best.unwrap().2
    }

    #[test]
    fn knn_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..50 {
            let pts = random_points(20, 3, 100 + trial);
            let labels: Vec<usize> = (0..20).map(|_| rng.random_range(0..3)).collect();
            let model = knn_fit(pts.clone(), labels.clone(), 3).unwrap();
            for _ in 0..10 {
                let q: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
                assert_eq!(model.predict(&q).unwrap(), brute_force_knn(&pts, &labels, 3, &q));
            }
        }
    }

    #[test]
    fn knn_trivial_cases_and_errors() {
        let pts = random_points(8, 2, 6);
        let labels = vec![0, 1, 2, 3, 0, 1, 2, 3];
        let m = knn_fit(pts.clone(), labels.clone(), 1).unwrap();
        for (p, l) in pts.iter().zip(&labels) {
            assert_eq!(m.predict(p).unwrap(), *l);
        }
        let same = knn_fit(pts.clone(), vec![2; 8], 5).unwrap();
        assert_eq!(same.predict(&[10.0, -10.0]).unwrap(), 2);
        // Two votes each: the nearer pair wins.
        let tie = knn_fit(vec![vec![0.0], vec![0.5], vec![3.0], vec![3.1]], vec![1, 1, 0, 0], 4).unwrap();
        assert_eq!(tie.predict(&[0.2]).unwrap(), 1);
        assert!(knn_fit(pts.clone(), labels.clone(), 0).is_err());
        assert!(knn_fit(pts, labels, 9).is_err());
        let empty = knn_fit(vec![], vec![], 1).unwrap();
        assert!(matches!(empty.predict(&[0.0]), Err(BaselineError::State(_))));
    }

    fn mean_dataset(levels_by_class: &[f64], per_class: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut clips = Vec::new();
        let mut split = Vec::new();
        for (label, &level) in levels_by_class.iter().enumerate() {
            for i in 0..per_class {
                let stream_mean = (0..30).map(|_| level as f32 + rng.random_range(-0.05f32..0.05)).collect();
                clips.push(CsiClip { label, shape: [1, 30, 1], volume: vec![0.0; 30], stream_mean });
                split.push(if i % 2 == 0 { Split::Train } else { Split::Test });
            }
        }
        Dataset {
            class_names: (0..levels_by_class.len()).map(|i| format!("c{i}")).collect(),
            windowing: WindowingParams::default(),
            clips,
            split,
            norm: NormStats { mean: 0.0, std: 1.0 },
        }
    }

    #[test]
    fn separable_means_are_classified_perfectly() {
        let ds = mean_dataset(&[1.0, 2.0, 3.0, 4.0], 10, 7);
        let cm = run_baseline(&ds, &BaselineConfig { components: 4, k: 3 }).unwrap();
        assert_eq!(cm.trace(), cm.total());
        let leak = run_baseline_on(&ds, &BaselineConfig { components: 4, k: 1 }, Split::Train, Split::Train).unwrap();
        assert_eq!(leak.trace(), leak.total());
    }
}
