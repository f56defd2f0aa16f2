//! Shared codebooks: the vector-quantization codebook `U` (Q×N, trained with
//! K-means) and the non-orthogonal access codebook `P` (L×N, i.i.d. Gaussian).
//!
//! Codeword indices are 0-based throughout the crate: codeword `n` is column
//! `n` of both codebooks.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{sq_dist, Matrix};
use crate::seed;

/// Quantization codebook: N = 2^J distinct codewords of length Q.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationCodebook {
    entries: Matrix,
    bits: u32,
}

impl QuantizationCodebook {
    pub fn new(entries: Matrix, bits: u32) -> Result<Self> {
        if bits == 0 || bits > 24 {
            return Err(Error::InvalidParameter(format!(
                "codebook bits must be in 1..=24, got {bits}"
            )));
        }
        if entries.rows() == 0 {
            return Err(Error::InvalidDimensions("codeword length Q must be at least 1".into()));
        }
        if entries.cols() != 1usize << bits {
            return Err(Error::DimensionMismatch {
                what: "codeword count 2^J",
                expected: 1 << bits,
                actual: entries.cols(),
            });
        }
        if !entries.is_finite() {
            return Err(Error::NonFinite("quantization codebook"));
        }
        if count_distinct_columns(&entries) != entries.cols() {
            return Err(Error::InvalidParameter("codewords must be distinct".into()));
        }
        Ok(Self { entries, bits })
    }

    /// Accepts any column count that is a power of two.
    pub fn from_matrix(entries: Matrix) -> Result<Self> {
        let n = entries.cols();
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::InvalidDimensions(format!(
                "codeword count must be a power of two >= 2, got {n}"
            )));
        }
        Self::new(entries, n.trailing_zeros())
    }

    /// Codeword length Q.
    pub fn dim(&self) -> usize {
        self.entries.rows()
    }

    /// Codeword count N.
    pub fn len(&self) -> usize {
        self.entries.cols()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn codeword(&self, n: usize) -> &[f64] {
        self.entries.col(n)
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColumnNormPolicy {
    /// Entries ~ N(0, 1/L): every sequence has unit expected energy.
    UnitExpectedNorm,
}

/// Access codebook `P`: one length-L transmit sequence per codeword.
#[derive(Debug, Clone, PartialEq)]
pub struct UmaCodebook {
    entries: Matrix,
    pub column_norm_policy: ColumnNormPolicy,
}

impl UmaCodebook {
    pub fn from_matrix(entries: Matrix) -> Result<Self> {
        if entries.rows() == 0 || entries.cols() < 2 {
            return Err(Error::InvalidDimensions(format!(
                "access codebook must be L×N with L >= 1, N >= 2; got {}×{}",
                entries.rows(),
                entries.cols()
            )));
        }
        if !entries.is_finite() {
            return Err(Error::NonFinite("access codebook"));
        }
        Ok(Self {
            entries,
            column_norm_policy: ColumnNormPolicy::UnitExpectedNorm,
        })
    }

    /// Sequence length L.
    pub fn seq_len(&self) -> usize {
        self.entries.rows()
    }

    /// Sequence count N.
    pub fn len(&self) -> usize {
        self.entries.cols()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sequence(&self, n: usize) -> &[f64] {
        self.entries.col(n)
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }
}

/// Draws an L×N access codebook with i.i.d. N(0, 1/L) entries.
pub fn generate_uma_codebook(n: usize, l: usize, seed: u64) -> Result<UmaCodebook> {
    if n < 2 || l < 1 {
        return Err(Error::InvalidDimensions(format!(
            "access codebook needs N >= 2 and L >= 1, got N={n}, L={l}"
        )));
    }
    let normal = Normal::new(0.0, (1.0 / l as f64).sqrt()).expect("positive std");
    let mut rng = seed::rng(seed);
    let data: Vec<f64> = (0..n * l).map(|_| normal.sample(&mut rng)).collect();
    UmaCodebook::from_matrix(Matrix::from_col_major(l, n, data)?)
}

/// Square N×N codebook with orthonormal columns (Gram-Schmidt on Gaussian
/// draws). Useful as an interference-free reference channel.
pub fn generate_orthonormal_codebook(n: usize, seed: u64) -> Result<UmaCodebook> {
    if n < 2 {
        return Err(Error::InvalidDimensions(format!("need N >= 2, got {n}")));
    }
    let mut rng = seed::rng(seed);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        // Two passes of classical Gram-Schmidt keep the basis orthonormal to
        // working precision.
        for _ in 0..2 {
            for c in &cols {
                let d: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= d * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            cols.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    UmaCodebook::from_matrix(Matrix::from_columns(n, &cols)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmptyClusterPolicy {
    /// Move the centroid onto the sample farthest from its nearest centroid.
    ReseedFarthestPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KMeansParams {
    pub max_iters: usize,
    /// Stop when the relative distortion decrease falls below this.
    pub tol: f64,
    pub seed: u64,
    pub empty_cluster_policy: EmptyClusterPolicy,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol: 1e-6,
            seed: 0,
            empty_cluster_policy: EmptyClusterPolicy::ReseedFarthestPoint,
        }
    }
}

impl KMeansParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::InvalidParameter("kmeans max_iters must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter("kmeans tol must be > 0".into()));
        }
        Ok(())
    }
}

/// Outcome of a K-means run, kept for diagnostics and tests.
#[derive(Debug, Clone)]
pub struct KMeansReport {
    /// Mean squared distance after each assignment step; entry 0 is the
    /// distortion of the initial seeding.
    pub distortion: Vec<f64>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
    pub reseeded: usize,
}

/// Trains an N-codeword quantization codebook on the columns of `samples`.
pub fn kmeans_codebook(
    samples: &Matrix,
    n: usize,
    params: &KMeansParams,
) -> Result<(QuantizationCodebook, KMeansReport)> {
    let (centroids, report) = lloyd(samples, n, params)?;
    Ok((QuantizationCodebook::from_matrix(centroids)?, report))
}

/// Lloyd iterations with distance-weighted seeding. Accepts any `n >= 1`
/// (the codebook constructor enforces the power-of-two count).
pub fn lloyd(samples: &Matrix, n: usize, params: &KMeansParams) -> Result<(Matrix, KMeansReport)> {
    params.validate()?;
    let q = samples.rows();
    let m = samples.cols();
    if q == 0 || n == 0 {
        return Err(Error::InvalidDimensions("need Q >= 1 and N >= 1".into()));
    }
    if m < n {
        return Err(Error::InsufficientSamples {
            needed: n,
            available: m,
        });
    }
    if !samples.is_finite() {
        return Err(Error::NonFinite("k-means samples"));
    }
    let distinct = count_distinct_columns(samples);
    if distinct < n {
        return Err(Error::DegenerateSamples {
            distinct,
            requested: n,
        });
    }

    let mut rng = seed::rng(params.seed);
    let mut centroids = seed_centroids(samples, n, &mut rng);
    let mut assignment = vec![0usize; m];
    let mut distortion = vec![assign(samples, &centroids, &mut assignment)];
    let mut reseeded = 0;
    let mut iterations = 0;

    for _ in 0..params.max_iters {
        iterations += 1;
        let counts = update_means(samples, &assignment, &mut centroids);
        reseeded += reseed_empty_and_duplicate(samples, &counts, &mut centroids);
        let d = assign(samples, &centroids, &mut assignment);
        let prev = *distortion.last().expect("non-empty");
        distortion.push(d);
        if d == 0.0 || (prev - d) / prev < params.tol {
            break;
        }
    }

    Ok((
        centroids,
        KMeansReport {
            distortion,
            assignment,
            iterations,
            reseeded,
        },
    ))
}

/// Index of the nearest codeword; ties go to the smallest index.
pub fn nearest_codeword(column: &[f64], codebook: &QuantizationCodebook) -> Result<usize> {
    if column.len() != codebook.dim() {
        return Err(Error::DimensionMismatch {
            what: "column length vs codeword length",
            expected: codebook.dim(),
            actual: column.len(),
        });
    }
    Ok(nearest(column, codebook.entries()).0)
}

pub(crate) fn nearest(column: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.columns().enumerate() {
        let d = sq_dist(column, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn count_distinct_columns(m: &Matrix) -> usize {
    // +0.0 and -0.0 are the same point.
    let mut keys: Vec<Vec<u64>> = m
        .columns()
        .map(|c| c.iter().map(|&v| (v + 0.0).to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// First centroid uniform over samples, the rest with probability
/// proportional to squared distance to the nearest chosen centroid.
fn seed_centroids(samples: &Matrix, n: usize, rng: &mut impl Rng) -> Matrix {
    let q = samples.rows();
    let m = samples.cols();
    let mut centroids = Matrix::zeros(q, n);
    let first = rng.random_range(0..m);
    centroids.col_mut(0).copy_from_slice(samples.col(first));
    let mut d2: Vec<f64> = samples.columns().map(|s| sq_dist(s, centroids.col(0))).collect();

    for k in 1..n {
        let total: f64 = d2.iter().sum();
        // Distinct columns >= n guarantees total > 0 here.
        let mut target = rng.random::<f64>() * total;
        let mut pick = m - 1;
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 && target < w {
                pick = i;
                break;
            }
            target -= w;
        }
        if d2[pick] == 0.0 {
            pick = argmax(&d2);
        }
        centroids.col_mut(k).copy_from_slice(samples.col(pick));
        for (d, s) in d2.iter_mut().zip(samples.columns()) {
            *d = d.min(sq_dist(s, centroids.col(k)));
        }
    }
    centroids
}

fn assign(samples: &Matrix, centroids: &Matrix, assignment: &mut [usize]) -> f64 {
    let mut total = 0.0;
    for (a, s) in assignment.iter_mut().zip(samples.columns()) {
        let (idx, d) = nearest(s, centroids);
        *a = idx;
        total += d;
    }
    total / samples.cols() as f64
}

fn update_means(samples: &Matrix, assignment: &[usize], centroids: &mut Matrix) -> Vec<usize> {
    let q = samples.rows();
    let n = centroids.cols();
    let mut sums = Matrix::zeros(q, n);
    let mut counts = vec![0usize; n];
    for (&a, s) in assignment.iter().zip(samples.columns()) {
        counts[a] += 1;
        for (acc, v) in sums.col_mut(a).iter_mut().zip(s) {
            *acc += v;
        }
    }
    for k in 0..n {
        if counts[k] > 0 {
            let inv = 1.0 / counts[k] as f64;
            for (c, s) in centroids.col_mut(k).iter_mut().zip(sums.col(k)) {
                *c = s * inv;
            }
        }
    }
    counts
}

/// Moves empty or duplicated centroids onto the farthest samples. Neither
/// move can increase the distortion of the next assignment.
fn reseed_empty_and_duplicate(samples: &Matrix, counts: &[usize], centroids: &mut Matrix) -> usize {
    let n = centroids.cols();
    let mut to_reseed: Vec<usize> = (0..n).filter(|&k| counts[k] == 0).collect();
    for k in 1..n {
        if counts[k] > 0 && (0..k).any(|j| centroids.col(j) == centroids.col(k)) {
            to_reseed.push(k);
        }
    }
    if to_reseed.is_empty() {
        return 0;
    }
    to_reseed.sort_unstable();
    let mut d2: Vec<f64> = samples
        .columns()
        .map(|s| {
            (0..n)
                .filter(|k| to_reseed.binary_search(k).is_err())
                .map(|k| sq_dist(s, centroids.col(k)))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    for &k in &to_reseed {
        let far = argmax(&d2);
        centroids.col_mut(k).copy_from_slice(samples.col(far));
        for (d, s) in d2.iter_mut().zip(samples.columns()) {
            *d = d.min(sq_dist(s, centroids.col(k)));
        }
    }
    to_reseed.len()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn scalar_codebook(vals: &[f64]) -> QuantizationCodebook {
        QuantizationCodebook::from_matrix(Matrix::from_col_major(1, vals.len(), vals.to_vec()).unwrap())
            .unwrap()
    }

    fn random_samples(q: usize, m: usize, seed: u64) -> Matrix {
        let mut rng = seed::rng(seed);
        let data = (0..q * m).map(|_| rng.sample(StandardNormal)).collect();
        Matrix::from_col_major(q, m, data).unwrap()
    }

    #[test]
    fn uma_codebook_is_deterministic() {
        let a = generate_uma_codebook(4, 2, 11).unwrap();
        let b = generate_uma_codebook(4, 2, 11).unwrap();
        assert_eq!(a.entries().rows(), 2);
        assert_eq!(a.entries().cols(), 4);
        assert_eq!(a, b);
        assert_ne!(a, generate_uma_codebook(4, 2, 12).unwrap());
    }

    #[test]
    fn uma_codebook_moments() {
        let p = generate_uma_codebook(256, 64, 3).unwrap();
        let x = p.entries().as_slice();
        let cnt = x.len() as f64;
        assert_eq!(x.len(), 16384);
        let mean = x.iter().sum::<f64>() / cnt;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (cnt - 1.0);
        let sigma_of_mean = (1.0 / 64.0 / cnt).sqrt();
        assert!(mean.abs() <= 3.0 * sigma_of_mean, "mean {mean}");
        assert!((var - 1.0 / 64.0).abs() <= 0.1 / 64.0, "var {var}");
    }

    #[test]
    fn uma_codebook_rejects_single_column() {
        assert!(matches!(
            generate_uma_codebook(1, 8, 0),
            Err(Error::InvalidDimensions(_))
        ));
        assert!(generate_uma_codebook(4, 0, 0).is_err());
    }

    #[test]
    fn orthonormal_codebook_is_orthonormal() {
        let p = generate_orthonormal_codebook(16, 4).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                let d: f64 = p.sequence(i).iter().zip(p.sequence(j)).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nearest_codeword_examples() {
        let u = scalar_codebook(&[-1.0, 1.0]);
        assert_eq!(nearest_codeword(&[0.9], &u).unwrap(), 1);
        // Tie goes to the smaller index.
        assert_eq!(nearest_codeword(&[0.0], &u).unwrap(), 0);
        assert!(nearest_codeword(&[0.0, 1.0], &u).is_err());
    }

    #[test]
    fn every_codeword_maps_to_itself() {
        let s = random_samples(3, 16, 5);
        let u = QuantizationCodebook::from_matrix(s).unwrap();
        for n in 0..u.len() {
            assert_eq!(nearest_codeword(u.codeword(n), &u).unwrap(), n);
        }
    }

    #[test]
    fn kmeans_exact_fit() {
        let s = Matrix::from_columns(2, &[[0.0, 1.0], [5.0, 5.0], [-3.0, 2.0], [1.0, -4.0]]).unwrap();
        let (u, rep) = kmeans_codebook(&s, 4, &KMeansParams::default()).unwrap();
        assert_eq!(*rep.distortion.last().unwrap(), 0.0);
        let mut got: Vec<Vec<u64>> = u
            .entries()
            .columns()
            .map(|c| c.iter().map(|v| v.to_bits()).collect())
            .collect();
        let mut want: Vec<Vec<u64>> = s
            .columns()
            .map(|c| c.iter().map(|v| v.to_bits()).collect())
            .collect();
        got.sort();
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn kmeans_single_centroid_is_mean() {
        let s = random_samples(3, 40, 9);
        let (c, _) = lloyd(&s, 1, &KMeansParams::default()).unwrap();
        for r in 0..3 {
            let mean = s.row(r).iter().sum::<f64>() / 40.0;
            assert!((c.get(r, 0) - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn kmeans_monotone_and_fixed_point() {
        for seed in 0..20 {
            let s = random_samples(2, 64, 100 + seed);
            let params = KMeansParams {
                seed,
                ..KMeansParams::default()
            };
            let (u, rep) = kmeans_codebook(&s, 4, &params).unwrap();
            for w in rep.distortion.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "distortion rose: {:?}", rep.distortion);
            }
            // Independent nearest-neighbor scan.
            for (i, col) in s.columns().enumerate() {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for k in 0..4 {
                    let d: f64 = col
                        .iter()
                        .zip(u.codeword(k))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    if d < best_d {
                        best_d = d;
                        best = k;
                    }
                }
                assert_eq!(rep.assignment[i], best);
            }
        }
    }

    #[test]
    fn kmeans_errors() {
        let s = random_samples(2, 3, 1);
        assert!(matches!(
            kmeans_codebook(&s, 4, &KMeansParams::default()),
            Err(Error::InsufficientSamples { .. })
        ));
        let mut bad = random_samples(2, 8, 1);
        bad.set(0, 3, f64::NAN);
        assert!(matches!(
            kmeans_codebook(&bad, 4, &KMeansParams::default()),
            Err(Error::NonFinite(_))
        ));
        let zeros = Matrix::zeros(2, 10);
        assert!(matches!(
            kmeans_codebook(&zeros, 2, &KMeansParams::default()),
            Err(Error::DegenerateSamples { distinct: 1, requested: 2 })
        ));
    }

    #[test]
    fn kmeans_with_few_distinct_points_still_distinct() {
        // 2 distinct points repeated, plus 2 more: exactly 4 distinct.
        let mut cols = vec![[0.0, 0.0]; 20];
        cols.extend(vec![[1.0, 1.0]; 20]);
        cols.push([5.0, 0.0]);
        cols.push([0.0, 5.0]);
        let s = Matrix::from_columns(2, &cols).unwrap();
        let (u, rep) = kmeans_codebook(&s, 4, &KMeansParams::default()).unwrap();
        assert_eq!(u.len(), 4);
        assert_eq!(*rep.distortion.last().unwrap(), 0.0);
    }

    #[test]
    fn codebook_rejects_duplicates_and_bad_count() {
        let dup = Matrix::from_col_major(1, 2, vec![1.0, 1.0]).unwrap();
        assert!(QuantizationCodebook::from_matrix(dup).is_err());
        let three = Matrix::from_col_major(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        assert!(QuantizationCodebook::from_matrix(three).is_err());
    }

    #[test]
    fn kmeans_is_pure() {
        let s = random_samples(4, 100, 77);
        let p = KMeansParams {
            seed: 5,
            ..KMeansParams::default()
        };
        let (a, _) = kmeans_codebook(&s, 8, &p).unwrap();
        let (b, _) = kmeans_codebook(&s, 8, &p).unwrap();
        assert_eq!(a, b);
    }
}
