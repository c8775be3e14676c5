//! Sample-quality metrics: Inception score, Frechet distance, Euclidean
//! nearest-neighbour delta and sliced Wasserstein distance.

mod classifier;

pub use classifier::{
    class_conditional_select, train_surrogate_classifier, Classifier, ClassifierConfig,
    ClassifierReport,
};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::autodiff::kernels::matmul;
use crate::error::{Error, Result};

pub const DEFAULT_PROJECTIONS: usize = 512;
pub const DEFAULT_SWD_SEEDS: [u64; 4] = [0, 1, 2, 3];
const SYMMETRY_TOLERANCE: f64 = 1e-8;
const EIGEN_CLAMP: f64 = -1e-10;

fn check_rows<S: AsRef<[f64]>>(rows: &[S], what: &str) -> Result<usize> {
    let d = rows
        .first()
        .ok_or_else(|| Error::invalid(format!("{what} set is empty")))?
        .as_ref()
        .len();
    if rows.iter().any(|r| r.as_ref().len() != d) {
        return Err(Error::shape(
            "metrics",
            format!("{what} rows must all have length {d}"),
        ));
    }
    Ok(d)
}

/// `exp(mean_i KL(p(y|x_i) || p(y)))` with natural logs.
pub fn inception_score<S: AsRef<[f64]>>(probabilities: &[S]) -> Result<f64> {
    let k = check_rows(probabilities, "probabilities")?;
    for (i, row) in probabilities.iter().enumerate() {
        let row = row.as_ref();
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || row.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(Error::invalid(format!(
                "row {i} is not a probability distribution (sum {sum})"
            )));
        }
    }
    let n = probabilities.len() as f64;
    let mut marginal = vec![0.0; k];
    for row in probabilities {
        for (m, p) in marginal.iter_mut().zip(row.as_ref()) {
            *m += p;
        }
    }
    marginal.iter_mut().for_each(|m| *m /= n);
    let mean_kl = probabilities
        .iter()
        .map(|row| {
            row.as_ref()
                .iter()
                .zip(&marginal)
                .filter(|(p, _)| **p > 0.0)
                .map(|(p, m)| p * (p / m).ln())
                .sum::<f64>()
        })
        .sum::<f64>()
        / n;
    Ok(mean_kl.exp())
}

fn check_symmetric(c: &DMatrix<f64>, what: &str) -> Result<()> {
    if !c.is_square() {
        return Err(Error::shape(
            "frechet_distance",
            format!("{what} is not square"),
        ));
    }
    let asym = (c - c.transpose()).abs().max();
    if asym > SYMMETRY_TOLERANCE {
        return Err(Error::invalid(format!(
            "{what} is not symmetric (max deviation {asym:e})"
        )));
    }
    Ok(())
}

fn clamped_eigenvalues(m: DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let mut eig = SymmetricEigen::new(m);
    for v in eig.eigenvalues.iter_mut() {
        if *v < EIGEN_CLAMP || !v.is_finite() {
            return Err(Error::Numeric(format!(
                "{what} is not positive semi-definite (eigenvalue {v:e})"
            )));
        }
        *v = v.max(0.0);
    }
    Ok(eig)
}

fn sqrt_psd(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = clamped_eigenvalues(c.clone(), "covariance")?;
    let root = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(&eig.eigenvectors * root * eig.eigenvectors.transpose())
}

/// Frechet distance between two Gaussians.
pub fn frechet_distance(
    mu1: &[f64],
    cov1: &DMatrix<f64>,
    mu2: &[f64],
    cov2: &DMatrix<f64>,
) -> Result<f64> {
    check_symmetric(cov1, "first covariance")?;
    check_symmetric(cov2, "second covariance")?;
    let d = mu1.len();
    if mu2.len() != d || cov1.nrows() != d || cov2.nrows() != d {
        return Err(Error::shape(
            "frechet_distance",
            "mean and covariance dimensions disagree",
        ));
    }
    if mu1 == mu2 && cov1 == cov2 {
        return Ok(0.0);
    }
    let mean_term: f64 = mu1.iter().zip(mu2).map(|(a, b)| (a - b).powi(2)).sum();
    let s1 = sqrt_psd(cov1)?;
    let mut inner = &s1 * cov2 * &s1;
    inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = clamped_eigenvalues(inner, "covariance product")?
        .eigenvalues
        .iter()
        .map(|v| v.sqrt())
        .sum();
    Ok((mean_term + cov1.trace() + cov2.trace() - 2.0 * cross).max(0.0))
}

/// Sample mean and covariance with an `N - 1` denominator.
pub fn mean_and_covariance<S: AsRef<[f64]>>(rows: &[S]) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let d = check_rows(rows, "embedding")?;
    if rows.len() < 2 {
        return Err(Error::invalid("covariance needs at least 2 samples"));
    }
    let n = rows.len();
    let mut mean = DVector::<f64>::zeros(d);
    for r in rows {
        mean += DVector::from_column_slice(r.as_ref());
    }
    mean /= n as f64;
    let centered = DMatrix::from_fn(n, d, |i, j| rows[i].as_ref()[j] - mean[j]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    Ok((mean.as_slice().to_vec(), cov))
}

/// Frechet distance between Gaussian fits of two embedding sets.
pub fn fid<S: AsRef<[f64]>>(real: &[S], fake: &[S]) -> Result<f64> {
    let (m1, c1) = mean_and_covariance(real)?;
    let (m2, c2) = mean_and_covariance(fake)?;
    frechet_distance(&m1, &c1, &m2, &c2)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Mean fake-to-nearest-real distance minus mean real-to-nearest-other-real distance.
pub fn euclidean_min_delta<S: AsRef<[f64]> + Sync>(real: &[S], fake: &[S]) -> Result<f64> {
    if real.len() < 2 {
        return Err(Error::invalid(
            "euclidean_min_delta needs at least 2 real signals",
        ));
    }
    let d = check_rows(real, "real")?;
    if check_rows(fake, "fake")? != d {
        return Err(Error::shape(
            "euclidean_min_delta",
            "real and fake lengths differ",
        ));
    }
    let nearest = |x: &[f64], skip: Option<usize>| {
        real.iter()
            .enumerate()
            .filter(|(j, _)| Some(*j) != skip)
            .map(|(_, r)| distance(x, r.as_ref()))
            .fold(f64::INFINITY, f64::min)
    };
    let fake_min: Vec<f64> = fake.par_iter().map(|f| nearest(f.as_ref(), None)).collect();
    let real_min: Vec<f64> = (0..real.len())
        .into_par_iter()
        .map(|i| nearest(real[i].as_ref(), Some(i)))
        .collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(mean(&fake_min) - mean(&real_min))
}

/// Exact 1-D Wasserstein-2 between equal-size samples.
pub fn wasserstein2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid("1-D W2 needs equal, non-empty sample sets"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok((a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt())
}

fn flatten<S: AsRef<[f64]>>(rows: &[S], pick: &[usize]) -> Vec<f64> {
    pick.iter()
        .flat_map(|&i| rows[i].as_ref().iter().copied())
        .collect()
}

/// Mean 1-D W2 over random unit projections.
pub fn sliced_wasserstein<S: AsRef<[f64]>>(
    real: &[S],
    fake: &[S],
    projections: usize,
    seed: u64,
) -> Result<f64> {
    if projections == 0 {
        return Err(Error::invalid(
            "sliced Wasserstein needs at least one projection",
        ));
    }
    let d = check_rows(real, "real")?;
    if check_rows(fake, "fake")? != d {
        return Err(Error::shape(
            "sliced_wasserstein",
            "real and fake lengths differ",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = real.len().max(fake.len());
    let pick = |len: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        if len == n {
            (0..n).collect()
        } else {
            (0..n).map(|_| rng.random_range(0..len)).collect()
        }
    };
    let real_idx = pick(real.len(), &mut rng);
    let fake_idx = pick(fake.len(), &mut rng);
    let mut dirs = Vec::with_capacity(d * projections);
    for _ in 0..projections {
        let v = loop {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                break v.into_iter().map(|x| x / norm).collect::<Vec<_>>();
            }
        };
        dirs.extend(v);
    }
    let (pr, _) = matmul(
        &flatten(real, &real_idx),
        [n, d],
        false,
        &dirs,
        [projections, d],
        true,
    );
    let (pf, _) = matmul(
        &flatten(fake, &fake_idx),
        [n, d],
        false,
        &dirs,
        [projections, d],
        true,
    );
    let per: Vec<f64> = (0..projections)
        .into_par_iter()
        .map(|p| {
            let a: Vec<f64> = (0..n).map(|i| pr[i * projections + p]).collect();
            let b: Vec<f64> = (0..n).map(|i| pf[i * projections + p]).collect();
            wasserstein2_1d(&a, &b).expect("equal non-empty sets")
        })
        .collect();
    Ok(per.iter().sum::<f64>() / projections as f64)
}

/// Sliced Wasserstein averaged over several projection seeds.
pub fn sliced_wasserstein_averaged<S: AsRef<[f64]>>(
    real: &[S],
    fake: &[S],
    projections: usize,
    seeds: &[u64],
) -> Result<f64> {
    if seeds.is_empty() {
        return Err(Error::invalid("need at least one seed"));
    }
    let mut total = 0.0;
    for &s in seeds {
        total += sliced_wasserstein(real, fake, projections, s)?;
    }
    Ok(total / seeds.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Real,
    Generated,
}

/// Penultimate-layer activations of one signal set.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub rows: Vec<Vec<f64>>,
    pub source: Source,
}

impl EmbeddingSet {
    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn to_csv(&self) -> String {
        let mut out = (0..self.dim())
            .map(|j| format!("e{j}"))
            .collect::<Vec<_>>()
            .join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }
}

/// One evaluation of a generated set against real signals. Metrics that need
/// a classifier are `NaN` when none was supplied.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub inception_score: f64,
    pub fid: f64,
    pub ed_min_delta: f64,
    pub swd: f64,
    pub n_real: usize,
    pub n_fake: usize,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "inception_score,fid,ed_min_delta,swd,n_real,n_fake";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.inception_score, self.fid, self.ed_min_delta, self.swd, self.n_real, self.n_fake
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row())
    }
}

/// Evaluate `fake` against `real`; IS and FID use `classifier` when given.
pub fn evaluate<S: AsRef<[f64]> + Sync>(
    real: &[S],
    fake: &[S],
    classifier: Option<&Classifier>,
    projections: usize,
    seeds: &[u64],
) -> Result<MetricReport> {
    let (inception_score, fid_value) = match classifier {
        Some(c) => {
            let real_emb = c.embed(real)?;
            let (fake_probs, fake_emb) = c.probabilities_and_embeddings(fake)?;
            (
                inception_score(&fake_probs)?,
                fid(&real_emb.rows, &fake_emb.rows)?,
            )
        }
        None => (f64::NAN, f64::NAN),
    };
    Ok(MetricReport {
        inception_score,
        fid: fid_value,
        ed_min_delta: euclidean_min_delta(real, fake)?,
        swd: sliced_wasserstein_averaged(real, fake, projections, seeds)?,
        n_real: real.len(),
        n_fake: fake.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m1(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn inception_score_cases() {
        assert_eq!(
            inception_score(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap(),
            1.0
        );
        assert_eq!(
            inception_score(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            2.0
        );
        assert_eq!(
            inception_score(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap(),
            1.0
        );
        assert!(inception_score(&[vec![0.7, 0.7]]).is_err());
        assert!(inception_score::<Vec<f64>>(&[]).is_err());
    }

    #[test]
    fn frechet_one_dimensional() {
        assert!(
            (frechet_distance(&[0.0], &m1(1.0), &[1.0], &m1(1.0)).unwrap() - 1.0).abs() < 1e-12
        );
        assert!(
            (frechet_distance(&[0.0], &m1(1.0), &[0.0], &m1(4.0)).unwrap() - 1.0).abs() < 1e-12
        );
        assert_eq!(
            frechet_distance(&[0.3], &m1(2.0), &[0.3], &m1(2.0)).unwrap(),
            0.0
        );
    }

    #[test]
    fn frechet_rejects_asymmetry_and_indefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        let i = DMatrix::identity(2, 2);
        assert!(frechet_distance(&[0.0, 0.0], &a, &[0.0, 0.0], &i).is_err());
        let neg = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            frechet_distance(&[0.0, 0.0], &neg, &[1.0, 0.0], &i),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn fid_identity_and_shift() {
        let a: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 1.3).cos()])
            .collect();
        assert_eq!(fid(&a, &a).unwrap(), 0.0);
        let shifted: Vec<Vec<f64>> = a.iter().map(|r| vec![r[0] + 1.0, r[1] - 2.0]).collect();
        assert!((fid(&a, &shifted).unwrap() - 5.0).abs() < 1e-6);
        assert!(fid(&a[..1], &a[..1]).is_err());
    }

    #[test]
    fn euclidean_delta_cases() {
        let real = vec![vec![0.0], vec![1.0]];
        assert_eq!(euclidean_min_delta(&real, &[vec![0.5]]).unwrap(), -0.5);
        assert_eq!(euclidean_min_delta(&real, &real).unwrap(), -1.0);
        assert!(euclidean_min_delta(&real, &[vec![100.0]]).unwrap() > 50.0);
        assert!(euclidean_min_delta(&real[..1], &real).is_err());
    }

    #[test]
    fn swd_cases() {
        let a: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![(i as f64 * 0.7).sin() * 3.0])
            .collect();
        let b: Vec<Vec<f64>> = a.iter().map(|r| vec![r[0] + 0.75]).collect();
        for p in [1, 7] {
            assert!((sliced_wasserstein(&a, &b, p, 3).unwrap() - 0.75).abs() < 1e-12);
        }
        assert_eq!(sliced_wasserstein(&a, &a, 16, 0).unwrap(), 0.0);
        assert!(sliced_wasserstein(&a, &b, 0, 0).is_err());
        assert!(sliced_wasserstein(&a, &b[..10], 4, 0).unwrap() > 0.0);
    }

    #[test]
    fn metric_report_csv() {
        let r = MetricReport {
            inception_score: 1.5,
            fid: 0.25,
            ed_min_delta: -0.5,
            swd: 0.1,
            n_real: 3,
            n_fake: 4,
        };
        assert_eq!(
            r.to_csv(),
            format!("{}\n1.5,0.25,-0.5,0.1,3,4\n", MetricReport::CSV_HEADER)
        );
    }
}
