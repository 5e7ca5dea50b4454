use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::data::EmbeddingSet;
use crate::error::{Error, Result};

/// Relative eigenvalue floor used when repairing covariance products.
const EIG_CLAMP: f64 = 1e-10;

fn moments(set: &EmbeddingSet) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = (set.n(), set.d());
    let x = DMatrix::from_row_slice(n, d, set.data());
    let mu = DVector::from_iterator(d, (0..d).map(|j| x.column(j).mean()));
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mu.transpose();
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    (mu, cov)
}

/// Eigenvalues clamped at `EIG_CLAMP * max`, and at zero.
fn clamped_eigen(m: DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let mut eig = SymmetricEigen::new(m);
    let max = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
    let floor = EIG_CLAMP * max;
    for v in eig.eigenvalues.iter_mut() {
        if *v < floor {
            *v = 0.0;
        }
    }
    eig
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = clamped_eigen(m.clone());
    let s = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    &eig.eigenvectors * s * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussians fitted to two embedding sets:
/// `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))`.
///
/// The trace of the cross term is computed from the eigenvalues of the
/// symmetric matrix `S_a^(1/2) S_b S_a^(1/2)`.
pub fn frechet_distance(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<f64> {
    if a.d() != b.d() {
        return Err(Error::Argument(format!("dimension mismatch: {} vs {}", a.d(), b.d())));
    }
    if a.n() < 2 || b.n() < 2 {
        return Err(Error::EmptyInput("each set needs at least 2 samples".into()));
    }
    let (mu_a, cov_a) = moments(a);
    let (mu_b, cov_b) = moments(b);
    let root_a = sym_sqrt(&cov_a);
    let mut inner = &root_a * &cov_b * &root_a;
    // symmetrize against round-off before the eigendecomposition
    inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = clamped_eigen(inner).eigenvalues.iter().map(|v| v.sqrt()).sum();
    let mean_term = (&mu_a - &mu_b).norm_squared();
    let d = mean_term + cov_a.trace() + cov_b.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Xoshiro256StarStar;
    use proptest::prelude::*;

    /// Samples with exactly the requested 1-D sample mean and variance.
    fn exact_1d(mu: f64, var: f64) -> EmbeddingSet {
        // {-1, 1} has mean 0 and sample variance 2
        let s = (var / 2.0).sqrt();
        EmbeddingSet::new(2, 1, vec![mu - s, mu + s]).unwrap()
    }

    fn random_set(rng: &mut Xoshiro256StarStar, n: usize, d: usize, shift: f64) -> EmbeddingSet {
        EmbeddingSet::new(n, d, (0..n * d).map(|i| rng.normal() * (1.0 + (i % d) as f64) + shift).collect()).unwrap()
    }

    #[test]
    fn closed_form_1d() {
        let mean_shift = frechet_distance(&exact_1d(0.0, 1.0), &exact_1d(1.0, 1.0)).unwrap();
        assert!((mean_shift - 1.0).abs() < 1e-9);
        let scale = frechet_distance(&exact_1d(0.0, 1.0), &exact_1d(0.0, 4.0)).unwrap();
        assert!((scale - 1.0).abs() < 1e-9);
    }

    #[test]
    fn self_distance_is_zero() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(1);
        let a = random_set(&mut rng, 50, 6, 0.0);
        assert!(frechet_distance(&a, &a).unwrap() < 1e-9);
    }

    #[test]
    fn diagonal_covariances_match_closed_form() {
        // axis-aligned samples give diagonal covariances, where the distance is
        // |mu_a - mu_b|^2 + sum (sqrt(va) - sqrt(vb))^2
        let a = EmbeddingSet::new(4, 2, vec![1.0, 0.0, -1.0, 0.0, 0.0, 2.0, 0.0, -2.0]).unwrap();
        let b = EmbeddingSet::new(4, 2, vec![3.0, 1.0, -3.0, 1.0, 0.0, 2.0, 0.0, 0.0]).unwrap();
        let va = [2.0 / 3.0, 8.0 / 3.0];
        let vb = [18.0 / 3.0, 2.0 / 3.0];
        let mu_b = [0.0, 1.0];
        let expected: f64 = mu_b.iter().map(|m| m * m).sum::<f64>()
            + va.iter().zip(&vb).map(|(x, y): (&f64, &f64)| (x.sqrt() - y.sqrt()).powi(2)).sum::<f64>();
        let got = frechet_distance(&a, &b).unwrap();
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }

    #[test]
    fn dimension_mismatch() {
        let a = EmbeddingSet::new(2, 1, vec![0.0, 1.0]).unwrap();
        let b = EmbeddingSet::new(2, 2, vec![0.0; 4]).unwrap();
        assert!(matches!(frechet_distance(&a, &b), Err(Error::Argument(_))));
    }

    proptest! {
        #[test]
        fn symmetric_and_positive_for_different_sets(seed in any::<u64>()) {
            let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
            let a = random_set(&mut rng, 30, 4, 0.0);
            let b = random_set(&mut rng, 40, 4, 0.3);
            let ab = frechet_distance(&a, &b).unwrap();
            let ba = frechet_distance(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-8 * ab.max(1.0));
            prop_assert!(ab > 1e-6);
        }

        #[test]
        fn zero_when_moments_coincide(seed in any::<u64>(), shift in -3.0f64..3.0) {
            // reversing row order changes the samples' order but not their moments
            let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
            let a = random_set(&mut rng, 25, 3, shift);
            let rows: Vec<f64> = (0..25).rev().flat_map(|i| a.row(i).to_vec()).collect();
            let b = EmbeddingSet::new(25, 3, rows).unwrap();
            prop_assert!(frechet_distance(&a, &b).unwrap() < 1e-9);
        }
    }
}
