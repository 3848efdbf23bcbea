//! Alignment to ground truth and error statistics.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{EdgeScales, Rotation, Vec3};

/// `p -> scale * rotation * p + translation`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub rotation: Rotation,
    pub translation: Vec3,
    pub scale: f64,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform { rotation: Rotation::identity(), translation: Vec3::zeros(), scale: 1.0 }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        (&self.rotation * p) * self.scale + self.translation
    }
}

/// Position error statistics in ground-truth units, plus optional scale
/// diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub e_rmse: f64,
    pub e_mean: f64,
    pub e_median: f64,
    pub transform: SimilarityTransform,
    #[serde(default)]
    pub lambda_log_ratios: Vec<f64>,
    #[serde(default)]
    pub frac_at_bound: Option<f64>,
}

fn centroid(p: &[Vec3]) -> Vec3 {
    p.iter().sum::<Vec3>() / p.len() as f64
}

/// Least-squares similarity taking `est` onto `gt` (closed form via the
/// SVD of the cross-covariance, with reflection correction).
pub fn align_similarity(est: &[Vec3], gt: &[Vec3]) -> Result<SimilarityTransform> {
    if est.len() != gt.len() {
        return Err(Error::InvalidInput(format!("{} estimated vs {} reference points", est.len(), gt.len())));
    }
    if est.len() < 3 {
        return Err(Error::DegenerateConfiguration { rank: est.len().saturating_sub(1) });
    }
    let (ce, cg) = (centroid(est), centroid(gt));
    let n = est.len() as f64;
    let mut cov = Matrix3::zeros();
    let mut var_e = 0.0;
    for (e, g) in est.iter().zip(gt) {
        let (de, dg) = (e - ce, g - cg);
        cov += dg * de.transpose();
        var_e += de.norm_squared();
    }
    cov /= n;
    var_e /= n;
    let svd = cov.svd(true, true);
    let sv = svd.singular_values;
    let smax = sv.max();
    let rank = if smax > 0.0 { sv.iter().filter(|s| **s > 1e-10 * smax).count() } else { 0 };
    if rank < 2 || !(var_e > 0.0) {
        return Err(Error::DegenerateConfiguration { rank });
    }
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut s = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        // Flip the axis of the smallest singular value.
        let k = (0..3).min_by(|&a, &b| sv[a].total_cmp(&sv[b])).expect("3 values");
        s[(k, k)] = -1.0;
    }
    let r = u * s * v_t;
    let scale = (0..3).map(|k| sv[k] * s[(k, k)]).sum::<f64>() / var_e;
    let rotation = crate::types::nearest_rotation(&r)?;
    let translation = cg - (&rotation * &ce) * scale;
    Ok(SimilarityTransform { rotation, translation, scale })
}

/// Aligns `est` onto `gt`, then reports RMSE, mean and lower median of the
/// per-vertex distances (all averaged over the vertex count).
pub fn position_errors(est: &[Vec3], gt: &[Vec3]) -> Result<EvaluationReport> {
    let transform = align_similarity(est, gt)?;
    let dist: Vec<f64> = est.iter().zip(gt).map(|(e, g)| (transform.apply(e) - g).norm()).collect();
    let (e_rmse, e_mean, e_median) = distance_statistics(&dist);
    Ok(EvaluationReport { e_rmse, e_mean, e_median, transform, lambda_log_ratios: Vec::new(), frac_at_bound: None })
}

/// `(rmse, mean, lower median)` of per-vertex distances.
pub fn distance_statistics(dist: &[f64]) -> (f64, f64, f64) {
    if dist.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = dist.len() as f64;
    let rmse = (dist.iter().map(|d| d * d).sum::<f64>() / n).sqrt();
    let mean = dist.iter().sum::<f64>() / n;
    let mut sorted = dist.to_vec();
    sorted.sort_by(f64::total_cmp);
    (rmse, mean, sorted[(sorted.len() - 1) / 2])
}

/// Tolerance for counting a scale factor as sitting on the lower bound 1.
pub const AT_BOUND_TOL: f64 = 1e-9;

/// `log10(lambda_ij / ||p_j - p_i||)` per edge and the fraction of scales
/// within [`AT_BOUND_TOL`] of 1.
pub fn lambda_diagnostics(
    scales: &EdgeScales,
    pairs: &[(usize, usize)],
    positions: &[Vec3],
) -> Result<(Vec<f64>, f64)> {
    if scales.len() != pairs.len() {
        return Err(Error::InvalidInput(format!("{} scales for {} edges", scales.len(), pairs.len())));
    }
    let mut ratios = Vec::with_capacity(pairs.len());
    for (&(i, j), &l) in pairs.iter().zip(scales.as_slice()) {
        if i >= positions.len() || j >= positions.len() {
            return Err(Error::InvalidInput(format!("edge ({i}, {j}) outside {} positions", positions.len())));
        }
        let len = (positions[j] - positions[i]).norm();
        if !(len > 0.0) {
            return Err(Error::DegenerateEdge { i, j, length: len });
        }
        ratios.push((l / len).log10());
    }
    let at_bound = scales.as_slice().iter().filter(|l| (*l - 1.0).abs() <= AT_BOUND_TOL).count();
    let frac = if pairs.is_empty() { 0.0 } else { at_bound as f64 / pairs.len() as f64 };
    Ok((ratios, frac))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut impl Rng, n: usize) -> Vec<Vec3> {
        (0..n).map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
    }

    fn alignment_cost(t: &SimilarityTransform, est: &[Vec3], gt: &[Vec3]) -> f64 {
        est.iter().zip(gt).map(|(e, g)| (t.apply(e) - g).norm_squared()).sum()
    }

    #[test]
    fn identity_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = random_points(&mut rng, 10);
        let t = align_similarity(&p, &p).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-12);
        assert!((t.rotation.matrix() - Rotation::identity().matrix()).norm() < 1e-12);
        assert!(t.translation.norm() < 1e-12);
        let r = position_errors(&p, &p).unwrap();
        assert!(r.e_rmse < 1e-12 && r.e_mean < 1e-12 && r.e_median < 1e-12);
    }

    #[test]
    fn recovers_inverse_of_known_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gt = random_points(&mut rng, 12);
        let rg = Rotation::random(&mut rng);
        let tg = Vec3::new(0.3, -2.0, 5.0);
        let est: Vec<Vec3> = gt.iter().map(|p| (&rg * p) * 0.5 + tg).collect();
        let t = align_similarity(&est, &gt).unwrap();
        assert!((t.scale - 2.0).abs() < 1e-10);
        assert!((t.rotation.matrix() - rg.transpose().matrix()).norm() < 1e-10);
        for (e, g) in est.iter().zip(&gt) {
            assert!((t.apply(e) - g).norm() < 1e-10);
        }
    }

    #[test]
    fn alignment_beats_random_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gt = random_points(&mut rng, 4);
        let est = random_points(&mut rng, 4);
        let best = alignment_cost(&align_similarity(&est, &gt).unwrap(), &est, &gt);
        for _ in 0..100_000 {
            let cand = SimilarityTransform {
                rotation: Rotation::random(&mut rng),
                translation: Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                scale: rng.random_range(0.01..3.0),
            };
            assert!(best <= alignment_cost(&cand, &est, &gt) + 1e-12);
        }
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let line: Vec<Vec3> = (0..5).map(|k| Vec3::x() * k as f64).collect();
        assert!(matches!(align_similarity(&line, &line), Err(Error::DegenerateConfiguration { .. })));
        let same = vec![Vec3::zeros(); 4];
        assert!(matches!(align_similarity(&same, &same), Err(Error::DegenerateConfiguration { .. })));
    }

    #[test]
    fn single_offset_vertex() {
        let delta = 0.25;
        for n in [3usize, 4, 9] {
            let mut d = vec![0.0; n];
            d[n / 2] = delta;
            let (rmse, mean, median) = distance_statistics(&d);
            assert!((rmse - delta / (n as f64).sqrt()).abs() < 1e-15);
            assert!((mean - delta / n as f64).abs() < 1e-15);
            assert_eq!(median, 0.0);
        }
        assert_eq!(distance_statistics(&[4.0, 1.0, 3.0, 2.0]).2, 2.0);
    }

    #[test]
    fn statistics_match_direct_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [3, 4, 7, 20] {
            let gt = random_points(&mut rng, n);
            let est: Vec<Vec3> = gt.iter().map(|p| p * 1.7 + Vec3::new(rng.random(), rng.random(), rng.random()) * 0.1).collect();
            let r = position_errors(&est, &gt).unwrap();
            let mut sum2 = 0.0;
            let mut sum = 0.0;
            let mut all = Vec::new();
            for k in 0..n {
                let a = r.transform.scale * (r.transform.rotation.matrix() * est[k]) + r.transform.translation;
                let dx = a[0] - gt[k][0];
                let dy = a[1] - gt[k][1];
                let dz = a[2] - gt[k][2];
                let d = (dx * dx + dy * dy + dz * dz).sqrt();
                sum2 += d * d;
                sum += d;
                all.push(d);
            }
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert!((r.e_rmse - (sum2 / n as f64).sqrt()).abs() < 1e-12);
            assert!((r.e_mean - sum / n as f64).abs() < 1e-12);
            assert!((r.e_median - all[(n - 1) / 2]).abs() < 1e-12);
        }
    }

    #[test]
    fn lambda_ratio_examples() {
        let p = vec![Vec3::zeros(), Vec3::x() * 10.0, Vec3::y() * 2.0];
        let (r, f) = lambda_diagnostics(&EdgeScales(vec![1.0, 2.0]), &[(0, 1), (0, 2)], &p).unwrap();
        assert!((r[0] + 1.0).abs() < 1e-15);
        assert!(r[1].abs() < 1e-15);
        assert_eq!(f, 0.5);
        let q = vec![Vec3::zeros(), Vec3::zeros()];
        assert!(lambda_diagnostics(&EdgeScales(vec![1.0]), &[(0, 1)], &q).is_err());
    }

    proptest::proptest! {
        #[test]
        fn similarity_images_have_zero_error(
            w in proptest::array::uniform3(-3.0f64..3.0),
            t in proptest::array::uniform3(-10.0f64..10.0),
            s in 0.05f64..20.0,
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gt = random_points(&mut rng, 8);
            let g = Rotation::exp(&Vec3::from(w));
            let moved: Vec<Vec3> = gt.iter().map(|p| (&g * p) * s + Vec3::from(t)).collect();
            let r = position_errors(&moved, &gt).unwrap();
            proptest::prop_assert!(r.e_rmse < 1e-10);
        }
    }
}
