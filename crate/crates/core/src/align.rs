//! Least-squares rigid alignment of corresponded 3D point sets.
//!
//! Given index-aligned sets `P` and `Q`, [`kabsch_align`] finds the proper
//! rotation `R` and translation `t` minimizing `Σ |R·pᵢ + t − qᵢ|²`:
//!
//! 1. centroids `p̄`, `q̄`;
//! 2. centered vectors `pᵢ − p̄`, `qᵢ − q̄`;
//! 3. cross-covariance `S = Σ (pᵢ − p̄)(qᵢ − q̄)ᵀ`;
//! 4. `S = U·Σ·Vᵀ` and `R = V·diag(1, 1, det(V·Uᵀ))·Uᵀ`;
//! 5. `t = q̄ − R·p̄`.
//!
//! The 3×3 SVD is computed here as well, by cyclic Jacobi on `AᵀA`.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::geometry::{Point3, RigidTransform, RotationMatrix};

/// Spectrum ratio `σ₁ / σ₀` below which the covariance is considered rank ≤ 1.
pub const DEGENERACY_RATIO: f64 = 1e-12;

const JACOBI_TOLERANCE: f64 = 1e-14;
const JACOBI_MAX_SWEEPS: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignError {
    #[error("non-finite input to SVD")]
    NonFiniteInput,
    #[error("need at least 3 correspondences, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate configuration: points are collinear or coincident")]
    Degenerate,
    #[error("point sets differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("non-finite point at index {0}")]
    NonFinitePoint(usize),
    #[error("correspondence set is empty")]
    Empty,
}

/// Singular value decomposition `A = U·diag(σ)·Vᵀ` of a 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Svd3Result {
    pub u: Matrix3<f64>,
    /// Descending and non-negative.
    pub sigma: Vector3<f64>,
    pub v: Matrix3<f64>,
}

impl Svd3Result {
    pub fn reconstruct(&self) -> Matrix3<f64> {
        self.u * Matrix3::from_diagonal(&self.sigma) * self.v.transpose()
    }
}

/// Eigen-decomposition of a symmetric 3×3 matrix by cyclic Jacobi rotations.
/// Returns the (unsorted) eigenvalues and the orthogonal eigenvector matrix.
fn symmetric_eigen(mut a: Matrix3<f64>) -> (Vector3<f64>, Matrix3<f64>) {
    let mut v = Matrix3::identity();
    let scale = a.norm();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off = (2.0 * (a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2))).sqrt();
        if off <= JACOBI_TOLERANCE * scale {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let apq = a[(p, q)];
            if apq == 0.0 {
                continue;
            }
            let tau = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
            let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = t * c;
            let mut j = Matrix3::identity();
            j[(p, p)] = c;
            j[(q, q)] = c;
            j[(p, q)] = s;
            j[(q, p)] = -s;
            a = j.transpose() * a * j;
            // The rotation zeroes (p, q) analytically; pin it to avoid residue.
            a[(p, q)] = 0.0;
            a[(q, p)] = 0.0;
            v *= j;
        }
    }
    (a.diagonal(), v)
}

/// Any unit vector orthogonal to `u`.
fn orthogonal_unit(u: &Vector3<f64>) -> Vector3<f64> {
    let axis = if u.x.abs() <= u.y.abs() && u.x.abs() <= u.z.abs() {
        Vector3::x()
    } else if u.y.abs() <= u.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    u.cross(&axis).normalize()
}

/// Deterministic SVD of a 3×3 matrix.
pub fn svd3(a: &Matrix3<f64>) -> Result<Svd3Result, AlignError> {
    if a.iter().any(|x| !x.is_finite()) {
        return Err(AlignError::NonFiniteInput);
    }
    let (_, mut v) = symmetric_eigen(a.transpose() * a);

    // Order right singular vectors by |A·vᵢ|, which is more accurate than the
    // square root of the eigenvalue for small singular values.
    let mut order = [0usize, 1, 2];
    let norms: [f64; 3] = std::array::from_fn(|i| (a * v.column(i)).norm());
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    v = Matrix3::from_columns(&[v.column(order[0]), v.column(order[1]), v.column(order[2])]);

    let av = a * v;
    let s0 = av.column(0).norm();
    let tiny = f64::MIN_POSITIVE.max(s0 * 1e-300);

    let u0 = if s0 > 0.0 {
        av.column(0) / s0
    } else {
        Vector3::x()
    };
    let w = av.column(1) - u0 * u0.dot(&av.column(1));
    let s1_raw = w.norm();
    let u1 = if s1_raw > tiny && s1_raw > s0 * 1e-15 {
        w / s1_raw
    } else {
        orthogonal_unit(&u0)
    };
    let mut u2 = u0.cross(&u1);
    let mut s2 = u2.dot(&av.column(2));
    if s2 < 0.0 {
        u2 = -u2;
        s2 = -s2;
    }
    let s1 = u1.dot(&av.column(1)).max(0.0);

    let mut u = Matrix3::from_columns(&[u0, u1, u2]);
    let mut sigma = Vector3::new(s0, s1, s2);

    // Near-equal values can come out marginally unsorted; swapping matched
    // column pairs keeps both factors orthogonal.
    for _ in 0..2 {
        for i in 0..2 {
            if sigma[i] < sigma[i + 1] {
                sigma.swap_rows(i, i + 1);
                u.swap_columns(i, i + 1);
                v.swap_columns(i, i + 1);
            }
        }
    }

    Ok(Svd3Result { u, sigma, v })
}

/// Index-aligned point pairs `(pᵢ, qᵢ)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrespondenceSet {
    p: Vec<Point3>,
    q: Vec<Point3>,
}

impl CorrespondenceSet {
    pub fn new(p: Vec<Point3>, q: Vec<Point3>) -> Result<Self, AlignError> {
        if p.len() != q.len() {
            return Err(AlignError::LengthMismatch(p.len(), q.len()));
        }
        if let Some(i) = p
            .iter()
            .zip(&q)
            .position(|(a, b)| a.iter().chain(b.iter()).any(|x| !x.is_finite()))
        {
            return Err(AlignError::NonFinitePoint(i));
        }
        Ok(Self { p, q })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Point3, Point3)>) -> Result<Self, AlignError> {
        let (p, q) = pairs.into_iter().unzip();
        Self::new(p, q)
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn source(&self) -> &[Point3] {
        &self.p
    }

    pub fn target(&self) -> &[Point3] {
        &self.q
    }

    pub fn pair(&self, i: usize) -> (&Point3, &Point3) {
        (&self.p[i], &self.q[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Point3, &Point3)> + '_ {
        self.p.iter().zip(&self.q)
    }

    /// Subset with the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> CorrespondenceSet {
        CorrespondenceSet {
            p: indices.iter().map(|&i| self.p[i]).collect(),
            q: indices.iter().map(|&i| self.q[i]).collect(),
        }
    }
}

fn centroid<'a>(points: impl Iterator<Item = &'a Point3>, n: usize) -> Point3 {
    points.fold(Point3::zeros(), |acc, p| acc + p) / n as f64
}

/// Least-squares proper rigid transform mapping `P` onto `Q`.
pub fn kabsch_align(c: &CorrespondenceSet) -> Result<RigidTransform, AlignError> {
    let n = c.len();
    if n < 3 {
        return Err(AlignError::TooFewPoints(n));
    }
    let p_bar = centroid(c.p.iter(), n);
    let q_bar = centroid(c.q.iter(), n);

    let mut s = Matrix3::zeros();
    for (p, q) in c.iter() {
        s += (p - p_bar) * (q - q_bar).transpose();
    }

    let svd = svd3(&s)?;
    if !(svd.sigma[1] > DEGENERACY_RATIO * svd.sigma[0]) {
        return Err(AlignError::Degenerate);
    }

    let vut = svd.v * svd.u.transpose();
    let mut d = Matrix3::identity();
    d[(2, 2)] = vut.determinant().signum();
    let r = svd.v * d * svd.u.transpose();

    let rotation = RotationMatrix::from_matrix_unchecked(r);
    let translation = q_bar - r * p_bar;
    Ok(RigidTransform {
        rotation,
        translation,
    })
}

/// Root-mean-square of `|R·pᵢ + t − qᵢ|` over the set.
pub fn residual_rmse(t: &RigidTransform, c: &CorrespondenceSet) -> Result<f64, AlignError> {
    if c.is_empty() {
        return Err(AlignError::Empty);
    }
    let sum: f64 = c.iter().map(|(p, q)| (t.apply(p) - q).norm_squared()).sum();
    Ok((sum / c.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{quaternion_to_rotation, rotation_about_axis, Axis};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_points(rng: &mut impl Rng, n: usize) -> Vec<Point3> {
        (0..n)
            .map(|_| Point3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    fn random_rotation(rng: &mut impl Rng) -> RotationMatrix {
        let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        quaternion_to_rotation(q[0], q[1], q[2], q[3]).unwrap()
    }

    #[test]
    fn svd_of_identity() {
        let svd = svd3(&Matrix3::identity()).unwrap();
        assert_eq!(svd.sigma, Vector3::new(1.0, 1.0, 1.0));
        assert_abs_diff_eq!(svd.u * svd.v.transpose(), Matrix3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn svd_of_diagonal() {
        let svd = svd3(&Matrix3::from_diagonal(&Vector3::new(3.0, 2.0, 1.0))).unwrap();
        assert_abs_diff_eq!(svd.sigma, Vector3::new(3.0, 2.0, 1.0), epsilon = 1e-15);
        let svd = svd3(&Matrix3::from_diagonal(&Vector3::new(1.0, -3.0, 2.0))).unwrap();
        assert_abs_diff_eq!(svd.sigma, Vector3::new(3.0, 2.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn svd_rejects_non_finite() {
        let mut m = Matrix3::identity();
        m[(1, 2)] = f64::NAN;
        assert_eq!(svd3(&m), Err(AlignError::NonFiniteInput));
    }

    #[test]
    fn svd_rank_deficient_inputs() {
        for m in [
            Matrix3::zeros(),
            Vector3::new(1.0, 2.0, 3.0) * Vector3::new(-1.0, 0.5, 2.0).transpose(),
            Matrix3::new(1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 1.0, 0.0),
        ] {
            let svd = svd3(&m).unwrap();
            assert!((svd.reconstruct() - m).norm() <= 1e-12 * m.norm().max(1.0));
            assert!((svd.u.transpose() * svd.u - Matrix3::identity()).amax() < 1e-12);
            assert!((svd.v.transpose() * svd.v - Matrix3::identity()).amax() < 1e-12);
        }
    }

    #[test]
    fn svd_random_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let m = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let svd = svd3(&m).unwrap();
            assert!((svd.reconstruct() - m).norm() / m.norm() < 1e-10);
            assert!(svd.sigma[0] >= svd.sigma[1] && svd.sigma[1] >= svd.sigma[2] && svd.sigma[2] >= 0.0);
        }
    }

    #[test]
    fn kabsch_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = random_points(&mut rng, 4);
        let t = kabsch_align(&CorrespondenceSet::new(p.clone(), p).unwrap()).unwrap();
        let (dr, dt) = t.difference(&RigidTransform::identity());
        assert!(dr < 1e-12 && dt < 1e-12);
    }

    #[test]
    fn kabsch_pure_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = random_points(&mut rng, 6);
        let offset = Vector3::new(1.0, 2.0, 3.0);
        let q = p.iter().map(|x| x + offset).collect();
        let t = kabsch_align(&CorrespondenceSet::new(p, q).unwrap()).unwrap();
        let (dr, dt) = t.difference(&RigidTransform::from_translation(offset));
        assert!(dr < 1e-12 && dt < 1e-12);
    }

    #[test]
    fn kabsch_quarter_turn() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let truth = RigidTransform::from_rotation(rotation_about_axis(Axis::Z, std::f64::consts::FRAC_PI_2));
        let p = random_points(&mut rng, 5);
        let q = p.iter().map(|x| truth.apply(x)).collect();
        let t = kabsch_align(&CorrespondenceSet::new(p, q).unwrap()).unwrap();
        let (dr, dt) = t.difference(&truth);
        assert!(dr < 1e-9 && dt < 1e-9);
    }

    #[test]
    fn kabsch_error_paths() {
        let p = vec![Point3::zeros(), Point3::x()];
        assert_eq!(
            kabsch_align(&CorrespondenceSet::new(p.clone(), p).unwrap()),
            Err(AlignError::TooFewPoints(2))
        );
        let line: Vec<Point3> = (0..5).map(|i| Point3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert_eq!(
            kabsch_align(&CorrespondenceSet::new(line.clone(), line).unwrap()),
            Err(AlignError::Degenerate)
        );
        let same = vec![Point3::new(1.0, 1.0, 1.0); 4];
        assert_eq!(
            kabsch_align(&CorrespondenceSet::new(same.clone(), same).unwrap()),
            Err(AlignError::Degenerate)
        );
        assert!(matches!(
            CorrespondenceSet::new(vec![Point3::zeros()], vec![]),
            Err(AlignError::LengthMismatch(1, 0))
        ));
    }

    #[test]
    fn kabsch_mirrored_planar_set_beats_random_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let p: Vec<Point3> = (0..8)
            .map(|_| Point3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0))
            .collect();
        // Mirror through the x = 0 plane, then perturb so the optimum is not exact.
        let q: Vec<Point3> = p
            .iter()
            .map(|x| Point3::new(-x.x, x.y, x.z + rng.gen_range(-0.05..0.05)))
            .collect();
        let c = CorrespondenceSet::new(p, q).unwrap();
        let t = kabsch_align(&c).unwrap();
        assert!((t.rotation.matrix().determinant() - 1.0).abs() < 1e-12);
        let best = residual_rmse(&t, &c).unwrap();

        let p_bar = centroid(c.source().iter(), c.len());
        let q_bar = centroid(c.target().iter(), c.len());
        for _ in 0..100_000 {
            let r = random_rotation(&mut rng);
            let candidate = RigidTransform::new(r, q_bar - r.matrix() * p_bar).unwrap();
            assert!(best <= residual_rmse(&candidate, &c).unwrap() + 1e-12);
        }
    }

    #[test]
    fn residual_examples() {
        let c = CorrespondenceSet::new(vec![Point3::zeros()], vec![Point3::new(0.0, 0.0, 2.0)]).unwrap();
        assert_eq!(residual_rmse(&RigidTransform::identity(), &c).unwrap(), 2.0);
        assert_eq!(
            residual_rmse(&RigidTransform::identity(), &CorrespondenceSet::default()),
            Err(AlignError::Empty)
        );
    }

    #[test]
    fn residual_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let p = random_points(&mut rng, 50);
        let q = random_points(&mut rng, 50);
        let t = RigidTransform::new(random_rotation(&mut rng), Vector3::new(0.1, -0.2, 0.3)).unwrap();
        let c = CorrespondenceSet::new(p.clone(), q.clone()).unwrap();
        let mut sum = 0.0;
        for i in 0..50 {
            let r = t.rotation.matrix();
            for k in 0..3 {
                let mapped = r[(k, 0)] * p[i].x + r[(k, 1)] * p[i].y + r[(k, 2)] * p[i].z + t.translation[k];
                sum += (mapped - q[i][k]).powi(2);
            }
        }
        assert!((residual_rmse(&t, &c).unwrap() - (sum / 50.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn noisy_translation_recovery_scales_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let sigma = 0.01;
        let n = 100;
        let mut good = 0;
        for _ in 0..1000 {
            let truth = RigidTransform::new(random_rotation(&mut rng), Vector3::new(0.5, -0.3, 1.0)).unwrap();
            let p = random_points(&mut rng, n);
            let q = p
                .iter()
                .map(|x| {
                    let noise = Vector3::from_fn(|_, _| sigma * { let z: f64 = StandardNormal.sample(&mut rng); z });
                    truth.apply(x) + noise
                })
                .collect();
            let t = kabsch_align(&CorrespondenceSet::new(p, q).unwrap()).unwrap();
            let err = (t.translation - truth.translation).norm();
            if err < 5.0 * sigma / (n as f64).sqrt() {
                good += 1;
            }
        }
        assert!(good >= 990, "{good} / 1000");
    }

    proptest! {
        #[test]
        fn rotation_is_translation_invariant(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_points(&mut rng, 20);
            let q = random_points(&mut rng, 20);
            let a = Vector3::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
            let b = Vector3::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
            let base = kabsch_align(&CorrespondenceSet::new(p.clone(), q.clone()).unwrap()).unwrap();
            let shifted = kabsch_align(&CorrespondenceSet::new(
                p.iter().map(|x| x + a).collect(),
                q.iter().map(|x| x + b).collect(),
            ).unwrap()).unwrap();
            prop_assert!((base.rotation.matrix() - shifted.rotation.matrix()).amax() < 1e-10);
            prop_assert!((base.rotation.matrix().determinant() - 1.0).abs() < 1e-10);
        }

        #[test]
        fn perturbations_never_improve_the_fit(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth = RigidTransform::new(random_rotation(&mut rng), Vector3::new(0.2, 0.1, -0.4)).unwrap();
            let p = random_points(&mut rng, 30);
            let q = p.iter().map(|x| truth.apply(x) + Vector3::from_fn(|_, _| rng.gen_range(-0.05..0.05))).collect();
            let c = CorrespondenceSet::new(p, q).unwrap();
            let t = kabsch_align(&c).unwrap();
            let best = residual_rmse(&t, &c).unwrap();
            for _ in 0..1000 {
                let axis = [Axis::X, Axis::Y, Axis::Z][rng.gen_range(0..3)];
                let dr = rotation_about_axis(axis, rng.gen_range(-1e-3..1e-3));
                let dt = Vector3::from_fn(|_, _| rng.gen_range(-1e-3..1e-3));
                let perturbed = RigidTransform::new(dr, dt).unwrap().compose(&t);
                prop_assert!(residual_rmse(&perturbed, &c).unwrap() >= best - 1e-12);
            }
        }
    }
}
