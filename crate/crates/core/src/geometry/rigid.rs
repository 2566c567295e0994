//! Least-squares rigid registration of 3D correspondences (Kabsch).

use super::{svd3, Mat3, Pose, Vec3};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidFit<T> {
    /// Maps `src` points onto `dst` points.
    pub pose: Pose<T>,
    /// Mean of `‖R·src + t − dst‖²` at the optimum.
    pub mean_squared_residual: T,
}

/// Closed-form SE(3) fit minimising the mean squared distance between
/// `R·src + t` and `dst`. Scale is fixed to one.
pub fn estimate_rigid_transform<T: Real>(src: &[Vec3<T>], dst: &[Vec3<T>]) -> Result<RigidFit<T>> {
    if src.len() != dst.len() {
        return Err(Error::Dimension(format!("{} source vs {} target points", src.len(), dst.len())));
    }
    if src.len() < 3 {
        return Err(Error::Degenerate(format!("need at least 3 correspondences, got {}", src.len())));
    }
    let n = T::from_usize(src.len()).unwrap();
    let mean = |pts: &[Vec3<T>]| pts.iter().fold(Vec3::zero(), |acc, &p| acc + p) / n;
    let (cs, cd) = (mean(src), mean(dst));

    let mut h = Mat3::zeros();
    for (&s, &d) in src.iter().zip(dst) {
        let (a, b) = (s - cs, d - cd);
        let (a, b) = (a.to_array(), b.to_array());
        for i in 0..3 {
            for j in 0..3 {
                h.m[i][j] = h.m[i][j] + a[i] * b[j];
            }
        }
    }

    let spread_src = src.iter().fold(T::zero(), |acc, &p| acc + (p - cs).norm_squared());
    let spread_dst = dst.iter().fold(T::zero(), |acc, &p| acc + (p - cd).norm_squared());
    let rank_tol = T::lit(1e-10);
    let (_, s_src, _) = svd3(&scatter(src, cs));
    let (_, s_dst, _) = svd3(&scatter(dst, cd));
    if spread_src <= T::zero()
        || spread_dst <= T::zero()
        || s_src[1] <= rank_tol * s_src[0]
        || s_dst[1] <= rank_tol * s_dst[0]
    {
        return Err(Error::Degenerate("correspondences are collinear or coincident (rank < 2)".into()));
    }

    let (u, _, v) = svd3(&h);
    let mut d = Mat3::identity();
    if v.mul_mat(&u.transpose()).det() < T::zero() {
        d.m[2][2] = -T::one();
    }
    let rotation = v.mul_mat(&d).mul_mat(&u.transpose());
    let translation = cd - rotation.mul_vec(cs);
    let pose = Pose { rotation, translation };

    let sse = src
        .iter()
        .zip(dst)
        .fold(T::zero(), |acc, (&s, &d)| acc + (pose.apply(s) - d).norm_squared());
    Ok(RigidFit { pose, mean_squared_residual: sse / n })
}

fn scatter<T: Real>(pts: &[Vec3<T>], c: Vec3<T>) -> Mat3<T> {
    let mut m = Mat3::zeros();
    for &p in pts {
        let a = (p - c).to_array();
        for i in 0..3 {
            for j in 0..3 {
                m.m[i][j] = m.m[i][j] + a[i] * a[j];
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3<f64>> {
        (0..n)
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn identical_clouds_give_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let src = cloud(&mut rng, 20);
        let fit = estimate_rigid_transform(&src, &src).unwrap();
        assert!(fit.pose.max_abs_diff(&Pose::identity()) < 1e-12);
        assert!(fit.mean_squared_residual < 1e-20);
    }

    #[test]
    fn recovers_known_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth = Pose::new(Mat3::rot_z(30f64.to_radians()), Vec3::new(1.0, 2.0, 3.0));
        let src = cloud(&mut rng, 50);
        let dst: Vec<_> = src.iter().map(|&p| truth.apply(p)).collect();
        let fit = estimate_rigid_transform(&src, &dst).unwrap();
        assert!(fit.pose.max_abs_diff(&truth) < 1e-9);
        assert!(fit.mean_squared_residual < 1e-18);
    }

    #[test]
    fn planar_cloud_is_not_reflected() {
        let truth = Pose::new(Mat3::rot_x(0.7).mul_mat(&Mat3::rot_z(-1.1)), Vec3::new(0.1, 0.0, -0.4));
        let src: Vec<Vec3<f64>> = (0..12)
            .map(|i| Vec3::new((i % 4) as f64, (i / 4) as f64 * 0.5, 0.0))
            .collect();
        let dst: Vec<_> = src.iter().map(|&p| truth.apply(p)).collect();
        let fit = estimate_rigid_transform(&src, &dst).unwrap();
        assert!(fit.pose.max_abs_diff(&truth) < 1e-9);
        assert!((fit.pose.rotation.det() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noisy_fits_stay_close_over_seeded_trials() {
        let truth = Pose::new(Mat3::rot_z(30f64.to_radians()), Vec3::new(1.0, 2.0, 3.0));
        let noise = Normal::new(0.0, 0.01).unwrap();
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let src = cloud(&mut rng, 100);
            let dst: Vec<_> = src
                .iter()
                .map(|&p| {
                    truth.apply(p)
                        + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
                })
                .collect();
            let fit = estimate_rigid_transform(&src, &dst).unwrap();
            let rot_err = fit.pose.rotation.mul_mat(&truth.rotation.transpose()).rotation_angle();
            let t_err = (fit.pose.translation - truth.translation).norm();
            assert!(rot_err.to_degrees() < 1.0, "seed {seed}: rotation error {rot_err}");
            assert!(t_err < 0.02, "seed {seed}: translation error {t_err}");
        }
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let two = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)];
        assert!(matches!(estimate_rigid_transform(&two, &two), Err(Error::Degenerate(_))));
        let line: Vec<Vec3<f64>> = (0..5).map(|i| Vec3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(estimate_rigid_transform(&line, &line), Err(Error::Degenerate(_))));
        let same = vec![Vec3::new(1.0, 1.0, 1.0); 4];
        assert!(matches!(estimate_rigid_transform(&same, &same), Err(Error::Degenerate(_))));
        assert!(matches!(estimate_rigid_transform(&line, &line[..4]), Err(Error::Dimension(_))));
    }

    #[test]
    fn works_in_single_precision() {
        let truth = Pose::new(Mat3::rot_y(0.3f32), Vec3::new(0.5, -0.2, 0.1));
        let src: Vec<Vec3<f32>> = (0..30)
            .map(|i| {
                let t = i as f32 * 0.37;
                Vec3::new(t.sin(), (2.0 * t).cos(), (0.5 * t).sin() * 0.7)
            })
            .collect();
        let dst: Vec<_> = src.iter().map(|&p| truth.apply(p)).collect();
        let fit = estimate_rigid_transform(&src, &dst).unwrap();
        assert!(fit.pose.max_abs_diff(&truth) < 1e-4);
    }
}
