//! Constant-velocity target estimation and forward prediction.

use nalgebra::{Matrix3, Matrix6, SMatrix, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

type V3 = Vector3<f64>;

#[derive(Debug, Error, PartialEq)]
pub enum PredictionError {
    #[error("covariance is not symmetric positive semi-definite")]
    BadCovariance,
    #[error("measurement stamp {measurement} precedes estimate stamp {estimate}")]
    StaleMeasurement { measurement: f64, estimate: f64 },
    #[error("invalid measurement noise {0}")]
    BadNoise(f64),
    #[error("horizon {horizon} is not a positive multiple of step {step}")]
    BadHorizon { step: f64, horizon: f64 },
    #[error("innovation covariance is singular")]
    Singular,
}

/// Filter tuning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// White-acceleration spectral density (m²/s³).
    pub accel_noise: f64,
    pub init_pos_var: f64,
    pub init_vel_var: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            accel_noise: 0.5,
            init_pos_var: 1.0,
            init_vel_var: 4.0,
        }
    }
}

/// One position fix of the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub position: V3,
    pub sigma: f64,
    pub stamp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetEstimate {
    pub position: V3,
    pub velocity: V3,
    /// Covariance over `(position, velocity)`.
    pub covariance: Matrix6<f64>,
    pub stamp: f64,
}

impl TargetEstimate {
    pub fn new(position: V3, velocity: V3, stamp: f64, cfg: &FilterConfig) -> Self {
        let mut covariance = Matrix6::zeros();
        for i in 0..3 {
            covariance[(i, i)] = cfg.init_pos_var;
            covariance[(i + 3, i + 3)] = cfg.init_vel_var;
        }
        Self {
            position,
            velocity,
            covariance,
            stamp,
        }
    }

    fn check_covariance(&self) -> Result<(), PredictionError> {
        let p = &self.covariance;
        let scale = p.amax().max(1.0);
        if !p.iter().all(|x| x.is_finite()) || (p - p.transpose()).amax() > 1e-9 * scale {
            return Err(PredictionError::BadCovariance);
        }
        let sym = (p + p.transpose()) * 0.5;
        if sym.symmetric_eigenvalues().min() < -1e-9 * scale {
            return Err(PredictionError::BadCovariance);
        }
        Ok(())
    }

    /// Propagates the estimate to `stamp` under the constant-velocity model.
    pub fn propagated(&self, stamp: f64, accel_noise: f64) -> Self {
        let dt = stamp - self.stamp;
        if dt == 0.0 {
            return self.clone();
        }
        let mut f = Matrix6::identity();
        f.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(Matrix3::identity() * dt));
        let mut q = Matrix6::zeros();
        let i3 = Matrix3::identity() * accel_noise;
        q.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(i3 * (dt.powi(3) / 3.0)));
        q.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(i3 * (dt * dt / 2.0)));
        q.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(i3 * (dt * dt / 2.0)));
        q.fixed_view_mut::<3, 3>(3, 3).copy_from(&(i3 * dt));
        let p = f * self.covariance * f.transpose() + q;
        Self {
            position: self.position + self.velocity * dt,
            velocity: self.velocity,
            covariance: (p + p.transpose()) * 0.5,
            stamp,
        }
    }
}

/// Predict-then-update for each measurement in stamp order.
pub fn fuse(
    estimate: &TargetEstimate,
    measurements: &[Measurement],
    cfg: &FilterConfig,
) -> Result<TargetEstimate, PredictionError> {
    estimate.check_covariance()?;
    let mut sorted: Vec<&Measurement> = measurements.iter().collect();
    sorted.sort_by(|a, b| a.stamp.total_cmp(&b.stamp));
    let mut est = estimate.clone();
    for m in sorted {
        if m.stamp < est.stamp {
            return Err(PredictionError::StaleMeasurement {
                measurement: m.stamp,
                estimate: est.stamp,
            });
        }
        if !(m.sigma >= 0.0 && m.sigma.is_finite()) {
            return Err(PredictionError::BadNoise(m.sigma));
        }
        est = est.propagated(m.stamp, cfg.accel_noise);
        let p = est.covariance;
        let s = p.fixed_view::<3, 3>(0, 0) + Matrix3::identity() * (m.sigma * m.sigma);
        let s_inv = s.try_inverse().ok_or(PredictionError::Singular)?;
        // gain K = P Hᵀ S⁻¹ with H selecting the position block
        let k: SMatrix<f64, 6, 3> = p.fixed_view::<6, 3>(0, 0) * s_inv;
        let x = Vector6::from_iterator(est.position.iter().chain(est.velocity.iter()).copied());
        let x = x + k * (m.position - est.position);
        let mut ikh = Matrix6::identity();
        ikh.fixed_view_mut::<6, 3>(0, 0)
            .copy_from(&(SMatrix::<f64, 6, 3>::identity() - k));
        // Joseph form keeps the covariance symmetric and PSD
        let mut r = Matrix6::zeros();
        r.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(Matrix3::identity() * (m.sigma * m.sigma)));
        let kr = SMatrix::<f64, 6, 6>::from_fn(|i, j| if j < 3 { k[(i, j)] } else { 0.0 });
        let p = ikh * p * ikh.transpose() + kr * r * kr.transpose();
        est.position = x.fixed_rows::<3>(0).into_owned();
        est.velocity = x.fixed_rows::<3>(3).into_owned();
        est.covariance = (p + p.transpose()) * 0.5;
    }
    Ok(est)
}

/// Target positions at `t_k = k δT`, `k = 0..=N_p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetPrediction {
    pub points: Vec<V3>,
    pub step: f64,
    pub horizon: f64,
    /// Absolute time of `t_0`.
    pub start: f64,
    pub velocity: V3,
}

impl TargetPrediction {
    pub fn n_steps(&self) -> usize {
        self.points.len() - 1
    }

    /// Relative stamp of point `k`.
    pub fn stamp(&self, k: usize) -> f64 {
        k as f64 * self.step
    }
}

pub fn predict(
    estimate: &TargetEstimate,
    step: f64,
    horizon: f64,
) -> Result<TargetPrediction, PredictionError> {
    let n = (horizon / step).round();
    if !(step > 0.0) || n < 1.0 || (n * step - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(PredictionError::BadHorizon { step, horizon });
    }
    let points = (0..=n as usize)
        .map(|k| estimate.position + estimate.velocity * (k as f64 * step))
        .collect();
    Ok(TargetPrediction {
        points,
        step,
        horizon,
        start: estimate.stamp,
        velocity: estimate.velocity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn est() -> TargetEstimate {
        TargetEstimate::new(
            V3::new(1.0, 2.0, 0.5),
            V3::new(0.3, 0.0, 0.0),
            0.0,
            &FilterConfig::default(),
        )
    }

    #[test]
    fn exact_measurement_keeps_position_and_shrinks() {
        let e = est();
        let cfg = FilterConfig::default();
        let at = e.propagated(0.5, cfg.accel_noise);
        let m = Measurement {
            position: at.position,
            sigma: 0.0,
            stamp: 0.5,
        };
        let out = fuse(&e, &[m], &cfg).unwrap();
        assert!((out.position - at.position).norm() < 1e-12);
        assert!(out.covariance.trace() < at.covariance.trace());
    }

    #[test]
    fn two_sources_tighter_than_one() {
        let e = est();
        let cfg = FilterConfig::default();
        let m = Measurement {
            position: V3::new(1.1, 2.0, 0.5),
            sigma: 0.1,
            stamp: 0.1,
        };
        let one = fuse(&e, &[m], &cfg).unwrap();
        let two = fuse(&e, &[m, m], &cfg).unwrap();
        assert!(
            two.covariance.fixed_view::<3, 3>(0, 0).trace()
                < one.covariance.fixed_view::<3, 3>(0, 0).trace()
        );
    }

    #[test]
    fn static_target_converges() {
        let cfg = FilterConfig::default();
        let truth = V3::new(-3.0, 4.0, 1.0);
        let mut e = TargetEstimate::new(V3::zeros(), V3::zeros(), 0.0, &cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let ms: Vec<_> = (1..=100)
            .map(|k| Measurement {
                position: truth + V3::from_fn(|_, _| noise.sample(&mut rng)),
                sigma: 0.1,
                stamp: k as f64 * 0.05,
            })
            .collect();
        e = fuse(&e, &ms, &cfg).unwrap();
        assert!(
            (e.position - truth).norm() <= 0.05,
            "{}",
            (e.position - truth).norm()
        );
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = FilterConfig::default();
        let mut e = est();
        e.stamp = 1.0;
        let m = Measurement {
            position: V3::zeros(),
            sigma: 0.1,
            stamp: 0.5,
        };
        assert!(matches!(
            fuse(&e, &[m], &cfg),
            Err(PredictionError::StaleMeasurement { .. })
        ));
        let mut bad = est();
        bad.covariance[(0, 0)] = -1.0;
        assert_eq!(fuse(&bad, &[], &cfg), Err(PredictionError::BadCovariance));
        assert!(predict(&est(), 0.3, 1.0).is_err());
        assert!(predict(&est(), 0.0, 1.8).is_err());
    }

    #[test]
    fn prediction_examples() {
        let cfg = FilterConfig::default();
        let still = TargetEstimate::new(V3::new(1.0, 1.0, 1.0), V3::zeros(), 2.0, &cfg);
        let p = predict(&still, 0.3, 1.8).unwrap();
        assert!(p.points.iter().all(|x| *x == still.position));
        let moving = TargetEstimate::new(V3::zeros(), V3::new(1.0, 0.0, 0.0), 0.0, &cfg);
        let p = predict(&moving, 0.3, 1.8).unwrap();
        assert_eq!(p.points.len(), 7);
        assert_eq!(p.n_steps(), 6);
        for (k, x) in p.points.iter().enumerate() {
            assert!((x.x - 0.3 * k as f64).abs() < 1e-12 && x.y == 0.0);
        }
        assert_eq!(p.points[0], moving.position);
    }

    proptest! {
        #[test]
        fn predict_translates(sx in -5.0..5.0f64, sy in -5.0..5.0f64, vx in -2.0..2.0f64) {
            let cfg = FilterConfig::default();
            let a = TargetEstimate::new(V3::new(0.5, 0.0, 1.0), V3::new(vx, 0.2, 0.0), 0.0, &cfg);
            let mut b = a.clone();
            let s = V3::new(sx, sy, 0.0);
            b.position += s;
            let (pa, pb) = (predict(&a, 0.3, 1.8).unwrap(), predict(&b, 0.3, 1.8).unwrap());
            for (x, y) in pa.points.iter().zip(&pb.points) {
                prop_assert!((y - x - s).norm() < 1e-12);
            }
        }

        #[test]
        fn same_stamp_order_independent(x1 in -1.0..1.0f64, x2 in -1.0..1.0f64, s1 in 0.01..0.5f64, s2 in 0.01..0.5f64) {
            let cfg = FilterConfig::default();
            let m1 = Measurement { position: V3::new(x1, 2.0, 0.5), sigma: s1, stamp: 0.2 };
            let m2 = Measurement { position: V3::new(x2, 2.1, 0.4), sigma: s2, stamp: 0.2 };
            let a = fuse(&est(), &[m1, m2], &cfg).unwrap();
            let b = fuse(&est(), &[m2, m1], &cfg).unwrap();
            prop_assert!((a.position - b.position).norm() < 1e-9);
            prop_assert!((a.velocity - b.velocity).norm() < 1e-9);
            prop_assert!((a.covariance - b.covariance).amax() < 1e-9);
        }
    }
}
