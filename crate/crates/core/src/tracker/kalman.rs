//! Planar Kalman filter over [x, y, vx, vy, ax, ay] with an identity
//! measurement model.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

pub type Vec6 = SVector<f64, 6>;
pub type Mat6 = SMatrix<f64, 6, 6>;

/// Added to a singular innovation covariance before inversion.
pub const REGULARIZATION: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionModel {
    #[default]
    ConstantAcceleration,
    ConstantVelocity,
}

impl MotionModel {
    pub fn transition(self, dt: f64) -> Mat6 {
        let mut a = Mat6::identity();
        for i in 0..2 {
            a[(i, i + 2)] = dt;
            match self {
                MotionModel::ConstantAcceleration => {
                    a[(i, i + 4)] = 0.5 * dt * dt;
                    a[(i + 2, i + 4)] = dt;
                }
                MotionModel::ConstantVelocity => a[(i + 4, i + 4)] = 0.0,
            }
        }
        a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanState {
    pub x: Vec6,
    pub p: Mat6,
}

impl KalmanState {
    pub fn new(x: Vec6, p: Mat6) -> Self {
        KalmanState { x, p }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x[0], self.x[1]]
    }

    pub fn velocity(&self) -> [f64; 2] {
        [self.x[2], self.x[3]]
    }

    pub fn acceleration(&self) -> [f64; 2] {
        [self.x[4], self.x[5]]
    }
}

pub fn kf_predict(state: &KalmanState, a: &Mat6, q: &Mat6) -> KalmanState {
    let p = a * state.p * a.transpose() + q;
    KalmanState {
        x: a * state.x,
        p: (p + p.transpose()) * 0.5,
    }
}

pub fn kf_update(state: &KalmanState, z: &Vec6, r: &Mat6) -> KalmanState {
    let s = state.p + r;
    let s_inv = s
        .try_inverse()
        .or_else(|| (s + Mat6::identity() * REGULARIZATION).try_inverse())
        .unwrap_or_else(Mat6::zeros);
    let k = state.p * s_inv;
    let p = (Mat6::identity() - k) * state.p;
    KalmanState {
        x: state.x + k * (z - state.x),
        p: (p + p.transpose()) * 0.5,
    }
}

pub fn min_eigenvalue(p: &Mat6) -> f64 {
    let sym = (p + p.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state(x: [f64; 6]) -> KalmanState {
        KalmanState::new(Vec6::from(x), Mat6::identity())
    }

    #[test]
    fn predict_examples() {
        let q = Mat6::zeros();
        let a = MotionModel::ConstantAcceleration.transition(0.1);
        let still = kf_predict(&state([1.0, 2.0, 0.0, 0.0, 0.0, 0.0]), &a, &q);
        assert_eq!(still.position(), [1.0, 2.0]);
        let cv = kf_predict(&state([0.0, 0.0, 1.0, 0.0, 0.0, 0.0]), &a, &q);
        assert!((cv.x[0] - 0.1).abs() < 1e-15);
        let ca = kf_predict(&state([0.0, 0.0, 1.0, 0.0, 2.0, 0.0]), &a, &q);
        assert!((ca.x[0] - 0.11).abs() < 1e-15);
        assert!((ca.x[2] - 1.2).abs() < 1e-15);
    }

    #[test]
    fn constant_velocity_drops_acceleration() {
        let a = MotionModel::ConstantVelocity.transition(0.1);
        let s = kf_predict(&state([0.0, 0.0, 1.0, 0.0, 2.0, 0.0]), &a, &Mat6::zeros());
        assert!((s.x[0] - 0.1).abs() < 1e-15);
        assert_eq!(s.acceleration(), [0.0, 0.0]);
    }

    #[test]
    fn update_examples() {
        let x = state([1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let z = Vec6::from([3.0, 0.0, 1.0, 0.0, 1.0, 2.0]);
        let half = kf_update(&x, &z, &Mat6::identity());
        assert!((half.x - (x.x + z) / 2.0).norm() < 1e-12);
        assert!((half.p - Mat6::identity() * 0.5).norm() < 1e-12);

        let same = kf_update(&x, &x.x, &Mat6::identity());
        assert!((same.x - x.x).norm() < 1e-15);

        let exact = kf_update(&x, &z, &(Mat6::identity() * 1e-12));
        assert!((exact.x - z).norm() < 1e-9);
    }

    #[test]
    fn singular_innovation_is_regularized() {
        let s = KalmanState::new(Vec6::zeros(), Mat6::zeros());
        let out = kf_update(&s, &Vec6::repeat(1.0), &Mat6::zeros());
        assert!(out.x.iter().all(|v| v.is_finite()));
    }

    proptest! {
        #[test]
        fn covariance_stays_psd(
            diag in prop::collection::vec(0.01f64..2.0, 6),
            dts in prop::collection::vec(0.01f64..0.5, 1..30),
            zs in prop::collection::vec(-5.0f64..5.0, 6),
        ) {
            let q = Mat6::from_diagonal(&Vec6::from([0.01, 0.01, 0.05, 0.05, 0.1, 0.1]));
            let r = Mat6::from_diagonal(&Vec6::from_iterator(diag));
            let z = Vec6::from_iterator(zs);
            let mut s = KalmanState::new(Vec6::zeros(), Mat6::identity());
            for dt in dts {
                s = kf_predict(&s, &MotionModel::ConstantAcceleration.transition(dt), &q);
                s = kf_update(&s, &z, &r);
                prop_assert_eq!(s.p, s.p.transpose());
                prop_assert!(min_eigenvalue(&s.p) >= -1e-9);
            }
        }
    }
}
