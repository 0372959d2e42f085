//! Constant-velocity Kalman filter over `(cx, cy, aspect, height)`.
//!
//! Process and measurement noise scale with the box height, the usual
//! choice for pedestrian trackers of the SORT family.

use nalgebra::{SMatrix, SVector};

use crate::model::BoundingBox;

pub type StateVector = SVector<f64, 8>;
pub type StateCovariance = SMatrix<f64, 8, 8>;
type Measurement = SVector<f64, 4>;

const STD_WEIGHT_POSITION: f64 = 1.0 / 20.0;
const STD_WEIGHT_VELOCITY: f64 = 1.0 / 160.0;

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanTrackState {
    pub mean: StateVector,
    pub covariance: StateCovariance,
}

/// `(cx, cy, w/h, h)` measurement of a box.
pub fn box_to_xyah(b: &BoundingBox) -> [f64; 4] {
    let (cx, cy) = b.center();
    let h = b.height().max(1e-6);
    [cx, cy, b.width() / h, h]
}

pub fn xyah_to_box(m: &[f64]) -> BoundingBox {
    let h = m[3].max(1e-6);
    let w = (m[2] * h).max(0.0);
    BoundingBox { x_min: m[0] - w / 2.0, y_min: m[1] - h / 2.0, x_max: m[0] + w / 2.0, y_max: m[1] + h / 2.0 }
}

fn transition() -> StateCovariance {
    let mut f = StateCovariance::identity();
    for i in 0..4 {
        f[(i, i + 4)] = 1.0;
    }
    f
}

fn observation() -> SMatrix<f64, 4, 8> {
    let mut h = SMatrix::<f64, 4, 8>::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

impl KalmanTrackState {
    /// Starts a track at `b` with zero velocity.
    pub fn initiate(b: &BoundingBox) -> Self {
        let z = box_to_xyah(b);
        let mut mean = StateVector::zeros();
        for i in 0..4 {
            mean[i] = z[i];
        }
        let h = z[3];
        let std = [
            2.0 * STD_WEIGHT_POSITION * h,
            2.0 * STD_WEIGHT_POSITION * h,
            1e-2,
            2.0 * STD_WEIGHT_POSITION * h,
            10.0 * STD_WEIGHT_VELOCITY * h,
            10.0 * STD_WEIGHT_VELOCITY * h,
            1e-5,
            10.0 * STD_WEIGHT_VELOCITY * h,
        ];
        let covariance = StateCovariance::from_diagonal(&StateVector::from_iterator(std.iter().map(|s| s * s)));
        Self { mean, covariance }
    }

    pub fn height(&self) -> f64 {
        self.mean[3]
    }

    pub fn to_box(&self) -> BoundingBox {
        xyah_to_box(&self.mean.as_slice()[..4])
    }

    fn process_noise(&self) -> StateCovariance {
        let h = self.height().abs().max(1.0);
        let std = [
            STD_WEIGHT_POSITION * h,
            STD_WEIGHT_POSITION * h,
            1e-2,
            STD_WEIGHT_POSITION * h,
            STD_WEIGHT_VELOCITY * h,
            STD_WEIGHT_VELOCITY * h,
            1e-5,
            STD_WEIGHT_VELOCITY * h,
        ];
        StateCovariance::from_diagonal(&StateVector::from_iterator(std.iter().map(|s| s * s)))
    }

    /// Advances one frame under the constant-velocity model.
    pub fn predict(&self) -> Self {
        let f = transition();
        let mut mean = f * self.mean;
        // height must stay positive even if the filter extrapolates a shrink
        mean[3] = mean[3].max(1e-3);
        let covariance = symmetrize(&(f * self.covariance * f.transpose() + self.process_noise()));
        Self { mean, covariance }
    }

    /// Corrects the state with an observed box (Joseph-form covariance).
    pub fn update(&self, b: &BoundingBox) -> Self {
        let z = box_to_xyah(b);
        let z = Measurement::from_row_slice(&z);
        let hm = observation();
        let h = self.height().abs().max(1.0);
        let r_std = [STD_WEIGHT_POSITION * h, STD_WEIGHT_POSITION * h, 1e-1, STD_WEIGHT_POSITION * h];
        let r = SMatrix::<f64, 4, 4>::from_diagonal(&SVector::<f64, 4>::from_iterator(r_std.iter().map(|s| s * s)));

        let s = hm * self.covariance * hm.transpose() + r;
        let Some(s_inv) = s.try_inverse() else {
            return self.clone();
        };
        let k = self.covariance * hm.transpose() * s_inv;
        let mut mean = self.mean + k * (z - hm * self.mean);
        mean[3] = mean[3].max(1e-3);
        let i_kh = StateCovariance::identity() - k * hm;
        let covariance = symmetrize(&(i_kh * self.covariance * i_kh.transpose() + k * r * k.transpose()));
        Self { mean, covariance }
    }
}

fn symmetrize(m: &StateCovariance) -> StateCovariance {
    (m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state(cx: f64, vx: f64) -> KalmanTrackState {
        let mut s = KalmanTrackState::initiate(&BoundingBox::new(cx - 20.0, 0.0, cx + 20.0, 100.0).unwrap());
        s.mean[4] = vx;
        s
    }

    #[test]
    fn zero_velocity_keeps_position() {
        let s = state(100.0, 0.0);
        let p = s.predict();
        assert_eq!(&p.mean.as_slice()[..4], &s.mean.as_slice()[..4]);
    }

    #[test]
    fn constant_velocity_advances() {
        let p = state(100.0, 2.0).predict();
        assert!((p.mean[0] - 102.0).abs() < 1e-12);
    }

    #[test]
    fn box_roundtrip() {
        let b = BoundingBox::new(10.0, 20.0, 50.0, 120.0).unwrap();
        let back = xyah_to_box(&box_to_xyah(&b));
        assert!((back.x_min - 10.0).abs() < 1e-9 && (back.y_max - 120.0).abs() < 1e-9);
    }

    fn min_eigen(c: &StateCovariance) -> f64 {
        c.symmetric_eigen().eigenvalues.min()
    }

    #[test]
    fn covariance_stays_psd_over_random_cycles() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut s = state(500.0, 1.0);
        for i in 0..10_000 {
            s = s.predict();
            if rng.random_bool(0.8) {
                let (cx, cy) = (rng.random_range(0.0..1920.0), rng.random_range(0.0..1080.0));
                let h = rng.random_range(40.0..300.0);
                let w = h * rng.random_range(0.3..0.6);
                s = s.update(&BoundingBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0).unwrap());
            }
            let c = &s.covariance;
            assert!((c - c.transpose()).amax() < 1e-9, "asymmetric at cycle {i}");
            assert!(min_eigen(c) >= -1e-6, "not PSD at cycle {i}");
        }
    }

    // Covariances produced by the filter itself, starting from a fresh track.
    fn reachable_state() -> impl Strategy<Value = KalmanTrackState> {
        (50.0..1500.0f64, 40.0..400.0f64, proptest::collection::vec((any::<bool>(), -30.0..30.0f64, -30.0..30.0f64, 0.8..1.25f64), 0..40))
            .prop_map(|(cx, h, steps)| {
                let mut s = KalmanTrackState::initiate(&BoundingBox::new(cx, 100.0, cx + 0.4 * h, 100.0 + h).unwrap());
                for (observe, dx, dy, scale) in steps {
                    s = s.predict();
                    if observe {
                        let b = s.to_box();
                        let hh = b.height() * scale;
                        let (x, y) = (b.x_min + dx, b.y_min + dy);
                        s = s.update(&BoundingBox::new(x, y, x + b.width(), y + hh).unwrap());
                    }
                }
                s
            })
    }

    proptest! {
        #[test]
        fn prediction_inflates_trace(s in reachable_state()) {
            let before = s.covariance.trace();
            let after = s.predict().covariance.trace();
            prop_assert!(after > before);
        }
    }
}
