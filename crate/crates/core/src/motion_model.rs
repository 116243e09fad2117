//! Constant-velocity Kalman filter over `(cx, cy, a, h)` with velocities.
//!
//! Noise stds scale with the box height: 1/20 for position terms, 1/160 for
//! velocity terms. The aspect ratio uses fixed small stds.

use nalgebra::{SMatrix, SVector};

use crate::error::{invalid, Result};
use crate::mot_io::{BoundingBox, BoxOffset};

pub type Vec8 = SVector<f64, 8>;
pub type Mat8 = SMatrix<f64, 8, 8>;
type Mat4 = SMatrix<f64, 4, 4>;
type Mat48 = SMatrix<f64, 4, 8>;

pub const STD_WEIGHT_POSITION: f64 = 1.0 / 20.0;
pub const STD_WEIGHT_VELOCITY: f64 = 1.0 / 160.0;
const ASPECT_STD: f64 = 1e-2;
const ASPECT_VEL_STD: f64 = 1e-5;
const MEASURE_ASPECT_STD: f64 = 1e-1;

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: Vec8,
    pub covariance: Mat8,
    /// Box the latest offset is measured from: the last update, or the last
    /// prediction when no update followed it.
    pub last_box: BoundingBox,
}

impl KalmanState {
    pub fn mean_box(&self) -> BoundingBox {
        BoundingBox::from_xyah([self.mean[0], self.mean[1], self.mean[2], self.mean[3]])
    }

    pub fn height(&self) -> f64 {
        self.mean[3]
    }
}

fn symmetrize(p: &mut Mat8) {
    *p = (*p + p.transpose()) * 0.5;
}

fn diag8(stds: [f64; 8]) -> Mat8 {
    Mat8::from_diagonal(&Vec8::from_iterator(stds.iter().map(|s| s * s)))
}

fn measurement_matrix() -> Mat48 {
    Mat48::from_fn(|r, c| if r == c { 1.0 } else { 0.0 })
}

pub fn kf_init(bbox: &BoundingBox) -> KalmanState {
    let [cx, cy, a, h] = bbox.to_xyah();
    let mean = Vec8::from_column_slice(&[cx, cy, a, h, 0.0, 0.0, 0.0, 0.0]);
    let p = 2.0 * STD_WEIGHT_POSITION * h;
    let v = 10.0 * STD_WEIGHT_VELOCITY * h;
    let covariance = diag8([p, p, ASPECT_STD, p, v, v, ASPECT_VEL_STD, v]);
    KalmanState { mean, covariance, last_box: *bbox }
}

fn transition() -> Mat8 {
    let mut f = Mat8::identity();
    for i in 0..4 {
        f[(i, i + 4)] = 1.0;
    }
    f
}

/// One constant-velocity step. Returns the new state, the predicted box and
/// its offset from the previous `last_box`. The new state's `last_box` is
/// the predicted box, so consecutive unmatched predictions chain.
pub fn kf_predict(state: &KalmanState) -> (KalmanState, BoundingBox, BoxOffset) {
    let h = state.height().abs().max(1e-6);
    let p = STD_WEIGHT_POSITION * h;
    let v = STD_WEIGHT_VELOCITY * h;
    let q = diag8([p, p, ASPECT_STD, p, v, v, ASPECT_VEL_STD, v]);
    let f = transition();
    let mut mean = f * state.mean;
    mean[3] = mean[3].max(crate::mot_io::MIN_SIDE);
    mean[2] = mean[2].max(crate::mot_io::MIN_SIDE / mean[3]);
    let mut covariance = f * state.covariance * f.transpose() + q;
    symmetrize(&mut covariance);
    let predicted = BoundingBox::from_xyah([mean[0], mean[1], mean[2], mean[3]]);
    let offset = state.last_box.offset_to(&predicted);
    (KalmanState { mean, covariance, last_box: predicted }, predicted, offset)
}

pub fn kf_update(state: &KalmanState, bbox: &BoundingBox) -> Result<KalmanState> {
    if !(bbox.h > 0.0 && bbox.w > 0.0) {
        return Err(invalid("non-positive box"));
    }
    let h = state.height().abs().max(1e-6);
    let p = STD_WEIGHT_POSITION * h;
    let r = Mat4::from_diagonal(&SVector::<f64, 4>::from_column_slice(&[
        p * p,
        p * p,
        MEASURE_ASPECT_STD * MEASURE_ASPECT_STD,
        p * p,
    ]));
    let hm = measurement_matrix();
    let z = SVector::<f64, 4>::from_column_slice(&bbox.to_xyah());
    let innovation = z - hm * state.mean;
    let s = hm * state.covariance * hm.transpose() + r;
    let s_inv = s
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| invalid("innovation covariance not positive definite"))?;
    let gain = state.covariance * hm.transpose() * s_inv;
    let mean = state.mean + gain * innovation;
    // Joseph form keeps the covariance positive semi-definite.
    let ikh = Mat8::identity() - gain * hm;
    let mut covariance = ikh * state.covariance * ikh.transpose() + gain * r * gain.transpose();
    symmetrize(&mut covariance);
    if mean[3] <= 0.0 {
        return Err(invalid("update produced a non-positive height"));
    }
    Ok(KalmanState { mean, covariance, last_box: *bbox })
}
