use crate::error::FeatureError;
use crate::pmf::{Field, Grid2D};

/// Forward motion history parameters.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MhiParams {
    /// Amount subtracted from the history per frame without motion.
    pub decay: f64,
    /// Absolute frame difference above which a pixel counts as moving.
    pub threshold: f64,
}

impl Default for MhiParams {
    fn default() -> Self {
        MhiParams {
            decay: 1.0 / 15.0,
            threshold: 0.1,
        }
    }
}

/// One step of the forward motion history image: pixels whose difference
/// exceeds the threshold are set to 1, all others decay linearly toward 0.
pub fn motion_history(
    prev_mhi: &Grid2D,
    cur: &Field,
    prev: &Field,
    params: &MhiParams,
) -> Result<Grid2D, FeatureError> {
    for other in [cur.dims(), prev.dims()] {
        if other != prev_mhi.dims() {
            return Err(FeatureError::DimensionMismatch {
                left: prev_mhi.dims(),
                right: other,
            });
        }
    }
    let data: Vec<f64> = prev_mhi
        .values()
        .iter()
        .zip(cur.values().iter().zip(prev.values()))
        .map(|(&m, (&a, &b))| {
            if (a - b).abs() > params.threshold {
                1.0
            } else {
                (m - params.decay).max(0.0)
            }
        })
        .collect();
    Ok(Grid2D::from_vec(prev_mhi.rows(), prev_mhi.cols(), data).expect("mhi in [0,1]"))
}
