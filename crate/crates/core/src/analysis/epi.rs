use crate::error::{Error, Result};
use crate::lf::LightField;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpiAxis {
    /// Centre view row, image row `y`: `[V, W]`, row `v` is `L(c, v, y, :)`.
    Horizontal,
    /// Centre view column, image column `x`: `[U, H]`, row `u` is `L(u, c, :, x)`.
    Vertical,
}

impl std::str::FromStr for EpiAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "horizontal" | "h" => Ok(EpiAxis::Horizontal),
            "vertical" | "v" => Ok(EpiAxis::Vertical),
            _ => Err(Error::config(format!("unknown EPI axis {s:?} (horizontal or vertical)"))),
        }
    }
}

/// Epipolar-plane image of a single-channel light field through the centre
/// view row or column. For an even grid the centre is `(A - 1) / 2` rounded down.
pub fn epi_extract(lf: &LightField, axis: EpiAxis, index: usize) -> Result<Tensor> {
    if lf.channels() != 1 {
        return Err(Error::shape(format!("EPIs need a single-channel light field, got {} channels", lf.channels())));
    }
    let (uc, vc) = ((lf.u_views() - 1) / 2, (lf.v_views() - 1) / 2);
    let (h, w) = (lf.height(), lf.width());
    match axis {
        EpiAxis::Horizontal => {
            if index >= h {
                return Err(Error::Bounds(format!("row {index} outside image height {h}")));
            }
            let rows: Vec<f64> =
                (0..lf.v_views()).flat_map(|v| lf.view_slice(uc, v)[index * w..(index + 1) * w].to_vec()).collect();
            Tensor::new(vec![lf.v_views(), w], rows)
        }
        EpiAxis::Vertical => {
            if index >= w {
                return Err(Error::Bounds(format!("column {index} outside image width {w}")));
            }
            let rows: Vec<f64> = (0..lf.u_views())
                .flat_map(|u| {
                    let view = lf.view_slice(u, vc);
                    (0..h).map(move |y| view[y * w + index])
                })
                .collect();
            Tensor::new(vec![lf.u_views(), h], rows)
        }
    }
}
