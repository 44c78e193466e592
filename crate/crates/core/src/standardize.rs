//! Column standardization with an exact back-transform.
//!
//! Scales are pooled (unweighted) standard deviations over all sampled rows.
//! Centering is only applied when the local design carries a constant
//! column, because that column is needed to absorb the shift on the way
//! back; otherwise columns are scaled but not centered. Constant columns are
//! left untouched.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, WccError};
use crate::model::{Dataset, LocationBlock};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub y_center: f64,
    pub y_scale: f64,
    pub x_center: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub z_center: Vec<f64>,
    pub z_scale: Vec<f64>,
    /// Index of the constant local column that absorbs the centering, with
    /// its value.
    pub intercept: Option<(usize, f64)>,
}

fn column_stats(values: impl Iterator<Item = f64>) -> (f64, f64, bool) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let constant = v.iter().all(|&x| x == v[0]);
    (mean, var.sqrt(), constant)
}

impl Standardization {
    /// Computes centers and scales from every sampled row of `data`.
    pub fn fit(data: &Dataset) -> Result<Self> {
        let blocks = data.locations();
        let rows = |f: &dyn Fn(&LocationBlock) -> Vec<f64>| blocks.iter().flat_map(f).collect::<Vec<f64>>();
        let x_stats: Vec<_> = (0..data.p())
            .map(|k| column_stats(rows(&|b| b.x().column(k).iter().copied().collect()).into_iter()))
            .collect();
        let z_stats: Vec<_> = (0..data.q())
            .map(|k| column_stats(rows(&|b| b.z().column(k).iter().copied().collect()).into_iter()))
            .collect();
        let intercept = x_stats
            .iter()
            .position(|s| s.2 && s.0 != 0.0)
            .map(|k| (k, x_stats[k].0));
        let centered = intercept.is_some();
        let (ym, ys, yconst) = column_stats(rows(&|b| b.y().iter().copied().collect()).into_iter());
        if yconst || ys == 0.0 {
            return Err(WccError::Input("cannot standardize a constant response".into()));
        }
        let split = |stats: &[(f64, f64, bool)]| -> (Vec<f64>, Vec<f64>) {
            stats
                .iter()
                .map(|&(mean, sd, constant)| {
                    if constant || sd == 0.0 {
                        (0.0, 1.0)
                    } else {
                        (if centered { mean } else { 0.0 }, sd)
                    }
                })
                .unzip()
        };
        let (x_center, x_scale) = split(&x_stats);
        let (z_center, z_scale) = split(&z_stats);
        Ok(Standardization {
            y_center: if centered { ym } else { 0.0 },
            y_scale: ys,
            x_center,
            x_scale,
            z_center,
            z_scale,
            intercept,
        })
    }

    fn transform_columns(m: &DMatrix<f64>, center: &[f64], scale: &[f64]) -> DMatrix<f64> {
        let mut out = m.clone();
        for (k, mut col) in out.column_iter_mut().enumerate() {
            col.apply(|v| *v = (*v - center[k]) / scale[k]);
        }
        out
    }

    /// The dataset on the standardized scale.
    pub fn apply(&self, data: &Dataset) -> Dataset {
        let blocks = data
            .locations()
            .iter()
            .map(|b| {
                let y = b.y().map(|v| (v - self.y_center) / self.y_scale);
                // known variances are on the response scale
                let sigma2 = b.sigma2().map(|s| s / (self.y_scale * self.y_scale));
                b.with_columns(
                    Self::transform_columns(b.x(), &self.x_center, &self.x_scale),
                    Self::transform_columns(b.z(), &self.z_center, &self.z_scale),
                    y,
                    sigma2,
                )
            })
            .collect();
        Dataset::from_parts(blocks, data.p(), data.q())
    }

    /// Maps standardized `(beta, eta)` back to the original scale.
    pub fn back_transform(&self, beta: &DMatrix<f64>, eta: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let sy = self.y_scale;
        let mut b = beta.clone();
        for (k, mut col) in b.column_iter_mut().enumerate() {
            col *= sy / self.x_scale[k];
        }
        let e = DVector::from_iterator(eta.len(), eta.iter().enumerate().map(|(k, v)| v * sy / self.z_scale[k]));
        if let Some((c_idx, c)) = self.intercept {
            let z_shift: f64 = e.iter().zip(&self.z_center).map(|(v, mk)| v * mk).sum();
            for i in 0..b.nrows() {
                let x_shift: f64 = (0..b.ncols()).map(|k| b[(i, k)] * self.x_center[k]).sum();
                b[(i, c_idx)] += (self.y_center - x_shift - z_shift) / c;
            }
        }
        (b, e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(id: &str, x1: &[f64], y: &[f64]) -> LocationBlock {
        let n = y.len();
        let mut x = DMatrix::from_element(n, 2, 1.0);
        for (h, v) in x1.iter().enumerate() {
            x[(h, 1)] = *v;
        }
        LocationBlock::new(
            id,
            10.0,
            DVector::from_column_slice(y),
            x,
            DMatrix::zeros(n, 0),
            DVector::from_element(n, 0.5),
            None,
        )
        .unwrap()
    }

    #[test]
    fn back_transform_reproduces_fitted_values() {
        let data = Dataset::new(vec![
            block("a", &[1.0, 2.0, 4.0], &[3.0, 5.0, 8.0]),
            block("b", &[0.0, 3.0, 5.0], &[1.0, 2.0, 2.5]),
        ])
        .unwrap();
        let st = Standardization::fit(&data).unwrap();
        assert_eq!(st.intercept, Some((0, 1.0)));
        let std_data = st.apply(&data);
        let beta_std = DMatrix::from_row_slice(2, 2, &[0.3, -0.7, 1.1, 0.2]);
        let eta = DVector::zeros(0);
        let (beta, _) = st.back_transform(&beta_std, &eta);
        for (i, (orig, scaled)) in data.locations().iter().zip(std_data.locations()).enumerate() {
            let fit_std = scaled.x() * beta_std.row(i).transpose();
            let fit = orig.x() * beta.row(i).transpose();
            for h in 0..orig.n() {
                let back = st.y_center + st.y_scale * fit_std[h];
                assert!((back - fit[h]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scale_only_without_constant_column() {
        let mut b = block("a", &[1.0, 2.0, 4.0], &[3.0, 5.0, 8.0]);
        b = b.with_columns(b.x().columns(1, 1).into_owned(), b.z().clone(), b.y().clone(), None);
        let data = Dataset::from_parts(vec![b], 1, 0);
        let st = Standardization::fit(&data).unwrap();
        assert_eq!(st.intercept, None);
        assert_eq!(st.y_center, 0.0);
        assert_eq!(st.x_center, vec![0.0]);
    }
}
