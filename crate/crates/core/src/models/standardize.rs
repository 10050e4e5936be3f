use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

/// Per-column z-scoring fitted on a training split. Binary columns and
/// constant columns pass through with mean 0 and scale 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    /// `binary` may be shorter than the column count (missing entries count
    /// as continuous).
    pub fn fit(x: ArrayView2<f64>, binary: &[bool]) -> Self {
        let (n, p) = x.dim();
        let mut mean = vec![0.0; p];
        let mut scale = vec![1.0; p];
        for j in 0..p {
            if binary.get(j).copied().unwrap_or(false) || n == 0 {
                continue;
            }
            let col = x.column(j);
            let m = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            mean[j] = m;
            let sd = var.sqrt();
            if sd > 1e-12 && sd.is_finite() {
                scale[j] = sd;
            }
        }
        Self { mean, scale }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn transform(&self, x: ArrayView1<f64>) -> Array1<f64> {
        Array1::from_iter(
            x.iter()
                .zip(self.mean.iter().zip(&self.scale))
                .map(|(v, (m, s))| (v - m) / s),
        )
    }

    pub fn transform_rows(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.scale[j];
            }
        }
        out
    }

    /// Converts a gradient taken in standardized coordinates into one taken
    /// in raw coordinates.
    pub fn chain_to_raw(&self, g: &mut Array1<f64>) {
        for (v, s) in g.iter_mut().zip(&self.scale) {
            *v /= s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn binary_and_constant_columns_pass_through() {
        let x = array![[1.0, 0.0, 5.0], [3.0, 1.0, 5.0], [5.0, 1.0, 5.0]];
        let s = Standardizer::fit(x.view(), &[false, true, false]);
        assert_eq!(s.mean[1], 0.0);
        assert_eq!(s.scale[1], 1.0);
        assert_eq!(s.scale[2], 1.0);
        let t = s.transform(x.row(0));
        assert!((t[0] + 1.224744871391589).abs() < 1e-12);
        assert_eq!(t[1], 0.0);
        assert_eq!(t[2], 0.0);
    }
}
