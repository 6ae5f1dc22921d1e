use serde::{Deserialize, Serialize};

/// Clip applied to normalized features.
pub const FEATURE_CLIP: f64 = 10.0;
const VAR_EPS: f64 = 1e-5;

/// Per-dimension running mean and variance, merged batch by batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningNormalizer {
    pub enabled: bool,
    pub mean: Vec<f64>,
    /// Sum of squared deviations from the mean.
    pub m2: Vec<f64>,
    pub count: f64,
}

impl RunningNormalizer {
    pub fn new(dim: usize, enabled: bool) -> Self {
        Self { enabled, mean: vec![0.0; dim], m2: vec![0.0; dim], count: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Population variance per dimension; 1 before any data.
    pub fn var(&self) -> Vec<f64> {
        if self.count < 1.0 {
            return vec![1.0; self.dim()];
        }
        self.m2.iter().map(|m| m / self.count).collect()
    }

    pub fn std(&self) -> Vec<f64> {
        self.var().iter().map(|v| (v + VAR_EPS).sqrt()).collect()
    }

    /// Folds a batch of rows into the statistics (parallel-variance merge).
    pub fn update<'r>(&mut self, rows: impl IntoIterator<Item = &'r [f64]>) {
        let d = self.dim();
        let mut n = 0.0;
        let mut mean = vec![0.0; d];
        let mut m2 = vec![0.0; d];
        for row in rows {
            assert_eq!(row.len(), d, "normalizer row width");
            n += 1.0;
            for k in 0..d {
                let delta = row[k] - mean[k];
                mean[k] += delta / n;
                m2[k] += delta * (row[k] - mean[k]);
            }
        }
        if n == 0.0 {
            return;
        }
        let total = self.count + n;
        for k in 0..d {
            let delta = mean[k] - self.mean[k];
            self.mean[k] += delta * n / total;
            self.m2[k] += m2[k] + delta * delta * self.count * n / total;
        }
        self.count = total;
    }

    /// `clip((x - mean) / std)`, or `x` unchanged when disabled.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        if !self.enabled {
            return x.to_vec();
        }
        let std = self.std();
        x.iter()
            .zip(&self.mean)
            .zip(&std)
            .map(|((v, m), s)| ((v - m) / s).clamp(-FEATURE_CLIP, FEATURE_CLIP))
            .collect()
    }

    /// Inverse of [`normalize`](Self::normalize) for unclipped values.
    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        if !self.enabled {
            return z.to_vec();
        }
        let std = self.std();
        z.iter().zip(&self.mean).zip(&std).map(|((v, m), s)| v * s + m).collect()
    }

    /// Standardizes a scalar against dimension 0 without clipping.
    pub fn standardize(&self, x: f64) -> f64 {
        if !self.enabled {
            return x;
        }
        (x - self.mean[0]) / self.std()[0]
    }

    /// Inverse of [`standardize`](Self::standardize).
    pub fn unstandardize(&self, z: f64) -> f64 {
        if !self.enabled {
            return z;
        }
        z * self.std()[0] + self.mean[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_batch_statistics() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64, (i * i) as f64 * 0.1]).collect();
        let mut a = RunningNormalizer::new(2, true);
        a.update(rows[..17].iter().map(Vec::as_slice));
        a.update(rows[17..].iter().map(Vec::as_slice));
        let mut b = RunningNormalizer::new(2, true);
        b.update(rows.iter().map(Vec::as_slice));
        for k in 0..2 {
            let mean = rows.iter().map(|r| r[k]).sum::<f64>() / 50.0;
            let var = rows.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / 50.0;
            assert!((a.mean[k] - mean).abs() < 1e-9);
            assert!((a.var()[k] - var).abs() < 1e-6 * var.max(1.0));
            assert!((b.var()[k] - var).abs() < 1e-6 * var.max(1.0));
        }
    }

    #[test]
    fn roundtrip_and_bypass() {
        let mut n = RunningNormalizer::new(3, true);
        n.update([[1.0, 2.0, 3.0].as_slice(), &[2.0, 0.0, 3.5], &[0.5, 1.0, 2.0]]);
        let x = [1.2, 0.7, 2.9];
        let back = n.denormalize(&n.normalize(&x));
        for (a, b) in back.iter().zip(x) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut off = n.clone();
        off.enabled = false;
        assert_eq!(off.normalize(&x), x.to_vec());
        assert_eq!(off.standardize(3.0), 3.0);
        let z = n.standardize(2.5);
        assert!((n.unstandardize(z) - 2.5).abs() < 1e-12);
    }
}
