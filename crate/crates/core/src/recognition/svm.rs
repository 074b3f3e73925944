//! L2-regularized hinge-loss linear SVM trained by dual coordinate descent.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Scores above `-margin` count as inside the margin during mining.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 10.0,
            max_epochs: 500,
            tolerance: 1e-3,
        }
    }
}

impl LinearSvm {
    pub fn score(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    /// Fits on rows `x` with labels `y`. Per-class costs are balanced so a
    /// handful of positives is not swamped by mined negatives.
    pub fn train(x: &[&[f64]], y: &[bool], config: &SvmConfig, seed: u64) -> Self {
        assert_eq!(x.len(), y.len());
        let dim = x.first().map_or(0, |r| r.len());
        let n = x.len();
        let n_pos = y.iter().filter(|&&b| b).count().max(1);
        let n_neg = (n - y.iter().filter(|&&b| b).count()).max(1);
        let c_pos = config.c * n as f64 / (2.0 * n_pos as f64);
        let c_neg = config.c * n as f64 / (2.0 * n_neg as f64);

        // bias is an extra constant feature
        let mut w = vec![0.0; dim + 1];
        let mut alpha = vec![0.0; n];
        let qii: Vec<f64> = x.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>() + 1.0).collect();
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        for _ in 0..config.max_epochs {
            order.shuffle(&mut rng);
            let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
            for &i in &order {
                let yi = if y[i] { 1.0 } else { -1.0 };
                let ci = if y[i] { c_pos } else { c_neg };
                let wx: f64 = w[..dim].iter().zip(x[i]).map(|(a, b)| a * b).sum::<f64>() + w[dim];
                let g = yi * wx - 1.0;
                let pg = if alpha[i] == 0.0 {
                    g.min(0.0)
                } else if alpha[i] == ci {
                    g.max(0.0)
                } else {
                    g
                };
                pg_max = pg_max.max(pg);
                pg_min = pg_min.min(pg);
                if pg.abs() > 1e-12 {
                    let old = alpha[i];
                    alpha[i] = (old - g / qii[i]).clamp(0.0, ci);
                    let d = (alpha[i] - old) * yi;
                    for (wk, xk) in w[..dim].iter_mut().zip(x[i]) {
                        *wk += d * xk;
                    }
                    w[dim] += d;
                }
            }
            if pg_max - pg_min < config.tolerance {
                break;
            }
        }
        let bias = w.pop().unwrap_or(0.0);
        Self {
            weights: w,
            bias,
            margin: 1.0,
        }
    }
}
