use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;

/// A seeded map from feature vectors to 2-d points.
pub trait Projector {
    fn project(&self, points: &[Vec<f64>], seed: u64) -> Result<Vec<[f64; 2]>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
        }
    }
}

/// Exact (O(n²)) t-SNE. Single-threaded and free of hash ordering, so the
/// output is a pure function of the input and the seed.
#[derive(Debug, Clone, Default)]
pub struct Tsne {
    pub config: TsneConfig,
}

impl Tsne {
    pub fn new(config: TsneConfig) -> Self {
        Self { config }
    }

    pub fn min_points(&self) -> usize {
        (3.0 * self.config.perplexity).ceil() as usize
    }
}

fn squared_distances(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

// Row-conditional affinities whose entropy matches ln(perplexity), found by
// bisection on the precision.
fn affinities(dist: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    let mut row = vec![0.0; n];
    for i in 0..n {
        let d = &dist[i * n..(i + 1) * n];
        let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
        let min_d = d.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).fold(f64::INFINITY, f64::min);
        for _ in 0..100 {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in 0..n {
                row[j] = if j == i { 0.0 } else { (-(d[j] - min_d) * beta).exp() };
                sum += row[j];
                weighted += row[j] * (d[j] - min_d);
            }
            let entropy = sum.ln() + beta * weighted / sum;
            if (entropy - target).abs() < 1e-5 {
                break;
            }
            if entropy > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
        let sum: f64 = row.iter().sum();
        for j in 0..n {
            p[i * n + j] = row[j] / sum;
        }
    }
    let mut sym = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sym[i * n + j] = ((p[i * n + j] + p[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
    }
    sym
}

impl Projector for Tsne {
    fn project(&self, points: &[Vec<f64>], seed: u64) -> Result<Vec<[f64; 2]>> {
        let cfg = &self.config;
        if !(cfg.perplexity > 0.0) || !(cfg.learning_rate > 0.0) {
            return Err(Error::Config("t-SNE perplexity and learning rate must be positive".into()));
        }
        let n = points.len();
        if n < self.min_points() {
            return Err(Error::TooFewSamples {
                needed: self.min_points(),
                got: n,
            });
        }
        if let Some(w) = points.first().map(Vec::len) {
            if points.iter().any(|p| p.len() != w) {
                return Err(Error::Shape("points differ in dimension".into()));
            }
        }

        let p = affinities(&squared_distances(points), n, cfg.perplexity);
        let mut rng = rng_from(seed);
        let normal = Normal::new(0.0, 1e-2).expect("valid normal");
        let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
        let mut update = vec![[0.0f64; 2]; n];
        let mut gains = vec![[1.0f64; 2]; n];
        let mut num = vec![0.0; n * n];

        for iter in 0..cfg.iterations {
            let exaggeration = if iter < cfg.exaggeration_iterations { cfg.early_exaggeration } else { 1.0 };
            let momentum = if iter < cfg.exaggeration_iterations { 0.5 } else { 0.8 };

            let mut z = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    let dx = y[i][0] - y[j][0];
                    let dy = y[i][1] - y[j][1];
                    let q = 1.0 / (1.0 + dx * dx + dy * dy);
                    num[i * n + j] = q;
                    num[j * n + i] = q;
                    z += 2.0 * q;
                }
            }
            for i in 0..n {
                let mut g = [0.0; 2];
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let q = num[i * n + j];
                    let coeff = 4.0 * (exaggeration * p[i * n + j] - q / z) * q;
                    g[0] += coeff * (y[i][0] - y[j][0]);
                    g[1] += coeff * (y[i][1] - y[j][1]);
                }
                for k in 0..2 {
                    gains[i][k] = if (g[k] > 0.0) != (update[i][k] > 0.0) {
                        gains[i][k] + 0.2
                    } else {
                        (gains[i][k] * 0.8).max(0.01)
                    };
                    update[i][k] = momentum * update[i][k] - cfg.learning_rate * gains[i][k] * g[k];
                }
            }
            for i in 0..n {
                y[i][0] += update[i][0];
                y[i][1] += update[i][1];
            }
            let mean = y.iter().fold([0.0; 2], |acc, v| [acc[0] + v[0], acc[1] + v[1]]);
            for v in &mut y {
                v[0] -= mean[0] / n as f64;
                v[1] -= mean[1] / n as f64;
            }
        }
        Ok(y)
    }
}
