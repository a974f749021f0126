//! Gauss–Hermite quadrature for the random-intercept integral.
//!
//! All cluster-level integrals in this crate have the form
//! `∫ f(b) dΦ(b; σ)` with `Φ` the Normal(0, σ²) distribution. After the
//! change of variables `b = √2·σ·x` this becomes
//! `(1/√π) ∫ exp(-x²) f(√2·σ·x) dx`, which a physicists'-convention
//! Gauss–Hermite rule evaluates as `Σ w_i f(√2·σ·x_i) / Σ w_i`.
//!
//! Weights are normalized by their computed sum rather than by √π so the
//! rule is exactly a probability measure over the nodes: at σ = 0 every node
//! collapses to b = 0 and cluster propensities reduce to the plain Bernoulli
//! product with no quadrature error at all.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fmath;

const SQRT_PI: f64 = 1.772_453_850_905_516;
const NEWTON_EPS: f64 = 1e-14;
const NEWTON_MAX_ITER: usize = 100;

/// Nodes and weights of a Gauss–Hermite rule (weight function `exp(-x²)`).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    weight_sum: f64,
}

impl QuadratureRule {
    /// Default node count used across the pipeline.
    pub const DEFAULT_NODES: usize = 25;

    /// Builds the `q`-node Gauss–Hermite rule by Newton iteration on the
    /// orthonormal Hermite recurrence.
    pub fn gauss_hermite(q: usize) -> Result<Self> {
        if q == 0 {
            return Err(Error::config("quadrature rule needs at least one node"));
        }
        let mut nodes = vec![0.0; q];
        let mut weights = vec![0.0; q];
        let half = q.div_ceil(2);
        let qf = q as f64;
        let mut z = 0.0;
        for i in 0..half {
            // Initial guesses from Numerical-Recipes-style asymptotics.
            z = match i {
                0 => fmath::sqrt(2.0 * qf + 1.0) - 1.85575 * powf(2.0 * qf + 1.0, -1.0 / 6.0),
                1 => z - 1.14 * powf(qf, 0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            let mut converged = false;
            for _ in 0..NEWTON_MAX_ITER {
                // Evaluate the orthonormal Hermite polynomial of degree q at z.
                let mut p1 = 1.0 / fmath::sqrt(SQRT_PI);
                let mut p2 = 0.0;
                for j in 1..=q {
                    let jf = j as f64;
                    let p3 = p2;
                    p2 = p1;
                    p1 = z * fmath::sqrt(2.0 / jf) * p2 - fmath::sqrt((jf - 1.0) / jf) * p3;
                }
                pp = fmath::sqrt(2.0 * qf) * p2;
                let dz = p1 / pp;
                z -= dz;
                if fmath::abs(dz) <= NEWTON_EPS {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::NonFinite {
                    context: "gauss-hermite node iteration".into(),
                    component: i,
                });
            }
            nodes[i] = z;
            nodes[q - 1 - i] = -z;
            let w = 2.0 / (pp * pp);
            weights[i] = w;
            weights[q - 1 - i] = w;
        }
        if q % 2 == 1 {
            nodes[q / 2] = 0.0;
        }
        // Ascending node order.
        nodes.reverse();
        weights.reverse();
        let weight_sum: f64 = weights.iter().sum();
        Ok(QuadratureRule {
            nodes,
            weights,
            weight_sum,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Sum of raw weights; √π up to floating error.
    pub fn weight_sum(&self) -> f64 {
        self.weight_sum
    }

    /// Normalized log-weights `ln(w_i / Σw)`.
    pub(crate) fn log_norm_weights(&self) -> Vec<f64> {
        self.weights
            .iter()
            .map(|&w| fmath::ln(w / self.weight_sum))
            .collect()
    }

    /// Integrates `f` against the Normal(0, σ²) measure.
    pub fn integrate_normal<F: FnMut(f64) -> f64>(&self, sigma: f64, mut f: F) -> f64 {
        let scale = core::f64::consts::SQRT_2 * sigma;
        let mut acc = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(scale * x);
        }
        acc / self.weight_sum
    }
}

fn powf(x: f64, y: f64) -> f64 {
    #[cfg(feature = "std")]
    {
        x.powf(y)
    }
    #[cfg(not(feature = "std"))]
    {
        libm::pow(x, y)
    }
}
