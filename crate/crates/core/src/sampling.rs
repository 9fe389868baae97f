//! Deterministic sampling of balls and spheres.
//!
//! Points come from a Halton sequence with a seeded Cranley–Patterson shift,
//! so every procedure is reproducible from `(inputs, seed)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CovaraError, Result};
use crate::linalg::Vector;

/// Radii ladder and sample budget used by every sampled estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingSchedule {
    pub eta_sequence: Vec<f64>,
    pub samples_per_shell: usize,
    pub seed: u64,
}

impl Default for SamplingSchedule {
    fn default() -> Self {
        Self {
            eta_sequence: (1..=10).map(|k| 0.5f64.powi(k)).collect(),
            samples_per_shell: 512,
            seed: 0x5eed_c0de,
        }
    }
}

impl SamplingSchedule {
    /// Geometric ladder `eta_max, eta_max/2, ...` with `shells` radii.
    pub fn halving(eta_max: f64, shells: usize, samples_per_shell: usize, seed: u64) -> Self {
        Self {
            eta_sequence: (0..shells).map(|k| eta_max * 0.5f64.powi(k as i32)).collect(),
            samples_per_shell,
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.eta_sequence.is_empty() {
            return Err(CovaraError::InvalidInput("empty eta sequence".into()));
        }
        if self.samples_per_shell == 0 {
            return Err(CovaraError::InvalidInput("samples_per_shell must be >= 1".into()));
        }
        let ok = self.eta_sequence.iter().all(|e| e.is_finite() && *e > 0.0)
            && self.eta_sequence.windows(2).all(|w| w[1] < w[0]);
        if !ok {
            return Err(CovaraError::InvalidInput(
                "eta sequence must be positive and strictly decreasing".into(),
            ));
        }
        Ok(())
    }
}

const PRIMES: [u32; 40] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109,
    113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173,
];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// Shifted Halton point set in `[0,1)^dim`.
pub struct Halton {
    shift: Vec<f64>,
    index: u64,
}

impl Halton {
    pub fn new(dim: usize, seed: u64, stream: u64) -> Self {
        assert!(dim <= PRIMES.len(), "halton dimension too large");
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let shift = (0..dim).map(|_| rng.random::<f64>()).collect();
        Self { shift, index: 1 }
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        let i = self.index;
        self.index += 1;
        self.shift
            .iter()
            .enumerate()
            .map(|(d, s)| {
                let v = radical_inverse(i, PRIMES[d] as u64) + s;
                let v = v - v.floor();
                v.clamp(1e-12, 1.0 - 1e-12)
            })
            .collect()
    }
}

fn gaussian_pair(u1: f64, u2: f64) -> (f64, f64) {
    let r = (-2.0 * u1.ln()).sqrt();
    let t = std::f64::consts::TAU * u2;
    (r * t.cos(), r * t.sin())
}

/// `count` unit vectors in ℝ^dim; the coordinate directions `±e_i` come first.
pub fn sphere_directions(dim: usize, count: usize, seed: u64, stream: u64) -> Vec<Vector> {
    let mut out = Vec::with_capacity(count);
    for i in 0..dim {
        for s in [1.0, -1.0] {
            if out.len() < count {
                let mut v = Vector::zeros(dim);
                v[i] = s;
                out.push(v);
            }
        }
    }
    let pairs = dim.div_ceil(2);
    let mut h = Halton::new(2 * pairs, seed, stream);
    while out.len() < count {
        let u = h.next_point();
        let mut g = Vec::with_capacity(2 * pairs);
        for k in 0..pairs {
            let (a, b) = gaussian_pair(u[2 * k], u[2 * k + 1]);
            g.push(a);
            g.push(b);
        }
        let v = Vector::from_iterator(dim, g.into_iter().take(dim));
        let n = v.norm();
        if n > 1e-12 {
            out.push(v / n);
        }
    }
    out
}

/// `count` points of the closed ball `B(center, radius)`.
///
/// The list starts with the center and the axis points `center ± radius e_i`;
/// half of the remaining points lie on the boundary sphere.
pub fn ball_points(center: &Vector, radius: f64, count: usize, seed: u64, stream: u64) -> Vec<Vector> {
    let dim = center.len();
    let mut out = Vec::with_capacity(count.max(1));
    out.push(center.clone());
    if radius <= 0.0 {
        return out;
    }
    let dirs = sphere_directions(dim, count, seed, stream);
    let mut radial = Halton::new(1, seed, stream.wrapping_add(7919));
    let axis = (2 * dim).min(dirs.len());
    for d in dirs.iter().take(axis) {
        if out.len() >= count {
            break;
        }
        out.push(center + d * radius);
    }
    let mut toggle = false;
    for d in dirs.iter().skip(axis) {
        if out.len() >= count {
            break;
        }
        toggle = !toggle;
        let rho = if toggle {
            radius
        } else {
            radius * radial.next_point()[0].powf(1.0 / dim as f64)
        };
        out.push(center + d * rho);
    }
    out
}

/// A seeded generator for uniform draws not covered by the Halton helpers.
pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_is_valid_ladder() {
        let s = SamplingSchedule::default();
        s.validate().unwrap();
        assert_eq!(s.eta_sequence.len(), 10);
        assert_eq!(s.eta_sequence[0], 0.5);
        assert_eq!(*s.eta_sequence.last().unwrap(), 2f64.powi(-10));
    }

    #[test]
    fn invalid_schedules_are_rejected() {
        let mut s = SamplingSchedule {
            eta_sequence: vec![0.1, 0.2],
            ..SamplingSchedule::default()
        };
        assert!(s.validate().is_err());
        s.eta_sequence = vec![0.1];
        s.samples_per_shell = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn ball_points_stay_in_ball_and_are_deterministic() {
        let c = Vector::from_vec(vec![1.0, -2.0, 0.5]);
        let a = ball_points(&c, 0.3, 200, 42, 3);
        let b = ball_points(&c, 0.3, 200, 42, 3);
        assert_eq!(a, b);
        assert_eq!(a.len(), 200);
        assert!(a.iter().all(|p| (p - &c).norm() <= 0.3 + 1e-12));
        assert!(a.iter().filter(|p| ((*p - &c).norm() - 0.3).abs() < 1e-12).count() > 90);
    }

    #[test]
    fn sphere_directions_are_unit() {
        let d = sphere_directions(5, 64, 1, 0);
        assert!(d.iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
    }
}
