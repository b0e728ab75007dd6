//! Physical-layer ground truth: ULA steering vectors, DFT beam codebook,
//! line-of-sight channel, per-beam receive power, and the best-beam oracle.
//!
//! Conventions:
//! - Half-wavelength element spacing; steering phases are linear in the
//!   element index: entry `n` of a steering vector has phase `π·n·sin(θ)`.
//! - The codebook is uniform in sine space with step `2/M`, which makes the
//!   per-beam powers satisfy an exact conservation identity (their sum is
//!   `M·|α|²` for any angle) — useful as a physics self-check.
//! - Codebook rows store the conjugated steering phases scaled by `1/√N`, so
//!   combining is the plain bilinear product `y_m = Σ_n w[m][n]·h[n]` and the
//!   power `|y_m|²` peaks at the beam whose steering sine matches the channel.
//!
//! Everything here is pure `f64`/`Complex64` arithmetic with no shared state.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Default uniform-linear-array size.
pub const N_ELEMENTS: usize = 16;

/// Default codebook size.
pub const N_BEAMS: usize = 64;

/// Steering response of an N-element uniform linear array toward angle
/// `theta` (radians off broadside, in the open interval (-π/2, π/2)).
#[derive(Debug, Clone)]
pub struct SteeringVector {
    /// Unit-magnitude entries; `elements[n] = exp(i·π·n·sin θ)`.
    pub elements: Vec<Complex64>,
    /// Angle of arrival, radians.
    pub theta: f64,
}

/// DFT beam codebook, uniform in sine space.
#[derive(Debug, Clone)]
pub struct BeamCodebook {
    /// Row-major M×N complex weights, each row unit L2 norm.
    weights: Vec<Complex64>,
    /// Steering sine of each beam: `sine_grid[m] = -1 + (2m+1)/M`.
    pub sine_grid: Vec<f64>,
    pub n_beams: usize,
    pub n_elements: usize,
}

impl BeamCodebook {
    /// Weight row of beam `m`.
    pub fn row(&self, m: usize) -> &[Complex64] {
        &self.weights[m * self.n_elements..(m + 1) * self.n_elements]
    }
}

/// Single-path line-of-sight channel `h = α · a(θ)`.
#[derive(Debug, Clone)]
pub struct Channel {
    pub h: Vec<Complex64>,
    /// Complex path gain α.
    pub gain: Complex64,
    /// Angle of the path, radians off broadside.
    pub theta: f64,
}

/// Steering vector `a(θ)` for an `n_elements`-element ULA.
pub fn steering_vector(theta: f64, n_elements: usize) -> Result<SteeringVector> {
    if n_elements == 0 {
        return Err(Error::Domain("steering_vector: need at least 1 element".into()));
    }
    if !theta.is_finite() || theta.abs() >= std::f64::consts::FRAC_PI_2 {
        return Err(Error::Domain(format!(
            "steering_vector: theta {theta} outside (-pi/2, pi/2)"
        )));
    }
    let s = theta.sin();
    let elements = (0..n_elements)
        .map(|n| Complex64::from_polar(1.0, std::f64::consts::PI * n as f64 * s))
        .collect();
    Ok(SteeringVector { elements, theta })
}

/// Build the M-beam DFT codebook for an N-element ULA.
///
/// Row `m` is `(1/√N)·conj(a(φ_m))` with `sin(φ_m) = -1 + (2m+1)/M`; the
/// grid is strictly increasing with step `2/M` and stays inside (-1, 1).
/// Requires `n_beams ≥ n_elements` (critically sampled or oversampled DFT).
pub fn build_codebook(n_elements: usize, n_beams: usize) -> Result<BeamCodebook> {
    if n_elements == 0 {
        return Err(Error::Config("build_codebook: need at least 1 element".into()));
    }
    if n_beams < n_elements {
        return Err(Error::Config(format!(
            "build_codebook: n_beams ({n_beams}) must be >= n_elements ({n_elements})"
        )));
    }
    let m_beams = n_beams as f64;
    let scale = 1.0 / (n_elements as f64).sqrt();
    let mut weights = Vec::with_capacity(n_beams * n_elements);
    let mut sine_grid = Vec::with_capacity(n_beams);
    for m in 0..n_beams {
        let sine = -1.0 + (2 * m + 1) as f64 / m_beams;
        sine_grid.push(sine);
        for n in 0..n_elements {
            let phase = std::f64::consts::PI * n as f64 * sine;
            // conj(a(φ_m)) scaled to unit row norm
            weights.push(Complex64::from_polar(scale, -phase));
        }
    }
    Ok(BeamCodebook { weights, sine_grid, n_beams, n_elements })
}

/// Line-of-sight channel from a transmitter at `tx_pos` to an array at
/// `rx_pos` with broadside along +x. Amplitude follows a `ref_gain / d` law.
///
/// Fails with a "behind array" domain error when the bearing leaves
/// (-π/2, π/2); callers are expected to keep trajectories in front of the
/// array.
pub fn los_channel(
    tx_pos: [f64; 2],
    rx_pos: [f64; 2],
    ref_gain: f64,
    n_elements: usize,
) -> Result<Channel> {
    let dx = tx_pos[0] - rx_pos[0];
    let dy = tx_pos[1] - rx_pos[1];
    let dist = (dx * dx + dy * dy).sqrt();
    if dist == 0.0 {
        return Err(Error::Domain("los_channel: tx and rx positions coincide".into()));
    }
    if dx <= 0.0 {
        return Err(Error::Domain(format!(
            "los_channel: bearing behind array (tx offset [{dx}, {dy}])"
        )));
    }
    let theta = dy.atan2(dx);
    let a = steering_vector(theta, n_elements)?;
    let gain = Complex64::new(ref_gain / dist, 0.0);
    let h = a.elements.iter().map(|e| gain * e).collect();
    Ok(Channel { h, gain, theta })
}

/// Receive power per beam: `p_m = |Σ_n w[m][n]·h[n]|²`.
pub fn beam_powers(codebook: &BeamCodebook, channel: &Channel) -> Result<Vec<f64>> {
    if channel.h.len() != codebook.n_elements {
        return Err(Error::Shape {
            op: "beam_powers",
            left: vec![codebook.n_beams, codebook.n_elements],
            right: vec![channel.h.len()],
        });
    }
    Ok((0..codebook.n_beams)
        .map(|m| {
            let y: Complex64 = codebook
                .row(m)
                .iter()
                .zip(&channel.h)
                .map(|(w, h)| w * h)
                .sum();
            y.norm_sqr()
        })
        .collect())
}

/// Index of the strongest beam; ties break toward the lowest index.
pub fn best_beam(powers: &[f64]) -> Result<usize> {
    if powers.is_empty() {
        return Err(Error::Shape { op: "best_beam", left: vec![0], right: vec![] });
    }
    let mut best = 0;
    for (i, &p) in powers.iter().enumerate() {
        if p > powers[best] {
            best = i;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngExt;

    const N: usize = 16;
    const M: usize = 64;

    fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
        assert!((a - b).abs() <= tol, "{what}: {a} vs {b} (tol {tol})");
    }

    #[test]
    fn steering_at_broadside_is_all_ones() {
        let a = steering_vector(0.0, N).unwrap();
        for e in &a.elements {
            assert_eq!(*e, Complex64::new(1.0, 0.0));
        }
    }

    #[test]
    fn steering_near_endfire_two_elements() {
        let a = steering_vector(std::f64::consts::FRAC_PI_2 - 1e-9, 2).unwrap();
        assert_close(a.elements[0].re, 1.0, 1e-12, "first entry re");
        assert_close(a.elements[1].re, -1.0, 1e-8, "second entry re");
        assert_close(a.elements[1].im, 0.0, 1e-7, "second entry im");
    }

    #[test]
    fn steering_norm_is_element_count() {
        let a = steering_vector(0.3, N).unwrap();
        let norm_sq: f64 = a.elements.iter().map(|e| e.norm_sqr()).sum();
        assert_close(norm_sq, N as f64, 1e-12, "norm^2");
    }

    #[test]
    fn steering_rejects_out_of_range_theta() {
        assert!(steering_vector(std::f64::consts::FRAC_PI_2, 4).is_err());
        assert!(steering_vector(-2.0, 4).is_err());
    }

    #[test]
    fn codebook_shape_and_row_norms() {
        let cb = build_codebook(N, M).unwrap();
        assert_eq!(cb.n_beams, M);
        assert_eq!(cb.n_elements, N);
        for m in 0..M {
            let norm_sq: f64 = cb.row(m).iter().map(|w| w.norm_sqr()).sum();
            assert_close(norm_sq, 1.0, 1e-12, "row norm^2");
        }
    }

    #[test]
    fn critically_sampled_codebook_rows_are_orthogonal() {
        // Direct Hermitian inner products between all row pairs.
        let cb = build_codebook(4, 4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let ip: Complex64 = cb
                    .row(i)
                    .iter()
                    .zip(cb.row(j))
                    .map(|(a, b)| a.conj() * b)
                    .sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_close(ip.norm(), expect, 1e-12, "row inner product");
            }
        }
    }

    #[test]
    fn sine_grid_layout() {
        let cb = build_codebook(N, M).unwrap();
        assert_eq!(cb.sine_grid[0], -1.0 + 1.0 / 64.0); // -0.984375
        assert_eq!(cb.sine_grid[0], -0.984375);
        let step = 2.0 / M as f64;
        for m in 1..M {
            assert_close(cb.sine_grid[m] - cb.sine_grid[m - 1], step, 1e-12, "grid step");
        }
        assert!(cb.sine_grid[0] > -1.0 && cb.sine_grid[M - 1] < 1.0);
    }

    #[test]
    fn codebook_rejects_undersampling() {
        assert!(matches!(build_codebook(16, 8), Err(Error::Config(_))));
    }

    #[test]
    fn los_on_broadside_has_zero_bearing() {
        let ch = los_channel([10.0, 0.0], [0.0, 0.0], 1.0, N).unwrap();
        assert_eq!(ch.theta, 0.0);
        assert_close(ch.gain.re, 0.1, 1e-12, "1/d gain");
        assert_eq!(ch.gain.im, 0.0);
    }

    #[test]
    fn los_rejects_positions_behind_array() {
        assert!(los_channel([-5.0, 1.0], [0.0, 0.0], 1.0, N).is_err());
        assert!(los_channel([0.0, 3.0], [0.0, 0.0], 1.0, N).is_err());
        assert!(los_channel([0.0, 0.0], [0.0, 0.0], 1.0, N).is_err());
    }

    #[test]
    fn doubling_distance_quarters_every_power() {
        let cb = build_codebook(N, M).unwrap();
        let near = los_channel([5.0, 2.0], [0.0, 0.0], 1.0, N).unwrap();
        let far = los_channel([10.0, 4.0], [0.0, 0.0], 1.0, N).unwrap();
        let p_near = beam_powers(&cb, &near).unwrap();
        let p_far = beam_powers(&cb, &far).unwrap();
        for (pn, pf) in p_near.iter().zip(&p_far) {
            assert_close(*pf, pn / 4.0, 1e-12 * pn.max(1.0), "1/d^2 power law");
        }
    }

    #[test]
    fn zero_channel_gives_zero_powers() {
        let cb = build_codebook(N, M).unwrap();
        let ch = Channel {
            h: vec![Complex64::new(0.0, 0.0); N],
            gain: Complex64::new(0.0, 0.0),
            theta: 0.0,
        };
        assert!(beam_powers(&cb, &ch).unwrap().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn beam_powers_rejects_dimension_mismatch() {
        let cb = build_codebook(N, M).unwrap();
        let ch = Channel {
            h: vec![Complex64::new(1.0, 0.0); 8],
            gain: Complex64::new(1.0, 0.0),
            theta: 0.0,
        };
        assert!(matches!(beam_powers(&cb, &ch), Err(Error::Shape { .. })));
    }

    /// Unit-gain channel pointed exactly at a grid sine.
    fn on_grid_channel(cb: &BeamCodebook, m: usize) -> Channel {
        let theta = cb.sine_grid[m].asin();
        let a = steering_vector(theta, cb.n_elements).unwrap();
        Channel { h: a.elements, gain: Complex64::new(1.0, 0.0), theta }
    }

    #[test]
    fn on_grid_channel_peaks_at_its_beam_with_power_n() {
        let cb = build_codebook(N, M).unwrap();
        for m in 0..M {
            let p = beam_powers(&cb, &on_grid_channel(&cb, m)).unwrap();
            assert_eq!(best_beam(&p).unwrap(), m, "beam {m}");
            // |<w_m, a(φ_m)>|² = (1/N)·N² = N
            assert_close(p[m], N as f64, 1e-9, "peak power");
        }
    }

    #[test]
    fn power_conservation_at_random_angles() {
        // Dirichlet-kernel identity over the uniform sine grid: for |α| = 1
        // the powers sum to M at any angle. Brute-force summation, 1000
        // seeded random angles.
        let cb = build_codebook(N, M).unwrap();
        let mut rng = crate::rng::stream(1234, "phy-angles");
        for _ in 0..1000 {
            let theta: f64 = rng.random_range(-1.5..1.5);
            let a = steering_vector(theta, N).unwrap();
            let ch = Channel { h: a.elements, gain: Complex64::new(1.0, 0.0), theta };
            let total: f64 = beam_powers(&cb, &ch).unwrap().iter().sum();
            assert_close(total, M as f64, 1e-9, "power sum");
        }
    }

    #[test]
    fn scaling_gain_scales_powers_quadratically() {
        let cb = build_codebook(N, M).unwrap();
        let base = los_channel([20.0, 7.0], [0.0, 0.0], 1.0, N).unwrap();
        let c = 3.5;
        let scaled = Channel {
            h: base.h.iter().map(|h| h * c).collect(),
            gain: base.gain * c,
            theta: base.theta,
        };
        let p0 = beam_powers(&cb, &base).unwrap();
        let p1 = beam_powers(&cb, &scaled).unwrap();
        for (a, b) in p0.iter().zip(&p1) {
            assert_close(*b, a * c * c, 1e-12 * b.max(1.0), "quadratic scaling");
        }
        assert_eq!(best_beam(&p0).unwrap(), best_beam(&p1).unwrap());
    }

    #[test]
    fn negating_theta_mirrors_the_best_beam() {
        let cb = build_codebook(N, M).unwrap();
        for m in 0..M {
            let pos = beam_powers(&cb, &on_grid_channel(&cb, m)).unwrap();
            let neg_theta = -cb.sine_grid[m].asin();
            let a = steering_vector(neg_theta, N).unwrap();
            let neg_ch = Channel { h: a.elements, gain: Complex64::new(1.0, 0.0), theta: neg_theta };
            let neg = beam_powers(&cb, &neg_ch).unwrap();
            assert_eq!(best_beam(&neg).unwrap(), M - 1 - best_beam(&pos).unwrap());
        }
    }

    #[test]
    fn best_beam_tie_break_and_errors() {
        let mut one_hot = vec![0.0; M];
        one_hot[17] = 1.0;
        assert_eq!(best_beam(&one_hot).unwrap(), 17);
        assert_eq!(best_beam(&vec![2.5; M]).unwrap(), 0);
        assert!(best_beam(&[]).is_err());
    }
}
