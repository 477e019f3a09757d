//! Gaussian interval rates and fixed-precision CDF tables.
//!
//! Rates are computed as the negative log probability of a unit-width
//! interval around each lattice value under a Gaussian:
//! `bits(k) = -log2(Phi((k - mu + 0.5)/sigma) - Phi((k - mu - 0.5)/sigma))`.
//! The same formula, evaluated at continuous values, is the training proxy
//! under additive uniform noise.
//!
//! For actual coding, (mu, sigma) are first snapped to a fixed grid and the
//! interval masses quantized to integer frequencies summing to exactly
//! `1 << CDF_PRECISION`, so encoder and decoder derive identical tables
//! without comparing raw floats. Values outside the table window are sent
//! through an escape slot followed by a fixed-width raw payload.

use crate::autograd::{Tape, Var};

/// Total CDF mass is `1 << CDF_PRECISION`; every in-window slot keeps a
/// frequency of at least 1, which enforces the minimum symbol probability.
pub const CDF_PRECISION: u32 = 16;

/// Default floor for entropy-model scales.
pub const SIGMA_MIN: f64 = 0.04;

/// Cap on entropy-model scales; bounds table windows.
pub const SIGMA_MAX: f64 = 64.0;

/// (mu, sigma) are snapped to multiples of `1 / PARAM_GRID` before any
/// coding decision.
const PARAM_GRID: f64 = 4096.0;

/// Interval masses below this floor the training rate proxy.
const MASS_FLOOR: f64 = 1e-12;

/// Table windows cover `round(mu) ± ceil(WINDOW_SIGMAS * sigma) + 2`.
const WINDOW_SIGMAS: f64 = 12.0;

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Probability mass of the unit interval `[v - 0.5, v + 0.5]` under
/// `N(mu, sigma^2)`, floored away from zero.
pub fn interval_mass(v: f64, mu: f64, sigma: f64) -> f64 {
    let upper = std_normal_cdf((v - mu + 0.5) / sigma);
    let lower = std_normal_cdf((v - mu - 0.5) / sigma);
    (upper - lower).max(MASS_FLOOR)
}

/// Rate in bits for one value; works for lattice indices and for continuous
/// noisy values alike.
pub fn gaussian_bits(v: f64, mu: f64, sigma: f64) -> f64 {
    -interval_mass(v, mu, sigma).log2()
}

/// Total estimated bits for a slice of lattice indices.
pub fn rate_estimate(indices: &[i64], mu: &[f64], sigma: &[f64]) -> f64 {
    assert_eq!(indices.len(), mu.len());
    assert_eq!(indices.len(), sigma.len());
    indices
        .iter()
        .zip(mu)
        .zip(sigma)
        .map(|((&k, &m), &s)| gaussian_bits(k as f64, m, s))
        .sum()
}

/// Tape version of the interval rate, summed over all elements.
///
/// `values`, `mu`, `sigma` are same-shaped vars; returns a scalar in bits.
pub fn gaussian_bits_sum(tape: &Tape, values: Var, mu: Var, sigma: Var) -> Var {
    let centered = tape.sub(values, mu);
    let upper = tape.div(tape.add_const(centered, 0.5), sigma);
    let lower = tape.div(tape.add_const(centered, -0.5), sigma);
    let mass = tape.sub(tape.norm_cdf(upper), tape.norm_cdf(lower));
    let mass = tape.clamp(mass, MASS_FLOOR, 1.0);
    let nats = tape.sum_all(tape.ln(mass));
    tape.scale(nats, -std::f64::consts::LOG2_E)
}

/// Snap an entropy-model parameter pair onto the coding grid.
pub fn quantize_params(mu: f64, sigma: f64) -> (f64, f64) {
    let mu_q = (mu * PARAM_GRID).round() / PARAM_GRID;
    let sigma_q = ((sigma.clamp(SIGMA_MIN, SIGMA_MAX)) * PARAM_GRID).round() / PARAM_GRID;
    (mu_q, sigma_q.max(1.0 / PARAM_GRID))
}

/// A quantized per-symbol model: frequencies for the window
/// `[center - radius, center + radius]` plus one trailing escape slot.
#[derive(Debug, Clone)]
pub struct SymbolTable {
    pub center: i64,
    pub radius: i64,
    /// Cumulative frequencies, length `2*radius + 3`; `cum[0] = 0` and
    /// `cum.last() = 1 << CDF_PRECISION`. Slot `i` covers lattice value
    /// `center - radius + i`; the final slot is the escape symbol.
    pub cum: Vec<u32>,
}

impl SymbolTable {
    /// Build the table for one symbol from already-quantized parameters.
    pub fn build(mu_q: f64, sigma_q: f64) -> SymbolTable {
        let center = mu_q.round() as i64;
        let radius = (WINDOW_SIGMAS * sigma_q).ceil() as i64 + 2;
        let slots = (2 * radius + 1) as usize;
        let total = 1u64 << CDF_PRECISION;
        // One count is reserved per slot (including escape) so every coded
        // symbol keeps a nonzero probability.
        let spendable = total - (slots as u64 + 1);

        let mut masses = Vec::with_capacity(slots);
        let mut mass_sum = 0.0;
        for i in 0..slots {
            let v = (center - radius + i as i64) as f64;
            let m = interval_mass(v, mu_q, sigma_q);
            masses.push(m);
            mass_sum += m;
        }
        let mut freqs: Vec<u64> = masses
            .iter()
            .map(|m| 1 + ((m / mass_sum) * spendable as f64).floor() as u64)
            .collect();
        freqs.push(1); // escape
        let assigned: u64 = freqs.iter().sum();
        debug_assert!(assigned <= total);
        // Deterministic remainder: give it to the most probable slot
        // (lowest index wins ties).
        let best = (0..slots).fold(0usize, |best, i| {
            if masses[i] > masses[best] { i } else { best }
        });
        freqs[best] += total - assigned;

        let mut cum = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u64;
        cum.push(0u32);
        for f in &freqs {
            acc += f;
            cum.push(acc as u32);
        }
        debug_assert_eq!(acc, total);
        SymbolTable { center, radius, cum }
    }

    pub fn n_slots(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn escape_slot(&self) -> usize {
        self.n_slots() - 1
    }

    /// Slot index for lattice value `k`, or the escape slot if out of window.
    pub fn slot_of(&self, k: i64) -> usize {
        if (k - self.center).abs() <= self.radius {
            (k - self.center + self.radius) as usize
        } else {
            self.escape_slot()
        }
    }

    /// Lattice value for an in-window slot.
    pub fn value_of(&self, slot: usize) -> i64 {
        debug_assert!(slot < self.escape_slot());
        self.center - self.radius + slot as i64
    }

    pub fn freq_range(&self, slot: usize) -> (u32, u32) {
        (self.cum[slot], self.cum[slot + 1])
    }

    /// Find the slot whose cumulative range contains `target`.
    pub fn find(&self, target: u32) -> usize {
        // cum is strictly increasing; binary search for the containing range.
        let mut lo = 0usize;
        let mut hi = self.n_slots();
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.cum[mid] <= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}
