//! Incident-object state on a 1-D grid and Born-rule probabilities over
//! detector entrance windows.
//!
//! The wavefunction is sampled at cell centers `grid_min + i * grid_step`;
//! cell `i` covers `[x_i - step/2, x_i + step/2]`. Window probabilities are
//! cell sums of `|psi_i|^2 * step`, weighted by the fraction of each cell that
//! falls inside the window, so splitting a window never changes the total.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SourceError {
    #[error("wavefunction has vanishing norm")]
    ZeroNorm,
    #[error("grid step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("wavefunction needs at least one amplitude")]
    Empty,
    #[error("non-finite amplitude at grid index {0}")]
    NonFinite(usize),
    #[error("window for detector {index} has non-positive width {width}")]
    InvalidWidth { index: usize, width: f64 },
    #[error("windows of detectors {first} and {second} overlap")]
    Overlap { first: usize, second: usize },
    #[error("windows must be sorted by center: detector {first} precedes detector {second}")]
    Unsorted { first: usize, second: usize },
    #[error("tabulated positions are not uniformly spaced near row {0}")]
    NonUniformTable(usize),
    #[error("invalid analytic form: {0}")]
    InvalidForm(String),
}

/// Discretized complex amplitude density on a uniform grid (units m^-1/2).
#[derive(Debug, Clone, PartialEq)]
pub struct Wavefunction {
    grid_min: f64,
    grid_step: f64,
    amplitudes: Vec<Complex64>,
}

impl Wavefunction {
    pub fn new(grid_min: f64, grid_step: f64, amplitudes: Vec<Complex64>) -> Result<Self, SourceError> {
        if !(grid_step > 0.0 && grid_step.is_finite()) {
            return Err(SourceError::InvalidStep(grid_step));
        }
        if amplitudes.is_empty() {
            return Err(SourceError::Empty);
        }
        if let Some(i) = amplitudes.iter().position(|a| !(a.re.is_finite() && a.im.is_finite())) {
            return Err(SourceError::NonFinite(i));
        }
        Ok(Self { grid_min, grid_step, amplitudes })
    }

    /// Builds an unnormalized state by evaluating `f` at each cell center.
    pub fn from_fn(grid: &GridSpec, f: impl Fn(f64) -> Complex64) -> Result<Self, SourceError> {
        let step = grid.step()?;
        let amps = (0..grid.points).map(|i| f(grid.min + i as f64 * step)).collect();
        Self::new(grid.min, step, amps)
    }

    /// Normalized Gaussian packet whose `|psi|^2` has the given mean and standard deviation.
    pub fn gaussian(grid: &GridSpec, mean: f64, sigma: f64) -> Result<Self, SourceError> {
        if !(sigma > 0.0) {
            return Err(SourceError::InvalidForm(format!("gaussian sigma must be > 0, got {sigma}")));
        }
        normalize(&Self::from_fn(grid, |x| Complex64::new(gaussian_amplitude(x, mean, sigma), 0.0))?)
    }

    /// Normalized flat density on `[lo, hi]`, zero elsewhere.
    pub fn uniform(grid: &GridSpec, lo: f64, hi: f64) -> Result<Self, SourceError> {
        if !(hi > lo) {
            return Err(SourceError::InvalidForm(format!("uniform needs hi > lo, got [{lo}, {hi}]")));
        }
        normalize(&Self::from_fn(grid, |x| {
            if (lo..=hi).contains(&x) {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })?)
    }

    /// Coherent superposition `sum_k w_k g_k(x)` of Gaussian packets, then normalized.
    pub fn gaussian_superposition(
        grid: &GridSpec,
        means: &[f64],
        sigmas: &[f64],
        weights: &[Complex64],
    ) -> Result<Self, SourceError> {
        if means.is_empty() || means.len() != sigmas.len() || means.len() != weights.len() {
            return Err(SourceError::InvalidForm(
                "superposition needs equal-length, non-empty means/sigmas/weights".into(),
            ));
        }
        if let Some(s) = sigmas.iter().find(|s| !(**s > 0.0)) {
            return Err(SourceError::InvalidForm(format!("gaussian sigma must be > 0, got {s}")));
        }
        normalize(&Self::from_fn(grid, |x| {
            means.iter().zip(sigmas).zip(weights).map(|((m, s), w)| w * gaussian_amplitude(x, *m, *s)).sum()
        })?)
    }

    /// Builds a state from `(position, re, im)` rows on a uniform grid, then normalizes.
    pub fn from_table(rows: &[[f64; 3]]) -> Result<Self, SourceError> {
        let (first, rest) = rows.split_first().ok_or(SourceError::Empty)?;
        let step = match rest.first() {
            Some(second) => second[0] - first[0],
            None => 1.0,
        };
        if !(step > 0.0) {
            return Err(SourceError::NonUniformTable(1));
        }
        for (i, row) in rows.iter().enumerate() {
            let expected = first[0] + i as f64 * step;
            if (row[0] - expected).abs() > 1e-6 * step {
                return Err(SourceError::NonUniformTable(i));
            }
        }
        let amps = rows.iter().map(|r| Complex64::new(r[1], r[2])).collect();
        normalize(&Self::new(first[0], step, amps)?)
    }

    pub fn grid_min(&self) -> f64 {
        self.grid_min
    }

    pub fn grid_step(&self) -> f64 {
        self.grid_step
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    /// Lower and upper edge of the region covered by grid cells.
    pub fn support(&self) -> (f64, f64) {
        let half = 0.5 * self.grid_step;
        (self.grid_min - half, self.grid_min + (self.len() - 1) as f64 * self.grid_step + half)
    }

    pub fn position(&self, i: usize) -> f64 {
        self.grid_min + i as f64 * self.grid_step
    }

    /// `sum |psi_i|^2 * step`.
    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.grid_step
    }

    /// The same amplitudes on a grid shifted by `dx`.
    pub fn displaced(&self, dx: f64) -> Self {
        Self { grid_min: self.grid_min + dx, ..self.clone() }
    }

    /// Every amplitude multiplied by `factor`.
    pub fn scaled(&self, factor: Complex64) -> Self {
        Self { amplitudes: self.amplitudes.iter().map(|a| a * factor).collect(), ..self.clone() }
    }

    /// Linear interpolation of the amplitude at `x`; zero outside the grid.
    pub fn amplitude_at(&self, x: f64) -> Complex64 {
        let u = (x - self.grid_min) / self.grid_step;
        let last = (self.len() - 1) as f64;
        if !(0.0..=last).contains(&u) {
            return Complex64::new(0.0, 0.0);
        }
        let i = (u.floor() as usize).min(self.len() - 1);
        if i + 1 >= self.len() {
            return self.amplitudes[i];
        }
        let frac = u - i as f64;
        self.amplitudes[i] * (1.0 - frac) + self.amplitudes[i + 1] * frac
    }
}

fn gaussian_amplitude(x: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    (-0.25 * z * z).exp()
}

/// Uniform grid description: `points` cell centers from `min` to `max` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn step(&self) -> Result<f64, SourceError> {
        if self.points < 2 {
            return Err(SourceError::InvalidForm(format!("grid needs >= 2 points, got {}", self.points)));
        }
        let step = (self.max - self.min) / (self.points - 1) as f64;
        if !(step > 0.0 && step.is_finite()) {
            return Err(SourceError::InvalidStep(step));
        }
        Ok(step)
    }
}

/// Entrance window of detector `detector_index` (1-based), centered at `center`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntranceWindow {
    pub center: f64,
    pub width: f64,
    pub detector_index: usize,
}

impl EntranceWindow {
    pub fn new(center: f64, width: f64, detector_index: usize) -> Result<Self, SourceError> {
        if !(width > 0.0 && width.is_finite()) || !center.is_finite() {
            return Err(SourceError::InvalidWidth { index: detector_index, width });
        }
        Ok(Self { center, width, detector_index })
    }

    /// Window spanning `[lo, hi]`.
    pub fn spanning(lo: f64, hi: f64, detector_index: usize) -> Result<Self, SourceError> {
        Self::new(0.5 * (lo + hi), hi - lo, detector_index)
    }

    pub fn lo(&self) -> f64 {
        self.center - 0.5 * self.width
    }

    pub fn hi(&self) -> f64 {
        self.center + 0.5 * self.width
    }
}

/// Checks that windows are sorted by center and pairwise non-overlapping.
/// Touching edges are allowed.
pub fn validate_windows(windows: &[EntranceWindow]) -> Result<(), SourceError> {
    for w in windows {
        if !(w.width > 0.0) {
            return Err(SourceError::InvalidWidth { index: w.detector_index, width: w.width });
        }
    }
    for pair in windows.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if b.center < a.center {
            return Err(SourceError::Unsorted { first: a.detector_index, second: b.detector_index });
        }
        if a.hi() > b.lo() {
            return Err(SourceError::Overlap { first: a.detector_index, second: b.detector_index });
        }
    }
    Ok(())
}

/// Which window the collapsed particle passed, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArrivalOutcome {
    Hit { detector_index: usize },
    Miss,
}

/// Rescales `psi` by one positive real factor so that `sum |psi_i|^2 * step = 1`.
pub fn normalize(psi: &Wavefunction) -> Result<Wavefunction, SourceError> {
    let norm = psi.norm_sqr();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(SourceError::ZeroNorm);
    }
    let factor = norm.sqrt().recip();
    Ok(Wavefunction { amplitudes: psi.amplitudes.iter().map(|a| a * factor).collect(), ..psi.clone() })
}

/// Born-rule probability that the particle passes `window`.
pub fn window_probability(psi: &Wavefunction, window: &EntranceWindow) -> f64 {
    interval_probability(psi, window.lo(), window.hi())
}

/// Probability mass of `|psi|^2` on `[lo, hi]` with linear partial-cell weighting.
pub fn interval_probability(psi: &Wavefunction, lo: f64, hi: f64) -> f64 {
    if !(hi > lo) {
        return 0.0;
    }
    let step = psi.grid_step;
    let half = 0.5 * step;
    // Only cells whose extent intersects [lo, hi] contribute.
    let first = (((lo - psi.grid_min + half) / step).floor().max(0.0)) as usize;
    let mut total = 0.0;
    for i in first..psi.len() {
        let c = psi.position(i);
        let (cl, ch) = (c - half, c + half);
        if cl >= hi {
            break;
        }
        let overlap = ch.min(hi) - cl.max(lo);
        if overlap > 0.0 {
            total += psi.amplitudes[i].norm_sqr() * overlap;
        }
    }
    total.clamp(0.0, 1.0)
}

/// Categorical sampler over a fixed window array; `Miss` takes the residual mass.
#[derive(Debug, Clone)]
pub struct ArrivalSampler {
    probabilities: Vec<f64>,
    cumulative: Vec<f64>,
    indices: Vec<usize>,
}

impl ArrivalSampler {
    pub fn new(psi: &Wavefunction, windows: &[EntranceWindow]) -> Self {
        let probabilities: Vec<f64> = windows.iter().map(|w| window_probability(psi, w)).collect();
        Self::from_probabilities(probabilities, windows.iter().map(|w| w.detector_index).collect())
    }

    /// Sampler over explicit per-window probabilities (must sum to at most 1).
    pub fn from_probabilities(probabilities: Vec<f64>, indices: Vec<usize>) -> Self {
        let mut acc = 0.0;
        let cumulative = probabilities
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Self { probabilities, cumulative, indices }
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// One uniform draw per call.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ArrivalOutcome {
        let u: f64 = rng.random();
        let k = self.cumulative.partition_point(|&c| c <= u);
        match self.indices.get(k) {
            Some(&detector_index) => ArrivalOutcome::Hit { detector_index },
            None => ArrivalOutcome::Miss,
        }
    }
}

/// Collapses `psi` onto one of `windows` (or `Miss`) with Born-rule weights.
pub fn sample_arrival<R: Rng + ?Sized>(psi: &Wavefunction, windows: &[EntranceWindow], rng: &mut R) -> ArrivalOutcome {
    ArrivalSampler::new(psi, windows).sample(rng)
}

/// Mean number of particles through each window: `N_s * p_n`.
pub fn expected_counts(emitted: u64, probabilities: &[f64]) -> Vec<f64> {
    probabilities.iter().map(|p| emitted as f64 * p).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn std_grid() -> GridSpec {
        GridSpec { min: -8.0, max: 8.0, points: 1601 }
    }

    #[test]
    fn normalize_identity_on_normalized_input() {
        let psi = Wavefunction::gaussian(&std_grid(), 0.0, 1.0).unwrap();
        let again = normalize(&psi).unwrap();
        for (a, b) in psi.amplitudes().iter().zip(again.amplitudes()) {
            assert!((a - b).norm() <= 1e-12 * a.norm().max(1e-300));
        }
    }

    #[test]
    fn normalize_rejects_zero() {
        let psi = Wavefunction::new(0.0, 0.1, vec![Complex64::new(0.0, 0.0); 10]).unwrap();
        assert_eq!(normalize(&psi), Err(SourceError::ZeroNorm));
    }

    #[test]
    fn normalize_is_scale_invariant() {
        let psi = Wavefunction::gaussian(&std_grid(), 0.3, 0.7).unwrap();
        let doubled = psi.scaled(Complex64::new(2.0, 0.0));
        let n = normalize(&doubled).unwrap();
        for (a, b) in psi.amplitudes().iter().zip(n.amplitudes()) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!((n.norm_sqr() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn full_support_window_is_one() {
        let psi = Wavefunction::gaussian(&std_grid(), 0.0, 1.0).unwrap();
        let (lo, hi) = psi.support();
        let w = EntranceWindow::spanning(lo, hi, 1).unwrap();
        assert!((window_probability(&psi, &w) - 1.0).abs() < 1e-9);
        let wide = EntranceWindow::spanning(lo - 5.0, hi + 5.0, 1).unwrap();
        assert!((window_probability(&psi, &wide) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_region_window_is_zero() {
        let psi = Wavefunction::uniform(&std_grid(), -1.0, 1.0).unwrap();
        let w = EntranceWindow::spanning(3.0, 5.0, 1).unwrap();
        assert_eq!(window_probability(&psi, &w), 0.0);
        let outside = EntranceWindow::spanning(100.0, 200.0, 1).unwrap();
        assert_eq!(window_probability(&psi, &outside), 0.0);
    }

    #[test]
    fn partial_cell_weighting() {
        let psi = Wavefunction::new(0.0, 1.0, vec![Complex64::new(1.0, 0.0)]).unwrap();
        // single cell [-0.5, 0.5]; window covers a quarter of it
        let w = EntranceWindow::spanning(0.0, 0.25, 1).unwrap();
        assert!((window_probability(&psi, &w) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn overlapping_windows_named() {
        let ws = [EntranceWindow::spanning(0.0, 1.0, 1).unwrap(), EntranceWindow::spanning(0.9, 2.0, 2).unwrap()];
        assert_eq!(validate_windows(&ws), Err(SourceError::Overlap { first: 1, second: 2 }));
        let touching = [EntranceWindow::spanning(0.0, 1.0, 1).unwrap(), EntranceWindow::spanning(1.0, 2.0, 2).unwrap()];
        assert!(validate_windows(&touching).is_ok());
    }

    #[test]
    fn single_covering_window_always_hits() {
        let psi = Wavefunction::gaussian(&std_grid(), 0.0, 1.0).unwrap();
        let (lo, hi) = psi.support();
        let ws = [EntranceWindow::spanning(lo, hi, 1).unwrap()];
        let sampler = ArrivalSampler::new(&psi, &ws);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            assert_eq!(sampler.sample(&mut rng), ArrivalOutcome::Hit { detector_index: 1 });
        }
    }

    #[test]
    fn symmetric_windows_equal_frequencies() {
        let psi = Wavefunction::gaussian(&std_grid(), 0.0, 1.0).unwrap();
        let ws = [EntranceWindow::spanning(-2.0, -0.5, 1).unwrap(), EntranceWindow::spanning(0.5, 2.0, 2).unwrap()];
        let sampler = ArrivalSampler::new(&psi, &ws);
        assert!((sampler.probabilities()[0] - sampler.probabilities()[1]).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = 1_000_000u64;
        let (mut a, mut b) = (0u64, 0u64);
        for _ in 0..m {
            match sampler.sample(&mut rng) {
                ArrivalOutcome::Hit { detector_index: 1 } => a += 1,
                ArrivalOutcome::Hit { detector_index: 2 } => b += 1,
                _ => {}
            }
        }
        // difference of two multinomial cells: var = m (p1 + p2 - (p1 - p2)^2)
        let p = sampler.probabilities()[0];
        let sd = (m as f64 * 2.0 * p).sqrt();
        assert!(((a as f64) - (b as f64)).abs() <= 4.0 * sd, "a={a} b={b} sd={sd}");
    }

    #[test]
    fn expected_counts_products() {
        assert_eq!(expected_counts(0, &[0.2, 0.8]), vec![0.0, 0.0]);
        assert_eq!(expected_counts(1000, &[0.25, 0.75]), vec![250.0, 750.0]);
    }

    #[test]
    fn table_requires_uniform_spacing() {
        let rows = [[0.0, 1.0, 0.0], [0.1, 1.0, 0.0], [0.35, 1.0, 0.0]];
        assert_eq!(Wavefunction::from_table(&rows), Err(SourceError::NonUniformTable(2)));
        let ok = [[0.0, 1.0, 0.0], [0.1, 0.0, 1.0], [0.2, 1.0, 0.0]];
        let psi = Wavefunction::from_table(&ok).unwrap();
        assert!((psi.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn displaced_moves_probability() {
        let psi = Wavefunction::gaussian(&std_grid(), 0.0, 0.5).unwrap();
        let moved = psi.displaced(3.0);
        let w = EntranceWindow::spanning(2.0, 4.0, 1).unwrap();
        let w0 = EntranceWindow::spanning(-1.0, 1.0, 1).unwrap();
        assert!((window_probability(&moved, &w) - window_probability(&psi, &w0)).abs() < 1e-12);
    }
}
