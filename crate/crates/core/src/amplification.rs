//! Phase 2: the avalanche turning one start reaction into many carriers.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

/// Elementary charge (C), exact SI value.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AmplifierModel {
    /// Photomultiplier dynode system; `stage_means[i]` is the mean secondary yield of dynode i.
    DynodeChain { stage_means: Vec<f64> },
    /// Proportional counter: Poisson ionisation with mean E/W, charge multiplied by `gain`.
    GasGain { w_value: f64, gain: f64 },
    /// Electron-hole pairs with mean E/pair_energy, thinned by collection efficiency.
    Semiconductor { pair_energy: f64, collection_efficiency: f64 },
}

impl AmplifierModel {
    pub(crate) fn validate(&self) -> Result<(), String> {
        match self {
            AmplifierModel::DynodeChain { stage_means } => {
                if let Some(d) = stage_means.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
                    return Err(format!("dynode yield {d} must be > 0"));
                }
            }
            AmplifierModel::GasGain { w_value, gain } => {
                if !(*w_value > 0.0 && w_value.is_finite()) {
                    return Err(format!("w_value {w_value} must be > 0"));
                }
                if !(*gain >= 1.0 && gain.is_finite()) {
                    return Err(format!("gain {gain} must be >= 1"));
                }
            }
            AmplifierModel::Semiconductor { pair_energy, collection_efficiency } => {
                if !(*pair_energy > 0.0 && pair_energy.is_finite()) {
                    return Err(format!("pair_energy {pair_energy} must be > 0"));
                }
                if !(0.0..=1.0).contains(collection_efficiency) {
                    return Err(format!("collection_efficiency {collection_efficiency} not in [0, 1]"));
                }
            }
        }
        Ok(())
    }

    /// Charge multiplication applied on top of the carrier count.
    pub fn charge_gain(&self) -> f64 {
        match self {
            AmplifierModel::GasGain { gain, .. } => *gain,
            _ => 1.0,
        }
    }

    /// Mean number of carriers per primary after amplification.
    pub fn mean_multiplication(&self) -> f64 {
        match self {
            AmplifierModel::DynodeChain { stage_means } => stage_means.iter().product(),
            _ => 1.0,
        }
    }

    /// Mean primary count for deposited energy `e_dep`.
    pub fn mean_primaries(&self, e_dep: f64) -> f64 {
        if e_dep <= 0.0 {
            return 0.0;
        }
        match self {
            AmplifierModel::DynodeChain { .. } => 1.0,
            AmplifierModel::GasGain { w_value, .. } => e_dep / w_value,
            AmplifierModel::Semiconductor { pair_energy, collection_efficiency } => {
                e_dep / pair_energy * collection_efficiency
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AvalancheResult {
    pub carrier_count: u64,
    /// Collected charge (C).
    pub collected_charge: f64,
}

impl AvalancheResult {
    pub const ZERO: AvalancheResult = AvalancheResult { carrier_count: 0, collected_charge: 0.0 };
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    // mean is finite and positive here, so construction cannot fail below the crate's limit
    Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(u64::MAX)
}

/// Primary carriers released by `e_dep` eV.
///
/// The dynode chain receives the single photoelectron ejected upstream.
pub fn primary_carriers<R: Rng + ?Sized>(e_dep: f64, model: &AmplifierModel, rng: &mut R) -> u64 {
    if !(e_dep > 0.0) {
        return 0;
    }
    match model {
        AmplifierModel::DynodeChain { .. } => 1,
        AmplifierModel::GasGain { w_value, .. } => poisson(e_dep / w_value, rng),
        AmplifierModel::Semiconductor { pair_energy, collection_efficiency } => {
            let created = poisson(e_dep / pair_energy, rng);
            if created == 0 {
                return 0;
            }
            Binomial::new(created, *collection_efficiency).map(|b| b.sample(rng)).unwrap_or(0)
        }
    }
}

/// Amplifies `primaries` carriers through `model`.
///
/// Dynode stages are a Galton-Watson process with Poisson(delta_i) offspring.
/// A population of `n` carriers is advanced with a single Poisson(n * delta_i)
/// draw, which is exactly the law of the sum of `n` independent offspring counts.
pub fn amplify<R: Rng + ?Sized>(primaries: u64, model: &AmplifierModel, rng: &mut R) -> AvalancheResult {
    if primaries == 0 {
        return AvalancheResult::ZERO;
    }
    let carrier_count = match model {
        AmplifierModel::DynodeChain { stage_means } => {
            let mut n = primaries;
            for delta in stage_means {
                if n == 0 {
                    break;
                }
                n = poisson(n as f64 * delta, rng);
            }
            n
        }
        AmplifierModel::GasGain { .. } | AmplifierModel::Semiconductor { .. } => primaries,
    };
    AvalancheResult { carrier_count, collected_charge: carrier_count as f64 * ELEMENTARY_CHARGE * model.charge_gain() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    #[test]
    fn zero_energy_gives_zero_carriers() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for m in [
            AmplifierModel::GasGain { w_value: 25.0, gain: 10.0 },
            AmplifierModel::Semiconductor { pair_energy: 3.6, collection_efficiency: 0.9 },
            AmplifierModel::DynodeChain { stage_means: vec![4.0; 10] },
        ] {
            assert_eq!(primary_carriers(0.0, &m, &mut rng), 0);
            assert_eq!(amplify(0, &m, &mut rng), AvalancheResult::ZERO);
        }
    }

    #[test]
    fn gas_primaries_are_poisson_with_mean_e_over_w() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = AmplifierModel::GasGain { w_value: 25.0, gain: 1.0 };
        let xs: Vec<f64> = (0..100_000).map(|_| primary_carriers(1e6, &m, &mut rng) as f64).collect();
        let (mean, se) = mean_and_stderr(&xs);
        assert!((mean - 4e4).abs() <= 4.0 * se, "mean {mean} se {se}");
        // Poisson: stderr of the mean is sqrt(4e4 / 1e5)
        assert!((se - (4e4f64 / 1e5).sqrt()).abs() < 0.05);
    }

    #[test]
    fn photoelectron_path_has_one_primary() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = AmplifierModel::DynodeChain { stage_means: vec![4.0; 10] };
        assert_eq!(primary_carriers(1.2, &m, &mut rng), 1);
    }

    #[test]
    fn semiconductor_thinning_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = AmplifierModel::Semiconductor { pair_energy: 3.6, collection_efficiency: 0.5 };
        let xs: Vec<f64> = (0..50_000).map(|_| primary_carriers(3600.0, &m, &mut rng) as f64).collect();
        let (mean, se) = mean_and_stderr(&xs);
        assert!((mean - 500.0).abs() <= 4.0 * se);
        let r = amplify(500, &m, &mut rng);
        assert_eq!(r.carrier_count, 500);
        assert_eq!(r.collected_charge, 500.0 * ELEMENTARY_CHARGE);
    }

    #[test]
    fn gas_gain_is_deterministic_on_charge() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = AmplifierModel::GasGain { w_value: 25.0, gain: 50.0 };
        let r = amplify(100, &m, &mut rng);
        assert_eq!(r.carrier_count, 100);
        assert_eq!(r.collected_charge, 100.0 * ELEMENTARY_CHARGE * 50.0);
    }

    #[test]
    fn dynode_mean_matches_product_of_yields() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for (primaries, deltas) in [(1u64, vec![4.0; 10]), (3, vec![2.5, 3.0, 6.0, 1.5]), (10, vec![0.8; 5])] {
            let m = AmplifierModel::DynodeChain { stage_means: deltas.clone() };
            let xs: Vec<f64> = (0..20_000).map(|_| amplify(primaries, &m, &mut rng).carrier_count as f64).collect();
            let (mean, se) = mean_and_stderr(&xs);
            let expected = primaries as f64 * deltas.iter().product::<f64>();
            assert!((mean - expected).abs() <= 4.0 * se, "{deltas:?}: {mean} vs {expected} (se {se})");
        }
    }

    #[test]
    fn raising_a_yield_raises_the_mean() {
        let base = AmplifierModel::DynodeChain { stage_means: vec![3.0; 4] };
        let raised = AmplifierModel::DynodeChain { stage_means: vec![3.0, 3.5, 3.0, 3.0] };
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        let runs = 100_000;
        let ma: f64 = (0..runs).map(|_| amplify(1, &base, &mut a).carrier_count as f64).sum::<f64>() / runs as f64;
        let mb: f64 = (0..runs).map(|_| amplify(1, &raised, &mut b).carrier_count as f64).sum::<f64>() / runs as f64;
        assert!(mb >= ma, "{mb} < {ma}");
    }

    #[test]
    fn same_stream_same_avalanche() {
        let m = AmplifierModel::DynodeChain { stage_means: vec![4.0; 10] };
        let r1 = amplify(2, &m, &mut ChaCha8Rng::seed_from_u64(9));
        let r2 = amplify(2, &m, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(r1, r2);
    }
}
