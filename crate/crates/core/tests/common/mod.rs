#![allow(dead_code)]

use std::collections::BTreeSet;

use dfp_core::data::{build_day_samples, generate_synthetic, FeatureBlock, FeatureLayout, SynthConfig};
use dfp_core::ess::{DaySample, PriceCurve};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Day-ahead style curve: lognormal around 40 $/MWh.
pub fn lognormal_curve(rng: &mut ChaCha8Rng, t: usize) -> PriceCurve {
    let d = LogNormal::new(40f64.ln(), 0.35).unwrap();
    PriceCurve::new((0..t).map(|_| d.sample(rng)).collect()).unwrap()
}

pub fn uniform_curve(rng: &mut ChaCha8Rng, t: usize, lo: f64, hi: f64) -> PriceCurve {
    PriceCurve::new((0..t).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Temperature, squared temperature and weekend bit: the synthetic
/// generator's own price drivers.
pub fn driver_layout() -> FeatureLayout {
    FeatureLayout {
        blocks: vec![
            FeatureBlock::Temperature,
            FeatureBlock::TemperatureSq,
            FeatureBlock::IsWeekend,
        ],
    }
}

pub fn synthetic_days(cfg: &SynthConfig, layout: &FeatureLayout) -> Vec<DaySample> {
    let syn = generate_synthetic(cfg).unwrap();
    build_day_samples(&syn.series, layout, &BTreeSet::new()).unwrap()
}
