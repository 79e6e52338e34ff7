//! The seeded problem instance shared by every command.

use polyflow::datamodel::{make_dataset, make_index_sets, Dataset, IndexSets, SignalSpec};
use polyflow::flow::FlowContext;
use polyflow::polybasis::{build_basis, PolynomialBasis};
use polyflow::predictor::{Bandwidth, KernelPredictor, Predictor, RegularizedPredictor};
use polyflow::rng::derive_seed;
use polyflow::sampler::GdView;
use polyflow::Result;

use crate::config::{BandwidthSetting, ExperimentConfig, PredictorKind};

/// Sub-seed labels; each consumer draws from `derive_seed(seed, [label, ..])`.
pub mod stream {
    pub const SPLIT: u64 = 1;
    pub const DATA: u64 = 2;
    pub const PINV: u64 = 3;
    pub const FLOW: u64 = 4;
    pub const X0: u64 = 5;
    pub const MONTE_CARLO: u64 = 6;
    pub const GENERALIZE: u64 = 7;
    pub const END_TO_END: u64 = 8;
    pub const DIT: u64 = 9;
    pub const SAMPLE: u64 = 10;
}

pub struct Problem {
    pub cfg: ExperimentConfig,
    pub sets: IndexSets,
    pub basis: PolynomialBasis<f64>,
    pub dataset: Dataset<f64>,
    pub regularized: RegularizedPredictor<f64>,
    pub ctx: FlowContext<f64>,
}

impl Problem {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let d = &cfg.data;
        let sets = make_index_sets(d.n_points, d.n_input, d.mode, cfg.seed_for(&[stream::SPLIT]))?;
        let signals = d
            .signals
            .iter()
            .map(|f| SignalSpec::new(f.clone(), d.n_points, d.delta()))
            .collect::<Result<Vec<_>>>()?;
        let dataset = make_dataset(
            &signals,
            d.per_signal,
            d.delta(),
            d.noise_variance,
            d.n_points,
            &sets,
            cfg.seed_for(&[stream::DATA]),
        )?;
        let basis = build_basis(d.n_points, cfg.basis.size)?;
        let regularized = RegularizedPredictor::new(&basis, &sets)?;
        let ctx = FlowContext::from_basis(cfg.flow.flow_config()?, &basis, &sets)?;
        Ok(Self {
            cfg: cfg.clone(),
            sets,
            basis,
            dataset,
            regularized,
            ctx,
        })
    }

    /// The predictor selected by the config.
    pub fn predictor(&self) -> Result<Box<dyn Predictor<f64>>> {
        Ok(match self.cfg.predictor.kind {
            PredictorKind::Regularized => Box::new(self.regularized.clone()),
            PredictorKind::Kernel => {
                let h = match self.cfg.predictor.bandwidth {
                    BandwidthSetting::Fixed(h) => Bandwidth::Fixed(h),
                    BandwidthSetting::Named(_) => Bandwidth::Auto,
                };
                Box::new(KernelPredictor::new(&self.dataset, &self.basis, h)?)
            }
        })
    }

    /// Gradient-descent view targeting `predictor(f_x)` with `T` steps and
    /// `α T = step_scale / L̂₁`.
    pub fn view(&self, predictor: &dyn Predictor<f64>, f_x: &[f64], steps: usize) -> Result<GdView<f64>> {
        let view = GdView::single(self.ctx.clone(), predictor.predict(f_x)?)?;
        let cfg = view.scaled_config(steps, self.cfg.sampler.step_scale)?;
        view.with_config(cfg)
    }
}

impl ExperimentConfig {
    pub fn seed_for(&self, path: &[u64]) -> u64 {
        derive_seed(self.seed, path)
    }
}
