//! Strict JSON experiment configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use polyflow::datamodel::{SignalFamily, SignalSpec, SineComponent, SplitMode};
use polyflow::dit::DitShape;
use polyflow::flow::FlowConfig;
use polyflow::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub data: DataSection,
    pub basis: BasisSection,
    pub predictor: PredictorSection,
    pub flow: FlowSection,
    pub sampler: SamplerSection,
    pub generalization: GeneralizationSection,
    pub dit: DitSection,
    pub experiments: Vec<CheckId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub n_points: usize,
    pub n_input: usize,
    pub mode: SplitMode,
    /// Grid spacing; `2π / N` when absent.
    #[serde(default)]
    pub delta: Option<f64>,
    pub noise_variance: f64,
    pub per_signal: usize,
    pub signals: Vec<SignalFamily<f64>>,
}

impl DataSection {
    pub fn delta(&self) -> f64 {
        self.delta
            .unwrap_or(std::f64::consts::TAU / self.n_points as f64)
    }

    pub fn n_output(&self) -> usize {
        self.n_points - self.n_input
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSection {
    pub size: usize,
    /// Sizes swept by the basis check and the `basis` command's table.
    pub check_sizes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Regularized,
    Kernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandwidthSetting {
    Fixed(f64),
    Named(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoTag {
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorSection {
    pub kind: PredictorKind,
    pub bandwidth: BandwidthSetting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    pub alpha: f64,
    pub sigma_min: f64,
    pub steps: usize,
    pub ode_substeps: usize,
    pub mc_samples: usize,
}

impl FlowSection {
    pub fn flow_config(&self) -> polyflow::Result<FlowConfig<f64>> {
        FlowConfig::new(self.alpha, self.sigma_min, self.steps, self.ode_substeps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    DriftOnly,
    Oracle,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub field: FieldKind,
    pub noise_on: bool,
    /// `α T · L̂₁`; the sampler's `α` is rescaled to this product.
    pub step_scale: f64,
    pub steps: usize,
    pub convergence_steps: Vec<usize>,
    pub eps: f64,
    pub mc_draws: usize,
    pub trajectories: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneralizationSection {
    pub sizes: Vec<usize>,
    pub variances: Vec<f64>,
    pub resamples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DitSection {
    /// Sequence length; the smallest fitting `L` when absent.
    #[serde(default)]
    pub seq_len: Option<usize>,
    pub width: usize,
    pub blocks: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub hidden: usize,
    pub init_scale: f64,
    pub steps: usize,
    pub lr: f64,
    pub mc_batch: usize,
    /// Flow hyperparameters for training; the main flow section when absent.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub sigma_min: Option<f64>,
}

impl DitSection {
    pub fn shape(&self, n_output: usize, n_input: usize) -> DitShape {
        let mut s = DitShape::fitted(
            n_output,
            n_input,
            self.width,
            self.blocks,
            self.heads,
            self.head_dim,
            self.hidden,
        );
        if let Some(l) = self.seq_len {
            s.seq_len = l;
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckId {
    PinvLemmas,
    Basis,
    FlowIdentities,
    GdEquivalence,
    UpdateMoments,
    Descent,
    Convergence,
    Generalization,
    EndToEnd,
    Dit,
}

impl CheckId {
    pub const ALL: [CheckId; 10] = [
        CheckId::PinvLemmas,
        CheckId::Basis,
        CheckId::FlowIdentities,
        CheckId::GdEquivalence,
        CheckId::UpdateMoments,
        CheckId::Descent,
        CheckId::Convergence,
        CheckId::Generalization,
        CheckId::EndToEnd,
        CheckId::Dit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CheckId::PinvLemmas => "pinv_lemmas",
            CheckId::Basis => "basis",
            CheckId::FlowIdentities => "flow_identities",
            CheckId::GdEquivalence => "gd_equivalence",
            CheckId::UpdateMoments => "update_moments",
            CheckId::Descent => "descent",
            CheckId::Convergence => "convergence",
            CheckId::Generalization => "generalization",
            CheckId::EndToEnd => "end_to_end",
            CheckId::Dit => "dit",
        }
    }

    /// The statement the check exercises.
    pub fn anchor(self) -> &'static str {
        match self {
            CheckId::PinvLemmas => "pseudoinverse norm bound ||A^+|| <= 1/lambda_min and perturbation bound ||A^+ - B^+|| <= max(||A^+||^2, ||B^+||^2) ||A - B||",
            CheckId::Basis => "orthonormal polynomial basis; projection error O(N L0 / sqrt(n))",
            CheckId::FlowIdentities => "conditional target is d(psi)/dt and minimizes the flow-matching loss",
            CheckId::GdEquivalence => "the Euler sampler with the drift-only field is gradient descent on u(w)",
            CheckId::UpdateMoments => "unbiased update, update norm and Lipschitz smoothness of grad u",
            CheckId::Descent => "per-step expected decrease of u",
            CheckId::Convergence => "min_t ||grad u(w_t)||^2 decreases with T",
            CheckId::Generalization => "risk of F-hat bounded by noise and projection terms",
            CheckId::EndToEnd => "sampler output error bounded by eps0 + eps1",
            CheckId::Dit => "transformer field: equivariance, exact gradients, trainable flow-matching loss",
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, Error> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        let d = &self.data;
        if d.n_points < 2 {
            return bad(format!("data.n_points = {} must be >= 2", d.n_points));
        }
        if d.n_input == 0 || d.n_input >= d.n_points {
            return bad(format!(
                "data.n_input = {} must satisfy 1 <= N_x < N = {}",
                d.n_input, d.n_points
            ));
        }
        if !(d.delta().is_finite() && d.delta() > 0.0) {
            return bad("data.delta must be > 0".into());
        }
        if !(d.noise_variance.is_finite() && d.noise_variance >= 0.0) {
            return bad("data.noise_variance must be >= 0".into());
        }
        if d.per_signal == 0 || d.signals.is_empty() {
            return bad("data needs at least one signal and per_signal >= 1".into());
        }
        for s in &d.signals {
            SignalSpec::new(s.clone(), d.n_points, d.delta())?;
        }
        let n = self.basis.size;
        if n == 0 || n > d.n_points {
            return bad(format!("basis.size n = {n} must satisfy 1 <= n <= N = {}", d.n_points));
        }
        if n > d.n_input {
            return bad(format!(
                "basis.size n = {n} exceeds N_x = {}: M(I_x)P cannot have full column rank",
                d.n_input
            ));
        }
        if n > d.n_output() {
            return bad(format!(
                "basis.size n = {n} exceeds N_y = {}: G cannot have full column rank",
                d.n_output()
            ));
        }
        for &k in &self.basis.check_sizes {
            if k == 0 || k > d.n_points {
                return bad(format!("basis.check_sizes entry {k} outside 1..=N"));
            }
        }
        if self.basis.check_sizes.is_empty() || self.basis.check_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return bad("basis.check_sizes must be non-empty and strictly increasing".into());
        }
        if let BandwidthSetting::Fixed(h) = self.predictor.bandwidth {
            if !(h.is_finite() && h > 0.0) {
                return bad(format!("predictor.bandwidth h = {h} must be > 0"));
            }
        }
        self.flow.flow_config()?;
        if self.flow.mc_samples == 0 {
            return bad("flow.mc_samples must be >= 1".into());
        }
        let s = &self.sampler;
        if !(s.step_scale.is_finite() && s.step_scale > 0.0) {
            return bad("sampler.step_scale must be > 0".into());
        }
        if s.steps == 0 || s.convergence_steps.is_empty() || s.convergence_steps.contains(&0) {
            return bad("sampler step counts must be >= 1 and convergence_steps non-empty".into());
        }
        if !(s.eps > 0.0) || s.mc_draws < 2 || s.trajectories == 0 {
            return bad("sampler.eps > 0, mc_draws >= 2 and trajectories >= 1 required".into());
        }
        let g = &self.generalization;
        if g.sizes.is_empty() || g.variances.is_empty() || g.resamples == 0 {
            return bad("generalization grid must be non-empty with resamples >= 1".into());
        }
        for &k in &g.sizes {
            if k == 0 || k > d.n_input {
                return bad(format!("generalization.sizes entry {k} outside 1..=N_x"));
            }
        }
        if g.variances.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("generalization.variances must be >= 0".into());
        }
        let t = &self.dit;
        self.dit_shape().validate()?;
        if !(t.lr.is_finite() && t.lr >= 0.0) || !(t.init_scale.is_finite() && t.init_scale >= 0.0) {
            return bad("dit.lr and dit.init_scale must be >= 0".into());
        }
        if t.mc_batch == 0 {
            return bad("dit.mc_batch must be >= 1".into());
        }
        self.dit_flow_config()?;
        if self.experiments.is_empty() {
            return bad("experiments selector list is empty".into());
        }
        let mut seen = self.experiments.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.experiments.len() {
            return bad("experiments selector list has duplicates".into());
        }
        Ok(())
    }

    pub fn dit_shape(&self) -> DitShape {
        self.dit.shape(self.data.n_output(), self.data.n_input)
    }

    pub fn dit_flow_config(&self) -> polyflow::Result<FlowConfig<f64>> {
        FlowConfig::new(
            self.dit.alpha.unwrap_or(self.flow.alpha),
            self.dit.sigma_min.unwrap_or(self.flow.sigma_min),
            self.flow.steps,
            self.flow.ode_substeps,
        )
    }

    /// The desk-scale default problem.
    pub fn default_toy() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            data: DataSection {
                n_points: 32,
                n_input: 24,
                mode: SplitMode::Imputation,
                delta: None,
                noise_variance: 1e-4,
                per_signal: 4,
                signals: vec![
                    SignalFamily::SineMixture {
                        components: vec![SineComponent {
                            amplitude: 1.0,
                            frequency: 1.0,
                            phase: 0.0,
                        }],
                    },
                    SignalFamily::LinearRamp {
                        slope: 1.0,
                        intercept: 0.0,
                    },
                    SignalFamily::DampedTrend {
                        level: 0.5,
                        slope: 1.0,
                        rate: 0.5,
                    },
                ],
            },
            basis: BasisSection {
                size: 8,
                check_sizes: vec![4, 8, 16],
            },
            predictor: PredictorSection {
                kind: PredictorKind::Regularized,
                bandwidth: BandwidthSetting::Named(AutoTag::Auto),
            },
            flow: FlowSection {
                alpha: 0.1,
                sigma_min: 0.5,
                steps: 64,
                ode_substeps: 64,
                mc_samples: 256,
            },
            sampler: SamplerSection {
                field: FieldKind::DriftOnly,
                noise_on: false,
                step_scale: 0.5,
                steps: 256,
                convergence_steps: vec![4, 16, 64, 256],
                eps: 1e-3,
                mc_draws: 10_000,
                trajectories: 32,
            },
            generalization: GeneralizationSection {
                sizes: vec![2, 4, 6, 8],
                variances: vec![0.0, 1e-4, 1e-2],
                resamples: 64,
            },
            dit: DitSection {
                seq_len: None,
                width: 4,
                blocks: 1,
                heads: 2,
                head_dim: 1,
                hidden: 4,
                init_scale: 0.1,
                steps: 500,
                lr: 0.05,
                mc_batch: 32,
                alpha: None,
                sigma_min: None,
            },
            experiments: CheckId::ALL.to_vec(),
        }
    }

    /// The small transformer problem: `N = 16`, `N_y = 4`, `n = 4`.
    pub fn dit_toy() -> Self {
        let mut cfg = Self::default_toy();
        cfg.data.n_points = 16;
        cfg.data.n_input = 12;
        cfg.data.signals.truncate(2);
        cfg.data.noise_variance = 1e-3;
        cfg.basis.size = 4;
        cfg.basis.check_sizes = vec![2, 4, 8];
        cfg.generalization.sizes = vec![2, 3, 4];
        cfg.experiments = vec![CheckId::Dit];
        cfg
    }
}
