//! JSON run configuration: parsing with key-path errors, resolution of
//! per-run defaults, and emission of the fully resolved document.

use crate::error::{LobError, Result};
use crate::imbalance::{PhiLaw, StudyModel, StudyParams};
use crate::kernels::{BinomialPoissonFamily, KernelFamily, LocationScaleFamily};
use crate::model::ScalingParams;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

fn d_n() -> u32 {
    100
}
fn d_t() -> f64 {
    2.0
}
fn d_m() -> f64 {
    25.0
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSection {
    #[serde(default = "d_n")]
    pub n: u32,
    #[serde(default = "d_t")]
    pub t_horizon: f64,
    #[serde(default = "d_m")]
    pub m_bound: f64,
}

impl Default for ScalingSection {
    fn default() -> Self {
        ScalingSection {
            n: d_n(),
            t_horizon: d_t(),
            m_bound: d_m(),
        }
    }
}

/// Model parameters: a named base run plus optional per-field overrides, so
/// every departure from the reference scenarios is visible in the file.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// 1 = downward bid jumps only; 2 = all directions with external
    /// amplification.
    pub run: Option<u8>,
    pub dp: Option<f64>,
    pub h: Option<f64>,
    pub gamma1: Option<f64>,
    pub eta1: Option<f64>,
    pub eta2: Option<f64>,
    pub kappa: Option<f64>,
    pub sigma: Option<f64>,
    pub lambda_bp: Option<f64>,
    pub lambda_bm: Option<f64>,
    pub lambda_ap: Option<f64>,
    pub lambda_am: Option<f64>,
    pub jbp: Option<f64>,
    pub jbm: Option<f64>,
    pub jap: Option<f64>,
    pub jam: Option<f64>,
    pub placement_size: Option<f64>,
    pub phi_law: Option<PhiLaw>,
    pub depth_guard: Option<bool>,
}

impl ModelSection {
    pub fn resolve(&self, n: u32) -> Result<StudyParams> {
        let mut sp = match self.run.unwrap_or(1) {
            1 => StudyParams::first_run(n),
            2 => StudyParams::second_run(n),
            r => {
                return Err(LobError::Validation {
                    key: "model.run".into(),
                    reason: format!("unknown base run {r} (expected 1 or 2)"),
                })
            }
        };
        macro_rules! over {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { sp.$f = v; } )* };
        }
        over!(
            dp, h, gamma1, eta1, eta2, kappa, sigma, lambda_bp, lambda_bm, lambda_ap, lambda_am,
            jbp, jbm, jap, jam, placement_size
        );
        // base jump sizes must be tick multiples strictly larger than one
        // tick; snap the scenario defaults when they were not overridden
        let dx = 1.0 / n as f64;
        let snap = |j: f64| (j / dx).abs().round().max(2.0) * dx * j.signum();
        if self.jbp.is_none() {
            sp.jbp = snap(sp.jbp);
        }
        if self.jbm.is_none() {
            sp.jbm = snap(sp.jbm);
        }
        if self.jap.is_none() {
            sp.jap = snap(sp.jap);
        }
        if self.jam.is_none() {
            sp.jam = snap(sp.jam);
        }
        if let Some(v) = self.phi_law {
            sp.phi_law = v;
        }
        if let Some(v) = self.depth_guard {
            sp.depth_guard = v;
        }
        Ok(sp)
    }

    fn explicit(run: u8, sp: &StudyParams) -> Self {
        ModelSection {
            run: Some(run),
            dp: Some(sp.dp),
            h: Some(sp.h),
            gamma1: Some(sp.gamma1),
            eta1: Some(sp.eta1),
            eta2: Some(sp.eta2),
            kappa: Some(sp.kappa),
            sigma: Some(sp.sigma),
            lambda_bp: Some(sp.lambda_bp),
            lambda_bm: Some(sp.lambda_bm),
            lambda_ap: Some(sp.lambda_ap),
            lambda_am: Some(sp.lambda_am),
            jbp: Some(sp.jbp),
            jbm: Some(sp.jbm),
            jap: Some(sp.jap),
            jam: Some(sp.jam),
            placement_size: Some(sp.placement_size),
            phi_law: Some(sp.phi_law),
            depth_guard: Some(sp.depth_guard),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelChoice {
    None,
    LocationScale,
    BinomialPoisson,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelsSection {
    pub family: KernelChoice,
    /// Poisson intensity (binomial-poisson family).
    pub lambda: f64,
    /// Pre-limit fine-grid resolution for the binomial approximation.
    pub n_pre: u64,
    /// Support bound of the mark laws.
    pub m: f64,
}

impl Default for KernelsSection {
    fn default() -> Self {
        KernelsSection {
            family: KernelChoice::None,
            lambda: 1.0,
            n_pre: 10_000,
            m: 20.0,
        }
    }
}

impl KernelsSection {
    pub fn build(&self) -> Result<Option<Box<dyn KernelFamily>>> {
        if self.lambda <= 0.0 {
            return Err(LobError::Validation {
                key: "kernels.lambda".into(),
                reason: "intensity must be positive".into(),
            });
        }
        match self.family {
            KernelChoice::None => Ok(None),
            KernelChoice::LocationScale => {
                let cdf = |x: f64| 0.5 * (1.0 + erf(x / 2.0f64.sqrt()));
                let fam = LocationScaleFamily::new(
                    self.m,
                    cdf,
                    |s| s.spread(),
                    |s| 1.0 + s.spread(),
                )?;
                Ok(Some(Box::new(fam)))
            }
            KernelChoice::BinomialPoisson => {
                let m = self.m.round() as u32;
                let lam = self.lambda;
                let n_pre = self.n_pre;
                let fam = BinomialPoissonFamily::new(
                    lam,
                    m,
                    n_pre,
                    |_s| 1,
                    move |_s| m,
                    move |_s| lam / n_pre as f64,
                )?;
                Ok(Some(Box::new(fam)))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimitSection {
    /// Euler step of the driving system.
    pub step: f64,
    /// Volume-grid spacing of the limit densities.
    pub spacing: f64,
}

impl Default for LimitSection {
    fn default() -> Self {
        LimitSection {
            step: 1.0e-3,
            spacing: 0.01,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessSection {
    pub paths: usize,
    pub seed: u64,
    /// Probe times (physical units) at which marginals are sampled.
    pub probes: Vec<f64>,
    /// Model sizes for convergence experiments.
    pub ns: Vec<u32>,
    pub with_remainders: bool,
    pub with_qv: bool,
}

impl Default for HarnessSection {
    fn default() -> Self {
        HarnessSection {
            paths: 200,
            seed: 1,
            probes: vec![1.0],
            ns: vec![16, 32, 64],
            with_remainders: false,
            with_qv: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub out_dir: String,
    /// Number of density snapshots per simulated path.
    pub snapshots: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            out_dir: "out".into(),
            snapshots: 5,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub scaling: ScalingSection,
    pub model: ModelSection,
    pub kernels: KernelsSection,
    pub limit: LimitSection,
    pub harness: HarnessSection,
    pub output: OutputSection,
}

impl Config {
    /// Parse a JSON document; unknown or ill-typed keys are reported with
    /// their full key path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            LobError::Validation {
                key: e.path().to_string(),
                reason: e.inner().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let scaling = self.scaling_params();
        scaling.validate().map_err(|e| LobError::Validation {
            key: "scaling".into(),
            reason: e.to_string(),
        })?;
        let sp = self.model.resolve(self.scaling.n)?;
        sp.validate(&scaling)?;
        if self.limit.step <= 0.0 || self.limit.spacing <= 0.0 {
            return Err(LobError::Validation {
                key: "limit.step".into(),
                reason: "step and spacing must be positive".into(),
            });
        }
        if self.harness.paths == 0 {
            return Err(LobError::Validation {
                key: "harness.paths".into(),
                reason: "need at least one path".into(),
            });
        }
        if self.harness.ns.is_empty() {
            return Err(LobError::Validation {
                key: "harness.ns".into(),
                reason: "need at least one model size".into(),
            });
        }
        self.kernels.build()?;
        Ok(())
    }

    pub fn scaling_params(&self) -> ScalingParams {
        ScalingParams::hf(self.scaling.n, self.scaling.t_horizon, self.scaling.m_bound)
    }

    pub fn model_params(&self) -> Result<StudyParams> {
        self.model.resolve(self.scaling.n)
    }

    pub fn build_model(&self) -> Result<StudyModel> {
        StudyModel::new(self.scaling_params(), self.model_params()?)
    }

    /// The same run with every defaulted key made explicit; re-parsing the
    /// emitted document reproduces this configuration.
    pub fn resolved(&self) -> Result<Config> {
        let sp = self.model.resolve(self.scaling.n)?;
        let mut out = self.clone();
        out.model = ModelSection::explicit(self.model.run.unwrap_or(1), &sp);
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
