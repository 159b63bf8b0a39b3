use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use causal_bart::bart::BartConfig;
use causal_bart::bcf::BcfConfig;
use causal_bart::dgp::{EffectForm, ResponseForm, SyntheticScenario};
use causal_bart::kfold::{AblationConfig, KfcbConfig, StandardError};
use causal_bart::learners::EstimatorConfig;
use causal_bart::propensity::PropensityConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    SLearner,
    #[serde(rename = "bart-f0f1")]
    BartF0F1,
    PsBart,
    DrLearner,
    XLearner,
    Bcf,
    #[serde(rename = "kfold-causal-bart")]
    KfoldCausalBart,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 7] = [
        EstimatorKind::SLearner,
        EstimatorKind::BartF0F1,
        EstimatorKind::PsBart,
        EstimatorKind::DrLearner,
        EstimatorKind::XLearner,
        EstimatorKind::Bcf,
        EstimatorKind::KfoldCausalBart,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::SLearner => "s-learner",
            EstimatorKind::BartF0F1 => "bart-f0f1",
            EstimatorKind::PsBart => "ps-bart",
            EstimatorKind::DrLearner => "dr-learner",
            EstimatorKind::XLearner => "x-learner",
            EstimatorKind::Bcf => "bcf",
            EstimatorKind::KfoldCausalBart => "kfold-causal-bart",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        let alias = match key.as_str() {
            "t-learner" | "f0f1" | "bart-f0-f1" => "bart-f0f1",
            "kfcb" | "kfold" => "kfold-causal-bart",
            other => other,
        };
        EstimatorKind::ALL
            .into_iter()
            .find(|e| e.name() == alias)
            .ok_or_else(|| CliError::Usage(format!("unknown estimator '{s}'")))
    }
}

/// Where the replications come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Source {
    Synthetic {
        response: ResponseForm,
        effect: EffectForm,
    },
    /// Realization files when `path` is given, else the setup-B surrogate on
    /// a fixed IHDP-shaped design.
    Ihdp {
        path: Option<PathBuf>,
    },
}

impl Source {
    pub fn id(&self, n: usize) -> String {
        match self {
            Source::Synthetic { response, effect } => SyntheticScenario::new(*response, *effect, n).id(),
            Source::Ihdp { path: Some(_) } => "ihdp".into(),
            Source::Ihdp { path: None } => "ihdp-surrogate".into(),
        }
    }

    /// `linear-homogeneous`, `heterogeneous-nonlinear`, `ihdp`, ...
    pub fn parse(s: &str, ihdp_path: Option<&Path>) -> Result<Self, CliError> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        if key == "ihdp" || key == "ihdp-surrogate" {
            return Ok(Source::Ihdp { path: ihdp_path.map(Path::to_path_buf) });
        }
        let (mut response, mut effect) = (None, None);
        for part in key.split(['-', '+', ',']) {
            match part {
                "linear" | "lin" => response = Some(ResponseForm::Linear),
                "nonlinear" | "nonlin" => response = Some(ResponseForm::Nonlinear),
                "homogeneous" | "homo" => effect = Some(EffectForm::Homogeneous),
                "heterogeneous" | "hetero" => effect = Some(EffectForm::Heterogeneous),
                _ => return Err(CliError::Usage(format!("unrecognized scenario part '{part}' in '{s}'"))),
            }
        }
        match (response, effect) {
            (Some(response), Some(effect)) => Ok(Source::Synthetic { response, effect }),
            _ => Err(CliError::Usage(format!("scenario '{s}' needs a response form and an effect form"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub source: Source,
    pub estimators: Vec<EstimatorKind>,
    pub n: usize,
    pub replications: usize,
    pub base_seed: u64,
    pub folds: usize,
    pub level: f64,
    /// Settings of every BART fit.
    pub bart: BartConfig,
    /// Per-estimator partial overrides of `bart`, keyed by estimator name.
    pub bart_overrides: BTreeMap<String, serde_json::Value>,
    pub propensity_clip: f64,
    pub inflation: f64,
    pub standard_error: StandardError,
    pub ablation: AblationConfig,
    pub noise_sd: f64,
    pub percentile_buckets: usize,
    pub out_dir: Option<PathBuf>,
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            source: Source::Synthetic { response: ResponseForm::Linear, effect: EffectForm::Homogeneous },
            estimators: vec![EstimatorKind::PsBart, EstimatorKind::KfoldCausalBart],
            n: 250,
            replications: 100,
            base_seed: 2024,
            folds: 5,
            level: 0.95,
            bart: BartConfig::default(),
            bart_overrides: BTreeMap::new(),
            propensity_clip: 0.025,
            inflation: 1.5,
            standard_error: StandardError::Classical,
            ablation: AblationConfig::default(),
            noise_sd: 1.0,
            percentile_buckets: 10,
            out_dir: None,
            jobs: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self, CliError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.replications == 0 {
            return Err(CliError::Usage("replications must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(CliError::Usage("no estimators selected".into()));
        }
        if let Source::Synthetic { response, effect } = &self.source {
            let mut s = SyntheticScenario::new(*response, *effect, self.n);
            s.noise_sd = self.noise_sd;
            s.validate()?;
        }
        self.bart.validate()?;
        for name in self.bart_overrides.keys() {
            let kind: EstimatorKind = name.parse()?;
            self.bart_for(kind)?.validate()?;
        }
        for &kind in &self.estimators {
            match kind {
                EstimatorKind::Bcf => self.bcf_config().map(|_| ())?,
                EstimatorKind::KfoldCausalBart => self.kfcb_config().map(|_| ())?,
                other => self.estimator_config(other).map(|_| ())?,
            }
        }
        Ok(())
    }

    /// `bart` with the estimator's overrides merged in.
    pub fn bart_for(&self, kind: EstimatorKind) -> Result<BartConfig, CliError> {
        let Some(patch) =
            self.bart_overrides.iter().find(|(k, _)| k.parse::<EstimatorKind>().ok() == Some(kind)).map(|(_, v)| v)
        else {
            return Ok(self.bart.clone());
        };
        let mut base = serde_json::to_value(&self.bart)?;
        merge(&mut base, patch);
        Ok(serde_json::from_value(base)?)
    }

    pub fn estimator_config(&self, kind: EstimatorKind) -> Result<EstimatorConfig, CliError> {
        let bart = self.bart_for(kind)?;
        let cfg = EstimatorConfig {
            bart: bart.clone(),
            propensity: PropensityConfig { bart, clip_epsilon: self.propensity_clip, ..Default::default() },
            folds: self.folds,
            level: self.level,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn kfcb_config(&self) -> Result<KfcbConfig, CliError> {
        let cfg = KfcbConfig {
            inflation: self.inflation,
            standard_error: self.standard_error,
            ..KfcbConfig::from_base(self.estimator_config(EstimatorKind::KfoldCausalBart)?)
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// BCF keeps its own forest shapes; chain lengths, cutpoints and the
    /// variance prior come from the shared settings.
    pub fn bcf_config(&self) -> Result<BcfConfig, CliError> {
        let b = self.bart_for(EstimatorKind::Bcf)?;
        let d = BcfConfig::default();
        let shared = |f: BartConfig| BartConfig {
            burn_in: b.burn_in,
            n_draws: b.n_draws,
            thinning: b.thinning,
            n_cutpoints: b.n_cutpoints,
            min_node_size: b.min_node_size,
            nu: b.nu,
            q: b.q,
            sigma_hat_mode: b.sigma_hat_mode,
            ..f
        };
        let cfg = BcfConfig {
            mu_forest: shared(d.mu_forest),
            tau_forest: shared(d.tau_forest),
            propensity: PropensityConfig { bart: b.clone(), clip_epsilon: self.propensity_clip, ..Default::default() },
            level: self.level,
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn scenario_id(&self) -> String {
        self.source.id(self.n)
    }
}

fn merge(base: &mut serde_json::Value, patch: &serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}
