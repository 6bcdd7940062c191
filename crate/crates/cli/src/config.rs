//! Run configuration: TOML (or JSON) file, `--set` overrides, validation
//! that reports every offending key at once, and the resolved-config hash
//! embedded in every artifact.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use decan_core::data::SyntheticConfig;
use decan_core::decan::{ContrastiveMode, DecanConfig};
use decan_core::dsp::DspConfig;
use decan_core::eval::{BaselineConfig, BaselineKind, FoldScheme};
use decan_core::features::{Band, FeatureConfig, LdsParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub n_subjects: u32,
    pub n_blocks: u32,
    pub trials_per_block: u32,
    pub trial_seconds: f64,
    pub latent_dim: usize,
    pub wet_channels: usize,
    pub dry_channels: usize,
    pub wet_noise_sigma: f64,
    pub dry_noise_sigma: f64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let c = SyntheticConfig::default();
        SyntheticSection {
            n_subjects: c.n_subjects,
            n_blocks: c.n_blocks,
            trials_per_block: c.trials_per_block,
            trial_seconds: c.trial_seconds,
            latent_dim: c.latent_dim,
            wet_channels: c.wet_channels,
            dry_channels: c.dry_channels,
            wet_noise_sigma: c.wet_noise_sigma,
            dry_noise_sigma: c.dry_noise_sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DspSection {
    pub bandpass_low_hz: f64,
    pub bandpass_high_hz: f64,
    pub bandpass_order: usize,
    pub notch_hz: f64,
    pub notch_q: f64,
    pub target_rate_hz: f64,
}

impl Default for DspSection {
    fn default() -> Self {
        let c = DspConfig::default();
        DspSection {
            bandpass_low_hz: c.bandpass_low_hz,
            bandpass_high_hz: c.bandpass_high_hz,
            bandpass_order: c.bandpass_order,
            notch_hz: c.notch_hz,
            notch_q: c.notch_q,
            target_rate_hz: c.target_rate_hz,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    pub segment_seconds: f64,
    pub smooth: bool,
    pub lds_process_var: f64,
    pub lds_obs_var: f64,
    pub lds_init_var: f64,
}

impl Default for FeatureSection {
    fn default() -> Self {
        let c = FeatureConfig::default();
        FeatureSection {
            segment_seconds: c.segment_seconds,
            smooth: c.smooth,
            lds_process_var: c.lds.process_var,
            lds_obs_var: c.lds.obs_var,
            lds_init_var: c.lds.init_var,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub n_classes: usize,
    pub projector_hidden: usize,
    pub projector_out: usize,
    pub temperature: f64,
    /// "inclusive" or "strict"
    pub contrastive_mode: String,
    pub symmetric_loss: bool,
    pub use_contrastive: bool,
    pub mix_subject_batches: bool,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let c = DecanConfig::new(1, 1);
        ModelSection {
            n_classes: c.n_classes,
            projector_hidden: c.projector_hidden,
            projector_out: c.projector_out,
            temperature: c.temperature,
            contrastive_mode: "inclusive".into(),
            symmetric_loss: c.symmetric_loss,
            use_contrastive: c.use_contrastive,
            mix_subject_batches: c.mix_subject_batches,
            learning_rate: c.learning_rate,
            epochs: c.epochs,
            batch_size: c.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// "lobo" or "loso"
    pub scheme: String,
    /// Models to run: "decan" and/or baselines "lr", "svm", "dnn".
    pub models: Vec<String>,
    /// Band masks, each "all" or a band name ("delta", ...).
    pub band_masks: Vec<String>,
    /// Additionally run the contrastive ablation pair under identical seeds.
    pub ablation: bool,
    /// Additionally run the one-to-one inter-subject pairing protocol.
    pub one_to_one: bool,
    pub one_to_one_wet_subject: u32,
    pub one_to_one_test_block: u32,
    pub baseline_hidden: Vec<usize>,
    pub baseline_epochs: usize,
    pub baseline_learning_rate: f64,
    pub export_latents: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            scheme: "lobo".into(),
            models: vec!["dnn".into(), "decan".into()],
            band_masks: vec!["all".into()],
            ablation: false,
            one_to_one: false,
            one_to_one_wet_subject: 1,
            one_to_one_test_block: 5,
            baseline_hidden: vec![64, 32],
            baseline_epochs: 300,
            baseline_learning_rate: 1e-3,
            export_latents: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub synthetic: SyntheticSection,
    pub dsp: DspSection,
    pub features: FeatureSection,
    pub model: ModelSection,
    pub eval: EvalSection,
}

fn default_seed() -> u64 {
    7
}

/// Allowed keys per section, used to report every unknown key at once.
fn schema() -> BTreeMap<&'static str, Vec<&'static str>> {
    let mut m = BTreeMap::new();
    m.insert(
        "",
        vec!["seed", "synthetic", "dsp", "features", "model", "eval"],
    );
    m.insert(
        "synthetic",
        vec![
            "n_subjects",
            "n_blocks",
            "trials_per_block",
            "trial_seconds",
            "latent_dim",
            "wet_channels",
            "dry_channels",
            "wet_noise_sigma",
            "dry_noise_sigma",
        ],
    );
    m.insert(
        "dsp",
        vec![
            "bandpass_low_hz",
            "bandpass_high_hz",
            "bandpass_order",
            "notch_hz",
            "notch_q",
            "target_rate_hz",
        ],
    );
    m.insert(
        "features",
        vec![
            "segment_seconds",
            "smooth",
            "lds_process_var",
            "lds_obs_var",
            "lds_init_var",
        ],
    );
    m.insert(
        "model",
        vec![
            "n_classes",
            "projector_hidden",
            "projector_out",
            "temperature",
            "contrastive_mode",
            "symmetric_loss",
            "use_contrastive",
            "mix_subject_batches",
            "learning_rate",
            "epochs",
            "batch_size",
        ],
    );
    m.insert(
        "eval",
        vec![
            "scheme",
            "models",
            "band_masks",
            "ablation",
            "one_to_one",
            "one_to_one_wet_subject",
            "one_to_one_test_block",
            "baseline_hidden",
            "baseline_epochs",
            "baseline_learning_rate",
            "export_latents",
        ],
    );
    m
}

fn collect_unknown_keys(value: &serde_json::Value, problems: &mut Vec<String>) {
    let schema = schema();
    let Some(root) = value.as_object() else {
        problems.push("config root must be a table".into());
        return;
    };
    let root_keys = &schema[""];
    for (key, sub) in root {
        if !root_keys.contains(&key.as_str()) {
            problems.push(format!("unknown key: {key}"));
            continue;
        }
        if let Some(section_keys) = schema.get(key.as_str()) {
            if key != "seed" {
                match sub.as_object() {
                    Some(section) => {
                        for sub_key in section.keys() {
                            if !section_keys.contains(&sub_key.as_str()) {
                                problems.push(format!("unknown key: {key}.{sub_key}"));
                            }
                        }
                    }
                    None => problems.push(format!("{key} must be a table")),
                }
            }
        }
    }
}

fn parse_override_value(raw: &str) -> serde_json::Value {
    serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()))
}

fn apply_override(value: &mut serde_json::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("--set expects key=value, got {spec:?}"))?;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.is_empty() || parts.iter().any(|p| p.is_empty()) {
        bail!("--set key path is empty in {spec:?}");
    }
    let mut cursor = value;
    for part in &parts[..parts.len() - 1] {
        cursor = cursor
            .as_object_mut()
            .ok_or_else(|| anyhow!("--set path {path} does not address a table"))?
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    cursor
        .as_object_mut()
        .ok_or_else(|| anyhow!("--set path {path} does not address a table"))?
        .insert(parts[parts.len() - 1].to_string(), parse_override_value(raw));
    Ok(())
}

impl RunConfig {
    /// Load from a TOML or JSON file (or defaults when no file is given),
    /// apply `--set` overrides, validate all keys and values at once, and
    /// apply the seed override last.
    pub fn load(
        path: Option<&Path>,
        overrides: &[String],
        seed_override: Option<u64>,
    ) -> Result<RunConfig> {
        let mut value: serde_json::Value = match path {
            None => serde_json::json!({}),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                if p.extension().is_some_and(|e| e == "json") {
                    serde_json::from_str(&text)
                        .with_context(|| format!("parsing JSON config {}", p.display()))?
                } else {
                    toml::from_str(&text)
                        .with_context(|| format!("parsing TOML config {}", p.display()))?
                }
            }
        };
        for spec in overrides {
            apply_override(&mut value, spec)?;
        }

        let mut problems = Vec::new();
        collect_unknown_keys(&value, &mut problems);
        if !problems.is_empty() {
            bail!("invalid config:\n  {}", problems.join("\n  "));
        }
        let mut config: RunConfig =
            serde_json::from_value(value).context("config has ill-typed values")?;
        if let Some(seed) = seed_override {
            config.seed = seed;
        }
        config.validate()?;
        Ok(config)
    }

    /// Validate every block against its module's preconditions, reporting all
    /// failures together.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if let Err(e) = self.synthetic_config().validate() {
            problems.push(format!("synthetic: {e}"));
        }
        let dsp = self.dsp_config();
        if let Err(e) = decan_core::dsp::design_bandpass(
            dsp.bandpass_low_hz,
            dsp.bandpass_high_hz,
            dsp.target_rate_hz.max(decan_core::data::WET_RATE_HZ),
            dsp.bandpass_order,
        ) {
            problems.push(format!("dsp: {e}"));
        }
        if !(self.features.segment_seconds > 0.0) {
            problems.push("features: segment_seconds must be positive".into());
        }
        if !(self.features.lds_process_var > 0.0)
            || !(self.features.lds_obs_var > 0.0)
            || !(self.features.lds_init_var > 0.0)
        {
            problems.push("features: LDS variances must be positive".into());
        }
        match self.decan_config(1, 1) {
            Ok(cfg) => {
                if let Err(e) = cfg.validate() {
                    problems.push(format!("model: {e}"));
                }
            }
            Err(e) => problems.push(format!("model: {e}")),
        }
        if let Err(e) = self.fold_scheme() {
            problems.push(format!("eval: {e}"));
        }
        if let Err(e) = self.eval_models() {
            problems.push(format!("eval: {e}"));
        }
        if let Err(e) = self.band_masks() {
            problems.push(format!("eval: {e}"));
        }
        if self.eval.baseline_epochs == 0 {
            problems.push("eval: baseline_epochs must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(anyhow!("invalid config:\n  {}", problems.join("\n  ")))
        }
    }

    pub fn synthetic_config(&self) -> SyntheticConfig {
        SyntheticConfig {
            n_subjects: self.synthetic.n_subjects,
            n_blocks: self.synthetic.n_blocks,
            trials_per_block: self.synthetic.trials_per_block,
            trial_seconds: self.synthetic.trial_seconds,
            latent_dim: self.synthetic.latent_dim,
            wet_channels: self.synthetic.wet_channels,
            dry_channels: self.synthetic.dry_channels,
            wet_noise_sigma: self.synthetic.wet_noise_sigma,
            dry_noise_sigma: self.synthetic.dry_noise_sigma,
            seed: self.seed,
        }
    }

    pub fn dsp_config(&self) -> DspConfig {
        DspConfig {
            bandpass_low_hz: self.dsp.bandpass_low_hz,
            bandpass_high_hz: self.dsp.bandpass_high_hz,
            bandpass_order: self.dsp.bandpass_order,
            notch_hz: self.dsp.notch_hz,
            notch_q: self.dsp.notch_q,
            target_rate_hz: self.dsp.target_rate_hz,
        }
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            segment_seconds: self.features.segment_seconds,
            smooth: self.features.smooth,
            lds: LdsParams {
                process_var: self.features.lds_process_var,
                obs_var: self.features.lds_obs_var,
                init_var: self.features.lds_init_var,
                ..LdsParams::default()
            },
        }
    }

    pub fn decan_config(&self, wet_input_dim: usize, dry_input_dim: usize) -> Result<DecanConfig> {
        let mode = match self.model.contrastive_mode.as_str() {
            "inclusive" => ContrastiveMode::InclusivePositive,
            "strict" => ContrastiveMode::StrictPaper,
            other => bail!("unknown contrastive_mode {other:?} (expected \"inclusive\" or \"strict\")"),
        };
        let mut cfg = DecanConfig::new(wet_input_dim, dry_input_dim);
        cfg.n_classes = self.model.n_classes;
        cfg.projector_hidden = self.model.projector_hidden;
        cfg.projector_out = self.model.projector_out;
        cfg.temperature = self.model.temperature;
        cfg.contrastive_mode = mode;
        cfg.symmetric_loss = self.model.symmetric_loss;
        cfg.use_contrastive = self.model.use_contrastive;
        cfg.mix_subject_batches = self.model.mix_subject_batches;
        cfg.learning_rate = self.model.learning_rate;
        cfg.epochs = self.model.epochs;
        cfg.batch_size = self.model.batch_size;
        cfg.seed = self.seed;
        Ok(cfg)
    }

    pub fn baseline_config(&self, kind: BaselineKind) -> BaselineConfig {
        BaselineConfig {
            kind,
            hidden: self.eval.baseline_hidden.clone(),
            epochs: self.eval.baseline_epochs,
            learning_rate: self.eval.baseline_learning_rate,
            l2: 1e-4,
            seed: self.seed,
        }
    }

    pub fn fold_scheme(&self) -> Result<FoldScheme> {
        match self.eval.scheme.as_str() {
            "lobo" => Ok(FoldScheme::Lobo),
            "loso" => Ok(FoldScheme::Loso),
            other => bail!("unknown scheme {other:?} (expected \"lobo\" or \"loso\")"),
        }
    }

    /// Models requested in the eval block: "decan" plus baselines by name.
    pub fn eval_models(&self) -> Result<Vec<decan_core::eval::ModelSpec>> {
        if self.eval.models.is_empty() {
            bail!("eval.models is empty");
        }
        self.eval
            .models
            .iter()
            .map(|name| {
                if name == "decan" {
                    Ok(decan_core::eval::ModelSpec::Decan)
                } else {
                    BaselineKind::from_name(name)
                        .map(decan_core::eval::ModelSpec::Baseline)
                        .map_err(|e| anyhow!("{e}"))
                }
            })
            .collect()
    }

    /// Band masks: "all" expands to the five canonical bands.
    pub fn band_masks(&self) -> Result<Vec<(String, Vec<Band>)>> {
        if self.eval.band_masks.is_empty() {
            bail!("eval.band_masks is empty");
        }
        self.eval
            .band_masks
            .iter()
            .map(|name| {
                if name == "all" {
                    Ok(("all".to_string(), Band::ALL.to_vec()))
                } else {
                    Band::from_name(name)
                        .map(|b| (name.clone(), vec![b]))
                        .map_err(|e| anyhow!("{e}"))
                }
            })
            .collect()
    }

    /// SHA-256 over the canonical JSON form; embedded in every artifact.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = RunConfig::load(None, &[], None).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.model.temperature, 0.5);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_all_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            "bogus = 1\n[model]\ntemperature = 0.5\nnot_a_key = 2\n[dsp]\nwhat = 3\n",
        )
        .unwrap();
        let err = RunConfig::load(Some(&path), &[], None).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
        assert!(err.contains("model.not_a_key"), "{err}");
        assert!(err.contains("dsp.what"), "{err}");
    }

    #[test]
    fn json_config_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"seed": 9, "model": {"epochs": 12}}"#).unwrap();
        let cfg = RunConfig::load(Some(&path), &[], None).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.model.epochs, 12);
    }

    #[test]
    fn overrides_apply_and_seed_wins_last() {
        let cfg = RunConfig::load(
            None,
            &["model.epochs=42".into(), "eval.scheme=\"loso\"".into(), "seed=3".into()],
            Some(11),
        )
        .unwrap();
        assert_eq!(cfg.model.epochs, 42);
        assert_eq!(cfg.eval.scheme, "loso");
        assert_eq!(cfg.seed, 11);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = RunConfig::load(None, &[], None).unwrap();
        let b = RunConfig::load(None, &[], None).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig::load(None, &["model.epochs=1".into()], None).unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn bad_values_reported_together() {
        let err = RunConfig::load(
            None,
            &[
                "model.temperature=0.0".into(),
                "synthetic.dry_channels=99".into(),
            ],
            None,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("model:"), "{err}");
        assert!(err.contains("synthetic:"), "{err}");
    }
}
