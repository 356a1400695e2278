//! Training configuration and the flat TOML run file that carries it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CiganError, Result};

/// Every optimization hyperparameter plus the ablation toggles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub crop: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub lr: f64,
    pub lr_fixed_epochs: usize,
    pub lambda_exp: f64,
    pub lambda_con: f64,
    pub lambda_per: f64,
    pub exp_e: f64,
    pub exp_sigma: f64,
    pub exp_window: usize,
    /// Exposure intensity from the gray mean; otherwise every channel is scored separately.
    pub exp_gray: bool,
    pub lip_lambda: f64,
    pub seed: u64,
    pub lgt: bool,
    pub frp: bool,
    pub dam: bool,
    pub mfpd: bool,
    pub lip: bool,
    pub exp_loss: bool,
    /// Divides every network width; 1 keeps the full-size networks.
    pub width_divisor: usize,
    /// `"random"` for the seeded stand-in backbone, otherwise a path to a weight archive.
    pub backbone: String,
    pub backbone_seed: u64,
    pub flip: bool,
    /// Stops early after this many optimizer steps.
    pub max_steps: Option<usize>,
    /// Power iterations used to warm up the spectral-norm vectors at initialization.
    pub sn_warmup_iters: usize,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub gamma_step: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch: 10,
            crop: 224,
            adam_beta1: 0.0,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            lr: 1e-4,
            lr_fixed_epochs: 50,
            lambda_exp: 10.0,
            lambda_con: 10.0,
            lambda_per: 1.0,
            exp_e: 0.1,
            exp_sigma: 0.1,
            exp_window: 7,
            exp_gray: true,
            lip_lambda: 1.0,
            seed: 0,
            lgt: true,
            frp: true,
            dam: true,
            mfpd: true,
            lip: true,
            exp_loss: true,
            width_divisor: 1,
            backbone: "random".into(),
            backbone_seed: 0,
            flip: false,
            max_steps: None,
            sn_warmup_iters: 50,
            gamma_min: 0.1,
            gamma_max: 5.0,
            gamma_step: 0.05,
        }
    }
}

/// Names accepted by [`TrainConfig::disable`].
pub const VARIANTS: [&str; 7] = ["lgt", "frp", "dam", "mfpd", "lip", "exp_loss", "all"];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CiganError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be ≥ 1".into());
        }
        if self.batch == 0 {
            return bad("batch must be ≥ 1".into());
        }
        if self.crop < crate::imaging::MIN_EXTENT {
            return bad(format!("crop must be ≥ {}", crate::imaging::MIN_EXTENT));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if !(self.lr >= 0.0) || !(self.adam_eps > 0.0) {
            return bad("lr must be ≥ 0 and adam_eps > 0".into());
        }
        if !(self.lip_lambda >= 1.0) {
            return bad("lip_lambda must be ≥ 1".into());
        }
        if self.exp_window == 0 || !(self.exp_sigma > 0.0) {
            return bad("exp_window must be ≥ 1 and exp_sigma > 0".into());
        }
        if self.width_divisor == 0 {
            return bad("width_divisor must be ≥ 1".into());
        }
        if self.backbone != "random" && self.width_divisor != 1 {
            return bad("a pretrained backbone requires width_divisor = 1".into());
        }
        if !(self.gamma_min > 0.0 && self.gamma_step > 0.0 && self.gamma_max >= 1.0 && self.gamma_min <= 1.0) {
            return bad("gamma sweep must be positive and bracket 1".into());
        }
        // TOML integers are signed, so larger seeds could not be written to a snapshot.
        if self.seed > i64::MAX as u64 || self.backbone_seed > i64::MAX as u64 {
            return bad(format!("seed and backbone_seed must be ≤ {}", i64::MAX));
        }
        if self.max_steps == Some(0) {
            return bad("max_steps must be ≥ 1".into());
        }
        Ok(())
    }

    /// Turns off the component named by an ablation variant. `all` removes LGT, FRP and
    /// the exposure loss together.
    pub fn disable(&mut self, variant: &str) -> Result<()> {
        match variant {
            "lgt" => self.lgt = false,
            "frp" => self.frp = false,
            "dam" => self.dam = false,
            "mfpd" => self.mfpd = false,
            "lip" => self.lip = false,
            "exp_loss" => self.exp_loss = false,
            "all" => {
                self.lgt = false;
                self.frp = false;
                self.exp_loss = false;
            }
            other => {
                return Err(CiganError::Config(format!(
                    "unknown variant {other:?}; expected one of {VARIANTS:?}"
                )))
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Gamma values of the evaluation sweep, always including 1.
    pub fn gamma_grid(&self) -> Vec<f64> {
        crate::metrics::gamma_grid(self.gamma_min, self.gamma_max, self.gamma_step)
    }
}

/// Learning rate for a 1-based epoch: constant for `lr_fixed_epochs`, then linear to zero.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch == 0 || epoch > cfg.epochs {
        return Err(CiganError::Invalid(format!(
            "epoch {epoch} outside 1..={}",
            cfg.epochs
        )));
    }
    // A fixed phase longer than the run simply means no decay.
    if epoch <= cfg.lr_fixed_epochs.min(cfg.epochs) {
        return Ok(cfg.lr);
    }
    let decay = (cfg.epochs - cfg.lr_fixed_epochs) as f64;
    Ok(cfg.lr * (cfg.epochs - epoch) as f64 / decay)
}

/// Filesystem locations named in a run file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunPaths {
    pub normal_dir: Option<PathBuf>,
    pub low_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub eval_low_dir: Option<PathBuf>,
    pub eval_gt_dir: Option<PathBuf>,
}

const PATH_KEYS: [&str; 5] = ["normal_dir", "low_dir", "out_dir", "eval_low_dir", "eval_gt_dir"];

/// Names the line of a syntax error, so keys like a duplicate show up in the message.
fn syntax_error(text: &str, e: &toml::de::Error) -> CiganError {
    match e.span() {
        Some(span) => {
            let line = text[..span.start.min(text.len())].matches('\n').count();
            let src = text.lines().nth(line).unwrap_or("").trim();
            CiganError::Config(format!("line {}: {} (`{src}`)", line + 1, e.message()))
        }
        None => CiganError::Config(e.message().to_owned()),
    }
}

/// A parsed run file: flat keys mirroring [`TrainConfig`] plus dataset/output paths.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub paths: RunPaths,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Relative paths resolve against `base` (normally the run file's directory).
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| syntax_error(text, &e))?;
        let mut paths = RunPaths::default();
        for key in PATH_KEYS {
            let Some(v) = table.remove(key) else { continue };
            let s = v
                .as_str()
                .ok_or_else(|| CiganError::Config(format!("{key} must be a string")))?;
            let p = base.join(s);
            match key {
                "normal_dir" => paths.normal_dir = Some(p),
                "low_dir" => paths.low_dir = Some(p),
                "out_dir" => paths.out_dir = Some(p),
                "eval_low_dir" => paths.eval_low_dir = Some(p),
                _ => paths.eval_gt_dir = Some(p),
            }
        }
        let train: TrainConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| CiganError::Config(e.message().to_owned()))?;
        train.validate()?;
        Ok(RunConfig { paths, train })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CiganError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            CiganError::Config(m) => CiganError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Flat TOML with every key spelled out, suitable as a resolved-config snapshot.
    pub fn to_toml(&self) -> String {
        let mut table = toml::Table::try_from(&self.train).expect("config serializes");
        for (key, value) in [
            ("normal_dir", &self.paths.normal_dir),
            ("low_dir", &self.paths.low_dir),
            ("out_dir", &self.paths.out_dir),
            ("eval_low_dir", &self.paths.eval_low_dir),
            ("eval_gt_dir", &self.paths.eval_gt_dir),
        ] {
            if let Some(p) = value {
                table.insert(key.into(), toml::Value::String(p.display().to_string()));
            }
        }
        toml::to_string(&table).expect("table serializes")
    }
}
