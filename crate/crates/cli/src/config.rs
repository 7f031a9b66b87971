//! Run configuration: an INI-style file with `[data]`, `[model]`, `[train]`
//! and `[output]` sections, plus `section.key=value` overrides.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use stfgcn_core::stfgcn::ModelConfig;
use stfgcn_core::training::TrainConfig;

/// Bad input from the user: unknown keys, unparsable values, missing files.
/// Maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval_batch: usize,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval_batch: 256,
            out_dir: PathBuf::from("run"),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, UsageError>
where
    T::Err: fmt::Display,
{
    v.trim().parse().map_err(|e| UsageError(format!("{key} = `{v}`: {e}")))
}

impl RunConfig {
    /// Defaults, then the file (if any), then `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, UsageError> {
        let mut cfg = Self::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| UsageError(format!("cannot read config {}: {e}", p.display())))?;
            cfg.apply_text(&text).map_err(|e| UsageError(format!("{}: {e}", p.display())))?;
        }
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| UsageError(format!("override `{o}` is not key=value")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), UsageError> {
        let ini = Ini::load_from_str(text).map_err(|e| UsageError(format!("config syntax: {e}")))?;
        for (section, props) in ini.iter() {
            for (k, v) in props.iter() {
                let Some(section) = section else {
                    return Err(UsageError(format!("key `{k}` must appear inside a [section]")));
                };
                self.set(&format!("{section}.{k}"), v)?;
            }
        }
        Ok(())
    }

    /// Sets one `section.key`; unknown sections or keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), UsageError> {
        let (section, name) =
            key.split_once('.').ok_or_else(|| UsageError(format!("key `{key}` needs a section prefix")))?;
        let t = &mut self.train;
        match (section, name) {
            ("data", "dataset") => self.dataset = Some(PathBuf::from(value)),
            ("output", "dir") => self.out_dir = PathBuf::from(value),
            ("model", k) => self.model.set(k, value).map_err(|e| UsageError(e.to_string()))?,
            ("train", "lr") => t.lr = parse(key, value)?,
            ("train", "batch") => t.batch = parse(key, value)?,
            ("train", "epochs") => t.epochs = parse(key, value)?,
            ("train", "early_stop_patience") => t.early_stop_patience = parse(key, value)?,
            ("train", "plateau_factor") => t.plateau_factor = parse(key, value)?,
            ("train", "plateau_patience") => t.plateau_patience = parse(key, value)?,
            ("train", "min_lr") => t.min_lr = parse(key, value)?,
            ("train", "weight_decay") => t.weight_decay = parse(key, value)?,
            ("train", "clip_norm") => t.clip_norm = parse(key, value)?,
            ("train", "bn_momentum") => t.bn_momentum = parse(key, value)?,
            ("train", "seed") => t.seed = parse(key, value)?,
            ("train", "eval_batch") => self.eval_batch = parse(key, value)?,
            ("train", "split") => {
                let parts: Vec<f64> = value.split(',').map(|p| parse(key, p)).collect::<Result<_, _>>()?;
                t.split =
                    parts.try_into().map_err(|_| UsageError(format!("{key} needs three comma-separated ratios")))?;
            }
            _ => return Err(UsageError(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        self.model.validate().map_err(|e| UsageError(e.to_string()))?;
        self.train.validate().map_err(|e| UsageError(e.to_string()))?;
        if self.eval_batch == 0 {
            return Err(UsageError("train.eval_batch must be positive".into()));
        }
        Ok(())
    }

    /// The effective configuration in file syntax.
    pub fn to_text(&self) -> String {
        let mut out = String::from("[data]\n");
        if let Some(d) = &self.dataset {
            let _ = writeln!(out, "dataset = {}", d.display());
        }
        out.push_str("\n[model]\n");
        for (k, v) in self.model.to_pairs() {
            let _ = writeln!(out, "{k} = {v}");
        }
        let t = &self.train;
        out.push_str("\n[train]\n");
        for (k, v) in [
            ("lr", t.lr.to_string()),
            ("batch", t.batch.to_string()),
            ("epochs", t.epochs.to_string()),
            ("early_stop_patience", t.early_stop_patience.to_string()),
            ("plateau_factor", t.plateau_factor.to_string()),
            ("plateau_patience", t.plateau_patience.to_string()),
            ("min_lr", t.min_lr.to_string()),
            ("weight_decay", t.weight_decay.to_string()),
            ("clip_norm", t.clip_norm.to_string()),
            ("bn_momentum", t.bn_momentum.to_string()),
            ("seed", t.seed.to_string()),
            ("split", t.split.map(|r| r.to_string()).join(",")),
            ("eval_batch", self.eval_batch.to_string()),
        ] {
            let _ = writeln!(out, "{k} = {v}");
        }
        let _ = write!(out, "\n[output]\ndir = {}\n", self.out_dir.display());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = RunConfig { dataset: Some("d.stfg".into()), ..RunConfig::default() };
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_apply_after_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.ini");
        std::fs::write(&p, "[train]\nlr = 0.01\nbatch = 32\n[model]\ntau = 5\n").unwrap();
        let cfg = RunConfig::load(Some(&p), &["train.lr=0.002".into(), "model.variant=no-gat".into()]).unwrap();
        assert_eq!(cfg.train.lr, 0.002);
        assert_eq!(cfg.train.batch, 32);
        assert_eq!(cfg.model.tau, 5);
        assert_eq!(cfg.model.variant.name(), "no-gat");
    }

    #[test]
    fn unknown_keys_and_bare_keys_are_rejected() {
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_text("[train]\nlearning_rate = 1\n").is_err());
        assert!(cfg.apply_text("[bogus]\nx = 1\n").is_err());
        assert!(cfg.apply_text("lr = 1\n").is_err());
        assert!(cfg.set("model.tau", "many").is_err());
    }

    #[test]
    fn comments_are_ignored() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("; run file\n[model]\ntau = 7   ; band\nvariant = gcn-only ; fixed pooling\n# note\n").unwrap();
        assert_eq!(cfg.model.tau, 7);
        assert_eq!(cfg.model.variant.name(), "gcn-only");
    }

    #[test]
    fn invalid_combinations_fail_validation() {
        assert!(RunConfig::load(None, &["model.tau=200".into()]).is_err());
        assert!(RunConfig::load(None, &["train.split=0.5,0.5".into()]).is_err());
    }
}
