//! Run configuration: the union of model, training, data and path settings.
//! Sources, lowest to highest precedence: the `tiny` defaults, a `key = value`
//! config file, `--set key=value` overrides, dedicated CLI flags, and the
//! `CONVCUT_SEED` environment variable. A `profile` key resets the model and
//! data geometry to a preset before any other key of the same source batch
//! applies, wherever it appears in the file.

use std::path::{Path, PathBuf};

use convcut_core::error::{Error, Result};
use convcut_core::model::ConvCutConfig;
use convcut_core::train::TrainConfig;

/// Every recognized config key with a one-line description; `--help` prints
/// this table and unknown keys are rejected against it.
pub const KEYS: &[(&str, &str)] = &[
    ("profile", "model preset `tiny` or `base`; resets model keys, image_size and num_classes"),
    ("retained_stages", "ConvNeXt stages kept after truncation (1..=3)"),
    ("stage_widths", "comma-separated channel widths per stage"),
    ("stage_depths", "comma-separated block counts per stage"),
    ("num_classes", "classifier output classes (derived from the dataset when one is loaded)"),
    ("dropout_p", "spatial dropout probability in detail extraction"),
    ("token_dim", "channel-group width for attention tokens"),
    ("d_q", "attention projection width"),
    ("freeze_backbone", "freeze stem + stages (true/false)"),
    ("enable_attention", "self-attention on pooled features (true/false)"),
    ("enable_detail_extraction", "detail extraction block (true/false)"),
    ("det_conv_layers", "separable conv layers in detail extraction (1..=3)"),
    ("batch_size", "training batch size"),
    ("epochs", "training epochs"),
    ("learning_rate", "Adam learning rate"),
    ("adam_beta1", "Adam first-moment decay"),
    ("adam_beta2", "Adam second-moment decay"),
    ("adam_eps", "Adam denominator epsilon"),
    ("seed", "global seed (init, shuffling, dropout, synthetic data)"),
    ("hflip_prob", "horizontal-flip augmentation probability"),
    ("image_size", "square input resolution fed to the model"),
    ("data_root", "dataset directory (root/<class>/<image>.ppm)"),
    ("synthetic", "synthetic dataset spec `<classes>x<per_class>`, e.g. 2x32"),
    ("noise_std", "gaussian noise std for the synthetic dataset"),
    ("train_fraction", "train share of a split dataset (ablate)"),
    ("checkpoint_in", "checkpoint to load before running"),
    ("checkpoint_out", "checkpoint to write after training"),
    ("out_dir", "directory for metrics, tables and images"),
    ("target_layer", "Grad-CAM target activation (default: last backbone stage)"),
    ("strict_load", "strict checkpoint loading (true/false)"),
    ("gradcheck_instances", "random instances per op in the gradcheck suite"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub profile: String,
    pub model: ConvCutConfig,
    pub train: TrainConfig,
    pub image_size: usize,
    pub data_root: Option<PathBuf>,
    pub synthetic: Option<(usize, usize)>,
    pub noise_std: f64,
    pub train_fraction: f64,
    pub checkpoint_in: Option<PathBuf>,
    pub checkpoint_out: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub target_layer: Option<String>,
    pub strict_load: bool,
    pub gradcheck_instances: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            profile: "tiny".into(),
            model: ConvCutConfig::tiny(),
            train: TrainConfig::default(),
            image_size: 64,
            data_root: None,
            synthetic: None,
            noise_std: 0.1,
            train_fraction: 2.0 / 3.0,
            checkpoint_in: None,
            checkpoint_out: None,
            out_dir: PathBuf::from("."),
            target_layer: None,
            strict_load: true,
            gradcheck_instances: 5,
        }
    }
}

fn bad_value(key: &str, value: &str, want: &str) -> Error {
    Error::Config(format!("key `{key}`: cannot parse `{value}` as {want}"))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim().parse().map_err(|_| bad_value(key, v, "an integer"))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.trim().parse().map_err(|_| bad_value(key, v, "an integer"))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim().parse().map_err(|_| bad_value(key, v, "a number"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad_value(key, v, "a boolean (true/false)")),
    }
}

fn parse_usize_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|part| parse_usize(key, part))
        .collect::<Result<Vec<_>>>()
        .and_then(|list| {
            if list.is_empty() {
                Err(bad_value(key, v, "a comma-separated integer list"))
            } else {
                Ok(list)
            }
        })
}

/// `<classes>x<per_class>`, e.g. `2x32`.
pub fn parse_synthetic(key: &str, v: &str) -> Result<(usize, usize)> {
    let (a, b) = v
        .trim()
        .split_once(['x', 'X'])
        .ok_or_else(|| bad_value(key, v, "`<classes>x<per_class>`"))?;
    Ok((parse_usize(key, a)?, parse_usize(key, b)?))
}

impl RunConfig {
    /// Apply one key/value pair (the `profile` key is handled by the caller).
    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "retained_stages" => self.model.retained_stages = parse_usize(key, value)?,
            "stage_widths" => self.model.stage_widths = parse_usize_list(key, value)?,
            "stage_depths" => self.model.stage_depths = parse_usize_list(key, value)?,
            "num_classes" => self.model.num_classes = parse_usize(key, value)?,
            "dropout_p" => self.model.dropout_p = parse_f64(key, value)?,
            "token_dim" => self.model.token_dim = parse_usize(key, value)?,
            "d_q" => self.model.d_q = parse_usize(key, value)?,
            "freeze_backbone" => self.model.freeze_backbone = parse_bool(key, value)?,
            "enable_attention" => self.model.enable_attention = parse_bool(key, value)?,
            "enable_detail_extraction" => {
                self.model.enable_detail_extraction = parse_bool(key, value)?
            }
            "det_conv_layers" => self.model.det_conv_layers = parse_usize(key, value)?,
            "batch_size" => self.train.batch_size = parse_usize(key, value)?,
            "epochs" => self.train.epochs = parse_usize(key, value)?,
            "learning_rate" => self.train.learning_rate = parse_f64(key, value)?,
            "adam_beta1" => self.train.adam_beta1 = parse_f64(key, value)?,
            "adam_beta2" => self.train.adam_beta2 = parse_f64(key, value)?,
            "adam_eps" => self.train.adam_eps = parse_f64(key, value)?,
            "seed" => self.train.seed = parse_u64(key, value)?,
            "hflip_prob" => self.train.hflip_prob = parse_f64(key, value)?,
            "image_size" => self.image_size = parse_usize(key, value)?,
            "data_root" => self.data_root = Some(PathBuf::from(value.trim())),
            "synthetic" => self.synthetic = Some(parse_synthetic(key, value)?),
            "noise_std" => self.noise_std = parse_f64(key, value)?,
            "train_fraction" => self.train_fraction = parse_f64(key, value)?,
            "checkpoint_in" => self.checkpoint_in = Some(PathBuf::from(value.trim())),
            "checkpoint_out" => self.checkpoint_out = Some(PathBuf::from(value.trim())),
            "out_dir" => self.out_dir = PathBuf::from(value.trim()),
            "target_layer" => self.target_layer = Some(value.trim().to_string()),
            "strict_load" => self.strict_load = parse_bool(key, value)?,
            "gradcheck_instances" => self.gradcheck_instances = parse_usize(key, value)?,
            "profile" => unreachable!("profile is applied before other keys"),
            other => {
                return Err(Error::Config(format!(
                    "unknown config key `{other}` (see --help for the key list)"
                )))
            }
        }
        Ok(())
    }

    fn apply_profile(&mut self, value: &str) -> Result<()> {
        match value.trim() {
            "tiny" => {
                self.profile = "tiny".into();
                self.model = ConvCutConfig::tiny();
                self.image_size = 64;
            }
            "base" => {
                self.profile = "base".into();
                self.model = ConvCutConfig::base();
                self.image_size = 224;
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown profile `{other}` (expected tiny or base)"
                )))
            }
        }
        Ok(())
    }

    /// Apply a batch of pairs; any `profile` pair in the batch is applied
    /// first so explicit keys always win over the preset.
    pub fn apply_pairs(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (key, value) in pairs.iter().filter(|(k, _)| k == "profile") {
            let _ = key;
            self.apply_profile(value)?;
        }
        for (key, value) in pairs.iter().filter(|(k, _)| k != "profile") {
            self.apply(key, value)?;
        }
        Ok(())
    }

    /// Build from the config file, then override batches in order, then the
    /// `CONVCUT_SEED` environment variable.
    pub fn from_sources(file: Option<&Path>, overrides: &[Vec<(String, String)>]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            let pairs = parse_config_text(&text)?;
            cfg.apply_pairs(&pairs)?;
        }
        for batch in overrides {
            cfg.apply_pairs(batch)?;
        }
        if let Ok(seed) = std::env::var("CONVCUT_SEED") {
            cfg.train.seed = parse_u64("CONVCUT_SEED", &seed)?;
        }
        Ok(cfg)
    }

    /// Render as a config file that re-parses to an equal value.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        let join = |xs: &[usize]| {
            xs.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        kv("profile", self.profile.clone());
        kv("retained_stages", self.model.retained_stages.to_string());
        kv("stage_widths", join(&self.model.stage_widths));
        kv("stage_depths", join(&self.model.stage_depths));
        kv("num_classes", self.model.num_classes.to_string());
        kv("dropout_p", format!("{:?}", self.model.dropout_p));
        kv("token_dim", self.model.token_dim.to_string());
        kv("d_q", self.model.d_q.to_string());
        kv("freeze_backbone", self.model.freeze_backbone.to_string());
        kv("enable_attention", self.model.enable_attention.to_string());
        kv(
            "enable_detail_extraction",
            self.model.enable_detail_extraction.to_string(),
        );
        kv("det_conv_layers", self.model.det_conv_layers.to_string());
        kv("batch_size", self.train.batch_size.to_string());
        kv("epochs", self.train.epochs.to_string());
        kv("learning_rate", format!("{:?}", self.train.learning_rate));
        kv("adam_beta1", format!("{:?}", self.train.adam_beta1));
        kv("adam_beta2", format!("{:?}", self.train.adam_beta2));
        kv("adam_eps", format!("{:?}", self.train.adam_eps));
        kv("seed", self.train.seed.to_string());
        kv("hflip_prob", format!("{:?}", self.train.hflip_prob));
        kv("image_size", self.image_size.to_string());
        if let Some(p) = &self.data_root {
            kv("data_root", p.display().to_string());
        }
        if let Some((c, s)) = self.synthetic {
            kv("synthetic", format!("{c}x{s}"));
        }
        kv("noise_std", format!("{:?}", self.noise_std));
        kv("train_fraction", format!("{:?}", self.train_fraction));
        if let Some(p) = &self.checkpoint_in {
            kv("checkpoint_in", p.display().to_string());
        }
        if let Some(p) = &self.checkpoint_out {
            kv("checkpoint_out", p.display().to_string());
        }
        kv("out_dir", self.out_dir.display().to_string());
        if let Some(t) = &self.target_layer {
            kv("target_layer", t.clone());
        }
        kv("strict_load", self.strict_load.to_string());
        kv("gradcheck_instances", self.gradcheck_instances.to_string());
        out
    }
}

/// Parse `key = value` lines; `#` comments and blank lines are skipped.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected `key = value`", lineno + 1))
        })?;
        let key = key.trim().to_string();
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(Error::Config(format!(
                "line {}: unknown config key `{key}`",
                lineno + 1
            )));
        }
        pairs.push((key, value.trim().to_string()));
    }
    Ok(pairs)
}

/// Parse one `key=value` override (from `--set`).
pub fn parse_set(arg: &str) -> Result<(String, String)> {
    let (key, value) = arg
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set expects key=value, got `{arg}`")))?;
    let key = key.trim().to_string();
    if !KEYS.iter().any(|(k, _)| *k == key) {
        return Err(Error::Config(format!("unknown config key `{key}`")));
    }
    Ok((key, value.trim().to_string()))
}

/// The key table for `--help`.
pub fn keys_help() -> String {
    let mut out = String::from("Config keys (config file `key = value` lines or --set key=value):\n");
    for (key, desc) in KEYS {
        out.push_str(&format!("  {key:<26} {desc}\n"));
    }
    out
}
