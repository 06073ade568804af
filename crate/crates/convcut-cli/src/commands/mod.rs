pub mod ablate;
pub mod eval;
pub mod gradcam;
pub mod gradcheck;
pub mod train;

use std::path::Path;

use convcut_core::data::{generate_synthetic, load_dataset, LabeledDataset, SyntheticSpec};
use convcut_core::error::{Error, Result};
use convcut_core::model::{build_model, ConvCutModel};
use convcut_core::rng::Rng;

use crate::config::RunConfig;

/// Dataset from `data_root` or the synthetic spec; `num_classes` in the model
/// config is aligned with the dataset.
pub fn resolve_dataset(cfg: &mut RunConfig) -> Result<LabeledDataset<f32>> {
    let ds = match (&cfg.data_root, cfg.synthetic) {
        (Some(root), _) => load_dataset::<f32>(root, cfg.image_size)?,
        (None, Some((classes, per_class))) => generate_synthetic(&SyntheticSpec {
            num_classes: classes,
            samples_per_class: per_class,
            image_size: cfg.image_size,
            noise_std: cfg.noise_std,
            seed: cfg.train.seed,
        })?,
        (None, None) => {
            return Err(Error::Config(
                "no dataset: set `data_root` or `synthetic` (e.g. --synthetic 2x32)".into(),
            ))
        }
    };
    if ds.is_empty() {
        return Err(Error::Data("dataset contains no samples".into()));
    }
    if cfg.model.num_classes != ds.num_classes() {
        log::info!(
            "num_classes {} -> {} (from dataset)",
            cfg.model.num_classes,
            ds.num_classes()
        );
        cfg.model.num_classes = ds.num_classes();
    }
    Ok(ds)
}

/// Build the configured model; when `checkpoint_in` is set, load it with the
/// configured strictness and print what a lenient load skipped.
pub fn build_with_checkpoint(cfg: &RunConfig) -> Result<ConvCutModel<f32>> {
    let mut rng = Rng::new(cfg.train.seed);
    let mut model = build_model::<f32>(&cfg.model, &mut rng)?;
    if let Some(path) = &cfg.checkpoint_in {
        let report = convcut_core::checkpoint::load_model(path, &mut model, cfg.strict_load)?;
        if !report.missing_in_file.is_empty() {
            println!(
                "checkpoint: {} parameter(s) not in file (left initialized): {}",
                report.missing_in_file.len(),
                report.missing_in_file.join(", ")
            );
        }
        if !report.unused_in_file.is_empty() {
            println!(
                "checkpoint: {} unused file entr(ies): {}",
                report.unused_in_file.len(),
                report.unused_in_file.join(", ")
            );
        }
        if !report.shape_mismatch.is_empty() {
            println!(
                "checkpoint: {} shape mismatch(es) skipped: {}",
                report.shape_mismatch.len(),
                report.shape_mismatch.join(", ")
            );
        }
    }
    Ok(model)
}

pub fn ensure_out_dir(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::io(cfg.out_dir.display().to_string(), e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Confusion matrix as CSV: header row of class names, then count rows
/// (rows = true class, columns = predicted class).
pub fn confusion_csv(label_map: &[String], confusion: &[Vec<usize>]) -> String {
    let mut out = String::new();
    out.push_str(&label_map.join(","));
    out.push('\n');
    for row in confusion {
        out.push_str(
            &row.iter()
                .map(|n| n.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        out.push('\n');
    }
    out
}
