use convcut_core::error::Result;
use convcut_core::train::fit;

use super::{build_with_checkpoint, ensure_out_dir, resolve_dataset};
use crate::config::RunConfig;

/// Train on the configured dataset, appending per-epoch stats to
/// `out_dir/metrics.csv` and writing the final checkpoint.
pub fn cmd_train(mut cfg: RunConfig) -> Result<()> {
    let dataset = resolve_dataset(&mut cfg)?;
    ensure_out_dir(&cfg)?;
    let mut model = build_with_checkpoint(&cfg)?;
    println!(
        "training: {} samples, {} classes, {} parameters, {} epochs",
        dataset.len(),
        dataset.num_classes(),
        model.num_params(),
        cfg.train.epochs
    );
    let metrics_path = cfg.out_dir.join("metrics.csv");
    fit(&mut model, &dataset, &cfg.train, Some(&metrics_path), |epoch, s| {
        println!(
            "epoch {epoch:4}  loss {:.6}  train_acc {:.4}",
            s.mean_loss, s.accuracy
        );
    })?;
    let ckpt = cfg
        .checkpoint_out
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("model.ccut"));
    convcut_core::checkpoint::save_model(&ckpt, &model)?;
    println!("wrote {} and {}", metrics_path.display(), ckpt.display());
    Ok(())
}
