use convcut_core::error::{Error, Result};
use convcut_core::train::evaluate;

use super::{build_with_checkpoint, confusion_csv, ensure_out_dir, resolve_dataset, write_text};
use crate::config::RunConfig;

/// Evaluate a checkpoint on the configured dataset; prints accuracy and
/// macro F1 and writes `out_dir/confusion.csv`.
pub fn cmd_eval(mut cfg: RunConfig) -> Result<()> {
    if cfg.checkpoint_in.is_none() {
        return Err(Error::Config("eval needs `checkpoint_in`".into()));
    }
    let dataset = resolve_dataset(&mut cfg)?;
    ensure_out_dir(&cfg)?;
    let model = build_with_checkpoint(&cfg)?;
    let metrics = evaluate(&model, &dataset, cfg.train.batch_size)?;
    println!("accuracy {:.4}", metrics.accuracy);
    println!("macro_f1 {:.4}", metrics.macro_f1);
    let path = cfg.out_dir.join("confusion.csv");
    write_text(&path, &confusion_csv(&dataset.label_map, &metrics.confusion))?;
    println!("wrote {}", path.display());
    Ok(())
}
