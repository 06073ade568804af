use convcut_core::data::split;
use convcut_core::error::Result;
use convcut_core::model::build_model;
use convcut_core::rng::Rng;
use convcut_core::train::{evaluate, fit};

use super::{ensure_out_dir, resolve_dataset, write_text};
use crate::config::RunConfig;

pub struct AblationRow {
    pub name: String,
    pub attention: bool,
    pub detail_extraction: bool,
    pub det_conv_layers: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// The seven ablation runs: the 2×2 attention × detail-extraction matrix,
/// then the 1/2/3 conv-layer sweep (both components on). Every run uses the
/// same seed and the same train/test split.
pub fn run_ablation(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    let mut cfg = cfg.clone();
    let dataset = resolve_dataset(&mut cfg)?;
    let (train_set, test_set) = split(&dataset, cfg.train_fraction, cfg.train.seed)?;

    let matrix: Vec<(String, bool, bool, usize)> = vec![
        ("baseline".into(), false, false, cfg.model.det_conv_layers),
        ("attention_only".into(), true, false, cfg.model.det_conv_layers),
        ("det_only".into(), false, true, cfg.model.det_conv_layers),
        ("full".into(), true, true, cfg.model.det_conv_layers),
        ("det_layers_1".into(), true, true, 1),
        ("det_layers_2".into(), true, true, 2),
        ("det_layers_3".into(), true, true, 3),
    ];

    let mut rows = Vec::new();
    for (name, attention, det, layers) in matrix {
        let mut model_cfg = cfg.model.clone();
        model_cfg.enable_attention = attention;
        model_cfg.enable_detail_extraction = det;
        model_cfg.det_conv_layers = layers;
        let mut model = build_model::<f32>(&model_cfg, &mut Rng::new(cfg.train.seed))?;
        fit(&mut model, &train_set, &cfg.train, None, |_, _| {})?;
        let metrics = evaluate(&model, &test_set, cfg.train.batch_size)?;
        log::info!(
            "ablation {name}: acc {:.4} f1 {:.4}",
            metrics.accuracy,
            metrics.macro_f1
        );
        rows.push(AblationRow {
            name,
            attention,
            detail_extraction: det,
            det_conv_layers: layers,
            accuracy: metrics.accuracy,
            macro_f1: metrics.macro_f1,
        });
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("config,attention,detail_extraction,det_conv_layers,accuracy,macro_f1\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{:.4},{:.4}\n",
            r.name, r.attention, r.detail_extraction, r.det_conv_layers, r.accuracy, r.macro_f1
        ));
    }
    out
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<16} {:>9} {:>7} {:>7} {:>9} {:>9}\n",
        "config", "attention", "det", "layers", "acc", "macro_f1"
    ));
    for r in rows {
        out.push_str(&format!(
            "{:<16} {:>9} {:>7} {:>7} {:>9.4} {:>9.4}\n",
            r.name,
            if r.attention { "yes" } else { "no" },
            if r.detail_extraction { "yes" } else { "no" },
            r.det_conv_layers,
            r.accuracy,
            r.macro_f1
        ));
    }
    out
}

/// Run the matrix + sweep, write `out_dir/ablation.csv`, print the table.
pub fn cmd_ablate(cfg: RunConfig) -> Result<()> {
    ensure_out_dir(&cfg)?;
    let rows = run_ablation(&cfg)?;
    let path = cfg.out_dir.join("ablation.csv");
    write_text(&path, &ablation_csv(&rows))?;
    print!("{}", ablation_table(&rows));
    println!("wrote {}", path.display());
    Ok(())
}
