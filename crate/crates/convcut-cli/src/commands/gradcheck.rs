use convcut_core::error::Result;
use convcut_core::gradcheck::{self, DEFAULT_TOL};
use convcut_core::model::ConvCutConfig;

use crate::config::RunConfig;

/// Per-op finite-difference suite plus a whole-model check on the tiny
/// profile. Returns the process exit code: 0 when every check passes, 1 on
/// any tolerance breach.
pub fn cmd_gradcheck(cfg: RunConfig, corrupt: Option<&str>) -> Result<i32> {
    let reports = gradcheck::op_suite::<f32>(
        cfg.train.seed,
        cfg.gradcheck_instances,
        DEFAULT_TOL,
        corrupt,
    )?;

    // worst instance per op
    let mut by_op: Vec<(String, gradcheck::CheckReport)> = Vec::new();
    for r in reports {
        let op = r.name.split('/').next().unwrap_or(&r.name).to_string();
        match by_op.iter_mut().find(|(name, _)| *name == op) {
            Some((_, worst)) if worst.max_rel_error >= r.max_rel_error => {}
            Some((_, worst)) => *worst = r,
            None => by_op.push((op, r)),
        }
    }

    let mut failed = false;
    for (_, r) in &by_op {
        println!("{r}");
        failed |= !r.passed;
    }

    let model_report = gradcheck::model_check::<f32>(
        &ConvCutConfig::tiny(),
        64,
        2,
        cfg.train.seed,
        32,
        DEFAULT_TOL,
    )?;
    println!("{model_report}");
    failed |= !model_report.passed;

    if failed {
        println!("gradcheck: FAIL");
        Ok(1)
    } else {
        println!("gradcheck: ok ({} ops + full model)", by_op.len());
        Ok(0)
    }
}
