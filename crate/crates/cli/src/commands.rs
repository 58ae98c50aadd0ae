use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use erda_lab::analysis::{contour_grid, plateau_metric};
use erda_lab::gradcheck::{check_loss_gradients, check_pipeline_gradients, gradcheck_scene};
use erda_lab::train::{run_experiment, PseudoLabelMode, Report, TrainConfig};
use erda_lab::{DivergenceKind, ErdaConfig};

use crate::config::parse_config;
use crate::error::CliError;

/// Environment variable capping the sweep thread pool.
pub const THREADS_ENV: &str = "ERDA_LAB_THREADS";

/// Entropy weights covered by `gradcheck`.
pub const GRADCHECK_LAMBDAS: [f64; 4] = [0.0, 0.5, 1.0, 2.0];

/// Tolerance of the whole-network check in `gradcheck`.
pub const PIPELINE_TOL: f64 = 1e-4;

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Runs the loss-gradient checks for every kind and entropy weight, then
/// the whole-network check on a 10-point scene. Returns the printed table.
pub fn gradcheck(trials: usize, tol: f64, seed: u64, out: Option<&Path>) -> Result<String, CliError> {
    if trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(CliError::Usage("--tol must be positive".into()));
    }
    let mut table = String::new();
    let mut csv = String::from("check,kind,lambda,trials,max_rel_err,tol,pass\n");
    let mut failures = Vec::new();
    for kind in DivergenceKind::ALL {
        for (i, &lambda) in GRADCHECK_LAMBDAS.iter().enumerate() {
            let r = check_loss_gradients(kind, lambda, trials, seed.wrapping_add(i as u64))?;
            let pass = r.max_err() < tol;
            let _ = writeln!(
                table,
                "loss      {kind:<6} lambda={lambda:<3} trials={trials:<5} max_rel_err={:.3e} {}",
                r.max_err(),
                if pass { "ok" } else { "FAIL" }
            );
            let _ = writeln!(csv, "loss,{kind},{lambda},{trials},{:e},{tol:e},{pass}", r.max_err());
            if !pass {
                failures.push(format!("loss {kind} lambda={lambda}"));
            }
        }
    }

    let config = TrainConfig {
        pl_mode: PseudoLabelMode::Proto,
        erda: ErdaConfig::default(),
        seed,
        ..TrainConfig::default()
    };
    let scene = gradcheck_scene(seed)?;
    let report = check_pipeline_gradients(&config, &scene)?;
    let err = report.max_err();
    let pass = err < PIPELINE_TOL;
    let worst = report.worst().map_or("-", |t| t.name.as_str());
    let _ = writeln!(
        table,
        "pipeline  proto  kl_pq lambda=1 max_rel_err={err:.3e} (worst tensor {worst}) {}",
        if pass { "ok" } else { "FAIL" }
    );
    let _ = writeln!(csv, "pipeline,kl_pq,1,1,{err:e},{PIPELINE_TOL:e},{pass}");
    if !pass {
        failures.push("pipeline".into());
    }

    if let Some(path) = out {
        write_file(path, &csv)?;
    }
    if failures.is_empty() {
        Ok(table)
    } else {
        print!("{table}");
        Err(CliError::CheckFailed(format!("gradient check failed: {}", failures.join(", "))))
    }
}

/// Writes the binary contour grid as CSV and summarizes it.
pub fn landscape(kind: DivergenceKind, lambda: f64, resolution: usize, out: &Path) -> Result<String, CliError> {
    let grid = contour_grid(kind, lambda, resolution)?;
    write_file(out, &grid.to_csv())?;
    let midline = grid.midline.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let clipped = grid.clipped.iter().flatten().filter(|&&c| c).count();
    let plateau = plateau_metric(kind, lambda, 0.05)?;
    Ok(format!(
        "{kind} lambda={lambda} resolution={resolution}: {} cells, {clipped} clipped, \
         max |update| on q1=0.5 {midline:.3e}, plateau(0.05) {plateau:.6e}\nwrote {}\n",
        resolution * resolution,
        out.display()
    ))
}

/// Thread pool for sweeps, sized by [`THREADS_ENV`] when set.
pub fn sweep_pool() -> Result<rayon::ThreadPool, CliError> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => n,
            _ => {
                return Err(CliError::Usage(format!(
                    "{THREADS_ENV} must be a positive integer, got `{v}`"
                )))
            }
        },
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))
}

fn summarize(report: &Report) -> String {
    let mut s = String::new();
    for c in report.summaries() {
        let _ = writeln!(
            s,
            "{:<32} miou {:.4} ± {:.4}  pseudo-entropy {:.4} ± {:.4}  final-loss {:.4}",
            c.id, c.miou.mean, c.miou.std, c.mean_pseudo_entropy.mean, c.mean_pseudo_entropy.std, c.final_loss.mean
        );
    }
    s
}

/// Trains every (cell, seed) of an experiment file and writes the
/// per-run CSV report.
pub fn train(config: &Path, out: &Path) -> Result<String, CliError> {
    let text = fs::read_to_string(config).map_err(|e| CliError::io(config, e))?;
    let spec = parse_config(&text)?;
    let report = sweep_pool()?.install(|| run_experiment(&spec.cells, &spec.seeds))?;
    write_file(out, &report.to_csv())?;
    Ok(format!(
        "{}wrote {} rows to {}\n",
        summarize(&report),
        report.runs.len(),
        out.display()
    ))
}
