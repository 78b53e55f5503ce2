//! The four subcommands. Each writes its artifacts under `out_dir` and
//! reports whether its checks passed.

use std::fs;
use std::path::Path;

use entroscale_core::attention::{scale_factor, ScalePolicy};
use entroscale_core::diffusion::{
    decode_checkpoint, encode_checkpoint, sample, train, DiffusionError, FloatWidth,
    TwoBlobGenerator,
};
use entroscale_core::numeric::{Matrix, RngStream};
use entroscale_core::theory::{
    empirical_decomposition, entropy_logn_scan, gaussian_exp_moments, key_distribution,
    monte_carlo_entropy, predicted_entropy, quadrature_exp_moments, random_queries, row_moments,
    EntropyScan, GaussianTokenModel, RowMoments,
};

use crate::config::ExperimentConfig;
use crate::csv::{format_float, Cell, CsvTable};
use crate::error::CliError;
use crate::plot::{line_plot, pgm, Series};

/// Token counts of the entropy-law Monte Carlo suite.
pub const LAW_SIZES: [usize; 3] = [1024, 2048, 4096];
pub const DECOMPOSITION_TOL: f64 = 1e-9;
pub const MOMENT_TOL: f64 = 1e-8;
pub const LAW_ABS_TOL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub passed: bool,
    pub summary: String,
}

fn compute<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Compute(e.to_string())
}

fn prepare_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Token model and query rows shared by the theory commands. Equal token and
/// key dimensions use the identity projection; otherwise `W^K` has i.i.d.
/// `N(0, 1/d)` entries.
fn theory_setup(
    cfg: &ExperimentConfig,
    root: RngStream,
) -> Result<(GaussianTokenModel, Matrix), CliError> {
    let model = if cfg.token_dim == cfg.key_dim {
        GaussianTokenModel::isotropic(cfg.token_dim)
    } else {
        if cfg.key_dim > cfg.token_dim {
            return Err(CliError::Config(
                "key_dim may not exceed token_dim (key covariance would be singular)".into(),
            ));
        }
        let mut g = root.split(3).generator();
        let s = 1.0 / (cfg.token_dim as f64).sqrt();
        let w = Matrix::from_fn(cfg.token_dim, cfg.key_dim, |_, _| s * g.standard_normal());
        GaussianTokenModel::new(vec![0.0; cfg.token_dim], Matrix::identity(cfg.token_dim), w)
            .map_err(compute)?
    };
    let q = random_queries(cfg.query_rows, cfg.key_dim, cfg.query_norm, root.split(0));
    Ok((model, q))
}

fn fixed_lambda(d: usize) -> Result<f64, CliError> {
    Ok(scale_factor(ScalePolicy::Fixed, 0, d).map_err(compute)?.lambda)
}

pub fn verify_theory(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    cfg.validate_theory()?;
    let root = RngStream::new(cfg.seed, 0);
    let (model, q) = theory_setup(cfg, root)?;
    prepare_out_dir(&cfg.out_dir)?;

    let mut table = CsvTable::new(&["check_name", "n", "predicted", "measured", "stderr", "pass"]);
    let mut failures = 0usize;
    let mut record =
        |table: &mut CsvTable, name: &str, n: usize, p: f64, m: f64, se: f64, ok: bool| {
            if !ok {
                failures += 1;
            }
            table.push(vec![
                name.into(),
                n.into(),
                p.into(),
                m.into(),
                se.into(),
                ok.into(),
            ]);
        };

    // Decomposition identity on random instances.
    let decomp = root.split(1);
    for case in 0..cfg.decomp_cases as u64 {
        let mut g = decomp.split(case).generator();
        let n = 1 + g.below(512);
        let dim = 1 + g.below(16);
        let lambda = g.uniform_range(0.05, 2.0);
        let mut qv = vec![0.0; dim];
        g.fill_standard_normal(&mut qv);
        let mut keys = Matrix::zeros(n, dim);
        g.fill_standard_normal(keys.as_mut_slice());
        let terms = empirical_decomposition(&qv, &keys, lambda).map_err(compute)?;
        let ok = terms.relative_gap() <= DECOMPOSITION_TOL;
        record(
            &mut table,
            "decomposition",
            n,
            terms.exact_entropy,
            terms.reconstructed(),
            0.0,
            ok,
        );
    }

    // Closed-form moments against quadrature on a 10 × 10 grid; `n` holds
    // the grid index.
    for i in 0..10 {
        for j in 0..10 {
            let mu = -3.0 + 6.0 * i as f64 / 9.0;
            let sigma2 = 4.0 * j as f64 / 9.0;
            let m = RowMoments::new(mu, sigma2).map_err(compute)?;
            let (e, ye) = gaussian_exp_moments(m).map_err(compute)?;
            let (qe, qye) = quadrature_exp_moments(m).map_err(compute)?;
            let idx = 10 * i + j;
            let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(f64::MIN_POSITIVE);
            record(
                &mut table,
                "moment_exp",
                idx,
                e,
                qe,
                0.0,
                rel(e, qe) <= MOMENT_TOL,
            );
            let ok = if ye == 0.0 {
                qye.abs() <= MOMENT_TOL
            } else {
                rel(ye, qye) <= MOMENT_TOL
            };
            record(&mut table, "moment_y_exp", idx, ye, qye, 0.0, ok);
        }
    }

    // Entropy law by Monte Carlo.
    let lambda = fixed_lambda(cfg.scale_dim)?;
    let kd = key_distribution(&model).map_err(compute)?;
    for &n in &LAW_SIZES {
        let mut predicted = 0.0;
        for i in 0..q.rows() {
            predicted += predicted_entropy(n, row_moments(q.row(i), lambda, &kd).map_err(compute)?);
        }
        predicted /= q.rows() as f64;
        let est = monte_carlo_entropy(&model, &q, n, lambda, cfg.trials, root.split(2))
            .map_err(compute)?;
        let ok = (est.mean - predicted).abs() <= (3.0 * est.stderr).max(LAW_ABS_TOL);
        record(
            &mut table,
            "entropy_law",
            n,
            predicted,
            est.mean,
            est.stderr,
            ok,
        );
    }

    let rows = table.rows().len();
    write_file(&cfg.out_dir.join("theory.csv"), table.render().as_bytes())?;
    Ok(Outcome {
        passed: failures == 0,
        summary: format!("verify-theory: {} of {rows} checks passed", rows - failures),
    })
}

fn scan_table(scan: &EntropyScan) -> CsvTable {
    let mut t = CsvTable::new(&["n", "ln_n", "lambda", "mean_entropy", "stderr"]);
    for r in &scan.rows {
        t.push(vec![
            r.n.into(),
            r.ln_n.into(),
            Cell::Float(r.lambda),
            r.mean_entropy.into(),
            r.stderr.into(),
        ]);
    }
    t.comment(format!(
        "fit slope={} intercept={} r_squared={}",
        format_float(scan.fit.slope),
        format_float(scan.fit.intercept),
        format_float(scan.fit.r_squared)
    ));
    t
}

pub fn entropy_scan(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    cfg.validate_scan()?;
    let root = RngStream::new(cfg.seed, 0);
    let (model, q) = theory_setup(cfg, root)?;
    let scaled_policy = ScalePolicy::entropy_preserving(cfg.train_tokens).map_err(compute)?;
    prepare_out_dir(&cfg.out_dir)?;

    let run = |policy| {
        entropy_logn_scan(
            &model,
            &q,
            policy,
            cfg.scale_dim,
            &cfg.scan_sizes,
            cfg.trials,
            root.split(2),
        )
        .map_err(compute)
    };
    let fixed = run(ScalePolicy::Fixed)?;
    let scaled = run(scaled_policy)?;

    write_file(
        &cfg.out_dir.join("scan_fixed.csv"),
        scan_table(&fixed).render().as_bytes(),
    )?;
    write_file(
        &cfg.out_dir.join("scan_scaled.csv"),
        scan_table(&scaled).render().as_bytes(),
    )?;
    let series = |scan: &EntropyScan, label: &str, color| Series {
        label: format!("{label} (slope {:.3})", scan.fit.slope),
        color,
        points: scan.rows.iter().map(|r| (r.ln_n, r.mean_entropy)).collect(),
        fit: Some((scan.fit.slope, scan.fit.intercept)),
    };
    let svg = line_plot(
        "Attention entropy vs ln N",
        "ln N",
        "mean entropy",
        &[
            series(&fixed, "fixed", "#1f77b4"),
            series(&scaled, "entropy preserving", "#d62728"),
        ],
    );
    write_file(&cfg.out_dir.join("scan.svg"), svg.as_bytes())?;

    let passed = scaled.fit.slope.abs() < fixed.fit.slope;
    Ok(Outcome {
        passed,
        summary: format!(
            "entropy-scan: fixed slope {:.4} (r² {:.6}), scaled slope {:.4}",
            fixed.fit.slope, fixed.fit.r_squared, scaled.fit.slope
        ),
    })
}

pub fn train_toy(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let tc = cfg.train_config()?;
    let ckpt = cfg.checkpoint_path();
    prepare_out_dir(&cfg.out_dir)?;
    if let Some(parent) = ckpt.parent().filter(|p| !p.as_os_str().is_empty()) {
        prepare_out_dir(parent)?;
    }
    let data = TwoBlobGenerator::new(tc.image_size, tc.image_size);
    let state = match train(&tc, &data, RngStream::new(cfg.seed, 0)) {
        Ok(s) => s,
        Err(DiffusionError::TrainingDiverged { step, .. }) => {
            return Err(CliError::Compute(format!(
                "training diverged at step {step}"
            )))
        }
        Err(e @ (DiffusionError::InvalidConfig(_) | DiffusionError::InvalidRange(_))) => {
            return Err(CliError::Config(e.to_string()))
        }
        Err(e) => return Err(compute(e)),
    };

    let mut loss = CsvTable::new(&["step", "loss"]);
    for (i, l) in state.loss_history.iter().enumerate() {
        loss.push(vec![i.into(), (*l).into()]);
    }
    write_file(&ckpt, &encode_checkpoint(&state, FloatWidth::F64))?;
    write_file(&cfg.out_dir.join("loss.csv"), loss.render().as_bytes())?;
    let last = state.loss_history.last().copied().unwrap_or(f64::NAN);
    Ok(Outcome {
        passed: true,
        summary: format!("train-toy: {} steps, final loss {last:.6}", state.step),
    })
}

pub fn sample_toy(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let ckpt = cfg.checkpoint_path();
    let bytes = fs::read(&ckpt).map_err(|e| CliError::io(&ckpt, e))?;
    let state = decode_checkpoint(&bytes).map_err(|e| CliError::Checkpoint {
        path: ckpt.clone(),
        message: e.to_string(),
    })?;
    prepare_out_dir(&cfg.out_dir)?;
    let (image, trace) = match sample(
        &state,
        cfg.height,
        cfg.width,
        cfg.policy,
        RngStream::new(cfg.seed, 0),
    ) {
        Ok(v) => v,
        Err(e @ DiffusionError::IncompatibleResolution { .. }) => {
            return Err(CliError::Config(e.to_string()))
        }
        Err(e) => return Err(compute(e)),
    };

    let mut t = CsvTable::new(&["timestep", "layer_id", "n_tokens", "policy", "mean_entropy"]);
    for r in &trace.records {
        t.push(vec![
            r.timestep.into(),
            r.layer_id.into(),
            r.n_tokens.into(),
            r.policy.name().into(),
            r.mean_entropy.into(),
        ]);
    }
    write_file(&cfg.out_dir.join("sample.pgm"), pgm(&image).as_bytes())?;
    write_file(
        &cfg.out_dir.join("entropy_trace.csv"),
        t.render().as_bytes(),
    )?;
    Ok(Outcome {
        passed: true,
        summary: format!(
            "sample-toy: {}x{} image, {} trace records ({})",
            cfg.height,
            cfg.width,
            trace.len(),
            cfg.policy
        ),
    })
}
