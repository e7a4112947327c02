use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rdvae::analysis::{analyze as analyze_model, write_report, PropertyReport};
use rdvae::datasets::{generate_toy, load_idx, ToyDataset};
use rdvae::losses::{CodingLoss, LossTag};
use rdvae::nn::Matrix;
use rdvae::rd::{rate_grid_mu, rate_identity_grid, rd_curve, RATE_GRID_SIGMA};
use rdvae::vae::{Checkpoint, EpochRecord, Trainer};
use serde::Serialize;

use crate::config::{cell_seed, DatasetConfig, DatasetKind, RunConfig};
use crate::error::{CliError, CliResult};

const DEFAULT_SWEEP_EPOCHS: usize = 50;

pub struct Data {
    pub x: Matrix,
    pub density: Option<Vec<f64>>,
    pub image_shape: Option<(usize, usize)>,
}

pub fn load_data(cfg: &DatasetConfig) -> CliResult<Data> {
    if cfg.kind == DatasetKind::Idx {
        let images = cfg
            .idx_images
            .as_deref()
            .ok_or_else(|| CliError::Config("idx dataset needs an images file (--idx-images)".into()))?;
        let mut img = load_idx(images, cfg.idx_labels.as_deref())?;
        if let Some(limit) = cfg.image_limit {
            let keep: Vec<usize> = (0..img.count.min(limit)).collect();
            img.pixels = img.pixels.select_rows(&keep);
        }
        return Ok(Data {
            x: img.pixels,
            density: None,
            image_shape: Some((img.rows, img.cols)),
        });
    }
    let ds = match &cfg.path {
        Some(p) => ToyDataset::load(p)?,
        None => generate_toy(&cfg.toy_spec().expect("toy kind"))?,
    };
    Ok(Data {
        x: ds.x,
        density: Some(ds.density),
        image_shape: None,
    })
}

pub fn gen(cfg: &RunConfig) -> CliResult<()> {
    let spec = cfg
        .dataset
        .toy_spec()
        .ok_or_else(|| CliError::Config("gen only builds toy datasets (mix, ramp, norm)".into()))?;
    let out = cfg.out_dir()?;
    let ds = generate_toy(&spec)?;
    ds.save(out)?;
    cfg.write(out)?;
    println!("wrote {} samples × {} dims to {}", ds.len(), ds.x.cols(), out.display());
    Ok(())
}

fn write_history(path: &Path, history: &[EpochRecord]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in history {
        w.serialize(r)?;
    }
    if history.is_empty() {
        w.write_record(["epoch", "steps", "loss", "transform_loss", "coding_loss", "kl"])?;
    }
    w.flush()?;
    Ok(())
}

/// Trains from scratch, or continues `resume` under its own configuration;
/// `epochs` then replaces the checkpoint's epoch budget.
pub fn train(
    mut cfg: RunConfig,
    resume: Option<&Path>,
    epochs: Option<usize>,
    checkpoint_every: usize,
) -> CliResult<()> {
    let out = cfg.out_dir()?.to_path_buf();
    let data = load_data(&cfg.dataset)?;
    let mut trainer = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            cfg.model = Some(ck.config.model.clone());
            cfg.loss = Some(ck.config.loss);
            cfg.reduction = Some(ck.config.loss.reduction);
            cfg.train = ck.config.train.clone();
            cfg.latent_dim = Some(ck.config.model.latent_dim);
            let mut t = ck.into_trainer()?;
            if let Some(e) = epochs {
                t.set_epoch_budget(e);
                cfg.train.epochs = e;
            }
            t
        }
        None => {
            cfg.resolve(data.x.cols(), data.image_shape);
            Trainer::new(cfg.vae_config()?)?
        }
    };
    cfg.write(&out)?;
    let ckpt_path = out.join("checkpoint.json");
    let every = checkpoint_every.max(1);
    let start = Instant::now();
    let result = trainer.run(&data.x, |t| {
        let r = t.history().last().expect("epoch recorded");
        if r.epoch % every == 0 {
            Checkpoint::from_trainer(t)?.save(&ckpt_path)?;
            eprintln!(
                "epoch {:>4}  loss {:.6}  coding {:.6}  kl {:.4}  ({:.0?})",
                r.epoch,
                r.loss,
                r.coding_loss,
                r.kl,
                start.elapsed()
            );
        }
        Ok(())
    });
    Checkpoint::from_trainer(&trainer)?.save(&ckpt_path)?;
    write_history(&out.join("history.csv"), trainer.history())?;
    result?;
    println!(
        "trained {} epochs ({} steps); checkpoint at {}",
        trainer.epochs_done(),
        trainer.steps(),
        ckpt_path.display()
    );
    Ok(())
}

pub fn analyze(cfg: RunConfig, checkpoint: &Path) -> CliResult<()> {
    let out = cfg.out_dir()?.to_path_buf();
    let model = Checkpoint::load(checkpoint)?.model()?;
    let data = load_data(&cfg.dataset)?;
    let mut cfg = cfg;
    cfg.model = Some(model.config().model.clone());
    cfg.loss = Some(*model.loss());
    cfg.reduction = Some(model.loss().reduction);
    cfg.train = model.config().train.clone();
    cfg.latent_dim = Some(model.latent_dim());
    let hash = cfg.write(&out)?;
    let (mut report, traversal) = analyze_model(&model, &data.x, data.density.as_deref(), &cfg.analysis)?;
    report.config_hash = Some(hash);
    write_report(&out, &report, &traversal)?;
    print_summary(&report);
    Ok(())
}

fn print_summary(r: &PropertyReport) {
    println!("dim  informative  mean σ⁻²      ratio    norm stat (sd)");
    for d in &r.dims {
        println!(
            "{:>3}  {:>11}  {:>10.3}  {:>8}  {:.3} ({:.3})",
            d.dim,
            d.informative,
            d.mean_inv_sigma2,
            d.ratio.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into()),
            d.norm_stat.mean,
            d.norm_stat.sd
        );
    }
    if let Some(cs) = &r.correlations {
        for c in cs {
            println!(
                "R[{}] = {}  (log {})",
                c.estimator,
                c.pearson.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
                c.pearson_log.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
            );
        }
    }
}

pub fn rdcheck(cfg: &RunConfig, sigma2: &[f64]) -> CliResult<()> {
    let out = cfg.out_dir()?;
    cfg.write(out)?;
    let levels: Vec<f64> = (0..=120).map(|i| 1e-3 * 10f64.powf(i as f64 / 30.0)).collect();
    let mut w = csv::Writer::from_path(out.join("rdcurve.csv"))?;
    w.write_record(["d", "R_opt", "D_opt"])?;
    for p in rd_curve(sigma2, &levels)? {
        w.write_record([p.d.to_string(), p.r_opt.to_string(), p.d_opt.to_string()])?;
    }
    w.flush()?;

    let grid = rate_identity_grid(&rate_grid_mu(), &RATE_GRID_SIGMA)?;
    let mut w = csv::Writer::from_path(out.join("rate_id.csv"))?;
    w.write_record(["mu", "sigma", "numeric", "closed", "kl_plus_offset", "abs_gap"])?;
    for r in &grid {
        w.write_record([
            r.mu.to_string(),
            r.sigma.to_string(),
            r.numeric.to_string(),
            r.closed.to_string(),
            r.kl_plus_offset.to_string(),
            r.abs_gap().to_string(),
        ])?;
    }
    w.flush()?;
    let worst = grid.iter().max_by(|a, b| a.abs_gap().total_cmp(&b.abs_gap())).expect("non-empty grid");
    println!(
        "max |numeric − (KL + ½ln(πe/6))| = {:.5} at μ={}, σ={}",
        worst.abs_gap(),
        worst.mu,
        worst.sigma
    );
    Ok(())
}

/// One row of `sweep.csv`; dims are listed by descending estimated variance.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub dataset: String,
    pub loss: String,
    pub lambda: f64,
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: f64,
    pub informative_count: usize,
    pub norm_mean_1: Option<f64>,
    pub norm_mean_2: Option<f64>,
    pub norm_mean_3: Option<f64>,
    pub inv_sigma2_1: Option<f64>,
    pub inv_sigma2_2: Option<f64>,
    pub inv_sigma2_3: Option<f64>,
    pub ratio_1: Option<f64>,
    pub ratio_2: Option<f64>,
    pub ratio_3: Option<f64>,
    pub r_i: Option<f64>,
    pub r_ii: Option<f64>,
    pub r_iii: Option<f64>,
    pub r_iv: Option<f64>,
}

fn sweep_row(cell: &RunConfig, report: &PropertyReport, final_loss: f64) -> SweepRow {
    let top = |k: usize| report.order.get(k).map(|&d| &report.dims[d]);
    let norm = |k| top(k).map(|d| d.norm_stat.mean);
    let inv = |k| top(k).map(|d| d.mean_inv_sigma2);
    let ratio = |k| top(k).and_then(|d| d.ratio);
    let r = |name: &str| report.correlation(name).and_then(|c| c.pearson);
    SweepRow {
        dataset: cell.dataset.kind.name().into(),
        loss: cell.loss.map(|l| l.tag.short_name()).unwrap_or("").into(),
        lambda: cell.train.lambda,
        seed: cell.train.seed,
        epochs: cell.train.epochs,
        final_loss,
        informative_count: report.informative_count,
        norm_mean_1: norm(0),
        norm_mean_2: norm(1),
        norm_mean_3: norm(2),
        inv_sigma2_1: inv(0),
        inv_sigma2_2: inv(1),
        inv_sigma2_3: inv(2),
        ratio_1: ratio(0),
        ratio_2: ratio(1),
        ratio_3: ratio(2),
        r_i: r("prior"),
        r_ii: r("elbo"),
        r_iii: r("prior_scaled"),
        r_iv: r("elbo_scaled"),
    }
}

fn run_cell(cell: &RunConfig) -> CliResult<SweepRow> {
    let data = load_data(&cell.dataset)?;
    let mut cell = cell.clone();
    cell.resolve(data.x.cols(), data.image_shape);
    let mut trainer = Trainer::new(cell.vae_config()?)?;
    trainer.run(&data.x, |_| Ok(()))?;
    let final_loss = trainer.history().last().map_or(f64::NAN, |r| r.loss);
    let (report, _) = analyze_model(trainer.model(), &data.x, data.density.as_deref(), &cell.analysis)?;
    Ok(sweep_row(&cell, &report, final_loss))
}

pub fn sweep(
    cfg: &RunConfig,
    datasets: &[DatasetKind],
    losses: &[LossTag],
    lambdas: &[f64],
    jobs: usize,
    epochs_given: bool,
) -> CliResult<()> {
    let out = cfg.out_dir()?.to_path_buf();
    if datasets.contains(&DatasetKind::Idx) {
        return Err(CliError::Config("sweep covers toy datasets only".into()));
    }
    let mut base = cfg.clone();
    if !epochs_given && cfg.train.epochs == RunConfig::default().train.epochs {
        base.train.epochs = DEFAULT_SWEEP_EPOCHS;
    }
    base.write(&out)?;

    let mut cells = Vec::new();
    for &d in datasets {
        for &l in losses {
            for &lam in lambdas {
                let mut c = base.clone();
                c.dataset.kind = d;
                c.dataset.seed = cell_seed(base.dataset.seed, d.name());
                c.loss = Some(match base.loss {
                    Some(prev) => CodingLoss { tag: l, ..prev },
                    None => CodingLoss::new(l),
                });
                c.model = None;
                c.train.lambda = lam;
                c.train.seed = cell_seed(base.train.seed, &format!("{}/{}/{lam}", d.name(), l.short_name()));
                cells.push(c);
            }
        }
    }

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<CliResult<SweepRow>>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1).min(cells.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(cell) = cells.get(i) else { break };
                let r = run_cell(cell);
                if let Ok(row) = &r {
                    eprintln!("cell {}/{} {}/{}/λ={} done", i + 1, cells.len(), row.dataset, row.loss, row.lambda);
                }
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });

    let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
    let mut first_err = None;
    for r in results.into_inner().expect("results lock").into_iter().flatten() {
        match r {
            Ok(row) => w.serialize(row)?,
            Err(e) => {
                eprintln!("rdvae: sweep cell failed: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    w.flush()?;
    fs::metadata(out.join("sweep.csv"))?;
    match first_err {
        Some(e) => Err(e),
        None => {
            println!("sweep of {} cells written to {}", cells.len(), out.join("sweep.csv").display());
            Ok(())
        }
    }
}
