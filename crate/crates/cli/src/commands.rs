use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use anyhow::{anyhow, bail, Context};
use nab_core::geometry::{load_image, render_phantom, save_image, save_png};
use nab_core::gradcheck::{run_gradcheck, GradcheckConfig, CHECKED_GROUPS};
use nab_core::metrics::{data_range, dataset_metrics, psnr, ssim};
use nab_core::projector::{forward_project, sirt_with_history};
use nab_core::trainer::{
    save_checkpoint, train_with_observer, Checkpoint, ParamGroup, ReconstructionResult, TrainConfig,
};
use nab_core::{make_grid, Image, PhantomPreset, ScanGeometry, Sinogram};
use serde_json::json;

use crate::config::{env_seed, Method, RunConfig};
use crate::{
    CmdResult, EvalArgs, Failure, GradcheckArgs, PhantomArgs, ProjectArgs, ReconstructArgs,
    SweepArgs,
};

static THREADS: OnceLock<usize> = OnceLock::new();

/// Sizes the global worker pool; later calls are ignored.
pub fn init_threads(n: usize) -> CmdResult {
    if n == 0 {
        return Err(anyhow!("--threads must be at least 1").into());
    }
    if THREADS.set(n).is_err() {
        return Ok(());
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring worker threads")?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn sidecar_path(sino: &Path) -> PathBuf {
    sino.with_extension("geom.json")
}

fn write_image_pair(image: &Image, dir: &Path, stem: &str) -> anyhow::Result<()> {
    save_image(image, dir.join(format!("{stem}.f64r")))?;
    save_png(image, dir.join(format!("{stem}.png")))?;
    Ok(())
}

fn load_inputs(sino: &Path, geometry: Option<&Path>) -> anyhow::Result<(Sinogram, ScanGeometry)> {
    let sinogram =
        Sinogram::load(sino).with_context(|| format!("loading sinogram {}", sino.display()))?;
    let gpath = geometry
        .map(Path::to_path_buf)
        .unwrap_or_else(|| sidecar_path(sino));
    let geom = ScanGeometry::load_json(&gpath)
        .with_context(|| format!("loading geometry {}", gpath.display()))?;
    if !sinogram.matches(&geom) {
        bail!(
            "sinogram is {}x{} but geometry expects {}x{}",
            sinogram.views(),
            sinogram.detectors(),
            geom.views(),
            geom.detector_count()
        );
    }
    Ok((sinogram, geom))
}

pub fn phantom(args: PhantomArgs) -> CmdResult {
    let preset: PhantomPreset = args.preset.parse()?;
    let grid = make_grid(args.size, args.size)?;
    let image = render_phantom(&preset.spec(args.angle), &grid)?;
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    save_image(&image, &args.out)?;
    save_png(&image, args.out.with_extension("png"))?;
    println!(
        "wrote {} ({}x{}, preset {preset}, angle {})",
        args.out.display(),
        args.size,
        args.size,
        args.angle
    );
    Ok(())
}

pub fn project(args: ProjectArgs) -> CmdResult {
    if args.views == 0 {
        return Err(anyhow!("--views must be at least 1").into());
    }
    let image = load_image(&args.input)
        .with_context(|| format!("loading image {}", args.input.display()))?;
    let (h, w) = image.shape();
    let geom = match args.detectors {
        Some(v) => ScanGeometry::with_detectors(args.views, v, h, w)?,
        None => ScanGeometry::parallel(args.views, h, w)?,
    };
    let sino = forward_project(&image, &geom)?;
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    sino.save(&args.out)?;
    let side = sidecar_path(&args.out);
    geom.save_json(&side)?;
    println!(
        "wrote {} ({} views x {} detectors) and {}",
        args.out.display(),
        geom.views(),
        geom.detector_count(),
        side.display()
    );
    Ok(())
}

fn resolve_run_config(args: &ReconstructArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = env_seed()? {
        cfg.train.seed = seed;
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    let method = args.method.unwrap_or(cfg.method);
    cfg.set_method(method);
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(i) = args.iters {
        cfg.sirt_iterations = i;
    }
    if let Some(m) = args.bins {
        cfg.train.bins = m;
    }
    if !args.steepness.is_empty() {
        cfg.train.steepness_set = args.steepness.clone();
    }
    if let Some(lr) = args.lr {
        let r = &mut cfg.train.learning_rates;
        r.net = lr;
        r.center = lr;
        r.side = lr;
        r.theta = lr;
        r.steepness = lr;
        r.lambda = lr;
    }
    for name in args.freeze.iter().filter(|s| !s.trim().is_empty()) {
        cfg.train.freeze.insert(name.parse::<ParamGroup>()?);
    }
    if let Some(dir) = &args.out_dir {
        cfg.output_dir = dir.clone();
    }
    cfg.deterministic |= args.deterministic;
    cfg.train.validate()?;
    Ok(cfg)
}

fn loss_csv(curve: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (e, l) in curve.iter().enumerate() {
        let _ = writeln!(out, "{e},{l:e}");
    }
    out
}

fn image_metrics(image: &Image, truth: &Image) -> anyhow::Result<serde_json::Value> {
    let p = psnr(image, truth, data_range(truth))?;
    Ok(json!({
        "psnr_db": p.is_finite().then_some(p),
        "ssim": ssim(image, truth)?,
    }))
}

fn write_training_outputs(
    res: &ReconstructionResult,
    cfg: &RunConfig,
    dir: &Path,
    final_stem: &str,
    truth: Option<&Image>,
) -> anyhow::Result<()> {
    write_image_pair(&res.image, dir, final_stem)?;
    for (epoch, img) in &res.checkpoints {
        write_image_pair(img, dir, &format!("checkpoint_{epoch}"))?;
    }
    fs::write(dir.join("loss.csv"), loss_csv(&res.loss_curve))?;
    let ckpt = Checkpoint {
        model: res.model.clone(),
        optimizer: res.optimizer.clone(),
        meta: json!({
            "epochs_completed": res.loss_curve.len(),
            "config": cfg,
        }),
    };
    save_checkpoint(&ckpt, dir.join("model.ckpt"))?;
    if let Some(truth) = truth {
        let mut m = serde_json::Map::new();
        m.insert(final_stem.into(), image_metrics(&res.image, truth)?);
        for (epoch, img) in &res.checkpoints {
            m.insert(format!("checkpoint_{epoch}"), image_metrics(img, truth)?);
        }
        fs::write(
            dir.join("metrics.json"),
            serde_json::to_string_pretty(&m)? + "\n",
        )?;
    }
    Ok(())
}

fn load_truth(path: Option<&Path>, geom: &ScanGeometry) -> anyhow::Result<Option<Image>> {
    let Some(p) = path else { return Ok(None) };
    let img = load_image(p).with_context(|| format!("loading reference {}", p.display()))?;
    if img.shape() != geom.image_shape() {
        bail!(
            "reference is {:?} but geometry reconstructs {:?}",
            img.shape(),
            geom.image_shape()
        );
    }
    Ok(Some(img))
}

pub fn reconstruct(args: ReconstructArgs) -> CmdResult {
    let mut cfg = resolve_run_config(&args)?;
    if let Some(n) = cfg.threads {
        init_threads(n)?;
    }
    let geom_path = args
        .geometry
        .clone()
        .unwrap_or_else(|| sidecar_path(&args.sino));
    let (sino, geom) = if args.geometry.is_none() && !geom_path.exists() {
        let geom = cfg
            .geometry
            .clone()
            .ok_or_else(|| anyhow!("no geometry: {} is missing", geom_path.display()))?;
        let sino = Sinogram::load(&args.sino)
            .with_context(|| format!("loading sinogram {}", args.sino.display()))?;
        if !sino.matches(&geom) {
            return Err(anyhow!("sinogram does not match the configured geometry").into());
        }
        (sino, geom)
    } else {
        load_inputs(&args.sino, Some(&geom_path))?
    };
    cfg.geometry = Some(geom.clone());
    let truth = load_truth(args.truth.as_deref(), &geom)?;

    let dir = cfg.output_dir.clone();
    ensure_dir(&dir)?;
    cfg.save(&dir.join("config.json"))?;

    if cfg.method == Method::Sirt {
        let res = sirt_with_history(&sino, &geom, cfg.sirt_iterations)?;
        write_image_pair(&res.image, &dir, "final")?;
        let mut csv = String::from("iteration,residual\n");
        for (i, r) in res.residuals.iter().enumerate() {
            let _ = writeln!(csv, "{i},{r:e}");
        }
        fs::write(dir.join("residual.csv"), csv)?;
        if let Some(t) = &truth {
            let m = json!({ "final": image_metrics(&res.image, t)? });
            fs::write(
                dir.join("metrics.json"),
                serde_json::to_string_pretty(&m)? + "\n",
            )
            .context("writing metrics")?;
        }
        println!(
            "sirt: {} iterations, final residual {:e}",
            cfg.sirt_iterations,
            res.residuals.last().copied().unwrap_or(f64::NAN)
        );
        return Ok(());
    }

    let epochs = cfg.train.epochs;
    let report_every = (epochs / 10).max(1);
    let outcome = train_with_observer(&cfg.train, &sino, &geom, |e, loss| {
        if e % report_every == 0 || e + 1 == epochs {
            eprintln!("epoch {e:>6}  loss {loss:.6e}");
        }
    });
    match outcome {
        Ok(res) => {
            write_training_outputs(&res, &cfg, &dir, "final", truth.as_ref())?;
            let last = res.loss_curve.last().copied().unwrap_or(f64::NAN);
            println!("{}: {epochs} epochs, final loss {last:e}", cfg.method);
            Ok(())
        }
        Err(err) => match (err.error, err.partial) {
            (e @ nab_core::Error::NonFinite { .. }, Some(partial)) => {
                write_training_outputs(&partial, &cfg, &dir, "last_good", truth.as_ref())?;
                Err(Failure::Numerical(anyhow!(
                    "{e}; last good state saved in {}",
                    dir.display()
                )))
            }
            (e, _) => Err(Failure::Usage(e.into())),
        },
    }
}

pub fn eval(args: EvalArgs) -> CmdResult {
    if args.recon.len() != args.truth.len() {
        return Err(anyhow!(
            "got {} reconstructions but {} references",
            args.recon.len(),
            args.truth.len()
        )
        .into());
    }
    let pairs = args
        .recon
        .iter()
        .zip(&args.truth)
        .map(|(r, t)| {
            let r = load_image(r).with_context(|| format!("loading {}", r.display()))?;
            let t = load_image(t).with_context(|| format!("loading {}", t.display()))?;
            Ok((r, t))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let report = dataset_metrics(&pairs)?;
    ensure_dir(&args.out_dir)?;
    fs::write(args.out_dir.join("report.csv"), report.to_csv())?;
    let mut summary = report.summary_json();
    summary["reconstructions"] = json!(args.recon);
    summary["references"] = json!(args.truth);
    let text = serde_json::to_string_pretty(&summary)?;
    fs::write(args.out_dir.join("report.json"), text.clone() + "\n")?;
    println!("{text}");
    Ok(())
}

pub fn gradcheck(args: GradcheckArgs) -> CmdResult {
    let mut cfg = GradcheckConfig::default();
    if let Some(seed) = env_seed()? {
        cfg.seed = seed;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(t) = args.tolerance {
        cfg.tolerance = t;
    }
    if let Some(g) = &args.perturb {
        if !CHECKED_GROUPS.contains(&g.as_str()) {
            return Err(anyhow!(
                "unknown group `{g}` (expected one of {})",
                CHECKED_GROUPS.join(", ")
            )
            .into());
        }
        cfg.perturb = Some(g.clone());
    }
    let report = run_gradcheck(&cfg)?;
    for g in &report.groups {
        println!(
            "{:<12} {:>6} params  rel err {:.3e}  {}",
            g.group,
            g.parameters,
            g.relative_error,
            if g.passed { "ok" } else { "FAIL" }
        );
    }
    println!(
        "{:<12} {:>13}  rel err {:.3e}  {}",
        "adjoint",
        "",
        report.adjoint_relative_error,
        if report.adjoint_passed { "ok" } else { "FAIL" }
    );
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "gradient mismatch in {}",
            report.failures().join(", ")
        )))
    }
}

fn parse_sets(s: &str) -> anyhow::Result<Vec<Vec<f64>>> {
    let sets = s
        .split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .with_context(|| format!("bad steepness value `{v}`"))
                })
                .collect::<anyhow::Result<Vec<_>>>()
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    if sets.is_empty() {
        bail!("--sets must name at least one steepness set");
    }
    Ok(sets)
}

pub fn sweep(args: SweepArgs) -> CmdResult {
    let sets = parse_sets(&args.sets)?;
    let mut base: TrainConfig = match &args.config {
        Some(p) => RunConfig::load(p)?.train,
        None => TrainConfig::default(),
    };
    if let Some(seed) = env_seed()? {
        base.seed = seed;
    }
    if let Some(seed) = args.seed {
        base.seed = seed;
    }
    if let Some(e) = args.epochs {
        base.epochs = e;
    }
    let (sino, geom) = load_inputs(&args.sino, args.geometry.as_deref())?;
    let truth = load_truth(Some(&args.truth), &geom)?.expect("reference requested");
    ensure_dir(&args.out_dir)?;

    let mut csv = String::from("set,steepness,final_loss,psnr_db,ssim\n");
    let mut rows = Vec::new();
    for (i, set) in sets.iter().enumerate() {
        let cfg = TrainConfig {
            steepness_set: set.clone(),
            ..base.clone()
        };
        cfg.validate()?;
        let res = train_with_observer(&cfg, &sino, &geom, |_, _| {}).map_err(|e| {
            if matches!(e.error, nab_core::Error::NonFinite { .. }) {
                Failure::Numerical(e.error.into())
            } else {
                Failure::Usage(e.error.into())
            }
        })?;
        let p = psnr(&res.image, &truth, data_range(&truth))?;
        let s = ssim(&res.image, &truth)?;
        let loss = res.loss_curve.last().copied().unwrap_or(f64::NAN);
        write_image_pair(&res.image, &args.out_dir, &format!("set_{i}"))?;
        let label = set
            .iter()
            .map(|k| k.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(csv, "{i},{label},{loss:e},{p},{s}");
        println!("set {i} [{label}]: loss {loss:.4e}  psnr {p:.3} dB  ssim {s:.4}");
        rows.push(json!({
            "set": i,
            "steepness": set,
            "final_loss": loss,
            "psnr_db": p.is_finite().then_some(p),
            "ssim": s,
        }));
    }
    fs::write(args.out_dir.join("sweep.csv"), csv)?;
    fs::write(
        args.out_dir.join("sweep.json"),
        serde_json::to_string_pretty(&json!({ "epochs": base.epochs, "runs": rows }))? + "\n",
    )?;
    Ok(())
}
