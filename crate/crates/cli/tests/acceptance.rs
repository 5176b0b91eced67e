//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nab_core::encoder::{binary_distance, encode, eval_bin, init_bins, Bin};
use nab_core::geometry::render_phantom;
use nab_core::gradcheck::{run_gradcheck, GradcheckConfig, CHECKED_GROUPS};
use nab_core::metrics::{data_range, psnr, ssim};
use nab_core::projector::{back_project, forward_project, sirt_reconstruct};
use nab_core::trainer::{train, EncoderKind, ParamGroup, TrainConfig};
use nab_core::{make_grid, Image, PhantomPreset, ScanGeometry, Sinogram};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ADJOINT_TOL: f64 = 1e-10;
const GRADCHECK_TOL: f64 = 1e-4;
const LIMIT_PER_BIN: f64 = 1e-3;
const EDGE_MARGIN: f64 = 0.02;
const ROTATION_TOL: f64 = 1e-12;
const NAB_MIN_PSNR: f64 = 30.0;
const NAB_OVER_RFC: f64 = 2.0;
const ABLATION_DROP: f64 = 1.0;
const METRIC_TOL: f64 = 1e-9;

const EPOCHS: usize = 3000;
const PHANTOM_ANGLE: f64 = 0.3;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn adjoint_exactness() -> Outcome {
    let t = Instant::now();
    let geom = ScanGeometry::with_detectors(16, 96, 64, 64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Image::new(
        64,
        64,
        (0..4096).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let y = Sinogram::new(
        16,
        96,
        (0..16 * 96).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let ax = forward_project(&x, &geom).unwrap();
    let aty = back_project(&y, &geom).unwrap();
    let rel = (dot(ax.values(), y.values()) - dot(x.values(), aty.values())).abs()
        / (dot(ax.values(), ax.values()).sqrt() * dot(y.values(), y.values()).sqrt());
    let secs = t.elapsed().as_secs_f64();
    outcome(
        rel < ADJOINT_TOL && secs < 1.0,
        format!("relative error {rel:.2e} (< {ADJOINT_TOL:e}), {secs:.2} s (< 1 s)"),
    )
}

fn gradient_check() -> Outcome {
    let t = Instant::now();
    let cfg = GradcheckConfig::default();
    let report = run_gradcheck(&cfg).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let names: Vec<&str> = report.groups.iter().map(|g| g.group.as_str()).collect();
    let worst = report
        .groups
        .iter()
        .map(|g| g.relative_error)
        .fold(0.0, f64::max);
    let shape_ok = (cfg.height, cfg.width, cfg.views, cfg.bins) == (8, 8, 4, 4)
        && cfg.hidden_layers.iter().all(|&w| w == 8)
        && cfg.step == 1e-6;
    outcome(
        shape_ok
            && names == CHECKED_GROUPS
            && report.groups.iter().all(|g| g.relative_error < GRADCHECK_TOL)
            && secs < 10.0,
        format!(
            "{} groups, worst relative error {worst:.2e} (< {GRADCHECK_TOL:e}), {secs:.2} s (< 10 s)",
            names.len()
        ),
    )
}

fn edge_clearance(c: [f64; 2], b: &Bin) -> f64 {
    let (s, co) = b.theta.sin_cos();
    let (dx, dy) = (c[0] - b.u, c[1] - b.v);
    let s1 = co * dx - s * dy;
    let s2 = s * dx + co * dy;
    [
        (s1 - b.h / 2.0).abs(),
        (s1 + b.h / 2.0).abs(),
        (s2 - b.w / 2.0).abs(),
        (s2 + b.w / 2.0).abs(),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min)
}

fn limit_property() -> Outcome {
    let t = Instant::now();
    let m = 16;
    let grid = make_grid(64, 64).unwrap();
    let mut params = init_bins(m, &[10.0], 2024).unwrap();
    params.lambda.iter_mut().for_each(|l| *l = 1.0);
    let rows: Vec<usize> = (0..grid.len())
        .filter(|&i| (0..m).all(|b| edge_clearance(grid.coords()[i], &params.bin(b)) > EDGE_MARGIN))
        .collect();
    let mut curves: Vec<Vec<f64>> = Vec::new();
    let mut worst: f64 = 0.0;
    for k in [10.0, 100.0, 1000.0] {
        params.k.iter_mut().for_each(|x| *x = k);
        let f = encode(&grid, &params).unwrap();
        curves.push(
            rows.iter()
                .map(|&r| binary_distance(f.row(r).as_slice().unwrap()))
                .collect(),
        );
        if k == 1000.0 {
            worst = rows
                .iter()
                .flat_map(|&r| f.row(r).to_vec())
                .map(|x| binary_distance(&[x]))
                .fold(0.0, f64::max);
        }
    }
    let monotone =
        (0..rows.len()).all(|i| curves[1][i] <= curves[0][i] && curves[2][i] <= curves[1][i]);
    let secs = t.elapsed().as_secs_f64();
    outcome(
        monotone && worst < LIMIT_PER_BIN && secs < 1.0 && !rows.is_empty(),
        format!(
            "{} points, non-increasing: {monotone}, worst bin at k=1000 {worst:.2e} (< {LIMIT_PER_BIN:e}), {secs:.2} s",
            rows.len()
        ),
    )
}

fn rotation_consistency() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let bin = Bin {
            u: rng.random_range(-1.0..1.0),
            v: rng.random_range(-1.0..1.0),
            h: rng.random_range(0.01..1.5),
            w: rng.random_range(0.01..1.5),
            k: rng.random_range(1.0..1000.0),
            theta: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            lambda: 1.0,
        };
        let c = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let (s, co) = bin.theta.sin_cos();
        let (dx, dy) = (c[0] - bin.u, c[1] - bin.v);
        let q = [bin.u + co * dx - s * dy, bin.v + s * dx + co * dy];
        let flat = Bin { theta: 0.0, ..bin };
        worst = worst.max((eval_bin(c, &bin).unwrap() - eval_bin(q, &flat).unwrap()).abs());
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst < ROTATION_TOL && secs < 1.0,
        format!("10000 triples, max deviation {worst:.2e} (< {ROTATION_TOL:e}), {secs:.2} s"),
    )
}

struct DeskRuns {
    truth: Image,
    nab: f64,
    rfc: f64,
    sirt: f64,
    no_center: f64,
    no_side: f64,
    secs_main: f64,
}

fn desk_runs() -> DeskRuns {
    let grid = make_grid(64, 64).unwrap();
    let truth = render_phantom(&PhantomPreset::HollowSquare.spec(PHANTOM_ANGLE), &grid).unwrap();
    let geom = ScanGeometry::parallel(16, 64, 64).unwrap();
    let sino = forward_project(&truth, &geom).unwrap();
    let max = data_range(&truth);
    let base = TrainConfig {
        epochs: EPOCHS,
        ..TrainConfig::default()
    };
    assert_eq!(base.bins, 128);
    assert_eq!(base.hidden_layers, vec![64, 64, 64]);
    let score = |cfg: &TrainConfig| {
        let res = train(cfg, &sino, &geom).unwrap();
        psnr(&res.image, &truth, max).unwrap()
    };

    let t = Instant::now();
    let nab = score(&base);
    let rfc = score(&TrainConfig {
        encoder: EncoderKind::Rfc,
        ..base.clone()
    });
    let secs_main = t.elapsed().as_secs_f64();
    let sirt = psnr(&sirt_reconstruct(&sino, &geom, 200).unwrap(), &truth, max).unwrap();
    let frozen = |g: ParamGroup| {
        let mut cfg = base.clone();
        cfg.freeze.insert(g);
        score(&cfg)
    };
    let no_center = frozen(ParamGroup::Center);
    let no_side = frozen(ParamGroup::Side);
    DeskRuns {
        truth,
        nab,
        rfc,
        sirt,
        no_center,
        no_side,
        secs_main,
    }
}

fn nab_versus_rfc(r: &DeskRuns) -> Outcome {
    outcome(
        r.nab >= NAB_MIN_PSNR && r.nab >= r.rfc + NAB_OVER_RFC && r.secs_main <= 600.0,
        format!(
            "NAB {:.2} dB (>= {NAB_MIN_PSNR}), RFC {:.2} dB, gap {:.2} dB (>= {NAB_OVER_RFC}), {:.0} s (<= 600 s)",
            r.nab,
            r.rfc,
            r.nab - r.rfc,
            r.secs_main
        ),
    )
}

fn ablation(r: &DeskRuns) -> Outcome {
    let (dc, ds) = (r.nab - r.no_center, r.nab - r.no_side);
    outcome(
        dc >= ABLATION_DROP && ds >= ABLATION_DROP,
        format!(
            "frozen centers {:.2} dB (drop {dc:.2}), frozen sides {:.2} dB (drop {ds:.2}), required drop >= {ABLATION_DROP}",
            r.no_center, r.no_side
        ),
    )
}

fn baseline_ordering(r: &DeskRuns) -> Outcome {
    outcome(
        r.sirt < r.nab,
        format!("SIRT {:.2} dB < NAB {:.2} dB", r.sirt, r.nab),
    )
}

fn oracle_ssim(a: &Image, b: &Image) -> f64 {
    let (h, w) = a.shape();
    let l = data_range(b);
    let (c1, c2) = ((0.01 * l).powi(2), (0.03 * l).powi(2));
    let n = 49.0;
    let mut total = 0.0;
    let mut count = 0.0;
    for r in 0..=h - 7 {
        for c in 0..=w - 7 {
            let px: Vec<(f64, f64)> = (0..49)
                .map(|i| (a.get(r + i / 7, c + i % 7), b.get(r + i / 7, c + i % 7)))
                .collect();
            let mx = px.iter().map(|p| p.0).sum::<f64>() / n;
            let my = px.iter().map(|p| p.1).sum::<f64>() / n;
            let vx = px.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>() / (n - 1.0);
            let vy = px.iter().map(|p| (p.1 - my).powi(2)).sum::<f64>() / (n - 1.0);
            let cxy = px.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / (n - 1.0);
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1.0;
        }
    }
    total / count
}

fn oracle_psnr(a: &Image, b: &Image, max: f64) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for (x, y) in a.values().iter().zip(b.values()) {
        let term = (x - y) * (x - y) - comp;
        let next = sum + term;
        comp = (next - sum) - term;
        sum = next;
    }
    20.0 * max.log10() - 10.0 * (sum / a.values().len() as f64).log10()
}

fn metrics_conformance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    let mut unit = true;
    for _ in 0..25 {
        let mut img = || {
            Image::new(
                16,
                16,
                (0..256).map(|_| rng.random_range(0.0..1.0)).collect(),
            )
            .unwrap()
        };
        let (a, b) = (img(), img());
        let max = data_range(&b);
        worst = worst
            .max((psnr(&a, &b, max).unwrap() - oracle_psnr(&a, &b, max)).abs())
            .max((ssim(&a, &b).unwrap() - oracle_ssim(&a, &b)).abs());
        unit &= ssim(&a, &a).unwrap() == 1.0;
    }
    outcome(
        worst < METRIC_TOL && unit,
        format!(
            "max deviation {worst:.2e} (< {METRIC_TOL:e}), identical inputs give SSIM 1.0: {unit}"
        ),
    )
}

fn nab(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_nab"))
        .args(args)
        .current_dir(dir)
        .env_remove("NAB_SEED")
        .output()
        .expect("running nab")
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let steps: [&[&str]; 2] = [
        &[
            "phantom",
            "--preset",
            "hollow-square",
            "--size",
            "64",
            "--out",
            "truth.f64r",
        ],
        &[
            "project",
            "--input",
            "truth.f64r",
            "--views",
            "16",
            "--out",
            "sino.sino",
        ],
    ];
    for s in steps {
        let out = nab(s, d);
        if !out.status.success() {
            return outcome(
                false,
                format!("setup failed: {}", String::from_utf8_lossy(&out.stderr)),
            );
        }
    }
    let mut finals = Vec::new();
    for run in ["a", "b"] {
        let out = nab(
            &[
                "reconstruct",
                "--sino",
                "sino.sino",
                "--method",
                "nab",
                "--epochs",
                "150",
                "--deterministic",
                "--out-dir",
                run,
            ],
            d,
        );
        if !out.status.success() {
            return outcome(
                false,
                format!("run {run} failed: {}", String::from_utf8_lossy(&out.stderr)),
            );
        }
        finals.push(std::fs::read(d.join(run).join("final.f64r")).unwrap());
    }
    outcome(
        finals[0] == finals[1],
        format!(
            "two 150-epoch runs, {} bytes each, identical: {}",
            finals[0].len(),
            finals[0] == finals[1]
        ),
    )
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "adjoint exactness", adjoint_exactness()),
        (2, "end-to-end gradient check", gradient_check()),
        (3, "limit property", limit_property()),
        (4, "rotation consistency", rotation_consistency()),
    ];
    for (i, name, o) in &results {
        report(*i, name, o);
    }
    let runs = desk_runs();
    assert_eq!(runs.truth.shape(), (64, 64));
    let late = vec![
        (5, "NAB vs RFC at desk scale", nab_versus_rfc(&runs)),
        (6, "ablation direction", ablation(&runs)),
        (7, "baseline ordering", baseline_ordering(&runs)),
        (8, "metrics conformance", metrics_conformance()),
        (9, "determinism", determinism()),
    ];
    for (i, name, o) in &late {
        report(*i, name, o);
    }
    results.extend(late);
    let failed: Vec<usize> = results
        .iter()
        .filter(|r| !r.2.passed)
        .map(|r| r.0)
        .collect();
    println!(
        "acceptance: {} passed, {} failed",
        results.len() - failed.len(),
        failed.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}

fn report(i: usize, name: &str, o: &Outcome) {
    println!(
        "criterion {i} {}: {name}: {}",
        if o.passed { "PASS" } else { "FAIL" },
        o.detail
    );
}
