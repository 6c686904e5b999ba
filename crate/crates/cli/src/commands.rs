use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use tomogcv::harness::{
    completed_keys, make_phantom, run_experiment, simulate_sinogram, summarize, write_summary, CsvSink,
    ExperimentContext, OracleProblem, PhantomKind, PhantomSpec, SimConfig, SUMMARY_HEADER,
};
use tomogcv::io::{load_image, load_sinogram, save_image, write_image, write_sinogram};
use tomogcv::kernels::Bandwidth;
use tomogcv::projector::{Image, ImageGrid, Sinogram, SinogramGeometry, DEFAULT_FLOOR_EPS};
use tomogcv::recon::{
    default_bounds, reconstruct as run_reconstruct, select_gcv, BandwidthMode, BpfEngine, Diagnostics, Method,
    ReconRequest,
};

use crate::config::{io_error, usage, BandwidthArg, CliResult, ConfigFile, GeometryArg, GridArg};
use crate::{ExperimentArgs, ReconstructArgs, SimulateArgs, TuneArgs};

const SIM_KEYS: &[&str] = &["phantom", "grid", "geometry", "counts-total", "lambda", "seed", "out"];
const RECON_KEYS: &[&str] = &["sinogram", "grid", "method", "bandwidth", "truth", "floor-eps", "out"];
const TUNE_KEYS: &[&str] = &["sinogram", "grid", "method", "truth", "floor-eps"];
const EXPERIMENT_KEYS: &[&str] = &[
    "preset", "phantom", "grid", "geometry", "lambdas", "replicates", "seed", "method", "floor-eps", "raw-rmse",
    "out", "parallel", "resume",
];

const SLOW_RECONSTRUCTION_MS: f64 = 2000.0;

fn load_config(path: &Option<PathBuf>, keys: &[&str]) -> CliResult<ConfigFile> {
    let cfg = match path {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::empty(),
    };
    cfg.check_keys(keys)?;
    Ok(cfg)
}

fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(crate::config::CliError::Io(format!("{}: no such file", path.display())))
    }
}

fn require_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(crate::config::CliError::Io(format!(
            "{}: directory does not exist",
            dir.display()
        ))),
        _ => Ok(()),
    }
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string(v).expect("json value"));
}

fn bandwidth_json(bw: &Bandwidth) -> Value {
    let (h1, h2, rho) = bw.params();
    json!({ "h1": h1, "h2": h2, "rho": rho })
}

fn phantom_kind(s: Option<&str>) -> CliResult<PhantomKind> {
    let kind: PhantomKind = s.unwrap_or("shepp_logan").parse()?;
    if let PhantomKind::File(p) = &kind {
        require_file(p)?;
    }
    Ok(kind)
}

/// Grid and sinogram geometry from the flags. A preset with a native size
/// fixes the grid when none is given; an explicit grid alone gets `nx` bins
/// and `2.5·nx` angles.
fn resolve_geometry(grid: Option<GridArg>, geometry: Option<GeometryArg>) -> CliResult<(ImageGrid, SinogramGeometry)> {
    let side = |g: &GeometryArg| match g {
        GeometryArg::Preset(p) => p.native_grid().unwrap_or(64),
        GeometryArg::Explicit { n_dist, .. } => *n_dist,
    };
    let image = match (grid, &geometry) {
        (Some(g), _) => ImageGrid::new(g.nx, g.ny, 1.0)?,
        (None, Some(geo)) => ImageGrid::new(side(geo), side(geo), 1.0)?,
        (None, None) => ImageGrid::new(64, 64, 1.0)?,
    };
    let geom = match geometry {
        Some(GeometryArg::Preset(p)) => p.geometry_for(&image)?,
        Some(GeometryArg::Explicit { n_dist, n_angle }) => SinogramGeometry::new(n_dist, n_angle, 1.0)?,
        None => {
            let bins = image.nx.max(image.ny);
            SinogramGeometry::new(bins, (2.5 * image.nx as f64).round() as usize, 1.0)?
        }
    };
    geom.check_covers(&image)?;
    Ok((image, geom))
}

fn checksum(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    format!("{:x}", h.finalize())
}

pub fn simulate(mut a: SimulateArgs) -> CliResult<()> {
    let cfg = load_config(&a.config, SIM_KEYS)?;
    cfg.overlay("phantom", &mut a.phantom)?;
    cfg.overlay("grid", &mut a.grid)?;
    cfg.overlay("geometry", &mut a.geometry)?;
    cfg.overlay("counts-total", &mut a.counts_total)?;
    cfg.overlay("lambda", &mut a.counts_total)?;
    cfg.overlay("seed", &mut a.seed)?;
    cfg.overlay("out", &mut a.out)?;
    let lambda = a.counts_total.ok_or_else(|| usage("--counts-total (or --lambda) is required"))?;
    let out = a.out.ok_or_else(|| usage("--out DIR is required"))?;
    let seed = a.seed.unwrap_or(1);
    let (grid, geom) = resolve_geometry(a.grid, a.geometry)?;
    let kind = phantom_kind(a.phantom.as_deref())?;
    ensure_dir(&out)?;

    let phantom = make_phantom(&PhantomSpec::new(kind, grid))?;
    let sino = simulate_sinogram(&phantom, &geom, lambda, seed)?;
    let (phantom_path, sino_path) = (out.join("phantom.hdr"), out.join("sinogram.hdr"));
    write_image(&phantom_path, &phantom)?;
    write_sinogram(&sino_path, &sino)?;
    if !geom.is_well_posed_for(&grid) {
        eprintln!("warning: {} LORs do not exceed {} pixels", geom.len(), grid.len());
    }
    print_json(&json!({
        "phantom": phantom_path,
        "sinogram": sino_path,
        "grid": [grid.nx, grid.ny],
        "geometry": [geom.n_dist, geom.n_angle],
        "counts_total": lambda,
        "seed": seed,
        "total": sino.total(),
        "checksum": checksum(&sino.values),
    }));
    Ok(())
}

fn load_inputs(sinogram: Option<PathBuf>, grid: Option<GridArg>) -> CliResult<(Sinogram, ImageGrid)> {
    let path = sinogram.ok_or_else(|| usage("--sinogram PATH is required"))?;
    require_file(&path)?;
    let y = load_sinogram(&path, 1.0)?;
    let pixel = y.geometry.bin_size;
    let grid = match grid {
        Some(g) => ImageGrid::new(g.nx, g.ny, pixel)?,
        None => ImageGrid::new(y.geometry.n_dist, y.geometry.n_dist, pixel)?,
    };
    y.geometry.check_covers(&grid)?;
    Ok((y, grid))
}

fn load_truth(path: &Path, grid: &ImageGrid) -> CliResult<Image> {
    require_file(path)?;
    let truth = load_image(path, grid.pixel_size)?;
    if truth.grid.nx != grid.nx || truth.grid.ny != grid.ny {
        return Err(usage(format!(
            "truth image is {}x{} but the grid is {}x{}",
            truth.grid.nx, truth.grid.ny, grid.nx, grid.ny
        )));
    }
    Ok(truth)
}

fn warn_diagnostics(d: &Diagnostics) {
    if d.floored_count > 0 {
        eprintln!("warning: spectral floor engaged at {} frequencies", d.floored_count);
    }
    if d.boundary_hit {
        eprintln!("warning: selected bandwidth lies on the search boundary");
    }
    if !d.converged {
        eprintln!("warning: bandwidth optimizer stopped before converging");
    }
    if let Some(n) = &d.negativity {
        if !n.converged {
            eprintln!(
                "warning: negativity reduction did not converge ({:.2e} of the activity is negative)",
                n.negative_fraction
            );
        }
    }
}

pub fn reconstruct(mut a: ReconstructArgs) -> CliResult<()> {
    let cfg = load_config(&a.config, RECON_KEYS)?;
    cfg.overlay("sinogram", &mut a.sinogram)?;
    cfg.overlay("grid", &mut a.grid)?;
    cfg.overlay("method", &mut a.method)?;
    cfg.overlay("bandwidth", &mut a.bandwidth)?;
    cfg.overlay("truth", &mut a.truth)?;
    cfg.overlay("floor-eps", &mut a.floor_eps)?;
    cfg.overlay("out", &mut a.out)?;
    let out = a.out.ok_or_else(|| usage("--out PATH is required"))?;
    require_parent(&out)?;
    let (y, grid) = load_inputs(a.sinogram, a.grid)?;
    let method = a.method.unwrap_or(Method::Bpf);
    let mode = match a.bandwidth.unwrap_or(BandwidthArg::Gcv) {
        BandwidthArg::Gcv => BandwidthMode::Gcv,
        BandwidthArg::Fixed(bw) => BandwidthMode::Fixed(bw),
        BandwidthArg::Oracle => {
            let path = a.truth.as_ref().ok_or_else(|| usage("--bandwidth oracle needs --truth IMAGE"))?;
            BandwidthMode::Oracle(load_truth(path, &grid)?)
        }
    };
    let mut req = ReconRequest::new(y, grid, method, mode);
    req.floor_eps = a.floor_eps.unwrap_or(DEFAULT_FLOOR_EPS);

    let result = run_reconstruct(&req)?;
    let d = &result.diagnostics;
    save_image(&out, &result.image)?;
    let sidecar = out.with_extension("json");
    let body = json!({
        "method": method.as_str(),
        "bandwidth": bandwidth_json(&result.bandwidth),
        "diagnostics": d,
    });
    fs::write(&sidecar, serde_json::to_string_pretty(&body).expect("json value")).map_err(|e| io_error(&sidecar, e))?;

    warn_diagnostics(d);
    if d.timings.total_ms > SLOW_RECONSTRUCTION_MS {
        eprintln!("warning: reconstruction took {:.0} ms", d.timings.total_ms);
    }
    print_json(&json!({
        "image": out,
        "diagnostics": sidecar,
        "method": method.as_str(),
        "bandwidth": bandwidth_json(&result.bandwidth),
        "zeta": d.zeta,
        "floored_count": d.floored_count,
        "boundary_hit": d.boundary_hit,
        "timings_ms": d.timings,
    }));
    Ok(())
}

pub fn tune(mut a: TuneArgs) -> CliResult<()> {
    let cfg = load_config(&a.config, TUNE_KEYS)?;
    cfg.overlay("sinogram", &mut a.sinogram)?;
    cfg.overlay("grid", &mut a.grid)?;
    cfg.overlay("method", &mut a.method)?;
    cfg.overlay("truth", &mut a.truth)?;
    cfg.overlay("floor-eps", &mut a.floor_eps)?;
    let (y, grid) = load_inputs(a.sinogram, a.grid)?;
    let truth = match &a.truth {
        Some(p) => Some(load_truth(p, &grid)?),
        None => None,
    };
    let method = a.method.unwrap_or(Method::Bpf);
    let bounds = default_bounds(&grid);

    let start = Instant::now();
    let mut engine = BpfEngine::new(grid, y.geometry, a.floor_eps.unwrap_or(DEFAULT_FLOOR_EPS))?;
    let kty = engine.backproject(&y)?;
    let pre = engine.precompute(&kty, &y)?;
    let mut diag = Diagnostics {
        floored_count: engine.model().floored_count(),
        converged: true,
        ..Diagnostics::default()
    };
    let bw = select_gcv(&pre, &grid, method, bounds, &mut diag)?;
    let select_ms = start.elapsed().as_secs_f64() * 1e3;
    warn_diagnostics(&diag);

    let mut out = json!({
        "method": method.as_str(),
        "bandwidth": bandwidth_json(&bw),
        "zeta": diag.zeta,
        "c_of_h": diag.c_of_h,
        "boundary_hit": diag.boundary_hit,
        "floored_count": diag.floored_count,
        "select_ms": select_ms,
        "zeta_trace": diag.zeta_trace,
    });
    if let Some(truth) = truth {
        let ls = engine.ls_spectrum(&kty);
        let mut problem = OracleProblem::new(&ls, &truth, bounds, true)?;
        let gcv_rmse = problem.rmse_at(method, &bw)?;
        let oracle = problem.search(method, &[bw])?;
        out["rmse"] = json!(gcv_rmse);
        out["oracle"] = json!({
            "bandwidth": bandwidth_json(&oracle.bandwidth),
            "rmse": oracle.rmse,
            "boundary_hit": oracle.boundary_hit,
        });
        out["efficiency"] = json!(oracle.rmse / gcv_rmse);
    }
    print_json(&out);
    Ok(())
}

pub fn experiment(mut a: ExperimentArgs) -> CliResult<()> {
    let cfg = load_config(&a.config, EXPERIMENT_KEYS)?;
    cfg.overlay("preset", &mut a.preset)?;
    cfg.overlay("phantom", &mut a.phantom)?;
    cfg.overlay("grid", &mut a.grid)?;
    cfg.overlay("geometry", &mut a.geometry)?;
    cfg.overlay("lambdas", &mut a.lambdas)?;
    cfg.overlay("replicates", &mut a.replicates)?;
    cfg.overlay("seed", &mut a.seed)?;
    cfg.overlay("method", &mut a.method)?;
    cfg.overlay("floor-eps", &mut a.floor_eps)?;
    cfg.overlay_flag("raw-rmse", &mut a.raw_rmse)?;
    cfg.overlay("out", &mut a.out)?;
    cfg.overlay("parallel", &mut a.parallel)?;
    cfg.overlay_flag("resume", &mut a.resume)?;

    let mut sim = match a.preset.as_deref().unwrap_or("desk") {
        "desk" => SimConfig::desk(),
        "full" => SimConfig::full(),
        other => return Err(usage(format!("unknown preset '{other}' (expected desk or full)"))),
    };
    if a.grid.is_some() || a.geometry.is_some() {
        let (grid, geom) = resolve_geometry(a.grid, a.geometry)?;
        sim.phantom.grid = grid;
        sim.geom = geom;
        sim.bounds = default_bounds(&grid);
    }
    sim.phantom.kind = phantom_kind(a.phantom.as_deref())?;
    if let Some(l) = a.lambdas {
        sim.lambdas = l.0;
    }
    if let Some(r) = a.replicates {
        sim.n_replicates = r;
    }
    if let Some(s) = a.seed {
        sim.seed = s;
    }
    if let Some(m) = a.method {
        sim.methods = m.0;
    }
    if let Some(f) = a.floor_eps {
        sim.floor_eps = f;
    }
    if let Some(p) = a.parallel {
        sim.parallel = p;
    }
    sim.normalize = !a.raw_rmse;
    let out = a.out.ok_or_else(|| usage("--out DIR is required"))?;
    sim.validate()?;
    ensure_dir(&out)?;

    let records_path = out.join("records.csv");
    let (sink, existing) = CsvSink::open(&records_path, a.resume)?;
    let skip = completed_keys(&existing);
    let ctx = ExperimentContext::new(sim.clone())?;
    for w in &ctx.warnings {
        eprintln!("note: {w}");
    }
    let start = Instant::now();
    let fresh = run_experiment(&ctx, &skip, |r| {
        if let Some(e) = &r.error {
            eprintln!("warning: lambda {} replicate {} {} failed: {e}", r.lambda, r.replicate, r.method);
        }
        sink.write(r)
    })?;
    eprintln!(
        "{} new records, {} reused, {:.1} s",
        fresh.len(),
        existing.len(),
        start.elapsed().as_secs_f64()
    );

    let in_scope = |lambda: f64, replicate: usize, method: Method| {
        sim.lambdas.contains(&lambda) && replicate < sim.n_replicates && sim.methods.contains(&method)
    };
    let all: Vec<_> = existing
        .into_iter()
        .chain(fresh)
        .filter(|r| in_scope(r.lambda, r.replicate, r.method))
        .collect();
    let boundary = all.iter().filter(|r| r.boundary_hit).count();
    if boundary > 0 {
        eprintln!("warning: {boundary} records chose a bandwidth on the search boundary");
    }
    let nonconverged = all.iter().filter(|r| r.nonconverged).count();
    if nonconverged > 0 {
        eprintln!("warning: {nonconverged} records stopped an iteration early (optimizer or negativity reduction)");
    }
    let rows = summarize(&all);
    let summary_path = out.join("summary.csv");
    write_summary(&rows, &summary_path)?;
    let text = fs::read_to_string(&summary_path).map_err(|e| io_error(&summary_path, e))?;
    debug_assert!(text.starts_with(SUMMARY_HEADER));
    print!("{text}");
    Ok(())
}
