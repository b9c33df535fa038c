//! `dlab` — spectral experiments on the KP and NLS equations: evolution
//! runs, Whitham classification scans, and fitting/extraction utilities
//! operating on stored snapshots and CSV tables.

mod config;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ConfigFile;
use dlab_core::diagnostics::{
    fit_linear, fit_lump, fit_power_law, find_peaks, lattice_spacing, lump_position_scaling,
};
use dlab_core::io::{self, write_atomic};
use dlab_core::nls::{nls_evolve, NlsConfig, NlsInit};
use dlab_core::solutions::{dsw_initial, KpBranch, LumpParams};
use dlab_core::solver::{evolve, resume, Integrator, SolverConfig};
use dlab_core::spectral::Field;
use dlab_core::whitham::{modulation_matrices, pencil_spectrum, WhithamPoint};
use dlab_core::{Error, Result};

#[derive(Parser)]
#[command(name = "dlab", version, about = "Dispersive-wave laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Flat key=value configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (falls back to DLAB_THREADS, then all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Resume a kp-evolve run from this manifest.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve the KP equation from configured initial data.
    KpEvolve(CommonArgs),
    /// Evolve the 1D focusing NLS equation and record max |psi|.
    NlsEvolve(CommonArgs),
    /// Classify the Whitham modulation pencil over a parameter grid.
    WhithamScan(CommonArgs),
    /// Fit stored CSV data (power law, line, or lump-position scaling).
    Fit(CommonArgs),
    /// Extract the y = 0 line of a KPFIELD snapshot.
    Slice(CommonArgs),
    /// Locate peaks in a KPFIELD snapshot and report lattice statistics.
    Peaks(CommonArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::KpEvolve(a)
        | Command::NlsEvolve(a)
        | Command::WhithamScan(a)
        | Command::Fit(a)
        | Command::Slice(a)
        | Command::Peaks(a) => a,
    };
    init_threads(common.threads);
    let result = match &cli.command {
        Command::KpEvolve(args) => cmd_kp_evolve(args),
        Command::NlsEvolve(args) => cmd_nls_evolve(args),
        Command::WhithamScan(args) => cmd_whitham_scan(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Slice(args) => cmd_slice(args),
        Command::Peaks(args) => cmd_peaks(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, kind) = classify(&err);
            let record = serde_json::json!({
                "error": err.to_string(),
                "kind": kind,
                "exit": code,
            });
            let _ = writeln!(std::io::stderr(), "{record}");
            ExitCode::from(code)
        }
    }
}

/// Exit codes: 2 config, 3 numerical failure, 4 I/O.
fn classify(err: &Error) -> (u8, &'static str) {
    match err {
        Error::BlowUp { .. } => (3, "blow-up"),
        Error::ResolutionLoss { .. } => (3, "resolution-loss"),
        Error::DriftExceeded { .. } => (3, "conservation-drift"),
        Error::Io(_) | Error::Format(_) => (4, "io"),
        _ => (2, "config"),
    }
}

fn init_threads(explicit: Option<usize>) {
    let n = explicit.or_else(|| {
        std::env::var("DLAB_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = n {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
}

fn parse_branch(cfg: &ConfigFile) -> Result<KpBranch> {
    match cfg.get_f64("alpha")? {
        None => Ok(KpBranch::KpI),
        Some(a) => KpBranch::from_alpha(a),
    }
}

fn kp_config(cfg: &ConfigFile) -> Result<SolverConfig> {
    let epsilon = cfg.require_f64("epsilon")?;
    let h = cfg.require_f64("h")?;
    let t_end = cfg.require_f64("t_end")?;
    let nx = cfg.require_usize("nx")?;
    let ny = cfg.get_usize("ny")?.unwrap_or(nx);
    let branch = parse_branch(cfg)?;
    let mut config = SolverConfig::new(epsilon, branch, h, t_end, nx, ny);
    if let Some(lx) = cfg.get_f64("lx")? {
        config.lx = lx;
    }
    if let Some(ly) = cfg.get_f64("ly")? {
        config.ly = ly;
    }
    if let Some(c) = cfg.get_f64("cutoff_factor")? {
        config.cutoff_factor = c;
    }
    if let Some(times) = cfg.get_f64_list("snapshot_times")? {
        config.snapshot_times = times;
    }
    if let Some(stride) = cfg.get_usize("monitor_stride")? {
        config.monitor_stride = stride;
    }
    if let Some(d) = cfg.get_bool("dealias")? {
        config.dealias = d;
    }
    if let Some(integ) = cfg.get_str("integrator") {
        config.integrator = match integ.as_str() {
            "composite" => Integrator::Composite,
            "integrating_factor" => Integrator::IntegratingFactor,
            other => {
                return Err(Error::Config(format!(
                    "integrator must be composite or integrating_factor, got `{other}`"
                )))
            }
        };
    }
    if let Some(v) = cfg.get_f64("max_l2_drift")? {
        config.max_l2_drift = v;
    }
    if let Some(v) = cfg.get_f64("max_energy_drift")? {
        config.max_energy_drift = v;
    }
    if let Some(v) = cfg.get_f64("tail_abort")? {
        config.tail_abort = v;
    }
    Ok(config)
}

fn kp_initial(cfg: &ConfigFile, config: &SolverConfig) -> Result<Field> {
    let grid = config.grid()?;
    let kind = cfg.get_str("initial").unwrap_or_else(|| "dsw".into());
    match kind.as_str() {
        "dsw" => {
            let c0 = cfg.require_f64("C0")?;
            Ok(grid.sample(move |x, y| dsw_initial(c0, x, y)))
        }
        "lump" => {
            let a = cfg.get_f64("lump_a")?.unwrap_or(0.0);
            let b = cfg.get_f64("lump_b")?.unwrap_or(1.0);
            let lump = LumpParams::new(a, b, config.epsilon)?;
            Ok(grid.sample(move |x, y| lump.eval(x, y, 0.0)))
        }
        "zero" => Ok(Field::zeros(&grid)),
        other => Err(Error::Config(format!(
            "initial must be dsw, lump or zero, got `{other}`"
        ))),
    }
}

const KP_REQUIRED: &[&str] = &["epsilon", "h", "t_end", "nx"];

fn cmd_kp_evolve(args: &CommonArgs) -> Result<()> {
    let cfg = ConfigFile::load(&args.config)?;
    let config = kp_config(&cfg)?;
    if let Some(manifest_path) = &args.resume {
        // The config file must agree with the manifest echo before the run
        // continues; any difference is refused.
        let _ = kp_initial(&cfg, &config)?; // consume initial-data keys
        cfg.finish(KP_REQUIRED)?;
        let manifest = io::read_manifest(manifest_path)?;
        let stored: SolverConfig = serde_json::from_value(manifest.config.clone())
            .map_err(|e| Error::Config(format!("manifest config does not parse: {e}")))?;
        if stored != config {
            return Err(Error::Config(
                "config file disagrees with the manifest; refusing to resume".into(),
            ));
        }
        resume(manifest_path)?;
        return Ok(());
    }
    let u0 = kp_initial(&cfg, &config)?;
    cfg.finish(KP_REQUIRED)?;
    config.validate()?;
    std::fs::create_dir_all(&args.out)?;
    evolve(&config, &u0, Some(&args.out))?;
    Ok(())
}

const NLS_REQUIRED: &[&str] = &["epsilon", "C0", "h", "y_end"];

fn cmd_nls_evolve(args: &CommonArgs) -> Result<()> {
    let cfg = ConfigFile::load(&args.config)?;
    let epsilon = cfg.require_f64("epsilon")?;
    let c0 = cfg.require_f64("C0")?;
    let h = cfg.require_f64("h")?;
    let y_end = cfg.require_f64("y_end")?;
    let mut config = NlsConfig::new(epsilon, c0, h, y_end);
    if let Some(n) = cfg.get_usize("N")? {
        config.n = n;
    }
    if let Some(l) = cfg.get_f64("L")? {
        config.l = l;
    }
    if let Some(init) = cfg.get_str("nls_init") {
        config.init = match init.as_str() {
            "sech2" => NlsInit::Sech2,
            "dsech2" => NlsInit::DSech2,
            other => {
                return Err(Error::Config(format!(
                    "nls_init must be sech2 or dsech2, got `{other}`"
                )))
            }
        };
    }
    cfg.finish(NLS_REQUIRED)?;
    config.validate()?;
    std::fs::create_dir_all(&args.out)?;
    let record = nls_evolve(&config, &config.initial_state())?;
    let rows: Vec<Vec<f64>> = record.series.iter().map(|&(y, m)| vec![y, m]).collect();
    io::write_csv(&args.out.join("maxpsi.csv"), "y,maxpsi", &rows)?;
    io::write_nlsfield(
        &args.out.join("final.nls"),
        &record.psi,
        config.l,
        y_end,
        epsilon,
    )?;
    write_tool_manifest(
        &args.out,
        serde_json::to_value(&config).map_err(|e| Error::Format(e.to_string()))?,
        "maxpsi.csv",
    )?;
    Ok(())
}

const SCAN_REQUIRED: &[&str] = &["beta2", "beta3", "xi"];

fn cmd_whitham_scan(args: &CommonArgs) -> Result<()> {
    let cfg = ConfigFile::load(&args.config)?;
    let branch = parse_branch(&cfg)?;
    let xi = cfg.require_f64("xi")?;
    let beta2 = cfg.require_f64("beta2")?;
    let beta3 = cfg.require_f64("beta3")?;
    let axis = |name: &str| -> Result<Vec<f64>> {
        if let Some(v) = cfg.get_f64(name)? {
            return Ok(vec![v]);
        }
        let lo = cfg.require_f64(&format!("{name}_min"))?;
        let hi = cfg.require_f64(&format!("{name}_max"))?;
        let steps = cfg.require_usize(&format!("{name}_steps"))?;
        if steps < 1 {
            return Err(Error::Config(format!("{name}_steps must be >= 1")));
        }
        Ok((0..steps)
            .map(|i| {
                if steps == 1 {
                    lo
                } else {
                    lo + (hi - lo) * i as f64 / (steps - 1) as f64
                }
            })
            .collect())
    };
    let beta1s = axis("beta1")?;
    let qs = axis("q")?;
    cfg.finish(SCAN_REQUIRED)?;

    let out_path = args.out.join("scan.csv");
    std::fs::create_dir_all(&args.out)?;
    write_atomic(&out_path, |w| {
        writeln!(
            w,
            "beta1,beta2,beta3,q,xi,re1,im1,re2,im2,re3,im3,re4,im4,class"
        )?;
        for &b1 in &beta1s {
            for &q in &qs {
                let point = WhithamPoint::new([b1, beta2, beta3], q, branch)?;
                let (a, b) = modulation_matrices(&point)?;
                let (eigs, class) = pencil_spectrum(&a, &b, xi);
                let mut line = format!("{b1},{beta2},{beta3},{q},{xi}");
                for e in &eigs {
                    line.push_str(&format!(",{},{}", e.re, e.im));
                }
                writeln!(w, "{line},{class}")?;
            }
        }
        Ok(())
    })?;
    write_tool_manifest(
        &args.out,
        serde_json::json!({
            "beta1": beta1s, "beta2": beta2, "beta3": beta3,
            "q": qs, "xi": xi, "alpha": branch.alpha(),
        }),
        "scan.csv",
    )?;
    Ok(())
}

const FIT_REQUIRED: &[&str] = &["fit", "input"];

fn cmd_fit(args: &CommonArgs) -> Result<()> {
    let cfg = ConfigFile::load(&args.config)?;
    let kind = cfg
        .get_str("fit")
        .ok_or_else(|| Error::Config("missing required key `fit`".into()))?;
    let input = cfg
        .get_str("input")
        .ok_or_else(|| Error::Config("missing required key `input`".into()))?;
    cfg.finish(FIT_REQUIRED)?;
    let (_, rows) = io::read_csv(Path::new(&input))?;
    let col = |i: usize| -> Vec<f64> { rows.iter().map(|r| r[i]).collect() };
    let need_cols = |n: usize| -> Result<()> {
        if rows.is_empty() || rows[0].len() < n {
            return Err(Error::Format(format!(
                "{input}: expected at least {n} numeric columns"
            )));
        }
        Ok(())
    };
    let mut out_rows: Vec<(String, f64, f64)> = Vec::new();
    match kind.as_str() {
        "linear" => {
            need_cols(2)?;
            let (slope, intercept) = fit_linear(&col(0), &col(1))?;
            out_rows.push(("slope".into(), slope, f64::NAN));
            out_rows.push(("intercept".into(), intercept, f64::NAN));
        }
        "power_law" => {
            need_cols(2)?;
            let fit = fit_power_law(&col(0), &col(1))?;
            if !fit.converged {
                return Err(Error::Degenerate(
                    "power-law fit did not converge (flat or underdetermined data)".into(),
                ));
            }
            for (i, name) in ["c1", "c2", "beta"].iter().enumerate() {
                out_rows.push((name.to_string(), fit.params[i], fit.stderr[i]));
            }
        }
        "lump_position" => {
            need_cols(4)?;
            let runs: Vec<(f64, f64, f64, f64)> = rows
                .iter()
                .map(|r| (r[0], r[1], r[2], r[3]))
                .collect();
            let fit = lump_position_scaling(&runs)?;
            if !fit.converged {
                return Err(Error::Degenerate(
                    "position-scaling fit did not converge".into(),
                ));
            }
            for (i, name) in ["c1", "c2", "beta"].iter().enumerate() {
                out_rows.push((name.to_string(), fit.params[i], fit.stderr[i]));
            }
        }
        other => {
            return Err(Error::Config(format!(
                "fit must be linear, power_law or lump_position, got `{other}`"
            )))
        }
    }
    std::fs::create_dir_all(&args.out)?;
    let out_path = args.out.join("fit.csv");
    write_atomic(&out_path, |w| {
        writeln!(w, "name,param,value,stderr-proxy")?;
        for (name, value, stderr) in &out_rows {
            writeln!(w, "{kind},{name},{value},{stderr}")?;
        }
        Ok(())
    })?;
    write_tool_manifest(
        &args.out,
        serde_json::json!({"fit": kind, "input": input}),
        "fit.csv",
    )?;
    Ok(())
}

const SLICE_REQUIRED: &[&str] = &["input"];

fn cmd_slice(args: &CommonArgs) -> Result<()> {
    let cfg = ConfigFile::load(&args.config)?;
    let input = cfg
        .get_str("input")
        .ok_or_else(|| Error::Config("missing required key `input`".into()))?;
    cfg.finish(SLICE_REQUIRED)?;
    let (field, _) = io::read_kpfield(Path::new(&input))?;
    let grid = &field.grid;
    let data = field.physical()?;
    let jy = grid.ny / 2; // y = 0 line
    let rows: Vec<Vec<f64>> = (0..grid.nx).map(|i| vec![grid.x(i), data[(jy, i)]]).collect();
    std::fs::create_dir_all(&args.out)?;
    io::write_csv(&args.out.join("slice.csv"), "x,u", &rows)?;
    write_tool_manifest(
        &args.out,
        serde_json::json!({"input": input, "y": grid.y(jy)}),
        "slice.csv",
    )?;
    Ok(())
}

const PEAKS_REQUIRED: &[&str] = &["input"];

fn cmd_peaks(args: &CommonArgs) -> Result<()> {
    let cfg = ConfigFile::load(&args.config)?;
    let input = cfg
        .get_str("input")
        .ok_or_else(|| Error::Config("missing required key `input`".into()))?;
    let threshold = cfg.get_f64("rel_threshold")?.unwrap_or(0.3);
    let window = cfg.get_usize("fit_window")?;
    cfg.finish(PEAKS_REQUIRED)?;
    let (field, meta) = io::read_kpfield(Path::new(&input))?;
    let peaks = find_peaks(&field, threshold)?;
    let rows: Vec<Vec<f64>> = peaks.iter().map(|p| vec![p.x, p.y, p.height]).collect();
    std::fs::create_dir_all(&args.out)?;
    io::write_csv(&args.out.join("peaks.csv"), "x,y,height", &rows)?;
    if peaks.len() >= 2 {
        let (spacing, count) = lattice_spacing(&peaks)?;
        io::write_csv(
            &args.out.join("lattice.csv"),
            "mean_nn_distance,count",
            &[vec![spacing, count as f64]],
        )?;
    }
    // Optional lump fit of the highest peak.
    if let Some(window) = window {
        if let Some(seed) = peaks.first() {
            let fit = fit_lump(&field, seed, window, meta.epsilon)?;
            write_atomic(&args.out.join("lumpfit.csv"), |w| {
                writeln!(w, "name,param,value,stderr-proxy")?;
                for (i, name) in ["a", "b", "x0", "y0"].iter().enumerate() {
                    writeln!(w, "lump,{name},{},{}", fit.params[i], fit.stderr[i])?;
                }
                writeln!(w, "lump,residual_rms,{},NaN", fit.residual_rms)?;
                writeln!(
                    w,
                    "lump,converged,{},NaN",
                    if fit.converged { 1.0 } else { 0.0 }
                )?;
                Ok(())
            })?;
        }
    }
    write_tool_manifest(
        &args.out,
        serde_json::json!({"input": input, "rel_threshold": threshold}),
        "peaks.csv",
    )?;
    Ok(())
}

/// Small manifest for analysis subcommands: config echo plus primary output.
fn write_tool_manifest(out: &Path, config: serde_json::Value, primary: &str) -> Result<()> {
    let manifest = io::RunManifest {
        format: io::MANIFEST_FORMAT.into(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        config,
        monitor_csv: primary.into(),
        snapshots: vec![],
        completed_steps: 0,
        t_final: 0.0,
        wall_start_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        wall_seconds: 0.0,
    };
    io::write_manifest(&out.join("manifest.json"), &manifest)
}
