//! Command-line surface: flow estimation, two-phase refinement,
//! synthetic data generation, accuracy metrics and the convergence
//! benchmark.
//!
//! Exit codes: 0 on success, 2 for usage problems (unknown flags,
//! missing or unreadable files, invalid parameter ranges, a rejected
//! step-size certificate), 3 when a solver fails to converge under
//! `--strict-stepsize`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::grid::PixelMask;
use crate::io::{
    flow_to_color, read_flo, read_image, write_color_image, write_flo, write_gray_image, RunConfig,
};
use crate::metrics::{
    average_angular_error, bench_convergence, bundled_problems, endpoint_error,
    render_iteration_table, write_reports_csv,
};
use crate::ops::Model;
use crate::solver::run_pyramidal;
use crate::synth::{
    band_limited_texture, default_vortex_pair, oseen_field, rotation_field, synthesize_pair,
    translation_field, DEFAULT_TEXTURE_SEED, DEFAULT_VORTEX_SIZE,
};

#[derive(Parser, Debug)]
#[command(
    name = "pdflow",
    version,
    about = "Variational optical flow with divergence/curl regularization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

/// Flag overrides, applied on top of defaults and the config file.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// Key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the fully-resolved configuration before running.
    #[arg(long = "dump-config", global = true)]
    dump_config: bool,
    /// Model: hs, m1 or m2.
    #[arg(long, global = true)]
    model: Option<String>,
    /// Total-variation (or quadratic smoothness) weight.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Divergence/curl constraint weight.
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Edge sensitivity of the curl weight.
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Residual stopping threshold.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Iteration cap per solve.
    #[arg(long = "max-iter", global = true)]
    max_iter: Option<usize>,
    /// Primal step length.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Dual step length.
    #[arg(long, global = true)]
    sigma: Option<f64>,
    /// Over-relaxation parameter in [0, 1].
    #[arg(long, global = true)]
    theta: Option<f64>,
    /// Pyramid levels.
    #[arg(long, global = true)]
    levels: Option<usize>,
    /// Pyramid scale factor in (0, 1).
    #[arg(long, global = true)]
    scale: Option<f64>,
    /// Warp rounds per level.
    #[arg(long, global = true)]
    warps: Option<usize>,
    /// Blending ratio for spatial derivatives.
    #[arg(long, global = true)]
    blend: Option<f64>,
    /// Disable the 5x5 median filter.
    #[arg(long = "no-median", global = true)]
    no_median: bool,
    /// Force single-threaded execution.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Reject runs whose step-size certificate fails, and treat
    /// non-convergence as an error.
    #[arg(long = "strict-stepsize", global = true)]
    strict_stepsize: bool,
    /// Write the residual trace of the final solve as CSV.
    #[arg(long, global = true)]
    trace: Option<PathBuf>,
    /// Output flow file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output color-coded flow image (png or ppm).
    #[arg(long, global = true)]
    color: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate flow between two frames with the single-phase models
    /// (m2, or hs via --model).
    Flow {
        frame1: Option<PathBuf>,
        frame2: Option<PathBuf>,
    },
    /// Two-phase estimation: quadratic initializer, then
    /// divergence-penalized refinement (m1).
    Refine {
        frame1: Option<PathBuf>,
        frame2: Option<PathBuf>,
    },
    /// Generate a synthetic frame pair with ground-truth flow.
    Synth {
        /// Counter-rotating vortex pair.
        #[arg(long)]
        oseen: bool,
        /// Rigid rotation with the given angular velocity.
        #[arg(long, value_name = "OMEGA")]
        rotation: Option<f64>,
        /// Uniform translation, e.g. --translation 1.0,0.5
        #[arg(long, value_name = "DX,DY")]
        translation: Option<String>,
        /// Image size as WxH.
        #[arg(long, value_name = "WxH")]
        size: Option<String>,
        /// Texture seed.
        #[arg(long)]
        seed: Option<u64>,
        /// First frame output (pgm or png).
        #[arg(long, default_value = "f1.pgm")]
        f1: PathBuf,
        /// Second frame output.
        #[arg(long, default_value = "f2.pgm")]
        f2: PathBuf,
        /// Ground-truth flow output.
        #[arg(long, default_value = "gt.flo")]
        gt: PathBuf,
    },
    /// Compare an estimated flow file against ground truth.
    Metrics { est: PathBuf, gt: PathBuf },
    /// Convergence benchmark over the bundled synthetic problems.
    Bench {
        /// Descending thresholds, e.g. 0.1,0.05,0.02,0.01
        #[arg(long, default_value = "0.1,0.05,0.02,0.01")]
        epsilons: String,
        /// Comma-separated subset of {oseen, rotation, translation}.
        #[arg(long)]
        problems: Option<String>,
    },
}

/// Entry point used by the binary; returns the process exit code.
pub fn cli_main<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful exits, not usage errors.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };

    init_thread_pool(cli.overrides.deterministic);

    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn init_thread_pool(deterministic: bool) {
    let threads = if deterministic {
        Some(1)
    } else {
        std::env::var("PDFLOW_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n >= 1)
    };
    if let Some(n) = threads {
        // Ignore the error if a pool already exists for this process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

fn resolve_config(ov: &Overrides, forced_model: Option<Model>) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &ov.config {
        cfg.apply_file(path)?;
    }
    if let Some(m) = &ov.model {
        cfg.model = m.parse()?;
    }
    if let Some(v) = ov.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = ov.beta {
        cfg.beta = v;
    }
    if let Some(v) = ov.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = ov.epsilon {
        cfg.epsilon = v;
    }
    if let Some(v) = ov.max_iter {
        cfg.max_iter = v;
    }
    if let Some(v) = ov.tau {
        cfg.tau = v;
    }
    if let Some(v) = ov.sigma {
        cfg.sigma = v;
    }
    if let Some(v) = ov.theta {
        cfg.theta = v;
    }
    if let Some(v) = ov.levels {
        cfg.levels = v;
    }
    if let Some(v) = ov.scale {
        cfg.scale = v;
    }
    if let Some(v) = ov.warps {
        cfg.warps = v;
    }
    if let Some(v) = ov.blend {
        cfg.blend = v;
    }
    if ov.no_median {
        cfg.median = false;
    }
    if ov.deterministic {
        cfg.deterministic = true;
    }
    if ov.strict_stepsize {
        cfg.strict_stepsize = true;
    }
    if let Some(p) = &ov.trace {
        cfg.trace = Some(p.clone());
    }
    if let Some(p) = &ov.out {
        cfg.out = Some(p.clone());
    }
    if let Some(p) = &ov.color {
        cfg.color = Some(p.clone());
    }
    if let Some(m) = forced_model {
        if ov.model.is_some() && cfg.model != m {
            return Err(Error::InvalidParameter {
                name: "model",
                reason: format!(
                    "this subcommand runs {}; use the flow subcommand to pick a model",
                    m.name()
                ),
            });
        }
        cfg.model = m;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Flow { frame1, frame2 } => {
            let cfg = resolve_config(&cli.overrides, None)?;
            if cfg.model == Model::M1 {
                return Err(Error::InvalidParameter {
                    name: "model",
                    reason: "the two-phase model runs under the refine subcommand".into(),
                });
            }
            estimate(cli.overrides.dump_config, cfg, frame1, frame2)
        }
        Command::Refine { frame1, frame2 } => {
            let cfg = resolve_config(&cli.overrides, Some(Model::M1))?;
            estimate(cli.overrides.dump_config, cfg, frame1, frame2)
        }
        Command::Synth {
            oseen,
            rotation,
            translation,
            size,
            seed,
            f1,
            f2,
            gt,
        } => {
            let cfg = resolve_config(&cli.overrides, None)?;
            if cli.overrides.dump_config {
                print!("{}", cfg.dump());
            }
            synth(oseen, rotation, translation, size, seed, f1, f2, gt)
        }
        Command::Metrics { est, gt } => {
            let (est_flow, est_mask) = read_flo(&est)?;
            let (gt_flow, gt_mask) = read_flo(&gt)?;
            let mut mask = PixelMask::all_valid(gt_flow.width(), gt_flow.height());
            if (est_mask.width(), est_mask.height()) != (gt_mask.width(), gt_mask.height()) {
                return Err(Error::dims(
                    (est_mask.width(), est_mask.height()),
                    (gt_mask.width(), gt_mask.height()),
                    "metrics",
                ));
            }
            for y in 0..mask.height() {
                for x in 0..mask.width() {
                    mask.set(x, y, est_mask.at(x, y) && gt_mask.at(x, y));
                }
            }
            let aae = average_angular_error(&est_flow, &gt_flow, Some(&mask))?;
            let epe = endpoint_error(&est_flow, &gt_flow, Some(&mask))?;
            println!("AAE {aae:.3}");
            println!("EPE {epe:.3}");
            Ok(0)
        }
        Command::Bench { epsilons, problems } => {
            let cfg = resolve_config(&cli.overrides, None)?;
            if cli.overrides.dump_config {
                print!("{}", cfg.dump());
            }
            bench(epsilons, problems, cfg.out.as_deref())
        }
    }
}

fn estimate(
    dump: bool,
    cfg: RunConfig,
    frame1: Option<PathBuf>,
    frame2: Option<PathBuf>,
) -> Result<i32> {
    if dump {
        print!("{}", cfg.dump());
    }
    let f1_path = frame1
        .or_else(|| cfg.f1.clone())
        .ok_or(Error::InvalidParameter {
            name: "frame1",
            reason: "no first frame given (positional argument or f1= in the config)".into(),
        })?;
    let f2_path = frame2
        .or_else(|| cfg.f2.clone())
        .ok_or(Error::InvalidParameter {
            name: "frame2",
            reason: "no second frame given (positional argument or f2= in the config)".into(),
        })?;
    let f1 = read_image(&f1_path)?;
    let f2 = read_image(&f2_path)?;

    let params = cfg.solver_params();
    let pyr = cfg.pyramid_params();
    let outcome = run_pyramidal(&f1, &f2, &params, &pyr)?;

    if !outcome.step_size_ok {
        eprintln!(
            "warning: step-size certificate failed on at least one level (tau*sigma*|K|^2 >= 1)"
        );
    }
    if !outcome.converged {
        if cfg.strict_stepsize {
            eprintln!(
                "error: solver did not reach the residual threshold within the iteration cap"
            );
            return Ok(3);
        }
        eprintln!("warning: iteration cap reached before the residual threshold");
    }

    let out_path = cfg.out.clone().unwrap_or_else(|| PathBuf::from("flow.flo"));
    write_flo(&outcome.flow, &out_path)?;
    if let Some(color_path) = &cfg.color {
        let img = flow_to_color(&outcome.flow, None, None);
        write_color_image(&img, color_path)?;
    }
    if let Some(trace_path) = &cfg.trace {
        let file = std::fs::File::create(trace_path).map_err(|e| Error::io(trace_path, e))?;
        crate::solver::write_trace_csv(&outcome.final_trace, std::io::BufWriter::new(file))
            .map_err(|e| Error::io(trace_path, e))?;
    }
    println!(
        "{} -> {} ({} iterations{})",
        cfg.model.name(),
        out_path.display(),
        outcome.total_iterations,
        if outcome.converged {
            ""
        } else {
            ", not converged"
        }
    );
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn synth(
    oseen: bool,
    rotation: Option<f64>,
    translation: Option<String>,
    size: Option<String>,
    seed: Option<u64>,
    f1_path: PathBuf,
    f2_path: PathBuf,
    gt_path: PathBuf,
) -> Result<i32> {
    let chosen = [oseen, rotation.is_some(), translation.is_some()]
        .iter()
        .filter(|&&b| b)
        .count();
    if chosen != 1 {
        return Err(Error::InvalidParameter {
            name: "synth",
            reason: "pick exactly one of --oseen, --rotation, --translation".into(),
        });
    }
    let default_size = if oseen { DEFAULT_VORTEX_SIZE } else { 64 };
    let (w, h) = match size {
        Some(s) => {
            let (a, b) = s.split_once(['x', 'X']).ok_or(Error::InvalidParameter {
                name: "size",
                reason: format!("expected WxH, got {s:?}"),
            })?;
            let parse = |t: &str| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidParameter {
                        name: "size",
                        reason: format!("cannot parse {t:?}"),
                    })
            };
            (parse(a)?, parse(b)?)
        }
        None => (default_size, default_size),
    };
    if w < 8 || h < 8 {
        return Err(Error::InvalidParameter {
            name: "size",
            reason: format!("{w}x{h} below the 8x8 minimum"),
        });
    }

    let flow = if oseen {
        let mut specs = default_vortex_pair();
        let sx = w as f64 / DEFAULT_VORTEX_SIZE as f64;
        let sy = h as f64 / DEFAULT_VORTEX_SIZE as f64;
        for s in &mut specs {
            s.center = (s.center.0 * sx, s.center.1 * sy);
            s.circulation *= sx * sy;
            s.core_radius *= 0.5 * (sx + sy);
        }
        oseen_field(&specs, w, h)
    } else if let Some(omega) = rotation {
        rotation_field(
            ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0),
            omega,
            w,
            h,
        )
    } else {
        let spec = translation.unwrap();
        let (dx, dy) = spec.split_once(',').ok_or(Error::InvalidParameter {
            name: "translation",
            reason: format!("expected DX,DY, got {spec:?}"),
        })?;
        let parse = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidParameter {
                    name: "translation",
                    reason: format!("cannot parse {t:?}"),
                })
        };
        translation_field(parse(dx)?, parse(dy)?, w, h)
    };

    let texture = band_limited_texture(w, h, seed.unwrap_or(DEFAULT_TEXTURE_SEED));
    let (f1, f2) = synthesize_pair(&texture, &flow);
    write_gray_image(&f1, &f1_path)?;
    write_gray_image(&f2, &f2_path)?;
    write_flo(&flow, &gt_path)?;
    println!(
        "wrote {} {} {} ({}x{})",
        f1_path.display(),
        f2_path.display(),
        gt_path.display(),
        w,
        h
    );
    Ok(0)
}

fn bench(
    epsilons: String,
    problems: Option<String>,
    csv_out: Option<&std::path::Path>,
) -> Result<i32> {
    let thresholds: Vec<f64> = epsilons
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidParameter {
                    name: "epsilons",
                    reason: format!("cannot parse {t:?}"),
                })
        })
        .collect::<Result<_>>()?;

    let mut set = bundled_problems();
    if let Some(filter) = problems {
        let wanted: Vec<String> = filter.split(',').map(|s| s.trim().to_string()).collect();
        set.retain(|p| wanted.iter().any(|w| w == &p.name));
        if set.is_empty() {
            return Err(Error::InvalidParameter {
                name: "problems",
                reason: format!("no bundled problem matches {filter:?}"),
            });
        }
    }

    let reports = bench_convergence(&set, &thresholds)?;
    print!("{}", render_iteration_table(&reports));
    if let Some(path) = csv_out {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write_reports_csv(&reports, std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))?;
        println!("report -> {}", path.display());
    }
    Ok(0)
}
