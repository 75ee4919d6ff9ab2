//! Command-line harness for the convergence studies.

use std::path::{Path, PathBuf};

use clap::Parser;

use stokes_milstein::experiment::{
    run_det_space, run_det_time, run_em_comparison, run_space_convergence, run_time_convergence,
    write_em_outputs, write_study_outputs, ExperimentConfig, StudyKind, StudyOutput,
};
use stokes_milstein::Result;

/// Monte Carlo convergence studies for a semi-implicit Milstein /
/// mixed-finite-element solver of the stochastic Stokes equations.
#[derive(Parser)]
#[command(name = "stokes-study", version, about)]
struct Cli {
    /// Study to run: time, space, det, or em.
    #[arg(long)]
    test: String,

    /// Mesh resolution for time-refinement studies.
    #[arg(long)]
    n: Option<usize>,

    /// Comma-separated step counts for time-refinement studies; entries
    /// accept both `256` and the step-size form `1/256`.
    #[arg(long)]
    klist: Option<String>,

    /// Comma-separated mesh resolutions for space-refinement studies.
    #[arg(long)]
    nlist: Option<String>,

    /// Step count used by the space studies (same forms as --klist).
    #[arg(long)]
    space_m: Option<String>,

    /// Monte Carlo sample count.
    #[arg(long)]
    samples: Option<usize>,

    /// Noise intensity of the linear multiplicative model.
    #[arg(long)]
    alpha: Option<f64>,

    /// Viscosity.
    #[arg(long)]
    nu: Option<f64>,

    /// Final time.
    #[arg(long)]
    t_final: Option<f64>,

    /// Wiener path resolution (every step count must divide it).
    #[arg(long)]
    m0: Option<usize>,

    /// Base seed for the sample paths.
    #[arg(long)]
    seed: Option<u64>,

    /// Output CSV path; the log-log and metadata sidecars land next to it.
    #[arg(long, default_value = "study.csv")]
    out: PathBuf,

    /// Use the reduced workstation preset instead of the full protocol.
    #[arg(long)]
    desk: bool,

    /// Flat key-value config file (`key = value` lines) applied before any
    /// flag overrides.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Worker threads for sample-level parallelism (0 = all cores). The
    /// results are bitwise independent of this setting.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(cli: &Cli) -> Result<()> {
    let study = StudyKind::parse(&cli.test)?;
    let mut cfg = if cli.desk {
        ExperimentConfig::desk(study)
    } else {
        ExperimentConfig::full(study)
    };
    if let Some(path) = &cli.config {
        cfg.apply_config_file(path)?;
    }
    if let Some(n) = cli.n {
        cfg.n = n;
    }
    if let Some(s) = &cli.klist {
        cfg.apply_kv("klist", s)?;
    }
    if let Some(s) = &cli.nlist {
        cfg.apply_kv("nlist", s)?;
    }
    if let Some(s) = &cli.space_m {
        cfg.apply_kv("space_m", s)?;
    }
    if let Some(v) = cli.samples {
        cfg.samples = v;
    }
    if let Some(v) = cli.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = cli.nu {
        cfg.nu = v;
    }
    if let Some(v) = cli.t_final {
        cfg.t_final = v;
    }
    if let Some(v) = cli.m0 {
        cfg.m0 = v;
    }
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build()
        .map_err(|e| stokes_milstein::Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| dispatch(study, &cfg, &cli.out))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}{suffix}.csv"))
}

fn announce(out: &StudyOutput, path: &Path) {
    println!(
        "{} study: {} rows in {:.1}s (max divergence {:.2e}, max residual {:.2e})",
        out.study,
        out.rows.len(),
        out.elapsed_s,
        out.invariants.divergence,
        out.invariants.rel_residual
    );
    for row in &out.rows {
        let orders: Vec<String> = row
            .order
            .iter()
            .map(|o| o.map_or("-".into(), |v| format!("{v:.3}")))
            .collect();
        println!(
            "  {:>8}  l2h1 {:.4e} ({})  linfl2 {:.4e} ({})  press {:.4e} ({})",
            row.label, row.err[0], orders[0], row.err[1], orders[1], row.err[2], orders[2]
        );
    }
    println!("wrote {}", path.display());
}

fn dispatch(study: StudyKind, cfg: &ExperimentConfig, out_path: &Path) -> Result<()> {
    match study {
        StudyKind::Time => {
            let out = run_time_convergence(cfg)?;
            write_study_outputs(out_path, &out)?;
            announce(&out, out_path);
        }
        StudyKind::Space => {
            let out = run_space_convergence(cfg)?;
            write_study_outputs(out_path, &out)?;
            announce(&out, out_path);
        }
        StudyKind::Det => {
            let space_path = sibling(out_path, "_space");
            let time_path = sibling(out_path, "_time");
            let space = run_det_space(cfg)?;
            write_study_outputs(&space_path, &space)?;
            announce(&space, &space_path);
            let time = run_det_time(cfg)?;
            write_study_outputs(&time_path, &time)?;
            announce(&time, &time_path);
        }
        StudyKind::Em => {
            let cmp = run_em_comparison(cfg)?;
            write_em_outputs(out_path, &cmp)?;
            println!(
                "scheme comparison over {} samples in {:.1}s:",
                cmp.samples, cmp.elapsed_s
            );
            println!(
                "  milstein  l2h1 {:.4e} +- {:.1e}   linfl2 {:.4e}",
                cmp.milstein[0].value, cmp.milstein[0].se, cmp.milstein[1].value
            );
            println!(
                "  euler     l2h1 {:.4e} +- {:.1e}   linfl2 {:.4e}",
                cmp.euler[0].value, cmp.euler[0].se, cmp.euler[1].value
            );
            println!(
                "  paired diff {:.4e} (se {:.1e}, one-sided t {:.2})",
                cmp.mean_diff_l2h1, cmp.se_diff_l2h1, cmp.t_stat_l2h1
            );
            println!("wrote {}", out_path.display());
        }
    }
    Ok(())
}
