//! Study drivers: the Monte Carlo convergence studies in time and in space,
//! the deterministic verification study against the closed-form reference
//! solution, the Euler–Maruyama comparison, and CSV/metadata emission.
//!
//! All drivers force the linear-algebra backend into sequential mode and
//! parallelize over samples with an order-preserving collect followed by a
//! sequential reduction, so results are bitwise independent of the worker
//! count.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::assembly::{
    assemble_divergence, assemble_load, assemble_pressure_mass, assemble_velocity_mass,
    assemble_velocity_stiffness, SparseOperator,
};
use crate::error::{Error, Result};
use crate::femspace::MixedSpaces;
use crate::linsolve::{build_system, Factorization, SaddleSystem};
use crate::manufactured::ForcingSpec;
use crate::mesh::Mesh;
use crate::norms::{
    convergence_order, errors_vs_reference, mc_mean, mc_rms, path_errors, Aggregate, MeshPairMap,
    SampleErrors,
};
use crate::stepper::{run_trajectory, LoadPlan, Scheme, StepOperators, Trajectory};
use crate::stochastic::{coarse_increments, generate_path, LinearNoise};

/// Which study a configuration is meant for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyKind {
    /// Strong temporal convergence under step-size refinement.
    Time,
    /// Strong spatial convergence under mesh refinement.
    Space,
    /// Deterministic verification against the closed-form solution.
    Det,
    /// Milstein vs Euler–Maruyama accuracy comparison.
    Em,
}

impl StudyKind {
    pub fn parse(s: &str) -> Result<StudyKind> {
        match s {
            "time" => Ok(StudyKind::Time),
            "space" => Ok(StudyKind::Space),
            "det" => Ok(StudyKind::Det),
            "em" => Ok(StudyKind::Em),
            other => Err(Error::Config(format!(
                "unknown study '{other}' (expected time, space, det, or em)"
            ))),
        }
    }
}

/// All knobs of a study run. `klist` entries are step *counts* `M`
/// (step size `t_final / M`); `nlist` entries are mesh resolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Mesh resolution for time-refinement studies.
    pub n: usize,
    /// Mesh resolutions for space-refinement studies (each compared against
    /// its one-level refinement).
    pub nlist: Vec<usize>,
    /// Step counts for time-refinement studies (each compared against its
    /// halved-step refinement).
    pub klist: Vec<usize>,
    /// Step count used by the space studies (fixed across meshes).
    pub space_m: usize,
    /// Monte Carlo sample count.
    pub samples: usize,
    /// Noise intensity of the linear multiplicative model.
    pub alpha: f64,
    /// Viscosity.
    pub nu: f64,
    /// Final time.
    pub t_final: f64,
    /// Resolution of the underlying Wiener paths (every run's step count
    /// must divide it).
    pub m0: usize,
    /// Base seed; sample `j` derives its path from `(seed, j)`.
    pub seed: u64,
}

impl ExperimentConfig {
    /// Full-scale protocol for a study.
    pub fn full(study: StudyKind) -> ExperimentConfig {
        let base = ExperimentConfig {
            n: 40,
            nlist: vec![8, 16, 32],
            klist: vec![64, 128, 256, 512, 1024],
            space_m: 256,
            samples: 300,
            alpha: 0.5,
            nu: 1.0,
            t_final: 1.0,
            m0: 2048,
            seed: 1,
        };
        match study {
            StudyKind::Time => base,
            StudyKind::Space => base,
            StudyKind::Det => ExperimentConfig {
                n: 64,
                klist: vec![16, 32, 64, 128, 256],
                space_m: 1024,
                alpha: 0.0,
                ..base
            },
            StudyKind::Em => ExperimentConfig {
                n: 20,
                klist: vec![256],
                samples: 100,
                ..base
            },
        }
    }

    /// Reduced preset that reproduces the qualitative picture on a
    /// workstation in minutes.
    pub fn desk(study: StudyKind) -> ExperimentConfig {
        let full = ExperimentConfig::full(study);
        match study {
            StudyKind::Time => ExperimentConfig {
                n: 20,
                klist: vec![64, 128, 256, 512],
                samples: 100,
                ..full
            },
            StudyKind::Space => ExperimentConfig {
                samples: 50,
                ..full
            },
            // The deterministic study and the scheme comparison are already
            // workstation-sized.
            StudyKind::Det | StudyKind::Em => full,
        }
    }

    /// Apply one `key = value` override. Lists are comma-separated; step
    /// counts accept either `256` or the step size written as `1/256`.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("invalid {what}: '{value}'"));
        match key {
            "n" => self.n = value.trim().parse().map_err(|_| bad("n"))?,
            "nlist" => {
                self.nlist = value
                    .split(',')
                    .map(|v| v.trim().parse().map_err(|_| bad("nlist")))
                    .collect::<Result<_>>()?;
            }
            "klist" => {
                self.klist = value
                    .split(',')
                    .map(|v| parse_step_count(v.trim()))
                    .collect::<Result<_>>()?;
            }
            "space_m" => self.space_m = parse_step_count(value.trim())?,
            "samples" => self.samples = value.trim().parse().map_err(|_| bad("samples"))?,
            "alpha" => self.alpha = value.trim().parse().map_err(|_| bad("alpha"))?,
            "nu" => self.nu = value.trim().parse().map_err(|_| bad("nu"))?,
            "t_final" => self.t_final = value.trim().parse().map_err(|_| bad("t_final"))?,
            "m0" => self.m0 = value.trim().parse().map_err(|_| bad("m0"))?,
            "seed" => self.seed = value.trim().parse().map_err(|_| bad("seed"))?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Apply a flat key-value config file (`key = value` lines, `#`
    /// comments).
    pub fn apply_config_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected 'key = value', got '{line}'",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.apply_kv(key.trim(), value.trim())?;
        }
        Ok(())
    }
}

/// Parse a step count given as `256` or as a step size `1/256`.
pub fn parse_step_count(s: &str) -> Result<usize> {
    let body = s.strip_prefix("1/").unwrap_or(s);
    let m: usize = body
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid step count '{s}' (expected 256 or 1/256)")))?;
    if m == 0 {
        return Err(Error::Config("step count must be positive".into()));
    }
    Ok(m)
}

/// One row of a convergence table: errors, standard errors, and observed
/// orders (against the previous row) for the three functionals, ordered
/// `[L2(H1), Linf(L2), pressure]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub label: String,
    pub resolution: f64,
    pub err: [f64; 3],
    pub se: [f64; 3],
    pub order: [Option<f64>; 3],
}

/// Running maxima of the per-step structural checks across every trajectory
/// of a study.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct InvariantMaxima {
    pub divergence: f64,
    pub pressure_mean: f64,
    pub rel_residual: f64,
}

impl InvariantMaxima {
    fn absorb(&mut self, traj: &Trajectory) {
        self.divergence = self.divergence.max(traj.max_divergence);
        self.pressure_mean = self.pressure_mean.max(traj.max_pressure_mean);
        self.rel_residual = self.rel_residual.max(traj.max_rel_residual);
    }

    fn merge(&mut self, other: &InvariantMaxima) {
        self.divergence = self.divergence.max(other.divergence);
        self.pressure_mean = self.pressure_mean.max(other.pressure_mean);
        self.rel_residual = self.rel_residual.max(other.rel_residual);
    }
}

/// A completed study: table rows plus metadata for the sidecar files.
#[derive(Debug, Clone)]
pub struct StudyOutput {
    pub study: &'static str,
    pub rows: Vec<Row>,
    pub invariants: InvariantMaxima,
    pub elapsed_s: f64,
    /// Extra `key: value` notes for the metadata sidecar.
    pub notes: Vec<(String, String)>,
}

/// Per-sample result inside the Monte Carlo loops.
struct SampleOutcome {
    errs: Vec<SampleErrors>,
    inv: InvariantMaxima,
}

/// Mesh-level operators shared by every run on that mesh.
struct Discretization {
    spaces: MixedSpaces,
    mass: SparseOperator,
    stiffness: SparseOperator,
    divergence: SparseOperator,
    pressure_mass: SparseOperator,
}

impl Discretization {
    fn build(n: usize) -> Result<Discretization> {
        let spaces = MixedSpaces::new(Mesh::uniform(n)?);
        let mass = assemble_velocity_mass(&spaces);
        let stiffness = assemble_velocity_stiffness(&spaces);
        let divergence = assemble_divergence(&spaces);
        let pressure_mass = assemble_pressure_mass(&spaces);
        Ok(Discretization {
            spaces,
            mass,
            stiffness,
            divergence,
            pressure_mass,
        })
    }

    fn factorized_system(&self, nu: f64, k: f64) -> Result<(SaddleSystem, Factorization)> {
        let system = build_system(
            &self.spaces,
            &self.mass,
            &self.stiffness,
            &self.divergence,
            &self.pressure_mass,
            nu,
            k,
        )?;
        let fact = system.factorize()?;
        Ok((system, fact))
    }

    /// Load vectors at times `(j+1) * t_final / m` for `j = 0..m`.
    fn load_table(&self, t_final: f64, m: usize) -> Vec<Vec<f64>> {
        let forcing = ForcingSpec;
        let k = t_final / m as f64;
        (0..m)
            .map(|j| assemble_load(&self.spaces, (j + 1) as f64 * k, &forcing))
            .collect()
    }
}

fn ops<'a>(
    disc: &'a Discretization,
    system: &'a SaddleSystem,
    fact: &'a Factorization,
) -> StepOperators<'a> {
    StepOperators {
        spaces: &disc.spaces,
        mass: &disc.mass,
        divergence: &disc.divergence,
        system,
        fact,
    }
}

/// Require a strictly doubling ladder (`[64, 128, 256, ...]`), which the
/// run-sharing scheme and the factor-two order formula both assume.
fn validate_dyadic(list: &[usize], what: &str) -> Result<()> {
    if list.is_empty() || list[0] == 0 {
        return Err(Error::InvalidParameter(format!(
            "{what} must be nonempty and positive"
        )));
    }
    for w in list.windows(2) {
        if w[1] != 2 * w[0] {
            return Err(Error::InvalidParameter(format!(
                "{what} must double between entries, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

fn validate_divides(m0: usize, runs: &[usize]) -> Result<()> {
    for &m in runs {
        if m0 % m != 0 {
            return Err(Error::InvalidParameter(format!(
                "path resolution m0={m0} is not divisible by step count {m}"
            )));
        }
    }
    Ok(())
}

/// Force deterministic single-threaded linear algebra; sample-level
/// parallelism is handled with rayon by the callers of this module.
fn sequential_backend() {
    faer::set_global_parallelism(faer::Par::Seq);
}

fn common_notes(cfg: &ExperimentConfig) -> Vec<(String, String)> {
    vec![
        ("samples".into(), cfg.samples.to_string()),
        ("alpha".into(), cfg.alpha.to_string()),
        ("nu".into(), cfg.nu.to_string()),
        ("t_final".into(), cfg.t_final.to_string()),
        ("m0".into(), cfg.m0.to_string()),
        ("seed".into(), cfg.seed.to_string()),
    ]
}

fn k_label(t_final: f64, m: usize) -> String {
    if t_final == 1.0 {
        format!("1/{m}")
    } else {
        format!("{t_final}/{m}")
    }
}

/// Assemble rows from per-resolution aggregates, attaching factor-two
/// orders against the previous row.
fn rows_from_aggregates(labels: Vec<(String, f64)>, aggs: Vec<[Aggregate; 3]>) -> Result<Vec<Row>> {
    let mut rows: Vec<Row> = Vec::with_capacity(aggs.len());
    for (i, ((label, resolution), agg)) in labels.into_iter().zip(aggs).enumerate() {
        let mut order = [None; 3];
        if i > 0 {
            for c in 0..3 {
                order[c] = Some(convergence_order(rows[i - 1].err[c], agg[c].value)?);
            }
        }
        rows.push(Row {
            label,
            resolution,
            err: [agg[0].value, agg[1].value, agg[2].value],
            se: [agg[0].se, agg[1].se, agg[2].se],
            order,
        });
    }
    Ok(rows)
}

/// Aggregate per-sample path errors: root-mean-square for the two velocity
/// functionals, plain mean for the pressure functional.
fn aggregate_samples(outcomes: &[SampleOutcome], idx: usize) -> [Aggregate; 3] {
    let l2h1: Vec<f64> = outcomes.iter().map(|o| o.errs[idx].l2_h1).collect();
    let linf: Vec<f64> = outcomes.iter().map(|o| o.errs[idx].linf_l2).collect();
    let press: Vec<f64> = outcomes.iter().map(|o| o.errs[idx].press_l2).collect();
    [mc_rms(&l2h1), mc_rms(&linf), mc_mean(&press)]
}

/// Strong temporal convergence study: for every `M` in `klist`, the Milstein
/// solution with `M` steps is compared per sample against the same-path
/// solution with `2M` steps, on a fixed mesh. Consecutive step counts share
/// runs (each trajectory serves once as refinement and once as coarse
/// solution), so each sample solves `klist ∪ {2 max}` once.
pub fn run_time_convergence(cfg: &ExperimentConfig) -> Result<StudyOutput> {
    sequential_backend();
    let start = Instant::now();
    validate_dyadic(&cfg.klist, "klist")?;
    if cfg.samples == 0 {
        return Err(Error::InvalidParameter("samples must be positive".into()));
    }
    let mut runs = cfg.klist.clone();
    runs.push(2 * cfg.klist[cfg.klist.len() - 1]);
    validate_divides(cfg.m0, &runs)?;

    let disc = Discretization::build(cfg.n)?;
    let m_ref = runs[runs.len() - 1];
    let loads = disc.load_table(cfg.t_final, m_ref);
    let systems: Vec<(SaddleSystem, Factorization)> = runs
        .iter()
        .map(|&m| disc.factorized_system(cfg.nu, cfg.t_final / m as f64))
        .collect::<Result<_>>()?;

    let noise = LinearNoise { alpha: cfg.alpha };
    let u0 = vec![0.0; disc.spaces.n_vel];
    let outcomes: Vec<SampleOutcome> = (0..cfg.samples)
        .into_par_iter()
        .map(|s| -> Result<SampleOutcome> {
            let path = generate_path(cfg.seed, s as u64, cfg.m0, cfg.t_final)?;
            let mut inv = InvariantMaxima::default();
            let mut errs = Vec::with_capacity(cfg.klist.len());
            let mut prev: Option<Trajectory> = None;
            for (i, &m) in runs.iter().enumerate() {
                let incs = coarse_increments(&path, m)?;
                let (system, fact) = &systems[i];
                let traj = run_trajectory(
                    &ops(&disc, system, fact),
                    Scheme::Milstein,
                    &u0,
                    cfg.t_final,
                    &incs,
                    &noise,
                    &LoadPlan::Table {
                        loads: &loads,
                        stride: m_ref / m,
                    },
                )?;
                inv.absorb(&traj);
                if let Some(coarse) = &prev {
                    errs.push(path_errors(
                        &disc.mass,
                        &disc.stiffness,
                        &disc.pressure_mass,
                        coarse,
                        &traj,
                        2,
                    )?);
                }
                prev = Some(traj);
            }
            Ok(SampleOutcome { errs, inv })
        })
        .collect::<Result<_>>()?;

    let mut invariants = InvariantMaxima::default();
    for o in &outcomes {
        invariants.merge(&o.inv);
    }
    let labels = cfg
        .klist
        .iter()
        .map(|&m| (k_label(cfg.t_final, m), cfg.t_final / m as f64))
        .collect();
    let aggs = (0..cfg.klist.len())
        .map(|i| aggregate_samples(&outcomes, i))
        .collect();
    let mut notes = common_notes(cfg);
    notes.push(("mesh_n".into(), cfg.n.to_string()));
    notes.push((
        "pressure_error".into(),
        "coarse pressure compared against the refined pressure at the shared time node".into(),
    ));
    Ok(StudyOutput {
        study: "time",
        rows: rows_from_aggregates(labels, aggs)?,
        invariants,
        elapsed_s: start.elapsed().as_secs_f64(),
        notes,
    })
}

/// Strong spatial convergence study: for every `n` in `nlist`, the solution
/// on mesh `n` is compared per sample (same path, same time grid) against
/// the solution on mesh `2n`, with errors integrated exactly over the finer
/// mesh. Consecutive resolutions share runs.
pub fn run_space_convergence(cfg: &ExperimentConfig) -> Result<StudyOutput> {
    sequential_backend();
    let start = Instant::now();
    validate_dyadic(&cfg.nlist, "nlist")?;
    if cfg.samples == 0 {
        return Err(Error::InvalidParameter("samples must be positive".into()));
    }
    let m = cfg.space_m;
    validate_divides(cfg.m0, &[m])?;
    let mut runs = cfg.nlist.clone();
    runs.push(2 * cfg.nlist[cfg.nlist.len() - 1]);

    struct MeshRun {
        disc: Discretization,
        system: SaddleSystem,
        fact: Factorization,
        loads: Vec<Vec<f64>>,
    }
    let k = cfg.t_final / m as f64;
    let mesh_runs: Vec<MeshRun> = runs
        .iter()
        .map(|&n| -> Result<MeshRun> {
            let disc = Discretization::build(n)?;
            let (system, fact) = disc.factorized_system(cfg.nu, k)?;
            let loads = disc.load_table(cfg.t_final, m);
            Ok(MeshRun {
                disc,
                system,
                fact,
                loads,
            })
        })
        .collect::<Result<_>>()?;
    let pair_maps: Vec<MeshPairMap> = (0..cfg.nlist.len())
        .map(|i| MeshPairMap::build(&mesh_runs[i].disc.spaces, &mesh_runs[i + 1].disc.spaces))
        .collect::<Result<_>>()?;

    let noise = LinearNoise { alpha: cfg.alpha };
    let outcomes: Vec<SampleOutcome> = (0..cfg.samples)
        .into_par_iter()
        .map(|s| -> Result<SampleOutcome> {
            let path = generate_path(cfg.seed, s as u64, cfg.m0, cfg.t_final)?;
            let incs = coarse_increments(&path, m)?;
            let mut inv = InvariantMaxima::default();
            let mut errs = Vec::with_capacity(cfg.nlist.len());
            let mut prev: Option<Trajectory> = None;
            for (i, run) in mesh_runs.iter().enumerate() {
                let u0 = vec![0.0; run.disc.spaces.n_vel];
                let traj = run_trajectory(
                    &ops(&run.disc, &run.system, &run.fact),
                    Scheme::Milstein,
                    &u0,
                    cfg.t_final,
                    &incs,
                    &noise,
                    &LoadPlan::Table {
                        loads: &run.loads,
                        stride: 1,
                    },
                )?;
                inv.absorb(&traj);
                if let Some(coarse) = &prev {
                    errs.push(pair_maps[i - 1].errors(coarse, &traj)?);
                }
                prev = Some(traj);
            }
            Ok(SampleOutcome { errs, inv })
        })
        .collect::<Result<_>>()?;

    let mut invariants = InvariantMaxima::default();
    for o in &outcomes {
        invariants.merge(&o.inv);
    }
    let labels = cfg
        .nlist
        .iter()
        .map(|&n| (format!("1/{n}"), 1.0 / n as f64))
        .collect();
    let aggs = (0..cfg.nlist.len())
        .map(|i| aggregate_samples(&outcomes, i))
        .collect();
    let mut notes = common_notes(cfg);
    notes.push(("step_count".into(), m.to_string()));
    notes.push((
        "error_integration".into(),
        "cross-mesh differences integrated over the finer mesh".into(),
    ));
    Ok(StudyOutput {
        study: "space",
        rows: rows_from_aggregates(labels, aggs)?,
        invariants,
        elapsed_s: start.elapsed().as_secs_f64(),
        notes,
    })
}

fn require_deterministic(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.alpha != 0.0 {
        return Err(Error::InvalidParameter(format!(
            "the deterministic study needs alpha = 0, got {}",
            cfg.alpha
        )));
    }
    Ok(())
}

/// One noise-free trajectory with loads assembled on the fly.
fn det_trajectory(disc: &Discretization, cfg: &ExperimentConfig, m: usize) -> Result<Trajectory> {
    let (system, fact) = disc.factorized_system(cfg.nu, cfg.t_final / m as f64)?;
    let u0 = vec![0.0; disc.spaces.n_vel];
    let forcing = ForcingSpec;
    run_trajectory(
        &ops(disc, &system, &fact),
        Scheme::Milstein,
        &u0,
        cfg.t_final,
        &vec![0.0; m],
        &LinearNoise { alpha: 0.0 },
        &LoadPlan::Assemble(&forcing),
    )
}

/// Deterministic spatial accuracy: noise-free runs on each mesh in `nlist`
/// with a fixed fine step count (`space_m`), measured against the
/// closed-form solution by high-order quadrature.
pub fn run_det_space(cfg: &ExperimentConfig) -> Result<StudyOutput> {
    sequential_backend();
    let start = Instant::now();
    require_deterministic(cfg)?;
    validate_dyadic(&cfg.nlist, "nlist")?;

    let mut invariants = InvariantMaxima::default();
    let mut aggs = Vec::with_capacity(cfg.nlist.len());
    for &n in &cfg.nlist {
        let disc = Discretization::build(n)?;
        let traj = det_trajectory(&disc, cfg, cfg.space_m)?;
        invariants.absorb(&traj);
        let e = errors_vs_reference(&disc.spaces, &traj);
        aggs.push([
            Aggregate {
                value: e.l2_h1,
                se: 0.0,
            },
            Aggregate {
                value: e.linf_l2,
                se: 0.0,
            },
            Aggregate {
                value: e.press_l2,
                se: 0.0,
            },
        ]);
    }
    let labels = cfg
        .nlist
        .iter()
        .map(|&n| (format!("1/{n}"), 1.0 / n as f64))
        .collect();
    let mut notes = common_notes(cfg);
    notes.push(("step_count".into(), cfg.space_m.to_string()));
    notes.push((
        "reference".into(),
        "errors measured against the closed-form solution".into(),
    ));
    Ok(StudyOutput {
        study: "det_space",
        rows: rows_from_aggregates(labels, aggs)?,
        invariants,
        elapsed_s: start.elapsed().as_secs_f64(),
        notes,
    })
}

/// Deterministic temporal accuracy on a fixed mesh: noise-free runs at each
/// step count in `klist`, measured against the closed-form solution. The
/// spatial discretization error does not vanish with `k`, so a floor run at
/// one-eighth of the smallest step size estimates it per functional; the
/// reported errors are raw, while the orders are computed from
/// floor-corrected errors.
pub fn run_det_time(cfg: &ExperimentConfig) -> Result<StudyOutput> {
    sequential_backend();
    let start = Instant::now();
    require_deterministic(cfg)?;
    validate_dyadic(&cfg.klist, "klist")?;

    let disc = Discretization::build(cfg.n)?;
    let mut invariants = InvariantMaxima::default();
    let mut raw: Vec<SampleErrors> = Vec::with_capacity(cfg.klist.len());
    for &m in &cfg.klist {
        let traj = det_trajectory(&disc, cfg, m)?;
        invariants.absorb(&traj);
        raw.push(errors_vs_reference(&disc.spaces, &traj));
    }
    let m_floor = 8 * cfg.klist[cfg.klist.len() - 1];
    let floor_traj = det_trajectory(&disc, cfg, m_floor)?;
    invariants.absorb(&floor_traj);
    let floor = errors_vs_reference(&disc.spaces, &floor_traj);

    let corrected: Vec<[f64; 3]> = raw
        .iter()
        .map(|e| {
            [
                e.l2_h1 - floor.l2_h1,
                e.linf_l2 - floor.linf_l2,
                e.press_l2 - floor.press_l2,
            ]
        })
        .collect();
    let mut rows = Vec::with_capacity(cfg.klist.len());
    for (i, (&m, e)) in cfg.klist.iter().zip(&raw).enumerate() {
        let mut order = [None; 3];
        if i > 0 {
            for c in 0..3 {
                // A functional that has already hit its spatial floor has no
                // measurable temporal order; leave that order blank rather
                // than reporting a meaningless number.
                order[c] = convergence_order(corrected[i - 1][c], corrected[i][c]).ok();
            }
        }
        rows.push(Row {
            label: k_label(cfg.t_final, m),
            resolution: cfg.t_final / m as f64,
            err: [e.l2_h1, e.linf_l2, e.press_l2],
            se: [0.0; 3],
            order,
        });
    }
    let mut notes = common_notes(cfg);
    notes.push(("mesh_n".into(), cfg.n.to_string()));
    notes.push((
        "k_floor".into(),
        format!("{}", cfg.t_final / m_floor as f64),
    ));
    notes.push(("floor_l2h1".into(), format!("{:.12e}", floor.l2_h1)));
    notes.push(("floor_linfl2".into(), format!("{:.12e}", floor.linf_l2)));
    notes.push(("floor_press".into(), format!("{:.12e}", floor.press_l2)));
    notes.push((
        "orders".into(),
        "orders computed after subtracting the floor-run error per functional".into(),
    ));
    Ok(StudyOutput {
        study: "det_time",
        rows,
        invariants,
        elapsed_s: start.elapsed().as_secs_f64(),
        notes,
    })
}

/// Result of the Milstein vs Euler–Maruyama comparison. Each scheme is
/// measured per sample against itself at half the step size on the same
/// path; `diff` statistics refer to the per-sample `euler - milstein`
/// differences of the `L2(H1)` error (paired, so the one-sided t statistic
/// applies with `samples - 1` degrees of freedom).
#[derive(Debug, Clone)]
pub struct EmComparison {
    pub samples: usize,
    pub milstein: [Aggregate; 3],
    pub euler: [Aggregate; 3],
    pub mean_diff_l2h1: f64,
    pub se_diff_l2h1: f64,
    pub t_stat_l2h1: f64,
    pub mean_diff_linfl2: f64,
    pub invariants: InvariantMaxima,
    pub elapsed_s: f64,
}

pub fn run_em_comparison(cfg: &ExperimentConfig) -> Result<EmComparison> {
    sequential_backend();
    let start = Instant::now();
    if cfg.klist.len() != 1 {
        return Err(Error::InvalidParameter(
            "the scheme comparison uses a single step count in klist".into(),
        ));
    }
    if cfg.samples < 2 {
        return Err(Error::InvalidParameter(
            "the scheme comparison needs at least two samples".into(),
        ));
    }
    let m = cfg.klist[0];
    let runs = [m, 2 * m];
    validate_divides(cfg.m0, &runs)?;

    let disc = Discretization::build(cfg.n)?;
    let loads = disc.load_table(cfg.t_final, 2 * m);
    let systems: Vec<(SaddleSystem, Factorization)> = runs
        .iter()
        .map(|&mm| disc.factorized_system(cfg.nu, cfg.t_final / mm as f64))
        .collect::<Result<_>>()?;

    let noise = LinearNoise { alpha: cfg.alpha };
    let u0 = vec![0.0; disc.spaces.n_vel];
    struct EmOutcome {
        mil: SampleErrors,
        em: SampleErrors,
        inv: InvariantMaxima,
    }
    let outcomes: Vec<EmOutcome> = (0..cfg.samples)
        .into_par_iter()
        .map(|s| -> Result<EmOutcome> {
            let path = generate_path(cfg.seed, s as u64, cfg.m0, cfg.t_final)?;
            let mut inv = InvariantMaxima::default();
            let mut per_scheme = Vec::with_capacity(2);
            for scheme in [Scheme::Milstein, Scheme::EulerMaruyama] {
                let mut trajs = Vec::with_capacity(2);
                for (i, &mm) in runs.iter().enumerate() {
                    let incs = coarse_increments(&path, mm)?;
                    let (system, fact) = &systems[i];
                    let traj = run_trajectory(
                        &ops(&disc, system, fact),
                        scheme,
                        &u0,
                        cfg.t_final,
                        &incs,
                        &noise,
                        &LoadPlan::Table {
                            loads: &loads,
                            stride: 2 * m / mm,
                        },
                    )?;
                    inv.absorb(&traj);
                    trajs.push(traj);
                }
                per_scheme.push(path_errors(
                    &disc.mass,
                    &disc.stiffness,
                    &disc.pressure_mass,
                    &trajs[0],
                    &trajs[1],
                    2,
                )?);
            }
            Ok(EmOutcome {
                mil: per_scheme[0],
                em: per_scheme[1],
                inv,
            })
        })
        .collect::<Result<_>>()?;

    let mut invariants = InvariantMaxima::default();
    for o in &outcomes {
        invariants.merge(&o.inv);
    }
    let agg = |pick: &dyn Fn(&EmOutcome) -> SampleErrors| -> [Aggregate; 3] {
        let es: Vec<SampleErrors> = outcomes.iter().map(pick).collect();
        [
            mc_rms(&es.iter().map(|e| e.l2_h1).collect::<Vec<_>>()),
            mc_rms(&es.iter().map(|e| e.linf_l2).collect::<Vec<_>>()),
            mc_mean(&es.iter().map(|e| e.press_l2).collect::<Vec<_>>()),
        ]
    };
    let milstein = agg(&|o| o.mil);
    let euler = agg(&|o| o.em);
    let diffs: Vec<f64> = outcomes.iter().map(|o| o.em.l2_h1 - o.mil.l2_h1).collect();
    let diff_stats = mc_mean(&diffs);
    let diffs_linf: Vec<f64> = outcomes
        .iter()
        .map(|o| o.em.linf_l2 - o.mil.linf_l2)
        .collect();
    Ok(EmComparison {
        samples: cfg.samples,
        milstein,
        euler,
        mean_diff_l2h1: diff_stats.value,
        se_diff_l2h1: diff_stats.se,
        t_stat_l2h1: if diff_stats.se > 0.0 {
            diff_stats.value / diff_stats.se
        } else {
            f64::INFINITY
        },
        mean_diff_linfl2: mc_mean(&diffs_linf).value,
        invariants,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

fn fmt(v: f64) -> String {
    format!("{v:.12e}")
}

/// Render the convergence table in the canonical CSV schema.
pub fn study_csv(out: &StudyOutput) -> String {
    let mut s = String::from(
        "resolution,err_l2h1,order_l2h1,err_linfl2,order_linfl2,err_press,order_press,\
         se_l2h1,se_linfl2,se_press\n",
    );
    for row in &out.rows {
        let ord = |o: Option<f64>| o.map(fmt).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            row.label,
            fmt(row.err[0]),
            ord(row.order[0]),
            fmt(row.err[1]),
            ord(row.order[1]),
            fmt(row.err[2]),
            ord(row.order[2]),
            fmt(row.se[0]),
            fmt(row.se[1]),
            fmt(row.se[2]),
        );
    }
    s
}

fn sidecar(path: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}

/// Write the main CSV plus the log-log and metadata sidecars.
pub fn write_study_outputs(path: &Path, out: &StudyOutput) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, study_csv(out))?;

    let mut loglog = String::from("resolution,err_l2h1,err_linfl2,err_press\n");
    for row in &out.rows {
        let _ = writeln!(
            loglog,
            "{},{},{},{}",
            fmt(row.resolution),
            fmt(row.err[0]),
            fmt(row.err[1]),
            fmt(row.err[2]),
        );
    }
    std::fs::write(sidecar(path, "_loglog", "csv"), loglog)?;

    let mut meta = String::new();
    let _ = writeln!(meta, "study: {}", out.study);
    for (key, value) in &out.notes {
        let _ = writeln!(meta, "{key}: {value}");
    }
    let _ = writeln!(meta, "max_divergence: {:.6e}", out.invariants.divergence);
    let _ = writeln!(
        meta,
        "max_pressure_mean: {:.6e}",
        out.invariants.pressure_mean
    );
    let _ = writeln!(
        meta,
        "max_rel_residual: {:.6e}",
        out.invariants.rel_residual
    );
    let _ = writeln!(meta, "elapsed_s: {:.3}", out.elapsed_s);
    std::fs::write(sidecar(path, "_meta", "txt"), meta)?;
    Ok(())
}

/// Write the scheme-comparison CSV and metadata sidecar.
pub fn write_em_outputs(path: &Path, cmp: &EmComparison) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut s = String::from("scheme,err_l2h1,se_l2h1,err_linfl2,se_linfl2,err_press,se_press\n");
    for (name, agg) in [("milstein", &cmp.milstein), ("euler_maruyama", &cmp.euler)] {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            name,
            fmt(agg[0].value),
            fmt(agg[0].se),
            fmt(agg[1].value),
            fmt(agg[1].se),
            fmt(agg[2].value),
            fmt(agg[2].se),
        );
    }
    std::fs::write(path, s)?;

    let mut meta = String::new();
    let _ = writeln!(meta, "study: em");
    let _ = writeln!(meta, "samples: {}", cmp.samples);
    let _ = writeln!(meta, "mean_diff_l2h1: {}", fmt(cmp.mean_diff_l2h1));
    let _ = writeln!(meta, "se_diff_l2h1: {}", fmt(cmp.se_diff_l2h1));
    let _ = writeln!(meta, "t_stat_l2h1: {:.6}", cmp.t_stat_l2h1);
    let _ = writeln!(meta, "mean_diff_linfl2: {}", fmt(cmp.mean_diff_linfl2));
    let _ = writeln!(meta, "max_divergence: {:.6e}", cmp.invariants.divergence);
    let _ = writeln!(
        meta,
        "max_rel_residual: {:.6e}",
        cmp.invariants.rel_residual
    );
    let _ = writeln!(meta, "elapsed_s: {:.3}", cmp.elapsed_s);
    std::fs::write(sidecar(path, "_meta", "txt"), meta)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_time_cfg() -> ExperimentConfig {
        ExperimentConfig {
            n: 3,
            nlist: vec![2],
            klist: vec![8, 16],
            space_m: 8,
            samples: 3,
            alpha: 0.5,
            nu: 1.0,
            t_final: 1.0,
            m0: 64,
            seed: 7,
        }
    }

    #[test]
    fn config_overrides_and_parsing() {
        let mut cfg = ExperimentConfig::full(StudyKind::Time);
        cfg.apply_kv("n", "12").unwrap();
        cfg.apply_kv("klist", "1/32, 64").unwrap();
        cfg.apply_kv("nlist", "4, 8").unwrap();
        cfg.apply_kv("alpha", "0.25").unwrap();
        cfg.apply_kv("seed", "99").unwrap();
        cfg.apply_kv("space_m", "1/128").unwrap();
        assert_eq!(cfg.n, 12);
        assert_eq!(cfg.klist, vec![32, 64]);
        assert_eq!(cfg.nlist, vec![4, 8]);
        assert_eq!(cfg.space_m, 128);
        assert_eq!(cfg.alpha, 0.25);
        assert_eq!(cfg.seed, 99);
        assert!(cfg.apply_kv("bogus", "1").is_err());
        assert!(cfg.apply_kv("klist", "1/0").is_err());
        assert!(parse_step_count("256").unwrap() == 256);
        assert!(parse_step_count("1/256").unwrap() == 256);
        assert!(parse_step_count("x").is_err());
    }

    #[test]
    fn config_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("study.conf");
        std::fs::write(
            &path,
            "# comment\nn = 6\nklist = 1/16, 1/32 # inline comment\nsamples = 5\n\nseed = 3\n",
        )
        .unwrap();
        let mut cfg = ExperimentConfig::full(StudyKind::Time);
        cfg.apply_config_file(&path).unwrap();
        assert_eq!(cfg.n, 6);
        assert_eq!(cfg.klist, vec![16, 32]);
        assert_eq!(cfg.samples, 5);
        assert_eq!(cfg.seed, 3);
        std::fs::write(&path, "n 6\n").unwrap();
        assert!(cfg.apply_config_file(&path).is_err());
    }

    #[test]
    fn ladder_validation() {
        let mut cfg = tiny_time_cfg();
        cfg.klist = vec![8, 24];
        assert!(run_time_convergence(&cfg).is_err());
        cfg.klist = vec![16, 8];
        assert!(run_time_convergence(&cfg).is_err());
        cfg.klist = vec![8, 16];
        cfg.m0 = 24; // not divisible by 32 = 2 * max
        assert!(run_time_convergence(&cfg).is_err());
    }

    #[test]
    fn time_study_produces_consistent_rows() {
        let cfg = tiny_time_cfg();
        let out = run_time_convergence(&cfg).unwrap();
        assert_eq!(out.rows.len(), 2);
        assert_eq!(out.rows[0].label, "1/8");
        assert_eq!(out.rows[1].label, "1/16");
        assert!(out.rows[0].order.iter().all(Option::is_none));
        assert!(out.rows[1].order.iter().all(Option::is_some));
        for row in &out.rows {
            for c in 0..3 {
                assert!(row.err[c] > 0.0);
                assert!(row.se[c] >= 0.0);
            }
        }
        // Coupled order/error consistency.
        let o = out.rows[1].order[0].unwrap();
        assert!((o - (out.rows[0].err[0] / out.rows[1].err[0]).log2()).abs() <= 1e-12);
        // Structural invariants hold on every stochastic step.
        assert!(out.invariants.divergence <= 1e-9);
        assert!(out.invariants.pressure_mean <= 1e-10);
        assert!(out.invariants.rel_residual <= 1e-10);
    }

    #[test]
    fn time_study_is_deterministic_across_worker_counts() {
        let cfg = tiny_time_cfg();
        let run_with = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| run_time_convergence(&cfg).unwrap())
        };
        let a = run_with(1);
        let b = run_with(3);
        let c = run_with(3);
        assert_eq!(study_csv(&a), study_csv(&b));
        assert_eq!(study_csv(&b), study_csv(&c));
        // Bitwise, not approximately: the aggregation order is fixed.
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            for c in 0..3 {
                assert_eq!(ra.err[c].to_bits(), rb.err[c].to_bits());
                assert_eq!(ra.se[c].to_bits(), rb.se[c].to_bits());
            }
        }
    }

    #[test]
    fn space_study_produces_consistent_rows() {
        let mut cfg = tiny_time_cfg();
        cfg.nlist = vec![2, 4];
        cfg.samples = 2;
        cfg.space_m = 8;
        let out = run_space_convergence(&cfg).unwrap();
        assert_eq!(out.rows.len(), 2);
        assert_eq!(out.rows[0].label, "1/2");
        assert!((out.rows[0].resolution - 0.5).abs() <= 1e-15);
        for row in &out.rows {
            assert!(row.err.iter().all(|e| *e > 0.0));
        }
        // Halving h must reduce every error for this smooth problem.
        for c in 0..3 {
            assert!(out.rows[1].err[c] < out.rows[0].err[c]);
        }
        assert!(out.invariants.rel_residual <= 1e-10);
    }

    #[test]
    fn det_studies_reject_noise_and_converge() {
        let mut cfg = tiny_time_cfg();
        cfg.alpha = 0.5;
        assert!(run_det_space(&cfg).is_err());
        assert!(run_det_time(&cfg).is_err());

        // Start at n=4: the 2x2 mesh is pre-asymptotic for the pressure
        // (its discrete pressure barely responds at all, which makes the
        // error look small there and large on the next mesh).
        cfg.alpha = 0.0;
        cfg.nlist = vec![4, 8];
        cfg.space_m = 16;
        let out = run_det_space(&cfg).unwrap();
        assert_eq!(out.rows.len(), 2);
        for c in 0..3 {
            assert_eq!(out.rows[0].se[c], 0.0);
            assert!(out.rows[1].err[c] < out.rows[0].err[c]);
        }
    }

    #[test]
    fn det_time_floor_correction_yields_first_order() {
        // On a moderately fine mesh the floor-corrected temporal orders sit
        // near one even for a short ladder.
        let mut cfg = tiny_time_cfg();
        cfg.alpha = 0.0;
        cfg.n = 8;
        cfg.klist = vec![4, 8, 16];
        let out = run_det_time(&cfg).unwrap();
        assert_eq!(out.rows.len(), 3);
        assert!(out.rows[0].order.iter().all(Option::is_none));
        for row in &out.rows[1..] {
            let o = row.order[0].unwrap();
            assert!((0.6..=1.4).contains(&o), "corrected H1 order {o}");
        }
        assert!(out
            .notes
            .iter()
            .any(|(k, v)| k == "k_floor" && v.parse::<f64>().unwrap() > 0.0));
    }

    #[test]
    fn em_comparison_runs_and_reports_finite_stats() {
        let mut cfg = tiny_time_cfg();
        cfg.klist = vec![8];
        cfg.samples = 4;
        let cmp = run_em_comparison(&cfg).unwrap();
        assert_eq!(cmp.samples, 4);
        for agg in cmp.milstein.iter().chain(cmp.euler.iter()) {
            assert!(agg.value > 0.0 && agg.value.is_finite());
        }
        assert!(cmp.t_stat_l2h1.is_finite());
        assert!(cmp.invariants.rel_residual <= 1e-10);

        cfg.klist = vec![8, 16];
        assert!(run_em_comparison(&cfg).is_err());
    }

    #[test]
    fn csv_schema_is_frozen() {
        let out = StudyOutput {
            study: "time",
            rows: vec![
                Row {
                    label: "1/8".into(),
                    resolution: 0.125,
                    err: [0.5, 2.0, 1.0],
                    se: [0.01, 0.02, 0.03],
                    order: [None; 3],
                },
                Row {
                    label: "1/16".into(),
                    resolution: 0.0625,
                    err: [0.25, 1.0, 0.5],
                    se: [0.005, 0.01, 0.015],
                    order: [Some(1.0), Some(1.0), Some(1.0)],
                },
            ],
            invariants: InvariantMaxima::default(),
            elapsed_s: 0.0,
            notes: vec![],
        };
        let expected = "resolution,err_l2h1,order_l2h1,err_linfl2,order_linfl2,err_press,order_press,se_l2h1,se_linfl2,se_press\n\
            1/8,5.000000000000e-1,,2.000000000000e0,,1.000000000000e0,,1.000000000000e-2,2.000000000000e-2,3.000000000000e-2\n\
            1/16,2.500000000000e-1,1.000000000000e0,1.000000000000e0,1.000000000000e0,5.000000000000e-1,1.000000000000e0,5.000000000000e-3,1.000000000000e-2,1.500000000000e-2\n";
        assert_eq!(study_csv(&out), expected);
    }

    #[test]
    fn output_files_land_next_to_each_other() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results").join("study.csv");
        let out = StudyOutput {
            study: "space",
            rows: vec![Row {
                label: "1/8".into(),
                resolution: 0.125,
                err: [1.0, 1.0, 1.0],
                se: [0.0; 3],
                order: [None; 3],
            }],
            invariants: InvariantMaxima::default(),
            elapsed_s: 1.5,
            notes: vec![("samples".into(), "2".into())],
        };
        write_study_outputs(&path, &out).unwrap();
        assert!(path.exists());
        assert!(dir.path().join("results").join("study_loglog.csv").exists());
        let meta =
            std::fs::read_to_string(dir.path().join("results").join("study_meta.txt")).unwrap();
        assert!(meta.contains("study: space"));
        assert!(meta.contains("samples: 2"));
        assert!(meta.contains("max_rel_residual"));
    }
}
