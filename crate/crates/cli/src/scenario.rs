//! Running a scenario end to end: initial data, the primary march, an
//! optional reconstruction in the other direction, and the artifacts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use beamvi_core::diagnostics::{
    lemma_discrepancy, noether_rect, space_edge_balance, time_edge_balance, ConservationReport,
    Direction, LemmaWindow, Rectangle,
};
use beamvi_core::grid::{DiscreteField, GridError};
use beamvi_core::integrators::{
    cfl_check, dcel_tolerance, run_space_partial, run_time_partial, stencil_residual, CflReport,
    FieldMomenta, IntegratorError, MarchOptions, NoForce, PartialRun,
};
use beamvi_core::{BeamParams, CoAlgebraVector};
use serde::Serialize;
use thiserror::Error;

use crate::config::{emit, ConfigError, ScenarioConfig};
use crate::output::{
    fmt_f64, write_diagnostics, write_summary, write_table, write_trajectory, OutputError,
};

/// Position agreement required between a field and its reconstruction, m.
pub const CROSS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    /// 1 for configuration and input problems, 2 for solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Integrator(_) => 2,
            _ => 1,
        }
    }
}

/// Which marcher a reconstruction runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reconstruction {
    /// March in space from the first two columns of a field.
    Space,
    /// March in time from the first two rows of a field.
    Time,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceComparison {
    /// Column (space reconstruction) or row (time reconstruction).
    pub index: usize,
    /// Largest position difference over the whole slice.
    pub max_error: f64,
    /// Largest position difference with the excluded edge nodes left out.
    pub max_error_kept: f64,
}

/// Node-by-node comparison of a field with its reconstruction.
#[derive(Debug, Clone)]
pub struct CrossConsistency {
    pub direction: Reconstruction,
    /// Rows (space reconstruction) or columns (time reconstruction) left
    /// out of `max_error_kept`: the two edges where the reconstructing
    /// marcher imposes free-end conditions the original field does not
    /// satisfy.
    pub excluded: Vec<usize>,
    pub slices: Vec<SliceComparison>,
    /// Slices the reconstruction had to produce.
    pub expected_slices: usize,
    pub failure: Option<String>,
    pub tolerance: f64,
}

impl CrossConsistency {
    pub fn completed(&self) -> bool {
        self.failure.is_none() && self.slices.len() == self.expected_slices
    }

    pub fn max_error(&self) -> f64 {
        self.slices.iter().map(|s| s.max_error).fold(0.0, f64::max)
    }

    pub fn max_error_kept(&self) -> f64 {
        self.slices
            .iter()
            .map(|s| s.max_error_kept)
            .fold(0.0, f64::max)
    }

    pub fn passes(&self) -> bool {
        self.completed() && self.max_error_kept() < self.tolerance
    }
}

/// Marches from the first two slices of `field` in the given direction and
/// compares every produced node with the original.
pub fn reconstruct(
    field: &DiscreteField,
    params: &BeamParams,
    direction: Reconstruction,
    opts: &MarchOptions,
) -> Result<(PartialRun, CrossConsistency), IntegratorError> {
    let (n, m) = (field.n_time(), field.n_space());
    let p = params.with_grid(field.dt(), field.ds(), n, m);
    let (run, excluded, expected) = match direction {
        Reconstruction::Space => {
            let c0 = field.space_slice(0).to_vec();
            let c1 = field.space_slice(1).to_vec();
            (
                run_space_partial(&c0, &c1, &p, &NoForce, opts)?,
                vec![0, n - 1],
                m - 2,
            )
        }
        Reconstruction::Time => {
            let r0 = field.time_slice(0).nodes().to_vec();
            let r1 = field.time_slice(1).nodes().to_vec();
            (
                run_time_partial(&r0, &r1, &p, &NoForce, opts)?,
                vec![0, m - 1],
                n - 2,
            )
        }
    };
    let rebuilt = &run.field;
    let mut slices = Vec::new();
    match direction {
        Reconstruction::Space => {
            for a in 2..rebuilt.n_space() {
                let errs: Vec<f64> = (0..n)
                    .map(|j| (rebuilt.at(j, a).pos - field.at(j, a).pos).amax())
                    .collect();
                slices.push(compare(a, &errs, &excluded));
            }
        }
        Reconstruction::Time => {
            for j in 2..rebuilt.n_time() {
                let errs: Vec<f64> = (0..m)
                    .map(|a| (rebuilt.at(j, a).pos - field.at(j, a).pos).amax())
                    .collect();
                slices.push(compare(j, &errs, &excluded));
            }
        }
    }
    let failure = run.failure.as_ref().map(ToString::to_string);
    let report = CrossConsistency {
        direction,
        excluded,
        slices,
        expected_slices: expected,
        failure,
        tolerance: CROSS_TOLERANCE,
    };
    Ok((run, report))
}

fn compare(index: usize, errs: &[f64], excluded: &[usize]) -> SliceComparison {
    // NaN compares false in f64::max, so fold with an explicit check.
    let worst = |it: &mut dyn Iterator<Item = f64>| {
        it.fold(0.0_f64, |m, e| if e.is_nan() || e > m { e } else { m })
    };
    let max_error = worst(&mut errs.iter().copied());
    let max_error_kept = worst(
        &mut errs
            .iter()
            .enumerate()
            .filter(|(k, _)| !excluded.contains(k))
            .map(|(_, e)| *e),
    );
    SliceComparison {
        index,
        max_error,
        max_error_kept,
    }
}

/// Largest stencil residual over the nodes whose equations a march of the
/// given direction enforced, and the threshold it must stay under.
pub fn stencil_check(
    field: &DiscreteField,
    momenta: &FieldMomenta,
    params: &BeamParams,
    direction: Direction,
    newton_tol: f64,
) -> Result<(f64, f64), GridError> {
    let (n, m) = (field.n_time(), field.n_space());
    let nodes: Vec<(usize, usize)> = match direction {
        Direction::Time => (1..n.saturating_sub(1))
            .flat_map(|j| (0..m).map(move |a| (j, a)))
            .collect(),
        Direction::Space => (1..m.saturating_sub(1))
            .flat_map(|a| (0..n).map(move |j| (j, a)))
            .collect(),
    };
    let mut worst = 0.0_f64;
    for (j, a) in nodes {
        let r = stencil_residual(field, momenta, params, &NoForce, j, a)?.amax();
        worst = if r.is_nan() { f64::NAN } else { worst.max(r) };
    }
    let tol = dcel_tolerance(
        params,
        newton_tol,
        momenta.max_momentum_norm(),
        field.max_position_norm(),
    );
    Ok((worst, tol))
}

/// Invariant checks of one field, written as the one-row Noether summary.
#[derive(Debug, Clone)]
pub struct NoetherSummary {
    pub rectangle: Option<Rectangle>,
    pub noether: CoAlgebraVector,
    pub edge_balance: Option<CoAlgebraVector>,
    pub lemma: Option<f64>,
    pub momentum_scale: f64,
    pub max_residual: f64,
    pub residual_tolerance: f64,
    pub orthogonality: f64,
}

pub fn noether_summary(
    field: &DiscreteField,
    momenta: &FieldMomenta,
    params: &BeamParams,
    report: &ConservationReport,
    newton_tol: f64,
) -> Result<NoetherSummary, GridError> {
    let rectangle = Rectangle::full(field);
    let noether = match rectangle {
        Some(r) => noether_rect(field, momenta, params, r)?,
        None => CoAlgebraVector::zeros(),
    };
    let (edge_balance, lemma) = match (report.direction, rectangle) {
        (Direction::Time, Some(r)) => (
            Some(time_edge_balance(field, momenta, r.l)?),
            Some(lemma_discrepancy(
                field,
                momenta,
                params,
                LemmaWindow::Time {
                    k: 0,
                    l: r.l,
                    c: r.c,
                },
            )?),
        ),
        (Direction::Space, Some(r)) => (
            Some(space_edge_balance(field, momenta, r.c)?),
            Some(lemma_discrepancy(
                field,
                momenta,
                params,
                LemmaWindow::Space {
                    b: 0,
                    c: r.c,
                    l: r.l,
                },
            )?),
        ),
        _ => (None, None),
    };
    let (max_residual, residual_tolerance) =
        stencil_check(field, momenta, params, report.direction, newton_tol)?;
    Ok(NoetherSummary {
        rectangle,
        noether,
        edge_balance,
        lemma,
        momentum_scale: report.max_momentum_norm(),
        max_residual,
        residual_tolerance,
        orthogonality: report.orthogonality_drift,
    })
}

fn summary_entries(s: &NoetherSummary) -> Vec<(String, String)> {
    let mut e = Vec::new();
    let r = s.rectangle.map_or(
        [String::new(), String::new(), String::new(), String::new()],
        |r| {
            [
                r.b.to_string(),
                r.c.to_string(),
                r.k.to_string(),
                r.l.to_string(),
            ]
        },
    );
    for (name, v) in ["B", "C", "K", "L"].iter().zip(r) {
        e.push((name.to_string(), v));
    }
    for (i, v) in s.noether.to_array().iter().enumerate() {
        e.push((format!("noether{}", i + 1), fmt_f64(*v)));
    }
    let balance = s.edge_balance.map_or([f64::NAN; 6], |b| b.to_array());
    for (i, v) in balance.iter().enumerate() {
        e.push((format!("edge_balance{}", i + 1), fmt_f64(*v)));
    }
    e.push((
        "lemma_discrepancy".into(),
        fmt_f64(s.lemma.unwrap_or(f64::NAN)),
    ));
    e.push(("momentum_scale".into(), fmt_f64(s.momentum_scale)));
    e.push(("max_stencil_residual".into(), fmt_f64(s.max_residual)));
    e.push(("stencil_tolerance".into(), fmt_f64(s.residual_tolerance)));
    e.push(("orthogonality_error".into(), fmt_f64(s.orthogonality)));
    e
}

fn write_cross(dir: &Path, cross: &CrossConsistency) -> Result<(), OutputError> {
    let rows: Vec<Vec<String>> = cross
        .slices
        .iter()
        .map(|s| {
            vec![
                s.index.to_string(),
                fmt_f64(s.max_error),
                fmt_f64(s.max_error_kept),
            ]
        })
        .collect();
    let label = match cross.direction {
        Reconstruction::Space => "a",
        Reconstruction::Time => "j",
    };
    write_table(
        &dir.join("cross_consistency.csv"),
        &[label, "max_error", "max_error_excluding_edges"],
        &rows,
    )?;
    let excluded = cross
        .excluded
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" ");
    write_summary(
        &dir.join("cross_consistency_summary.csv"),
        &[
            (
                "direction".into(),
                format!("{:?}", cross.direction).to_lowercase(),
            ),
            ("excluded_edge_indices".into(), excluded),
            ("slices_compared".into(), cross.slices.len().to_string()),
            ("slices_expected".into(), cross.expected_slices.to_string()),
            ("max_error".into(), fmt_f64(cross.max_error())),
            (
                "max_error_excluding_edges".into(),
                fmt_f64(cross.max_error_kept()),
            ),
            ("tolerance".into(), fmt_f64(cross.tolerance)),
            ("pass".into(), cross.passes().to_string()),
            ("failure".into(), cross.failure.clone().unwrap_or_default()),
        ],
    )
}

/// Everything a run produced, kept in memory for callers that inspect it.
#[derive(Debug)]
pub struct ScenarioOutcome {
    pub params: BeamParams,
    pub cfl: CflReport,
    pub primary: PartialRun,
    pub report: ConservationReport,
    pub summary: NoetherSummary,
    pub reconstruction: Option<(PartialRun, CrossConsistency)>,
    pub wall_time: f64,
    pub files: Vec<PathBuf>,
}

impl ScenarioOutcome {
    /// 0 when every march finished, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        let recon_ok = self
            .reconstruction
            .as_ref()
            .is_none_or(|(r, _)| r.completed());
        if self.primary.completed() && recon_ok {
            0
        } else {
            2
        }
    }
}

#[derive(Serialize)]
struct ManifestRun {
    status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    failure: Option<String>,
    wall_time_s: f64,
    n_time: usize,
    n_space: usize,
    slices_computed: usize,
    steps: usize,
    max_newton_iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    reconstruction_status: Option<String>,
}

#[derive(Serialize)]
struct ManifestCfl {
    wave_speed: f64,
    dt_suggested: f64,
    dt: f64,
    exceeds: bool,
}

#[derive(Serialize)]
struct ManifestVersions {
    beamvi: &'static str,
    beamvi_core: &'static str,
}

#[derive(Serialize)]
struct Manifest {
    run: ManifestRun,
    cfl: ManifestCfl,
    versions: ManifestVersions,
}

fn direction_of(cfg: &ScenarioConfig) -> Direction {
    if cfg.mode.marches_in_time() {
        Direction::Time
    } else {
        Direction::Space
    }
}

fn write_field_outputs(
    dir: &Path,
    prefix: &str,
    field: &DiscreteField,
    params: &BeamParams,
    direction: Direction,
    newton_tol: f64,
    files: &mut Vec<PathBuf>,
) -> Result<(ConservationReport, NoetherSummary), CliError> {
    let momenta = FieldMomenta::compute(field, params)?;
    let report = ConservationReport::compute(field, &momenta, params, direction)?;
    let summary = noether_summary(field, &momenta, params, &report, newton_tol)?;
    let step = match direction {
        Direction::Time => field.dt(),
        Direction::Space => field.ds(),
    };
    let paths = [
        dir.join(format!("{prefix}trajectory.csv")),
        dir.join(format!("{prefix}diagnostics.csv")),
        dir.join(format!("{prefix}noether.csv")),
    ];
    write_trajectory(&paths[0], field)?;
    write_diagnostics(&paths[1], &report, step, None)?;
    write_summary(&paths[2], &summary_entries(&summary))?;
    files.extend(paths);
    Ok((report, summary))
}

/// Reconstructs `field` and writes the reconstruction's trajectory,
/// diagnostics and the comparison with `field` into `out_dir`.
pub fn reconstruct_into(
    field: &DiscreteField,
    params: &BeamParams,
    recon: Reconstruction,
    cfg: &ScenarioConfig,
    out_dir: &Path,
    files: &mut Vec<PathBuf>,
) -> Result<(PartialRun, CrossConsistency), CliError> {
    let opts = cfg.march_options();
    let (run, cross) = reconstruct(field, params, recon, &opts)?;
    if let Some(e) = &run.failure {
        log::error!("reconstruction stopped: {e}");
    }
    let direction = match recon {
        Reconstruction::Space => Direction::Space,
        Reconstruction::Time => Direction::Time,
    };
    let p = params.with_grid(
        run.field.dt(),
        run.field.ds(),
        run.field.n_time(),
        run.field.n_space(),
    );
    write_field_outputs(
        out_dir,
        "reconstruction_",
        &run.field,
        &p,
        direction,
        cfg.newton.tol,
        files,
    )?;
    write_cross(out_dir, &cross)?;
    files.push(out_dir.join("cross_consistency.csv"));
    files.push(out_dir.join("cross_consistency_summary.csv"));
    Ok((run, cross))
}

/// Runs `cfg`, writing all artifacts into `out_dir`.
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: &Path) -> Result<ScenarioOutcome, CliError> {
    cfg.validate()?;
    let start = Instant::now();
    let params = cfg.params()?;
    let cfl = cfl_check(&params);
    if cfl.exceeds {
        log::warn!(
            "dt = {} exceeds the suggested {:.3e} (a tenth of the Courant limit for c = {:.3} m/s)",
            cfl.dt,
            cfl.dt_suggested,
            cfl.wave_speed
        );
    }
    std::fs::create_dir_all(out_dir).map_err(|source| CliError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let opts = cfg.march_options();
    let direction = direction_of(cfg);
    let (s0, s1) = cfg.initial_slices(&params);
    let primary = match direction {
        Direction::Time => run_time_partial(&s0, &s1, &params, &NoForce, &opts)?,
        Direction::Space => run_space_partial(&s0, &s1, &params, &NoForce, &opts)?,
    };
    if let Some(e) = &primary.failure {
        log::error!("march stopped: {e}");
    }
    let mut files = Vec::new();
    let (report, summary) = write_field_outputs(
        out_dir,
        "",
        &primary.field,
        &params,
        direction,
        cfg.newton.tol,
        &mut files,
    )?;

    if direction == Direction::Time {
        for w in &cfg.output.windows {
            let rows =
                ((w / params.dt).round() as usize).min(report.energy.len().saturating_sub(1)) + 1;
            let path = out_dir.join(format!("diagnostics_window_{w}s.csv"));
            write_diagnostics(&path, &report, params.dt, Some(rows))?;
            files.push(path);
        }
    }

    let reconstruction = if cfg.mode.reconstructs() {
        let recon = match direction {
            Direction::Time => Reconstruction::Space,
            Direction::Space => Reconstruction::Time,
        };
        Some(reconstruct_into(
            &primary.field,
            &params,
            recon,
            cfg,
            out_dir,
            &mut files,
        )?)
    } else {
        None
    };

    let wall_time = start.elapsed().as_secs_f64();
    let manifest = Manifest {
        run: ManifestRun {
            status: if primary.completed() {
                "completed".into()
            } else {
                "solver_failure".into()
            },
            failure: primary.failure.as_ref().map(ToString::to_string),
            wall_time_s: wall_time,
            n_time: params.n_time,
            n_space: params.n_space,
            slices_computed: match direction {
                Direction::Time => primary.field.n_time(),
                Direction::Space => primary.field.n_space(),
            },
            steps: primary.stats.steps,
            max_newton_iterations: primary.stats.max_newton_iterations,
            reconstruction_status: reconstruction.as_ref().map(|(r, _)| match &r.failure {
                None => "completed".to_string(),
                Some(e) => format!("solver_failure: {e}"),
            }),
        },
        cfl: ManifestCfl {
            wave_speed: cfl.wave_speed,
            dt_suggested: cfl.dt_suggested,
            dt: cfl.dt,
            exceeds: cfl.exceeds,
        },
        versions: ManifestVersions {
            beamvi: env!("CARGO_PKG_VERSION"),
            beamvi_core: beamvi_core::VERSION,
        },
    };
    let text = format!(
        "{}\n# Configuration\n[config]\n{}",
        toml::to_string(&manifest).expect("manifest serializes"),
        indent_config(&emit(cfg))
    );
    let path = out_dir.join("manifest.toml");
    std::fs::write(&path, text).map_err(|source| CliError::Io {
        path: path.clone(),
        source,
    })?;
    files.push(path);

    Ok(ScenarioOutcome {
        params,
        cfl,
        primary,
        report,
        summary,
        reconstruction,
        wall_time,
        files,
    })
}

/// Re-roots the tables of an emitted config under `config.`.
fn indent_config(text: &str) -> String {
    text.lines()
        .map(
            |l| match l.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                Some(name) => format!("[config.{name}]"),
                None => l.to_string(),
            },
        )
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}
