//! Run configuration, experiment sequences (uniform, h-, hp-adaptive,
//! ε-study), errors against the finest solution, eoc and file outputs.

use crate::adaptivity::{adaptive_loop, AdaptiveConfig, Mode};
use crate::estimator::{contact_indicators, total_estimate, write_indicators_csv, BubbleOperators, EstimateTotals, IndicatorRecord};
use crate::geometry::{Panel, Vec2};
use crate::kernels::{assemble, displacement_at, BemMatrices, LocalFunction, Material, Operator, PanelBasis, Shape, ShapeTable, Space};
use crate::mesh::{nested_location, BoundaryMesh, DofMap, Part};
use crate::multiplier::{reconstruct_multiplier, write_contact_trace_csv, MultiplierOptions, MultiplierSolution};
use crate::polynomial::{gauss_legendre, gauss_lobatto_nodes, legendre_values};
use crate::quadrature::{PairQuadrature, QuadratureOptions};
use crate::regularization::{write_law_csv, LawSpec, RegularizedLaw, SawtoothParams};
use crate::solver::{solve_regularized, write_trace_csv, ContactSetup, SolverOptions, TraceRow};
use crate::steklov::{assemble_load, energy_norm, LoadFunctional, SteklovOperator, Traction};
use crate::{Error, Result};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

/// Flat key–value run configuration (TOML). Every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Elements per side of the initial square mesh.
    pub n0: usize,
    pub degree: usize,
    pub young: f64,
    pub poisson: f64,
    pub traction_from: [f64; 2],
    pub traction_to: [f64; 2],
    pub traction: [f64; 2],
    pub a1: f64,
    pub a2: f64,
    pub t1: f64,
    pub t2: f64,
    pub gap: f64,
    pub eps: f64,
    pub mode: Mode,
    pub theta: f64,
    pub delta: f64,
    pub uniform_levels: usize,
    pub adaptive_max_iter: usize,
    pub max_dof: usize,
    pub eps_study_n0: usize,
    pub eps_max: f64,
    pub eps_min: f64,
    pub eps_per_decade: usize,
    pub eps_fine: f64,
    pub regular_extra: usize,
    pub singular_extra: usize,
    pub contact_extra: usize,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
    pub continuation: bool,
    pub verbose: bool,
    /// Records at the end of a sequence without error against the finest solution.
    pub error_cutoff: usize,
    pub multiplier_all_rows: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n0: 16,
            degree: 1,
            young: 5.0,
            poisson: 0.45,
            traction_from: [0.5, 0.5],
            traction_to: [0.25, 0.5],
            traction: [0.0, 0.25],
            a1: 0.05,
            a2: 0.03,
            t1: 0.02,
            t2: 0.04,
            gap: 0.0,
            eps: 1e-4,
            mode: Mode::Uniform,
            theta: 0.3,
            delta: 0.5,
            uniform_levels: 5,
            adaptive_max_iter: 40,
            max_dof: 1600,
            eps_study_n0: 128,
            eps_max: 1e-1,
            eps_min: 1e-5,
            eps_per_decade: 2,
            eps_fine: 2.5e-6,
            regular_extra: 4,
            singular_extra: 16,
            contact_extra: 17,
            solver_tol: 1e-10,
            solver_max_iter: 200,
            continuation: true,
            verbose: false,
            error_cutoff: 2,
            multiplier_all_rows: true,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("young", self.young),
            ("eps", self.eps),
            ("eps_max", self.eps_max),
            ("eps_min", self.eps_min),
            ("eps_fine", self.eps_fine),
            ("solver_tol", self.solver_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.poisson > 0.0 && self.poisson < 0.5) {
            return Err(Error::Config(format!("poisson must lie in (0, 0.5), got {}", self.poisson)));
        }
        if self.n0 == 0 || self.eps_study_n0 == 0 || self.degree == 0 {
            return Err(Error::Config("n0, eps_study_n0 and degree must be at least 1".into()));
        }
        if self.eps_min >= self.eps_max || self.eps_per_decade == 0 {
            return Err(Error::Config("eps range must satisfy eps_min < eps_max".into()));
        }
        Ok(())
    }

    /// `ε_k = ε_max · 10^{−k/per_decade}` down to `ε_min`.
    pub fn eps_values(&self) -> Vec<f64> {
        let steps = ((self.eps_max / self.eps_min).log10() * self.eps_per_decade as f64).round() as i32;
        (0..=steps)
            .map(|k| self.eps_max * 10f64.powf(-(k as f64) / self.eps_per_decade as f64))
            .collect()
    }
}

/// Everything needed to solve on a given mesh.
#[derive(Debug, Clone)]
pub struct Problem {
    pub config: RunConfig,
    pub material: Material,
    pub traction: Traction,
    pub law: RegularizedLaw,
    pub quadrature: QuadratureOptions,
    pub solver: SolverOptions,
    pub multiplier: MultiplierOptions,
}

impl Problem {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let params = SawtoothParams { a1: c.a1, a2: c.a2, t1: c.t1, t2: c.t2 };
        let law = RegularizedLaw::new(LawSpec::benchmark(params, c.gap), c.eps)?;
        let traction = Traction {
            segments: vec![(
                Panel::new(Vec2::from(c.traction_from), Vec2::from(c.traction_to)),
                Vec2::from(c.traction),
            )],
        };
        Ok(Self {
            material: Material::new(c.young, c.poisson)?,
            traction,
            law,
            quadrature: QuadratureOptions {
                regular_extra: c.regular_extra,
                singular_extra: c.singular_extra,
                ..QuadratureOptions::default()
            },
            solver: SolverOptions {
                tol: c.solver_tol,
                max_iter: c.solver_max_iter,
                continuation: c.continuation,
                ..SolverOptions::default()
            },
            multiplier: MultiplierOptions { all_rows: c.multiplier_all_rows },
            config,
        })
    }

    pub fn initial_mesh(&self) -> Result<BoundaryMesh> {
        self.mesh_with(self.config.n0)
    }

    pub fn mesh_with(&self, n0: usize) -> Result<BoundaryMesh> {
        let mut mesh = BoundaryMesh::benchmark(n0)?;
        for el in &mut mesh.elements {
            el.degree = self.config.degree;
        }
        Ok(mesh)
    }
}

/// Assembled operators of one mesh.
pub struct Discretization {
    pub mesh: BoundaryMesh,
    pub dofs: DofMap,
    pub op: SteklovOperator,
    pub load: LoadFunctional,
    pub setup: ContactSetup,
    pub bubbles: BubbleOperators,
}

impl Discretization {
    pub fn new(problem: &Problem, mesh: BoundaryMesh) -> Result<Self> {
        mesh.validate()?;
        let dofs = DofMap::new(&mesh)?;
        let bem = BemMatrices::assemble(&mesh, &dofs, &problem.material, &problem.quadrature)?;
        let op = SteklovOperator::assemble(&bem, &dofs)?;
        drop(bem);
        let load = assemble_load(&mesh, &dofs, &problem.traction)?;
        let setup = ContactSetup::new(&mesh, &dofs, problem.config.gap, problem.config.contact_extra);
        let bubbles = BubbleOperators::new(&mesh, &dofs, &op, &problem.material, &problem.quadrature)?;
        Ok(Self { mesh, dofs, op, load, setup, bubbles })
    }

    /// Solve, reconstruct λ and evaluate the indicators for one `ε`.
    pub fn solve(&self, problem: &Problem, law: &RegularizedLaw, iteration: usize, start: Instant) -> Result<Level> {
        let sol = solve_regularized(&self.op, &self.load, law, &self.setup, &self.dofs, &problem.solver, None)
            .map_err(|e| with_context(e, iteration))?;
        let lambda = reconstruct_multiplier(&self.mesh, &self.dofs, &self.op, &self.load, &sol.u, &problem.multiplier)?;
        let psi = self.op.density(&sol.u_full);
        let bubble = self.bubbles.estimate(&self.mesh, &self.op, &self.load, &sol.u_full, &psi, &lambda)?;
        let contact = contact_indicators(&self.mesh, &self.dofs, &sol.u_full, &lambda, law, problem.config.gap, problem.config.contact_extra);
        let indicators: Vec<IndicatorRecord> = self
            .mesh
            .elements
            .iter()
            .enumerate()
            .map(|(e, el)| IndicatorRecord {
                element: e,
                part: el.part,
                h: self.mesh.length(e),
                p: el.degree,
                bubble: bubble[e],
                penetration: contact[e][0],
                consistency: contact[e][1],
                complementarity: contact[e][2],
            })
            .collect();
        Ok(Level {
            iteration,
            eps: law.eps,
            mesh: self.mesh.clone(),
            dofs: self.dofs.clone(),
            n_dof: self.dofs.n_reduced(),
            totals: total_estimate(&indicators),
            indicators,
            u_full: sol.u_full,
            psi,
            lambda,
            solver_iterations: sol.iterations,
            kkt: sol.residual,
            trace: sol.trace,
            wall: start.elapsed().as_secs_f64(),
        })
    }
}

fn with_context(e: Error, iteration: usize) -> Error {
    match e {
        Error::NonConvergence { .. } | Error::Numerical(_) => Error::Numerical(format!("iteration {iteration}: {e}")),
        other => other,
    }
}

/// Result of one solve–estimate step.
#[derive(Debug, Clone)]
pub struct Level {
    pub iteration: usize,
    pub eps: f64,
    pub mesh: BoundaryMesh,
    pub dofs: DofMap,
    pub n_dof: usize,
    pub u_full: DVector<f64>,
    /// Density `V⁻¹(K + ½I)u`.
    pub psi: DVector<f64>,
    pub lambda: MultiplierSolution,
    pub indicators: Vec<IndicatorRecord>,
    pub totals: EstimateTotals,
    pub solver_iterations: usize,
    pub kkt: f64,
    pub trace: Vec<TraceRow>,
    pub wall: f64,
}

/// Assemble, solve and estimate on `mesh`; also returns the Steklov operator.
pub fn solve_level(problem: &Problem, mesh: BoundaryMesh, iteration: usize) -> Result<(Level, SteklovOperator)> {
    let start = Instant::now();
    let disc = Discretization::new(problem, mesh)?;
    let level = disc.solve(problem, &problem.law, iteration, start)?;
    Ok((level, disc.op))
}

/// One row of `results.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentRecord {
    pub iter: usize,
    pub n_elem: usize,
    pub n_dof: usize,
    pub est_total: f64,
    pub est_bubble: f64,
    pub est_pen: f64,
    pub est_cons: f64,
    pub est_comp: f64,
    pub err_u_p: Option<f64>,
    pub err_lam_v: Option<f64>,
    pub wall_s: f64,
    pub eps: f64,
}

pub const RESULT_COLUMNS: [&str; 12] = [
    "iter", "n_elem", "n_dof", "est_total", "est_bubble", "est_pen", "est_cons", "est_comp", "err_u_P", "err_lam_V", "wall_s", "eps",
];

impl ExperimentRecord {
    /// Estimate columns are square roots of the summed squared indicators.
    pub fn from_level(level: &Level) -> Self {
        let t = &level.totals;
        Self {
            iter: level.iteration,
            n_elem: level.mesh.len(),
            n_dof: level.n_dof,
            est_total: t.total.sqrt(),
            est_bubble: t.bubble.sqrt(),
            est_pen: t.penetration.sqrt(),
            est_cons: t.consistency.sqrt(),
            est_comp: t.complementarity.sqrt(),
            err_u_p: None,
            err_lam_v: None,
            wall_s: level.wall,
            eps: level.eps,
        }
    }

    /// Value of a `results.csv` column.
    pub fn field(&self, name: &str) -> Option<f64> {
        Some(match name {
            "iter" => self.iter as f64,
            "n_elem" => self.n_elem as f64,
            "n_dof" => self.n_dof as f64,
            "est_total" => self.est_total,
            "est_bubble" => self.est_bubble,
            "est_pen" => self.est_pen,
            "est_cons" => self.est_cons,
            "est_comp" => self.est_comp,
            "err_u_P" => self.err_u_p.unwrap_or(f64::NAN),
            "err_lam_V" => self.err_lam_v.unwrap_or(f64::NAN),
            "wall_s" => self.wall_s,
            "eps" => self.eps,
            _ => return None,
        })
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |v| format!("{v:e}"))
}

pub fn write_results_csv(records: &[ExperimentRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(RESULT_COLUMNS)?;
    for r in records {
        w.write_record([
            r.iter.to_string(),
            r.n_elem.to_string(),
            r.n_dof.to_string(),
            format!("{:e}", r.est_total),
            format!("{:e}", r.est_bubble),
            format!("{:e}", r.est_pen),
            format!("{:e}", r.est_cons),
            format!("{:e}", r.est_comp),
            fmt_opt(r.err_u_p),
            fmt_opt(r.err_lam_v),
            format!("{:.3}", r.wall_s),
            format!("{:e}", r.eps),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let mut rd = csv::Reader::from_path(path)?;
    let headers = rd.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidInput(format!("results file lacks column {name}")))
    };
    let idx: Vec<usize> = RESULT_COLUMNS.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row?;
        let num = |k: usize| -> Result<f64> {
            let s = row.get(idx[k]).unwrap_or("");
            s.trim().parse::<f64>().map_err(|_| Error::InvalidInput(format!("bad value {s:?} in column {}", RESULT_COLUMNS[k])))
        };
        let opt = |k: usize| num(k).map(|v| if v.is_nan() { None } else { Some(v) });
        out.push(ExperimentRecord {
            iter: num(0)? as usize,
            n_elem: num(1)? as usize,
            n_dof: num(2)? as usize,
            est_total: num(3)?,
            est_bubble: num(4)?,
            est_pen: num(5)?,
            est_cons: num(6)?,
            est_comp: num(7)?,
            err_u_p: opt(8)?,
            err_lam_v: opt(9)?,
            wall_s: num(10)?,
            eps: num(11)?,
        });
    }
    Ok(out)
}

/// One eoc value between two consecutive usable records.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EocStep {
    pub from: usize,
    pub to: usize,
    pub eoc: f64,
}

/// `eoc_k = −log(e_{k+1}/e_k) / log(N_{k+1}/N_k)`; pairs whose value is not
/// positive and finite are skipped and counted.
pub fn compute_eoc(n: &[f64], e: &[f64]) -> (Vec<EocStep>, usize) {
    let usable: Vec<usize> = (0..n.len().min(e.len())).filter(|&k| e[k] > 0.0 && e[k].is_finite() && n[k] > 0.0).collect();
    let skipped = n.len().min(e.len()) - usable.len();
    let steps = usable
        .windows(2)
        .map(|w| EocStep {
            from: w[0],
            to: w[1],
            eoc: -(e[w[1]] / e[w[0]]).ln() / (n[w[1]] / n[w[0]]).ln(),
        })
        .collect();
    (steps, skipped)
}

/// eoc of a `results.csv` field with respect to the dof count.
pub fn eoc_of(records: &[ExperimentRecord], field: &str) -> Result<(Vec<EocStep>, usize)> {
    let e: Vec<f64> = records
        .iter()
        .map(|r| r.field(field).ok_or_else(|| Error::InvalidInput(format!("unknown field {field}"))))
        .collect::<Result<_>>()?;
    let n: Vec<f64> = records.iter().map(|r| r.n_dof as f64).collect();
    Ok(compute_eoc(&n, &e))
}

/// Least-squares slope of `log e` against `log N` (negated), over all usable points.
pub fn fitted_eoc(n: &[f64], e: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = n
        .iter()
        .zip(e)
        .filter(|(n, e)| **e > 0.0 && e.is_finite() && **n > 0.0)
        .map(|(n, e)| (n.ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(-sxy / sxx)
}

/// Interpolates a displacement of a coarser nested mesh into the full trace space of `fine`.
pub fn transfer_displacement(
    coarse: &BoundaryMesh,
    coarse_dofs: &DofMap,
    u: &DVector<f64>,
    fine: &BoundaryMesh,
    fine_dofs: &DofMap,
) -> Result<DVector<f64>> {
    let loc = nested_location(fine, coarse)?;
    let table = ShapeTable::new(coarse.elements.iter().map(|e| e.degree).max().unwrap_or(1));
    let mut out = DVector::zeros(fine_dofs.n_full());
    for (e, el) in fine.elements.iter().enumerate() {
        let (c, s0, s1) = loc[e];
        if coarse.elements[c].degree > el.degree {
            return Err(Error::InvalidInput(format!("element {e} has lower degree than its coarse ancestor")));
        }
        let nodes = gauss_lobatto_nodes(el.degree)?;
        for (j, &node) in fine_dofs.element_nodes[e].iter().enumerate() {
            let xi = s0 + 0.5 * (nodes[j] + 1.0) * (s1 - s0);
            let v = displacement_at(&table, coarse, coarse_dofs, u, c, xi);
            out[2 * node] = v.x;
            out[2 * node + 1] = v.y;
        }
    }
    Ok(out)
}

/// `√⟨V(μn), μn⟩` of a scalar function on Γ_C, given per contact element as
/// a polynomial of degree `degree[e]` through `f(e, ξ)`; the scalar is lifted
/// with the outward normal.
pub fn norm_v_on_contact(
    mesh: &BoundaryMesh,
    degree: &[usize],
    f: impl Fn(usize, f64) -> f64,
    mat: &Material,
    qopts: &QuadratureOptions,
) -> Result<f64> {
    let mut panels = Vec::new();
    let mut coeffs = Vec::new();
    for (e, el) in mesh.elements.iter().enumerate() {
        if el.part != Part::Contact {
            continue;
        }
        let d = degree[e];
        let rule = gauss_legendre(d + 2);
        let mut a = vec![0.0; d + 1];
        for (&x, &w) in rule.points.iter().zip(&rule.weights) {
            let fx = f(e, x);
            for (k, l) in legendre_values(d, x).iter().enumerate() {
                a[k] += w * fx * l * (2 * k + 1) as f64 / 2.0;
            }
        }
        let panel = mesh.panel(e);
        let n = panel.normal();
        let functions = (0..=d)
            .map(|k| LocalFunction { shape: k, dir: n, index: coeffs.len() + k })
            .collect();
        coeffs.extend(a);
        panels.push(PanelBasis { panel, range: (-1.0, 1.0), shapes: (0..=d).map(Shape::Legendre).collect(), functions });
    }
    if panels.is_empty() {
        return Err(Error::Config("no contact elements".into()));
    }
    let max_d = degree.iter().copied().max().unwrap_or(0);
    let space = Space { dim: coeffs.len(), panels };
    let quad = PairQuadrature::new(qopts.clone()).with_max_degree(max_d + 1);
    let v = assemble(Operator::SingleLayer, &space, &space, mat, &quad);
    let c = DVector::from_vec(coeffs);
    energy_norm(&v, &c)
}

/// `‖λ_fine − λ‖_V` on the common refinement (the fine mesh).
pub fn multiplier_error(fine: &Level, coarse: &Level, mat: &Material, qopts: &QuadratureOptions) -> Result<f64> {
    let loc = nested_location(&fine.mesh, &coarse.mesh)?;
    let deg = |lam: &MultiplierSolution, e: usize| lam.location[e].map(|(m, _, _)| lam.space.elements[m].degree).unwrap_or(0);
    let degree: Vec<usize> = (0..fine.mesh.len())
        .map(|e| deg(&fine.lambda, e).max(deg(&coarse.lambda, loc[e].0)))
        .collect();
    norm_v_on_contact(
        &fine.mesh,
        &degree,
        |e, xi| {
            let (c, s0, s1) = loc[e];
            fine.lambda.value(e, xi) - coarse.lambda.value(c, s0 + 0.5 * (xi + 1.0) * (s1 - s0))
        },
        mat,
        qopts,
    )
}

/// `‖u_fine − u‖_P` with the coarse displacement interpolated on the fine mesh.
pub fn displacement_error(fine: &Level, fine_op: &SteklovOperator, coarse: &Level) -> Result<f64> {
    let ut = transfer_displacement(&coarse.mesh, &coarse.dofs, &coarse.u_full, &fine.mesh, &fine.dofs)?;
    let diff = fine.dofs.restrict(&(&fine.u_full - ut));
    energy_norm(&fine_op.p, &diff)
}

/// Records of a sequence with errors against its last level; the last
/// `cutoff` records carry no error.
pub fn sequence_records(levels: &[Level], fine_op: Option<&SteklovOperator>, problem: &Problem) -> Result<Vec<ExperimentRecord>> {
    let mut records: Vec<ExperimentRecord> = levels.iter().map(ExperimentRecord::from_level).collect();
    let (Some(fine), Some(op)) = (levels.last(), fine_op) else {
        return Ok(records);
    };
    let with_error = levels.len().saturating_sub(problem.config.error_cutoff);
    for (k, level) in levels.iter().enumerate().take(with_error) {
        records[k].err_u_p = Some(displacement_error(fine, op, level)?);
        records[k].err_lam_v = Some(multiplier_error(fine, level, &problem.material, &problem.quadrature)?);
    }
    Ok(records)
}

fn write_level_files(problem: &Problem, level: &Level, out: &Path, tag: &str) -> Result<()> {
    level.mesh.write_jsonl(BufWriter::new(File::create(out.join(format!("mesh_{tag}.jsonl")))?))?;
    write_indicators_csv(&level.indicators, BufWriter::new(File::create(out.join(format!("indicators_{tag}.csv")))?))?;
    let law = problem.law.with_eps(level.eps)?;
    write_contact_trace_csv(
        &level.mesh,
        &level.dofs,
        &level.u_full,
        &law,
        problem.config.gap,
        &level.lambda,
        16,
        BufWriter::new(File::create(out.join(format!("trace_{tag}.csv")))?),
    )?;
    if problem.config.verbose {
        write_trace_csv(&level.trace, BufWriter::new(File::create(out.join(format!("solver_{tag}.csv")))?))?;
    }
    Ok(())
}

/// Output of [`run_sequence`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<ExperimentRecord>,
    pub levels: Vec<Level>,
}

/// Runs the sequence of `mode` and writes `results.csv`, `law.csv` and
/// per-level mesh, indicator, contact-trace (and solver-trace) files to `out`.
/// On a solver failure the partial results are written before the error is returned.
pub fn run_sequence(problem: &Problem, mode: Mode, out: Option<&Path>) -> Result<RunOutput> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        write_law_csv(&problem.law, 0.06, 601, BufWriter::new(File::create(dir.join("law.csv"))?))?;
    }
    let c = &problem.config;
    let cfg = AdaptiveConfig {
        theta: c.theta,
        delta: c.delta,
        max_iter: if mode == Mode::Uniform { c.uniform_levels } else { c.adaptive_max_iter },
        max_dof: if mode == Mode::Uniform { usize::MAX } else { c.max_dof },
        mode,
    };
    let result = adaptive_loop(problem, &cfg, |level| match out {
        Some(dir) => write_level_files(problem, level, dir, &format!("{:03}", level.iteration)),
        None => Ok(()),
    });
    let records = sequence_records(&result.levels, result.fine_op.as_ref(), problem)?;
    if let Some(dir) = out {
        write_results_csv(&records, &dir.join("results.csv"))?;
    }
    match result.error {
        Some(e) => Err(e),
        None => Ok(RunOutput { records, levels: result.levels }),
    }
}

/// ε-study on the fixed uniform mesh with `eps_study_n0` elements per side:
/// one record per `ε` of [`RunConfig::eps_values`], errors against `eps_fine`.
pub fn run_eps_study(problem: &Problem, out: Option<&Path>) -> Result<RunOutput> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        write_law_csv(&problem.law, 0.06, 601, BufWriter::new(File::create(dir.join("law.csv"))?))?;
    }
    let disc = Discretization::new(problem, problem.mesh_with(problem.config.eps_study_n0)?)?;
    let fine = disc.solve(problem, &problem.law.with_eps(problem.config.eps_fine)?, usize::MAX, Instant::now())?;
    let mut levels = Vec::new();
    let mut records = Vec::new();
    for (k, eps) in problem.config.eps_values().into_iter().enumerate() {
        let level = disc.solve(problem, &problem.law.with_eps(eps)?, k, Instant::now())?;
        if let Some(dir) = out {
            write_level_files(problem, &level, dir, &format!("{k:03}"))?;
        }
        let mut rec = ExperimentRecord::from_level(&level);
        rec.err_u_p = Some(energy_norm(&disc.op.p, &disc.dofs.restrict(&(&fine.u_full - &level.u_full)))?);
        rec.err_lam_v = Some(multiplier_error(&fine, &level, &problem.material, &problem.quadrature)?);
        rec.wall_s = level.wall;
        records.push(rec);
        levels.push(level);
    }
    if let Some(dir) = out {
        write_results_csv(&records, &dir.join("results.csv"))?;
    }
    Ok(RunOutput { records, levels })
}

/// Dispatches on the mode; `eps_study` selects [`run_eps_study`].
pub fn run(problem: &Problem, mode: Option<Mode>, eps_study: bool, out: Option<&Path>) -> Result<RunOutput> {
    if eps_study {
        run_eps_study(problem, out)
    } else {
        run_sequence(problem, mode.unwrap_or(problem.config.mode), out)
    }
}
