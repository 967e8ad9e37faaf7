//! Experiment driver behind the command line tool: iteration-count tables,
//! ghost-parameter sweeps, throughput curves and a property self-check.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Domain, MeshHierarchy, PatchKind, SquareBox};
use crate::krylov::{fractional_iterations, gmres};
use crate::linalg::{dot, norm};
use crate::multigrid::{MgHierarchy, Outcome, DEFAULT_MAX_IT};
use crate::operator::dense::assemble_dense;
use crate::operator::{GhostScaling, LevelOperator, OperatorParams};
use crate::quadrature::{active_cell_rule, cut_surface_rule};
use crate::smoothers::{SmootherConfig, SmootherKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryKind {
    /// The background square with strong boundary conditions.
    Square,
    #[default]
    Circle,
}

impl GeometryKind {
    pub fn domain(self) -> Domain {
        match self {
            GeometryKind::Square => Domain::FittedSquare,
            GeometryKind::Circle => Domain::unit_circle(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GeometryKind::Square => "square",
            GeometryKind::Circle => "circle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    /// GMRES preconditioned by one V-cycle.
    #[default]
    #[serde(alias = "gmres+mg")]
    Gmres,
    /// The V-cycle as a stationary iteration.
    Vcycle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Problem {
    /// `f = 1`, `g = 0`.
    #[default]
    Constant,
    /// `u = sin(pi x) sin(pi y)` with matching `f` and `g`.
    Manufactured,
}

impl Problem {
    pub fn exact(self, x: [f64; 2]) -> f64 {
        match self {
            Problem::Constant => f64::NAN,
            Problem::Manufactured => manufactured(x),
        }
    }

    pub fn rhs(self, op: &LevelOperator) -> Result<Vec<f64>> {
        use std::f64::consts::PI;
        match self {
            Problem::Constant => op.assemble_rhs(|_| 1.0, |_| 0.0),
            Problem::Manufactured => {
                op.assemble_rhs(|x| 2.0 * PI * PI * manufactured(x), manufactured)
            }
        }
    }
}

fn manufactured(x: [f64; 2]) -> f64 {
    use std::f64::consts::PI;
    (PI * x[0]).sin() * (PI * x[1]).sin()
}

/// One experiment as read from a TOML file; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub geometry: GeometryKind,
    pub degrees: Vec<usize>,
    pub levels: Vec<usize>,
    pub smoother: SmootherKind,
    pub n_c: usize,
    /// Nitsche penalty; `5 p (p + 1)` when absent.
    pub gamma_d: Option<f64>,
    /// Ghost coefficients `gamma_1, gamma_2, ...`; `0.08` each when absent.
    /// Entries beyond the degree are ignored.
    pub gamma_k: Option<Vec<f64>>,
    pub ghost_scaling: GhostScaling,
    pub solver: SolverKind,
    pub tol: f64,
    pub max_it: usize,
    pub problem: Problem,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub chebyshev_degree: usize,
    pub chebyshev_theta: f64,
    pub power_iterations: usize,
    /// Values of the swept ghost coefficient.
    pub sweep_values: Vec<f64>,
    /// Order `k` of the swept coefficient; the degree when absent.
    pub sweep_order: Option<usize>,
    pub warmup: usize,
    pub timed: usize,
    /// Also time complete solves in the throughput study.
    pub solve_throughput: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let smoother = SmootherConfig::default();
        Self {
            geometry: GeometryKind::Circle,
            degrees: vec![1, 2, 3],
            levels: vec![6, 7, 8],
            smoother: smoother.kind,
            n_c: smoother.n_c,
            gamma_d: None,
            gamma_k: None,
            ghost_scaling: GhostScaling::default(),
            solver: SolverKind::Gmres,
            tol: 1e-9,
            max_it: DEFAULT_MAX_IT,
            problem: Problem::Constant,
            threads: None,
            out: None,
            chebyshev_degree: smoother.chebyshev_degree,
            chebyshev_theta: smoother.chebyshev_theta,
            power_iterations: smoother.power_iterations,
            sweep_values: (5..=15).map(|k| k as f64 / 100.0).collect(),
            sweep_order: None,
            warmup: 2,
            timed: 5,
            solve_throughput: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.degrees.is_empty() || self.levels.is_empty() {
            return Err(Error::Config(
                "at least one degree and one level are required".into(),
            ));
        }
        if let Some(p) = self.degrees.iter().find(|p| !(1..=3).contains(*p)) {
            return Err(Error::UnsupportedDegree(*p));
        }
        if let Some(l) = self.levels.iter().find(|l| **l > 14) {
            return Err(Error::Config(format!(
                "level {l} is out of range (at most 14)"
            )));
        }
        if self.n_c == 0 {
            return Err(Error::Config("n_c must be at least 1".into()));
        }
        if !(self.tol > 0.0 && self.tol <= 1.0) {
            return Err(Error::Config(format!(
                "tolerance must lie in (0, 1], got {}",
                self.tol
            )));
        }
        if self.max_it == 0 {
            return Err(Error::Config("max_it must be at least 1".into()));
        }
        if self.timed == 0 {
            return Err(Error::Config("at least one timed run is required".into()));
        }
        if let Some(k) = self.sweep_order {
            if let Some(p) = self.degrees.iter().find(|p| k == 0 || k > **p) {
                return Err(Error::Config(format!("sweep order {k} is not in 1..={p}")));
            }
        }
        for &p in &self.degrees {
            self.operator_params(p)?;
        }
        Ok(())
    }

    pub fn operator_params(&self, p: usize) -> Result<OperatorParams> {
        let mut params = OperatorParams::defaults(p);
        params.ghost_scaling = self.ghost_scaling;
        if let Some(g) = self.gamma_d {
            params.gamma_d = g;
        }
        if let Some(gk) = &self.gamma_k {
            for (dst, src) in params.gamma_ghost.iter_mut().zip(gk) {
                *dst = *src;
            }
        }
        params.validate(p)?;
        Ok(params)
    }

    pub fn smoother_config(&self) -> SmootherConfig {
        SmootherConfig {
            kind: self.smoother,
            n_c: self.n_c,
            chebyshev_degree: self.chebyshev_degree,
            chebyshev_theta: self.chebyshev_theta,
            power_iterations: self.power_iterations,
        }
    }

    fn sorted_levels(&self) -> Vec<usize> {
        let mut levels = self.levels.clone();
        levels.sort_unstable();
        levels.dedup();
        levels
    }
}

/// Outcome of one solve on one level.
#[derive(Debug, Clone)]
pub struct CaseResult {
    pub geometry: GeometryKind,
    pub degree: usize,
    pub level: usize,
    pub dofs: usize,
    pub n_it: usize,
    pub outcome: Outcome,
    pub r0: f64,
    pub r_final: f64,
    pub history: Vec<f64>,
    /// `||u_h - u||` for the manufactured problem.
    pub l2_error: Option<f64>,
    pub setup_time: f64,
    pub solve_time: f64,
}

impl CaseResult {
    pub fn n_frac(&self) -> Option<f64> {
        if self.outcome != Outcome::Converged {
            return None;
        }
        fractional_iterations(self.n_it, self.r_final, self.r0).ok()
    }

    /// Table entry: the count, `---` for divergence, `>n` when `max_it` ran out.
    pub fn count_entry(&self) -> String {
        match self.outcome {
            Outcome::Converged => self.n_it.to_string(),
            Outcome::Diverged => "---".into(),
            Outcome::MaxIterations => format!(">{}", self.n_it),
        }
    }

    pub fn frac_entry(&self) -> String {
        match self.n_frac() {
            Some(f) => format!("{f:.1}"),
            None => match self.outcome {
                Outcome::MaxIterations => format!(">{}", self.n_it),
                _ => "---".into(),
            },
        }
    }

    pub fn csv_header() -> &'static str {
        "geometry,degree,level,dofs,n_it,outcome,n_frac,r0,r_final,l2_error,setup_s,solve_s"
    }

    pub fn csv_row(&self) -> String {
        let outcome = match self.outcome {
            Outcome::Converged => "converged",
            Outcome::Diverged => "diverged",
            Outcome::MaxIterations => "max_it",
        };
        let frac = self.n_frac().map(|f| format!("{f:.4}")).unwrap_or_default();
        let err = self
            .l2_error
            .map(|e| format!("{e:.6e}"))
            .unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{:.6e},{:.6e},{},{:.3},{:.3}",
            self.geometry.name(),
            self.degree,
            self.level,
            self.dofs,
            self.n_it,
            outcome,
            frac,
            self.r0,
            self.r_final,
            err,
            self.setup_time,
            self.solve_time
        )
    }
}

/// Solves on every level of `levels` with one hierarchy built up to the finest.
pub fn run_levels(
    cfg: &ExperimentConfig,
    p: usize,
    params: &OperatorParams,
    levels: &[usize],
) -> Result<Vec<CaseResult>> {
    let finest = *levels
        .iter()
        .max()
        .ok_or_else(|| Error::Config("no levels".into()))?;
    let start = Instant::now();
    let mg = MgHierarchy::build(
        SquareBox::standard(),
        cfg.geometry.domain(),
        p,
        finest,
        params,
        &cfg.smoother_config(),
    )?;
    let setup_time = start.elapsed().as_secs_f64();
    levels
        .iter()
        .map(|&l| solve_level(cfg, &mg, l, setup_time))
        .collect()
}

fn solve_level(
    cfg: &ExperimentConfig,
    mg: &MgHierarchy,
    l: usize,
    setup_time: f64,
) -> Result<CaseResult> {
    let op = &mg.levels[l];
    let b = cfg.problem.rhs(op)?;
    let start = Instant::now();
    let (x, n_it, outcome, history, r0, r_final) = match cfg.solver {
        SolverKind::Gmres => {
            let rep = gmres(op, &mg.preconditioner(l), &b, cfg.tol, cfg.max_it)?;
            let outcome = if rep.converged {
                Outcome::Converged
            } else {
                Outcome::MaxIterations
            };
            (rep.x, rep.n_it, outcome, rep.history, rep.r0, rep.r_final)
        }
        SolverKind::Vcycle => {
            let rep = mg.solve_vcycle_at(l, &b, cfg.tol, cfg.max_it);
            let r0 = rep.history[0];
            let rf = *rep.history.last().unwrap();
            (rep.x, rep.n_it, rep.outcome, rep.history, r0, rf)
        }
    };
    let solve_time = start.elapsed().as_secs_f64();
    let l2_error = match cfg.problem {
        Problem::Manufactured => Some(op.l2_error(&x, |pt| cfg.problem.exact(pt))?),
        Problem::Constant => None,
    };
    Ok(CaseResult {
        geometry: cfg.geometry,
        degree: op.degree(),
        level: l,
        dofs: op.n_dofs(),
        n_it,
        outcome,
        r0,
        r_final,
        history,
        l2_error,
        setup_time,
        solve_time,
    })
}

/// A level-by-variant table rendered as CSV and Markdown.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    pub fn entry(&self, level: usize, column: usize) -> Option<&str> {
        self.rows
            .iter()
            .find(|(l, _)| *l == level)
            .map(|(_, r)| r[column].as_str())
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("L,{}\n", self.columns.join(","));
        for (l, row) in &self.rows {
            let _ = writeln!(s, "{l},{}", row.join(","));
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!("{}\n\n| L | {} |\n", self.title, self.columns.join(" | "));
        let _ = writeln!(s, "|---|{}", "---|".repeat(self.columns.len()));
        for (l, row) in &self.rows {
            let _ = writeln!(s, "| {l} | {} |", row.join(" | "));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TableRun {
    pub table: Table,
    pub cases: Vec<CaseResult>,
}

impl TableRun {
    pub fn cases_csv(&self) -> String {
        let mut s = format!("{}\n", CaseResult::csv_header());
        for c in &self.cases {
            s.push_str(&c.csv_row());
            s.push('\n');
        }
        s
    }

    /// Writes `<stem>.csv`, `<stem>.md` and `<stem>_cases.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.table.to_csv())?;
        std::fs::write(dir.join(format!("{stem}.md")), self.table.to_markdown())?;
        std::fs::write(dir.join(format!("{stem}_cases.csv")), self.cases_csv())?;
        Ok(())
    }
}

fn variant_label(cfg: &ExperimentConfig) -> String {
    let smoother = match cfg.smoother {
        SmootherKind::Mvs => format!("MVS, n_c={}", cfg.n_c),
        SmootherKind::Chebyshev => format!("Chebyshev({})", cfg.chebyshev_degree),
    };
    let solver = match cfg.solver {
        SolverKind::Gmres => "GMRES + V-cycle",
        SolverKind::Vcycle => "V-cycle",
    };
    format!(
        "{} ({smoother}), {solver}, tol {:e}",
        cfg.geometry.name(),
        cfg.tol
    )
}

/// Iteration counts: one row per level, one column per degree.
pub fn run_table(cfg: &ExperimentConfig) -> Result<TableRun> {
    cfg.validate()?;
    let levels = cfg.sorted_levels();
    let mut cases = Vec::new();
    let mut rows: Vec<(usize, Vec<String>)> = levels.iter().map(|&l| (l, Vec::new())).collect();
    for &p in &cfg.degrees {
        let res = run_levels(cfg, p, &cfg.operator_params(p)?, &levels)?;
        for (row, c) in rows.iter_mut().zip(&res) {
            row.1.push(c.count_entry());
        }
        cases.extend(res);
    }
    let columns = cfg.degrees.iter().map(|p| format!("Q{p}")).collect();
    Ok(TableRun {
        table: Table {
            title: variant_label(cfg),
            columns,
            rows,
        },
        cases,
    })
}

/// Fractional counts for each value of one ghost coefficient; the first degree is used.
pub fn run_ghost_sweep(cfg: &ExperimentConfig) -> Result<TableRun> {
    cfg.validate()?;
    if cfg.sweep_values.is_empty() {
        return Err(Error::Config("sweep_values is empty".into()));
    }
    let p = cfg.degrees[0];
    let k = cfg.sweep_order.unwrap_or(p);
    let levels = cfg.sorted_levels();
    let mut cases = Vec::new();
    let mut rows: Vec<(usize, Vec<String>)> = levels.iter().map(|&l| (l, Vec::new())).collect();
    for &g in &cfg.sweep_values {
        let mut params = cfg.operator_params(p)?;
        params.gamma_ghost[k - 1] = g;
        params.validate(p)?;
        let res = run_levels(cfg, p, &params, &levels)?;
        for (row, c) in rows.iter_mut().zip(&res) {
            row.1.push(c.frac_entry());
        }
        cases.extend(res);
    }
    let columns = cfg.sweep_values.iter().map(|g| format!("{g:.2}")).collect();
    let title = format!("Q{p}, gamma_{k} sweep, n_frac; {}", variant_label(cfg));
    Ok(TableRun {
        table: Table {
            title,
            columns,
            rows,
        },
        cases,
    })
}

#[derive(Debug, Clone)]
pub struct ThroughputRow {
    pub geometry: GeometryKind,
    pub degree: usize,
    pub level: usize,
    pub dofs: usize,
    pub apply_dofs_per_s: f64,
    pub solve_dofs_per_s: Option<f64>,
}

pub fn throughput_csv(rows: &[ThroughputRow]) -> String {
    let mut s = String::from("geometry,degree,level,dofs,apply_dofs_per_s,solve_dofs_per_s\n");
    for r in rows {
        let solve = r
            .solve_dofs_per_s
            .map(|v| format!("{v:.4e}"))
            .unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{:.4e},{}",
            r.geometry.name(),
            r.degree,
            r.level,
            r.dofs,
            r.apply_dofs_per_s,
            solve
        );
    }
    s
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median timings for both geometries; setup is excluded.
pub fn run_throughput(cfg: &ExperimentConfig) -> Result<Vec<ThroughputRow>> {
    cfg.validate()?;
    let levels = cfg.sorted_levels();
    let finest = *levels.last().unwrap();
    let mut rows = Vec::new();
    for geometry in [GeometryKind::Square, GeometryKind::Circle] {
        let gcfg = ExperimentConfig {
            geometry,
            ..cfg.clone()
        };
        for &p in &cfg.degrees {
            let params = gcfg.operator_params(p)?;
            let mh = MeshHierarchy::new(SquareBox::standard(), finest)?;
            let mg = if cfg.solve_throughput {
                Some(MgHierarchy::build(
                    SquareBox::standard(),
                    geometry.domain(),
                    p,
                    finest,
                    &params,
                    &gcfg.smoother_config(),
                )?)
            } else {
                None
            };
            for &l in &levels {
                let owned;
                let op = match &mg {
                    Some(mg) => &mg.levels[l],
                    None => {
                        owned = LevelOperator::build(
                            mh.level(l),
                            geometry.domain(),
                            p,
                            params.clone(),
                        )?;
                        &owned
                    }
                };
                let n = op.n_dofs();
                let x: Vec<f64> = (0..n).map(|i| ((i % 97) as f64 / 97.0) - 0.5).collect();
                let mut y = vec![0.0; n];
                for _ in 0..cfg.warmup {
                    op.apply(&x, &mut y)?;
                }
                let times: Vec<f64> = (0..cfg.timed)
                    .map(|_| {
                        let t = Instant::now();
                        op.apply(&x, &mut y).map(|_| t.elapsed().as_secs_f64())
                    })
                    .collect::<Result<_>>()?;
                let apply = n as f64 / median(times).max(f64::MIN_POSITIVE);
                let solve = match &mg {
                    Some(mg) => {
                        let b = gcfg.problem.rhs(op)?;
                        let times: Vec<f64> = (0..cfg.timed)
                            .map(|_| {
                                let t = Instant::now();
                                gmres(op, &mg.preconditioner(l), &b, cfg.tol, cfg.max_it)
                                    .map(|_| t.elapsed().as_secs_f64())
                            })
                            .collect::<Result<_>>()?;
                        Some(n as f64 / median(times).max(f64::MIN_POSITIVE))
                    }
                    None => None,
                };
                rows.push(ThroughputRow {
                    geometry,
                    degree: p,
                    level: l,
                    dofs: n,
                    apply_dofs_per_s: apply,
                    solve_dofs_per_s: solve,
                });
            }
        }
    }
    Ok(rows)
}

/// Circle-over-square apply throughput ratio per level for one degree.
pub fn throughput_ratios(rows: &[ThroughputRow], p: usize) -> Vec<(usize, f64)> {
    rows.iter()
        .filter(|r| r.geometry == GeometryKind::Circle && r.degree == p)
        .filter_map(|c| {
            rows.iter()
                .find(|s| s.geometry == GeometryKind::Square && s.degree == p && s.level == c.level)
                .map(|s| (c.level, c.apply_dofs_per_s / s.apply_dofs_per_s))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, result: Result<(bool, String)>) -> Self {
        let name = name.into();
        match result {
            Ok((passed, detail)) => Self {
                name,
                passed,
                detail,
            },
            Err(e) => Self {
                name,
                passed: false,
                detail: e.to_string(),
            },
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

/// Property self-check on small levels (the smallest configured level, capped at 3).
pub fn verify(cfg: &ExperimentConfig) -> Vec<Check> {
    let level = cfg.levels.iter().copied().min().unwrap_or(3).clamp(1, 3);
    let domain = cfg.geometry.domain();
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for &p in &cfg.degrees {
        let build = |l: usize| -> Result<LevelOperator> {
            let mesh = MeshHierarchy::new(SquareBox::standard(), l)?.level(l);
            LevelOperator::build(mesh, domain, p, cfg.operator_params(p)?)
        };
        checks.push(Check::new(
            format!("oracle equivalence Q{p} L={level}"),
            (|| {
                let op = build(level)?;
                let a = assemble_dense(&op.geometry, &op.dofs, &op.params)?;
                let mut worst = 0.0f64;
                for _ in 0..5 {
                    let x: Vec<f64> = (0..op.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let y = op.apply_vec(&x)?;
                    let ay = &a * nalgebra::DVector::from_vec(x);
                    let err = y
                        .iter()
                        .zip(ay.iter())
                        .fold(0.0f64, |m, (u, v)| m.max((u - v).abs()));
                    worst = worst.max(err / a.amax().max(1.0));
                }
                Ok((
                    worst <= 1e-12,
                    format!("max relative deviation {worst:.2e}"),
                ))
            })(),
        ));
        checks.push(Check::new(
            format!("coercivity Q{p} L=2"),
            (|| {
                let op = build(2)?;
                let a = assemble_dense(&op.geometry, &op.dofs, &op.params)?;
                let min = SymmetricEigen::new(a).eigenvalues.min();
                Ok((min > 0.0, format!("smallest eigenvalue {min:.3e}")))
            })(),
        ));
        checks.push(Check::new(
            format!("ghost consistency Q{p} L={level}"),
            (|| {
                let op = build(level)?;
                let x = op.dofs.interpolate(|q| {
                    let (s, t) = (q[0] + 0.3, q[1] - 0.2);
                    (s + 2.0 * t).powi(p as i32) - s.powi(p as i32) * 0.5 + t
                });
                let mut y = vec![0.0; op.n_dofs()];
                op.ghost_penalty_apply(&x, &mut y)?;
                let m = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                Ok((m <= 1e-12, format!("max |g(I u, phi_i)| = {m:.2e}")))
            })(),
        ));
        checks.push(Check::new(
            format!("transfer adjointness Q{p} L={level}"),
            (|| {
                let mh = MeshHierarchy::new(SquareBox::standard(), level)?;
                let params = cfg.operator_params(p)?;
                let coarse = LevelOperator::build(mh.level(level - 1), domain, p, params.clone())?;
                let fine = LevelOperator::build(mh.level(level), domain, p, params)?;
                let t = crate::transfer::TransferPair::new(
                    &coarse.geometry,
                    &coarse.dofs,
                    &fine.geometry,
                    &fine.dofs,
                )?;
                let mut worst = 0.0f64;
                for _ in 0..20 {
                    let xc: Vec<f64> = (0..t.n_coarse())
                        .map(|_| rng.gen_range(-1.0..1.0))
                        .collect();
                    let yf: Vec<f64> = (0..t.n_fine()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let mut pxc = vec![0.0; t.n_fine()];
                    let mut ryf = vec![0.0; t.n_coarse()];
                    t.prolongate(&xc, &mut pxc)?;
                    t.restrict(&yf, &mut ryf)?;
                    let dev = (dot(&pxc, &yf) - dot(&xc, &ryf)).abs() / (norm(&pxc) * norm(&yf));
                    worst = worst.max(dev);
                }
                Ok((
                    worst <= 1e-13,
                    format!("max relative deviation {worst:.2e}"),
                ))
            })(),
        ));
        checks.push(Check::new(
            format!("patch coverage Q{p} L={level}"),
            (|| {
                let op = build(level)?;
                let mut covered = vec![false; op.n_dofs()];
                for patch in &op.geometry.patches {
                    for &d in &patch.interior_dofs {
                        covered[d] = true;
                    }
                }
                let missing = (0..op.n_dofs())
                    .filter(|&d| !covered[d] && !op.dofs.constrained[d])
                    .count();
                let cut = op
                    .geometry
                    .patches
                    .iter()
                    .filter(|pt| pt.kind == PatchKind::Cut)
                    .count();
                Ok((
                    missing == 0,
                    format!("{missing} free DoFs outside all patches, {cut} cut patches"),
                ))
            })(),
        ));
    }
    if let Domain::Circle(circle) = domain {
        checks.push(Check::new(
            "quadrature identities L=4",
            (|| {
                let mesh = MeshHierarchy::new(SquareBox::standard(), 4)?.level(4);
                let kinds = crate::geometry::classify_cells(&mesh, &domain);
                let (mut area, mut arc) = (0.0, 0.0);
                for (cell, &kind) in kinds.iter().enumerate() {
                    if !kind.is_active() {
                        continue;
                    }
                    area += active_cell_rule(&mesh, cell, kind, Some(&circle), 4)?.weight_sum();
                    if kind == crate::geometry::CellKind::Cut {
                        let (i, j) = mesh.cell_ij(cell);
                        arc += cut_surface_rule(&mesh.cell_bounds(i, j), &circle, 4).weight_sum();
                    }
                }
                let (ea, el) = (
                    (area - std::f64::consts::PI).abs(),
                    (arc - 2.0 * std::f64::consts::PI).abs(),
                );
                Ok((
                    ea <= 1e-7 && el <= 1e-9,
                    format!("|area - pi| = {ea:.2e}, |length - 2 pi| = {el:.2e}"),
                ))
            })(),
        ));
    }
    checks
}

/// Observed orders `log2(e_{l-1} / e_l)` between consecutive levels.
pub fn observed_rates(errors: &[(usize, f64)]) -> Vec<f64> {
    errors
        .windows(2)
        .map(|w| (w[0].1 / w[1].1).log2() / (w[1].0 - w[0].0) as f64)
        .collect()
}

/// Least-squares slope of `-log2 e` against the level.
pub fn fitted_rate(errors: &[(usize, f64)]) -> f64 {
    let n = errors.len() as f64;
    let (sx, sy) = errors
        .iter()
        .fold((0.0, 0.0), |(a, b), (l, e)| (a + *l as f64, b - e.log2()));
    let (mx, my) = (sx / n, sy / n);
    let (num, den) = errors.iter().fold((0.0, 0.0), |(a, b), (l, e)| {
        let dx = *l as f64 - mx;
        (a + dx * (-e.log2() - my), b + dx * dx)
    });
    num / den
}
