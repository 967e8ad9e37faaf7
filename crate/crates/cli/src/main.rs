use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use cutmg::harness::{
    run_ghost_sweep, run_levels, run_table, run_throughput, throughput_csv, verify, CaseResult,
    ExperimentConfig, GeometryKind, SolverKind,
};
use cutmg::multigrid::write_history;
use cutmg::smoothers::SmootherKind;

#[derive(Parser)]
#[command(
    name = "cutmg",
    version,
    about = "Multigrid experiments for CutFEM Poisson problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem on the finest listed level and export the residual history.
    Solve(Common),
    /// Iteration counts, one row per level and one column per degree.
    Table(Common),
    /// Fractional iteration counts over a range of one ghost coefficient.
    GhostSweep(Common),
    /// Operator and solver throughput on the square and the circle.
    Throughput(Common),
    /// Run the property self-check; exits nonzero on failure.
    Verify(Common),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML experiment file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = ["square", "circle"])]
    geometry: Option<String>,
    /// Degrees, e.g. `3` or `1,2,3`.
    #[arg(long, value_delimiter = ',')]
    degree: Option<Vec<usize>>,
    /// Levels, e.g. `6..8` or `6,7,8`.
    #[arg(long)]
    levels: Option<String>,
    #[arg(long, value_parser = ["mvs", "chebyshev"])]
    smoother: Option<String>,
    #[arg(long)]
    nc: Option<usize>,
    #[arg(long)]
    gamma_d: Option<f64>,
    /// Ghost coefficients, e.g. `0.08,0.08,0.08`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    gamma_k: Option<Vec<f64>>,
    #[arg(long, value_parser = ["gmres", "gmres+mg", "vcycle"])]
    solver: Option<String>,
    #[arg(long)]
    tol: Option<f64>,
    /// Worker threads; falls back to CUTMG_THREADS, then to all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_levels(s: &str) -> Result<Vec<usize>> {
    if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().context("level range start")?;
        let b: usize = b
            .trim_start_matches('=')
            .trim()
            .parse()
            .context("level range end")?;
        if a > b {
            bail!("empty level range {s}");
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .map(|t| t.trim().parse().with_context(|| format!("bad level `{t}`")))
        .collect()
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)
                .with_context(|| format!("reading {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(g) = &self.geometry {
            cfg.geometry = if g == "square" {
                GeometryKind::Square
            } else {
                GeometryKind::Circle
            };
        }
        if let Some(d) = &self.degree {
            cfg.degrees = d.clone();
        }
        if let Some(l) = &self.levels {
            cfg.levels = parse_levels(l)?;
        }
        if let Some(s) = &self.smoother {
            cfg.smoother = if s == "mvs" {
                SmootherKind::Mvs
            } else {
                SmootherKind::Chebyshev
            };
        }
        if let Some(n) = self.nc {
            cfg.n_c = n;
        }
        if let Some(g) = self.gamma_d {
            cfg.gamma_d = Some(g);
        }
        if let Some(g) = &self.gamma_k {
            cfg.gamma_k = Some(g.clone());
        }
        if let Some(s) = &self.solver {
            cfg.solver = if s == "vcycle" {
                SolverKind::Vcycle
            } else {
                SolverKind::Gmres
            };
        }
        if let Some(t) = self.tol {
            cfg.tol = t;
        }
        if let Some(t) = self.threads {
            cfg.threads = Some(t);
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        Ok(cfg)
    }
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from("results"))
}

fn setup_threads(cfg: &ExperimentConfig) -> Result<()> {
    let env = std::env::var("CUTMG_THREADS").ok();
    let n = match (cfg.threads, env) {
        (Some(n), _) => Some(n),
        (None, Some(v)) => Some(v.parse().with_context(|| format!("CUTMG_THREADS={v}"))?),
        (None, None) => None,
    };
    if let Some(n) = n {
        cutmg::parallel::configure_threads(n)?;
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let (name, common) = match &cli.command {
        Command::Solve(c) => ("solve", c),
        Command::Table(c) => ("table", c),
        Command::GhostSweep(c) => ("ghost_sweep", c),
        Command::Throughput(c) => ("throughput", c),
        Command::Verify(c) => ("verify", c),
    };
    let cfg = common.config()?;
    setup_threads(&cfg)?;
    let dir = out_dir(&cfg);
    match cli.command {
        Command::Solve(_) => {
            cfg.validate()?;
            let p = cfg.degrees[0];
            let level = *cfg.levels.iter().max().unwrap();
            let res = run_levels(&cfg, p, &cfg.operator_params(p)?, &[level])?;
            let case = &res[0];
            println!("{}", CaseResult::csv_header());
            println!("{}", case.csv_row());
            std::fs::create_dir_all(&dir)?;
            let path = dir.join(format!(
                "solve_{}_q{p}_l{level}_history.csv",
                cfg.geometry.name()
            ));
            write_history(&case.history, std::fs::File::create(&path)?)?;
            eprintln!("residual history written to {}", path.display());
        }
        Command::Table(_) | Command::GhostSweep(_) => {
            let run = if name == "table" {
                run_table(&cfg)?
            } else {
                run_ghost_sweep(&cfg)?
            };
            print!("{}", run.table.to_markdown());
            let stem = format!("{name}_{}", cfg.geometry.name());
            run.write(&dir, &stem)?;
            eprintln!("tables written to {}/{stem}.{{csv,md}}", dir.display());
        }
        Command::Throughput(_) => {
            let rows = run_throughput(&cfg)?;
            let csv = throughput_csv(&rows);
            print!("{csv}");
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("throughput.csv"), csv)?;
        }
        Command::Verify(_) => {
            let checks = verify(&cfg);
            for c in &checks {
                println!("{}", c.line());
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            println!("{} checks, {failed} failed", checks.len());
            if failed > 0 {
                std::process::exit(1);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_syntax() {
        assert_eq!(parse_levels("6..8").unwrap(), vec![6, 7, 8]);
        assert_eq!(parse_levels("6..=7").unwrap(), vec![6, 7]);
        assert_eq!(parse_levels("3, 5").unwrap(), vec![3, 5]);
        assert!(parse_levels("8..6").is_err());
        assert!(parse_levels("x").is_err());
    }

    #[test]
    fn flags_override_the_file() {
        let cli = Cli::parse_from([
            "cutmg",
            "table",
            "--geometry",
            "square",
            "--degree",
            "1,3",
            "--levels",
            "2..3",
            "--nc",
            "3",
            "--gamma-k",
            "0.1",
            "--solver",
            "vcycle",
            "--tol",
            "1e-6",
        ]);
        let Command::Table(c) = cli.command else {
            panic!()
        };
        let cfg = c.config().unwrap();
        assert_eq!(cfg.geometry, GeometryKind::Square);
        assert_eq!(cfg.degrees, vec![1, 3]);
        assert_eq!(cfg.levels, vec![2, 3]);
        assert_eq!(cfg.n_c, 3);
        assert_eq!(cfg.solver, SolverKind::Vcycle);
        assert_eq!(cfg.tol, 1e-6);
        assert_eq!(
            cfg.operator_params(3).unwrap().gamma_ghost,
            vec![0.1, 0.08, 0.08]
        );
    }
}
