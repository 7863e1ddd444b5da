use std::path::{Path, PathBuf};
use std::process::ExitCode;

use agfem::config::{ConfigError, ProblemConfig};
use agfem::discretization::Discretization;
use agfem::driver::{convergence_sweep, initial_mesh, run_simulation, to_csv, DriverError};
use agfem::geometry::CellClass;
use agfem::history::HistoryFlavor;
use agfem::vtk::{write_vtk, VtkFields};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "agfem", version, about = "Adaptive unfitted elasto-plastic solver on quadtrees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run load stepping with adaptation; writes reports and snapshots.
    Solve {
        config: PathBuf,
        /// Overrides `output.directory`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Uniform-refinement study against the benchmark solution.
    Converge {
        config: PathBuf,
        /// Number of meshes in the sweep.
        #[arg(long)]
        levels: u8,
        /// Level of the coarsest mesh (2 is 4x4).
        #[arg(long, default_value_t = 2)]
        start_level: u8,
        /// Overrides `discretization.history_flavor`.
        #[arg(long, value_enum)]
        flavor: Option<Flavor>,
        /// CSV destination; defaults to `<output>/convergence.csv`.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write the initial mesh with cell classes and aggregates, without solving.
    Inspect {
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Flavor {
    Standard,
    Aggregated,
}

enum Failure {
    Config(String),
    Solver(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Solver(_) => 3,
            Failure::Io(_) => 1,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<DriverError> for Failure {
    fn from(e: DriverError) -> Self {
        match e {
            DriverError::Config(_) => Failure::Config(e.to_string()),
            DriverError::Vtk(_) => Failure::Io(e.to_string()),
            _ => Failure::Solver(e.to_string()),
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Failure::Io(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn csv_text<T: serde::Serialize>(rows: &[T]) -> Result<String, Failure> {
    to_csv(rows).map_err(|e| Failure::Io(e.to_string()))
}

fn load(path: &Path, output: Option<PathBuf>) -> Result<ProblemConfig, Failure> {
    let mut cfg = ProblemConfig::load(path)?;
    if let Some(dir) = output {
        cfg.output.directory = dir;
    }
    Ok(cfg)
}

fn solve(cfg: &ProblemConfig) -> Result<(), Failure> {
    let dir = &cfg.output.directory;
    let out = run_simulation(&cfg.run_settings())?;
    write_file(&dir.join("reports.csv"), &csv_text(&out.reports)?)?;
    write_file(&dir.join("adaptations.csv"), &csv_text(&out.adaptations)?)?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    let last = out.reports.last().expect("at least one load step");
    println!(
        "{} load steps, {} adaptation cycles; final mesh {} cells ({} active), {} free dofs, eta_g = {:.4e}",
        out.reports.len(),
        out.adaptations.len(),
        last.total_cells,
        last.active_cells,
        last.free_dofs,
        last.eta_g
    );
    if let Some(cyl) = cfg.cylinder() {
        let problem = cfg.problem();
        let e = agfem::benchmarks::cylinder_errors(&out.disc, &problem, cyl, &out.u, &out.history, cfg.load.total)
            .map_err(|e| Failure::Solver(e.to_string()))?;
        println!("relative errors: s_rr = {:.4e}, s_tt = {:.4e}, energy = {:.4e}", e.s_rr, e.s_tt, e.energy);
    }
    println!("reports written to {}", dir.display());
    Ok(())
}

fn converge(
    cfg: &mut ProblemConfig,
    levels: u8,
    start: u8,
    flavor: Option<Flavor>,
    csv: Option<PathBuf>,
) -> Result<(), Failure> {
    let Some(cyl) = cfg.cylinder().cloned() else {
        return Err(Failure::Config("converge needs a [benchmark] section with a reference solution".into()));
    };
    if levels == 0 {
        return Err(Failure::Config("--levels must be at least 1".into()));
    }
    let top = start
        .checked_add(levels - 1)
        .filter(|t| *t <= 20)
        .ok_or_else(|| Failure::Config("requested levels exceed the supported depth".into()))?;
    match flavor {
        Some(Flavor::Standard) => cfg.discretization.history_flavor = HistoryFlavor::Standard,
        Some(Flavor::Aggregated) => cfg.discretization.history_flavor = HistoryFlavor::Aggregated,
        None => {}
    }
    let records = convergence_sweep(&cfg.run_settings(), &cyl, start..=top)?;
    let text = csv_text(&records)?;
    let path = csv.unwrap_or_else(|| cfg.output.directory.join("convergence.csv"));
    write_file(&path, &text)?;
    print!("{text}");
    Ok(())
}

fn inspect(cfg: &ProblemConfig) -> Result<(), Failure> {
    let problem = cfg.problem();
    let mesh = initial_mesh(&problem, cfg.amr.initial_uniform_level, cfg.amr.max_level)
        .map_err(|e| Failure::Config(e.to_string()))?;
    let disc = Discretization::build(mesh, &problem, cfg.discretization).map_err(|e| Failure::Solver(e.to_string()))?;
    let path = cfg.output.directory.join("inspect.vtu");
    std::fs::create_dir_all(&cfg.output.directory)
        .map_err(|e| Failure::Io(format!("{}: {e}", cfg.output.directory.display())))?;
    write_vtk(&path, &disc, VtkFields::default()).map_err(|e| Failure::Io(e.to_string()))?;
    let cut = disc.dofs.cell_classes.iter().filter(|c| **c == CellClass::Cut).count();
    let aggregates = disc.aggregates.as_ref().map_or(0, |a| a.members_of.values().filter(|m| m.len() > 1).count());
    println!(
        "cells {}, active {} ({:.1}%), cut {}, aggregates with cut cells {}, free dofs {}",
        disc.mesh.len(),
        disc.active_cells(),
        100.0 * disc.active_fraction(),
        cut,
        aggregates,
        disc.n_free()
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Solve { config, output } => solve(&load(&config, output)?),
        Command::Converge { config, levels, start_level, flavor, csv, output } => {
            converge(&mut load(&config, output)?, levels, start_level, flavor, csv)
        }
        Command::Inspect { config, output } => inspect(&load(&config, output)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Config(m) | Failure::Solver(m) | Failure::Io(m)) = &f;
            eprintln!("error: {m}");
            ExitCode::from(f.code())
        }
    }
}
