//! The `rascopf` command line.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use miqp::{linearize_objective, ModelError};
use rascopf::cascade::run_cascade;
use rascopf::formulations::{build, FormulationKind, RasScheme};
use rascopf::network::{parse_case, prepare_study_case, write_case_string, Contingency, LineId, Network};

use crate::compare::compare_formulations;
use crate::config::ExperimentConfig;
use crate::critical::find_critical_contingencies;
use crate::error::ExperimentError;
use crate::report::{sensitivity_csv, sensitivity_summary, table1_csv, table2_csv, write_report};
use crate::sensitivity::sensitivity_study;
use crate::{design_schemes, load_case, solve_dispatch};

/// Exit code for malformed command lines.
pub const USAGE_EXIT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "rascopf", version, about = "RAS-aware dispatch and cascading-failure experiments")]
pub struct Cli {
    /// TOML experiment configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Case file, overriding the configuration.
    #[arg(long, global = true)]
    pub case: Option<PathBuf>,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Piecewise-linear segments per quadratic cost (0 keeps it quadratic).
    #[arg(long, global = true)]
    pub segments: Option<usize>,
    #[arg(long, global = true)]
    pub gap: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Opf,
    Scopf,
    RasScopf,
    RasAwareScopf,
}

impl Kind {
    fn formulation(self) -> FormulationKind {
        match self {
            Kind::Opf => FormulationKind::Opf,
            Kind::Scopf => FormulationKind::Scopf,
            Kind::RasScopf => FormulationKind::RasScopf,
            Kind::RasAwareScopf => FormulationKind::RasAwareScopf,
        }
    }

    fn slug(self) -> &'static str {
        match self {
            Kind::Opf => "opf",
            Kind::Scopf => "scopf",
            Kind::RasScopf => "ras-scopf",
            Kind::RasAwareScopf => "ras-aware-scopf",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Apply the case-study derating to a raw case and write it out.
    PrepareCase {
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve one formulation and write the dispatch.
    Solve {
        #[arg(long, value_enum, default_value = "ras-scopf")]
        formulation: Kind,
    },
    /// Scan single-line outages for overloads under the OPF dispatch.
    CriticalContingencies,
    /// Compare OPF, RAS-SCOPF and SCOPF, with cascade replay.
    Compare,
    /// Simulate one cascade under a dispatch.
    Cascade {
        #[arg(long, value_enum)]
        dispatch: Kind,
        /// Initiating line outage; repeat for multi-line outages.
        #[arg(long, required = true)]
        outage: Vec<LineId>,
    },
    /// Random-load study with the designed scheme fixed.
    Sensitivity {
        #[arg(long)]
        lo: Option<f64>,
        #[arg(long)]
        hi: Option<f64>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a formulation to an MPS file.
    ExportMps {
        #[arg(long, value_enum)]
        formulation: Kind,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr, summaries to stdout.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE_EXIT } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn settings(cli: &Cli) -> Result<ExperimentConfig, ExperimentError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(c) = &cli.case {
        cfg.case = c.clone();
    }
    if let Some(d) = &cli.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(s) = cli.segments {
        cfg.solver.segments = s;
    }
    if let Some(g) = cli.gap {
        if !(g >= 0.0) {
            return Err(ExperimentError::Config(format!("gap must be non-negative, got {g}")));
        }
        cfg.solver.relative_gap = g;
    }
    Ok(cfg)
}

/// Runs a parsed command and returns what it prints on success.
pub fn run(cli: &Cli) -> Result<String, ExperimentError> {
    let mut cfg = settings(cli)?;
    let mut out = String::new();
    match &cli.command {
        Command::PrepareCase { out: path } => {
            let net = prepare_study_case(&parse_case(&cfg.case)?)?;
            write_file(path, &write_case_string(&net))?;
            let _ = writeln!(out, "wrote {}", path.display());
        }
        Command::Solve { formulation } => {
            let net = load_case(&cfg.case, cfg.prepare)?;
            let fcfg = cfg.formulation_config(&net)?;
            let scheme = scheme_for(*formulation, &net, &cfg)?;
            let sol = solve_dispatch(formulation.formulation(), &net, &fcfg, scheme.as_ref(), &cfg)?;
            let mut csv = String::from("generator,bus,mw\n");
            for (g, p) in net.generators.iter().zip(&sol.pre.gen_mw) {
                let _ = writeln!(csv, "{},{},{:.6}", g.id, g.bus, p);
            }
            let path = write_report(&cfg.output_dir, &format!("dispatch_{}.csv", formulation.slug()), &csv)?;
            let _ = writeln!(
                out,
                "{}: objective {:.2} generation cost {:.2} shed penalty {:.2} trip penalty {:.2} nodes {} gap {:.2e}",
                sol.kind, sol.objective, sol.generation_cost, sol.shed_penalty, sol.trip_penalty, sol.nodes, sol.gap
            );
            for (j, s) in sol.schemes.iter().enumerate() {
                let _ = writeln!(out, "scheme {} trip set {:?}", j + 1, s.trip_set);
            }
            let _ = writeln!(out, "wrote {}", path.display());
        }
        Command::CriticalContingencies => {
            let net = load_case(&cfg.case, cfg.prepare)?;
            let fcfg = cfg.formulation_config(&net)?;
            let opf = solve_dispatch(FormulationKind::Opf, &net, &fcfg, None, &cfg)?;
            let rows = find_critical_contingencies(&net, &opf.pre.gen_mw, cfg.cascade.overload_tol)?;
            let csv = table1_csv(&rows);
            let path = write_report(&cfg.output_dir, "table1.csv", &csv)?;
            out.push_str(&csv);
            let _ = writeln!(out, "wrote {}", path.display());
        }
        Command::Compare => {
            let net = load_case(&cfg.case, cfg.prepare)?;
            let report = compare_formulations(&net, &cfg)?;
            write_report(&cfg.output_dir, "table1.csv", &table1_csv(&report.critical))?;
            let csv = table2_csv(&report);
            let path = write_report(&cfg.output_dir, "table2.csv", &csv)?;
            for row in &report.rows {
                let slug = match row.kind {
                    FormulationKind::Opf => "opf",
                    FormulationKind::Scopf => "scopf",
                    FormulationKind::RasScopf => "ras-scopf",
                    FormulationKind::RasAwareScopf => "ras-aware-scopf",
                };
                for c in &row.cascades {
                    if let Ok(r) = &c.result {
                        write_report(&cfg.output_dir, &format!("trace_{slug}_{}.csv", c.outage), &r.to_csv())?;
                    }
                }
            }
            out.push_str(&csv);
            let _ = writeln!(out, "wrote {}", path.display());
        }
        Command::Cascade { dispatch, outage } => {
            let net = load_case(&cfg.case, cfg.prepare)?;
            let fcfg = cfg.formulation_config(&net)?;
            let init = Contingency::new(outage.iter().copied())?;
            init.validate(&net)?;
            let scheme = scheme_for(*dispatch, &net, &cfg)?;
            let sol = solve_dispatch(dispatch.formulation(), &net, &fcfg, scheme.as_ref(), &cfg)?;
            let schemes: Vec<RasScheme> = match dispatch {
                Kind::RasScopf => sol.schemes.clone(),
                Kind::RasAwareScopf => scheme.into_iter().collect(),
                _ => Vec::new(),
            };
            let r = run_cascade(&net, &sol.pre.gen_mw, &schemes, &init, &cfg.cascade_options())?;
            let name = format!("trace_{}_{}.csv", dispatch.slug(), init);
            let path = write_report(&cfg.output_dir, &name, &r.to_csv())?;
            out.push_str(&r.to_log());
            let _ = writeln!(out, "wrote {}", path.display());
        }
        Command::Sensitivity { lo, hi, count, seed } => {
            let s = &mut cfg.sensitivity;
            s.lo = lo.unwrap_or(s.lo);
            s.hi = hi.unwrap_or(s.hi);
            s.count = count.unwrap_or(s.count);
            s.seed = seed.unwrap_or(s.seed);
            let spec = cfg.sensitivity_spec();
            spec.validate()?;
            let net = load_case(&cfg.case, cfg.prepare)?;
            let fcfg = cfg.formulation_config(&net)?;
            let scheme = design_schemes(&net, &fcfg, &cfg)?
                .into_iter()
                .next()
                .ok_or_else(|| ExperimentError::Config("sensitivity study needs a scheme".into()))?;
            let report = sensitivity_study(&net, &scheme, &spec, &cfg)?;
            let path = write_report(&cfg.output_dir, "sensitivity.csv", &sensitivity_csv(&report))?;
            let _ = writeln!(out, "scheme trip set {:?}", scheme.trip_set);
            out.push_str(&sensitivity_summary(&report));
            let _ = writeln!(out, "wrote {}", path.display());
        }
        Command::ExportMps { formulation, out: dest } => {
            let net = load_case(&cfg.case, cfg.prepare)?;
            let fcfg = cfg.formulation_config(&net)?;
            let scheme = scheme_for(*formulation, &net, &cfg)?;
            let f = build(formulation.formulation(), &net, &fcfg, scheme.as_ref())?;
            let model = match cfg.solver.segments {
                0 => f.model,
                n => linearize_objective(&f.model, n).map_err(model_error)?,
            };
            let path = match dest {
                Some(p) => p.clone(),
                None => cfg.output_dir.join(format!("{}.mps", formulation.slug())),
            };
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir.display(), e))?;
            }
            miqp::write_mps(&model, &path)?;
            let _ = writeln!(out, "wrote {}", path.display());
        }
    }
    Ok(out)
}

fn model_error(e: ModelError) -> ExperimentError {
    ExperimentError::Formulation(e.into())
}

fn scheme_for(kind: Kind, net: &Network, cfg: &ExperimentConfig) -> Result<Option<RasScheme>, ExperimentError> {
    if kind != Kind::RasAwareScopf {
        return Ok(None);
    }
    let fcfg = cfg.formulation_config(net)?;
    Ok(design_schemes(net, &fcfg, cfg)?.into_iter().next())
}

fn write_file(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir.display(), e))?;
    }
    std::fs::write(path, contents).map_err(|e| ExperimentError::io(path.display(), e))
}
