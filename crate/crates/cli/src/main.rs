use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use heatbench_core::harness::cross_check;
use heatbench_core::{
    assemble_block_system, condition_number, cost_model, discretization_error_bound, estimate_heat_ae,
    estimate_heat_mc, fit_scaling, plan_discretization, plan_discretization_midpoint, quadrature_error_bound,
    quantum_integrate, read_rows, return_probability, run_experiment, simulate_postselection, solve_cg, solve_fft,
    solve_timestepping, write_rows, Alignment, CgOptions, CostMethod, DiscretizationPlan, ExperimentConfig,
    FitMetric, InitialConfig, McMode, McOptions, ProblemConfig, ProblemFile, ProblemSpec, QIntegrateOptions, Region,
    RngStream, RuleKind, SizeCaps,
};

#[derive(Parser)]
#[command(name = "heatbench", version, about = "Heat-equation solver benchmarks and cost models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment sweep and write one CSV row per (method, eps, rep).
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the config's `out`, then stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the eps-scaling exponent of one method in a results CSV.
    Fit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        method: String,
        /// wall, count or value; defaults to wall time for classical methods and value otherwise.
        #[arg(long)]
        metric: Option<String>,
    },
    /// Show the grid chosen for a problem.
    Plan {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, value_enum, default_value = "simpson")]
        rule: Rule,
    },
    /// Solve on the planned grid and write the field at one time index.
    Solve {
        #[arg(long, value_enum)]
        method: SolveMethod,
        #[command(flatten)]
        problem: ProblemArgs,
        /// Defaults to the final step.
        #[arg(long)]
        time_index: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random-walk estimate of the heat in a region at time T.
    Mc {
        #[arg(long, value_enum)]
        mode: Mode,
        #[command(flatten)]
        problem: ProblemArgs,
        /// Fractions of the box, e.g. `0:0.5` or `0:0.5,0.25:1`.
        #[arg(long, default_value = "0:0.5")]
        region: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Spectral quantities of the time-stepping operator.
    Spectral {
        #[arg(long, value_enum)]
        what: SpectralQuery,
        #[arg(long, default_value_t = 1)]
        d: usize,
        #[arg(long, default_value_t = 16)]
        n: usize,
        /// Time steps (condition).
        #[arg(long, default_value_t = 16)]
        m: usize,
        /// Step pairs (return-prob, l2-bounds).
        #[arg(long, default_value_t = 16)]
        tau: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classical simulation of the quantum estimators.
    Quantum {
        #[arg(long, value_enum)]
        sim: QuantumSim,
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, default_value = "0:0.5")]
        region: String,
        /// Defaults to the final step.
        #[arg(long)]
        time_index: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a method's cost model over an eps sweep.
    Cost {
        /// Method tag, e.g. `fft` or `q_fast_rw_ae`.
        #[arg(long)]
        method: String,
        #[command(flatten)]
        problem: ProblemArgs,
        /// `eps=<max>:<min>:<points>` (geometric) or `eps=<a>,<b>,...`.
        #[arg(long)]
        sweep: String,
        /// Trajectory norm ratio for `ode_berry`.
        #[arg(long)]
        g: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ProblemArgs {
    /// TOML file with `[problem]` and `[initial]` tables.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long = "length")]
    l: Option<f64>,
    #[arg(long = "time")]
    t: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    /// `uniform`, `cosine:<k1>,<k2>,...` or `point:<j1>,<j2>,...`; a single cosine mode is used in every dimension.
    #[arg(long)]
    ic: Option<String>,
}

struct Problem {
    spec: ProblemSpec,
    initial: InitialConfig,
}

impl ProblemArgs {
    fn resolve(&self) -> Result<Problem> {
        let (mut p, mut initial, mut eps) = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let file = ProblemFile::from_toml(&text)?;
                let eps = file.default_eps();
                (file.problem, file.initial, eps)
            }
            None => (
                ProblemConfig {
                    d: 1,
                    l: 1.0,
                    t: 1.0,
                    alpha: 1.0,
                    zeta: 3.0,
                },
                InitialConfig::Cosine { modes: vec![1] },
                None,
            ),
        };
        p.d = self.d.unwrap_or(p.d);
        p.l = self.l.unwrap_or(p.l);
        p.t = self.t.unwrap_or(p.t);
        p.alpha = self.alpha.unwrap_or(p.alpha);
        p.zeta = self.zeta.unwrap_or(p.zeta);
        eps = self.eps.or(eps);
        if let Some(ic) = &self.ic {
            initial = parse_ic(ic)?;
        }
        if let InitialConfig::Cosine { modes } = &initial {
            if modes.len() == 1 && p.d > 1 {
                initial = InitialConfig::Cosine {
                    modes: vec![modes.first().copied().unwrap_or(1); p.d],
                };
            }
        }
        let eps = eps.ok_or_else(|| anyhow!("no eps given; pass --eps or set it in the config"))?;
        Ok(Problem {
            spec: ProblemSpec::new(p.d, p.l, p.t, p.alpha, p.zeta, eps)?,
            initial,
        })
    }
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|x| x.trim().parse::<T>().map_err(|e| anyhow!("bad value {x:?}: {e}")))
        .collect()
}

fn parse_ic(s: &str) -> Result<InitialConfig> {
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    Ok(match kind {
        "uniform" => InitialConfig::Uniform,
        "cosine" => InitialConfig::Cosine { modes: parse_list(rest)? },
        "point" => InitialConfig::Point { origin: parse_list(rest)? },
        other => bail!("unknown initial condition {other:?}"),
    })
}

fn parse_region(s: &str) -> Result<Vec<(f64, f64)>> {
    s.split(',')
        .map(|pair| {
            let (a, b) = pair.split_once(':').ok_or_else(|| anyhow!("region pair {pair:?} needs a colon"))?;
            Ok((a.trim().parse()?, b.trim().parse()?))
        })
        .collect()
}

fn parse_sweep(s: &str) -> Result<Vec<f64>> {
    let body = s.strip_prefix("eps=").unwrap_or(s);
    let parts: Vec<&str> = body.split(':').collect();
    match parts.as_slice() {
        [max, min, points] => {
            let (max, min, points): (f64, f64, usize) = (max.parse()?, min.parse()?, points.parse()?);
            if points < 2 {
                return Ok(vec![max]);
            }
            let ratio = (min / max).ln() / (points - 1) as f64;
            Ok((0..points).map(|k| max * (ratio * k as f64).exp()).collect())
        }
        [list] => parse_list(list),
        _ => bail!("sweep must be eps=<max>:<min>:<points> or eps=<a>,<b>,..."),
    }
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

#[derive(Clone, Copy, ValueEnum)]
enum Rule {
    Simpson,
    Midpoint,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolveMethod {
    Step,
    Cg,
    Fft,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Naive,
    Fast,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpectralQuery {
    Condition,
    ReturnProb,
    L2Bounds,
}

#[derive(Clone, Copy, ValueEnum)]
enum QuantumSim {
    Postselect,
    AeHeat,
    QIntegrate,
}

fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ExperimentConfig::from_toml(&text)?)
}

fn final_step(plan: &DiscretizationPlan, requested: Option<usize>) -> usize {
    requested.unwrap_or(plan.m())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let caps = SizeCaps::from_env();
    match cli.command {
        Command::Run { config, out } => {
            let cfg = read_config(&config)?;
            let rows = run_experiment(&cfg)?;
            let target = out.or(cfg.out.clone());
            write_rows(&rows, output(&target)?)?;
            let grid_methods = ["step", "cg", "fft"];
            if let Some(worst) = cross_check(&rows, &grid_methods)
                .into_iter()
                .map(|(_, _, spread)| spread)
                .filter(|s| s.is_finite())
                .reduce(f64::max)
            {
                eprintln!("grid solvers agree to {worst:.3e}");
            }
        }
        Command::Fit { input, method, metric } => {
            let rows = read_rows(File::open(&input).with_context(|| format!("opening {}", input.display()))?)?;
            let metric = match metric {
                Some(m) => m.parse::<FitMetric>()?,
                None => FitMetric::default_for(&method),
            };
            let fit = fit_scaling(&rows, &method, metric)?;
            println!("method,slope,std_error,points");
            println!("{},{},{},{}", fit.method, fit.slope, fit.std_error, fit.points);
        }
        Command::Plan { problem, rule } => {
            let p = problem.resolve()?;
            let plan = match rule {
                Rule::Simpson => plan_discretization(&p.spec)?,
                Rule::Midpoint => plan_discretization_midpoint(&p.spec)?,
            };
            let kind = match rule {
                Rule::Simpson => RuleKind::Simpson,
                Rule::Midpoint => RuleKind::Midpoint,
            };
            println!("d,n,m,dt,dx,ratio,discretization_bound,quadrature_bound");
            println!(
                "{},{},{},{},{},{},{},{}",
                plan.d(),
                plan.n(),
                plan.m(),
                plan.dt(),
                plan.dx(),
                plan.ratio(),
                discretization_error_bound(&plan, &p.spec),
                quadrature_error_bound(kind, &plan, &p.spec)
            );
        }
        Command::Solve {
            method,
            problem,
            time_index,
            out,
        } => {
            let p = problem.resolve()?;
            let plan = plan_discretization(&p.spec)?;
            let u0 = p.initial.to_condition().grid_field(&plan)?;
            let i = final_step(&plan, time_index);
            let field = match method {
                SolveMethod::Step => solve_timestepping(&plan, &u0, i)?,
                SolveMethod::Fft => solve_fft(&plan, &u0, i)?,
                SolveMethod::Cg => {
                    if i == 0 {
                        u0
                    } else {
                        let sol = solve_cg(&assemble_block_system(&plan, &u0, &caps)?, &CgOptions::default())?;
                        eprintln!("cg: {} iterations, residual {:.3e}", sol.iterations, sol.final_residual());
                        sol.fields
                            .into_iter()
                            .nth(i - 1)
                            .ok_or_else(|| anyhow!("time index {i} beyond m = {}", plan.m()))?
                    }
                }
            };
            field.write_csv(output(&out)?, plan.l())?;
        }
        Command::Mc {
            mode,
            problem,
            region,
            seed,
            threads,
            out,
        } => {
            let p = problem.resolve()?;
            let plan = plan_discretization_midpoint(&p.spec)?;
            let region = Region::from_fractions(&plan, Alignment::HalfShifted, &parse_region(&region)?)?;
            let mode = match mode {
                Mode::Naive => McMode::Naive,
                Mode::Fast => McMode::Fast,
            };
            let opts = McOptions { samples: None, threads };
            let start = Instant::now();
            let est = estimate_heat_mc(
                &p.spec,
                &p.initial.to_condition(),
                &region,
                p.spec.t,
                mode,
                &opts,
                &mut RngStream::new(seed),
            )?;
            let wall = start.elapsed().as_nanos();
            let mut w = output(&out)?;
            writeln!(w, "mode,d,eps,estimate,samples,wall_ns,seed")?;
            writeln!(w, "{mode},{},{},{},{},{wall},{seed}", p.spec.d, p.spec.eps, est.value, est.samples)?;
        }
        Command::Spectral { what, d, n, m, tau, out } => {
            let mut w = output(&out)?;
            match what {
                SpectralQuery::Condition => {
                    let plan = DiscretizationPlan::saturated(d, n, m, 1.0, 1.0)?;
                    let r = condition_number(&plan, &caps, true)?;
                    writeln!(w, "d,n,m,sigma_max,sigma_min,kappa,modes,sampled")?;
                    writeln!(
                        w,
                        "{d},{n},{m},{},{},{},{},{}",
                        r.sigma_max, r.sigma_min, r.kappa, r.modes, r.sampled
                    )?;
                }
                SpectralQuery::ReturnProb => {
                    let (lo, hi) = heatbench_core::l2_bounds(d, n, tau)?;
                    let p = return_probability(d, n, tau, &caps)?;
                    writeln!(w, "d,n,tau,return_probability,lower,upper")?;
                    writeln!(w, "{d},{n},{tau},{p},{lo},{hi}")?;
                }
                SpectralQuery::L2Bounds => {
                    let (lo, hi) = heatbench_core::l2_bounds(d, n, tau)?;
                    writeln!(w, "d,n,tau,lower,upper")?;
                    writeln!(w, "{d},{n},{tau},{lo},{hi}")?;
                }
            }
        }
        Command::Quantum {
            sim,
            problem,
            region,
            time_index,
            seed,
            out,
        } => {
            let p = problem.resolve()?;
            let ic = p.initial.to_condition();
            let fractions = parse_region(&region)?;
            let mut rng = RngStream::new(seed);
            let mut w = output(&out)?;
            writeln!(w, "method,d,eps,cost_or_estimate,queries,seed")?;
            let eps = p.spec.eps;
            let d = p.spec.d;
            match sim {
                QuantumSim::Postselect => {
                    let plan = plan_discretization(&p.spec)?;
                    let u0 = ic.grid_field(&plan)?;
                    let i = final_step(&plan, time_index);
                    let (_, prob) = simulate_postselection(&plan, &u0, i, &caps)?;
                    // Expected repetitions until the postselection succeeds.
                    writeln!(w, "postselect,{d},{eps},{prob},{},{seed}", (1.0 / prob).ceil())?;
                }
                QuantumSim::AeHeat => {
                    let plan = plan_discretization_midpoint(&p.spec)?;
                    let region = Region::from_fractions(&plan, Alignment::HalfShifted, &fractions)?;
                    let est = estimate_heat_ae(&p.spec, &ic, &region, p.spec.t, McMode::Fast, eps, &mut rng)?;
                    writeln!(w, "ae_heat,{d},{eps},{},{},{seed}", est.value, est.queries)?;
                }
                QuantumSim::QIntegrate => {
                    let plan = plan_discretization(&p.spec)?;
                    let region = Region::from_fractions(&plan, Alignment::GridCorners, &fractions)?;
                    let u0 = ic.grid_field(&plan)?;
                    let i = final_step(&plan, time_index);
                    let r = quantum_integrate(&plan, &u0, i, &region, eps, &QIntegrateOptions::default(), &caps, &mut rng)?;
                    writeln!(w, "q_integrate,{d},{eps},{},{},{seed}", r.value, r.k)?;
                }
            }
        }
        Command::Cost {
            method,
            problem,
            sweep,
            g,
            out,
        } => {
            let method: CostMethod = method.parse()?;
            let eps_values = parse_sweep(&sweep)?;
            let mut base = problem;
            base.eps = Some(eps_values.first().copied().ok_or_else(|| anyhow!("empty sweep"))?);
            let p = base.resolve()?;
            let mut w = output(&out)?;
            writeln!(w, "method,d,eps,cost_or_estimate,queries,seed")?;
            for eps in eps_values {
                let report = cost_model(method, &p.spec.with_eps(eps)?, g)?;
                if let Some(warning) = &report.warning {
                    eprintln!("warning: {method} at eps = {eps:e}: {warning}");
                }
                writeln!(w, "{method},{},{eps},{},,", p.spec.d, report.value())?;
            }
        }
    }
    Ok(())
}
