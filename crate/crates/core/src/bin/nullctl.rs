use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nullctl::diffusion::{simulate_reflected, DiffusionSpec};
use nullctl::engine::{run, Policy, StreamSeed, Trace};
use nullctl::examples;
use nullctl::harness::{
    analyze, check_representation, estimate_null_probability, load_config, make_policy, overload_text, overloaded_sweep,
    summary_text, write_overload, write_summary, Analysis, ConfigFile, HarnessError, Manifest, OverloadScenario,
    ScenarioSection,
};
use nullctl::model::NetworkSpec;
use nullctl::num::{parse_decimal, Q};

#[derive(Parser)]
#[command(name = "nullctl", version, about = "Null controllability of many-server parallel server systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Example {
    #[value(name = "2x3")]
    TwoByThree,
    #[value(name = "outward")]
    Outward,
    #[value(name = "inward")]
    Inward,
    Reversed,
}

#[derive(Args)]
struct NetworkArgs {
    /// TOML file with a [network] and optional [scenario] section.
    #[arg(long, conflicts_with = "example")]
    config: Option<PathBuf>,
    /// Built-in network.
    #[arg(long, value_enum)]
    example: Option<Example>,
    /// Initial diffusion-scale state, comma separated (e.g. "-1,-1").
    #[arg(long, allow_hyphen_values = true)]
    x: Option<String>,
}

#[derive(Args, Default)]
struct PolicyArgs {
    /// preemptive, nonpreemptive or greedy.
    #[arg(long)]
    policy: Option<String>,
    /// Cycle to push along (1-based); defaults to the most negative e.m.
    #[arg(long = "cycle-choice")]
    cycle_choice: Option<usize>,
    /// Class whose queue drives the preemptive shift (1-based).
    #[arg(long)]
    i0: Option<usize>,
    /// Station whose idleness drives the preemptive shift (1-based).
    #[arg(long)]
    j0: Option<usize>,
    #[arg(long)]
    kn_exponent: Option<f64>,
    /// Guard radius override for the preemptive policy.
    #[arg(long)]
    a0: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Fluid solution, cycles and the null-controllability verdict.
    Analyze {
        #[command(flatten)]
        net: NetworkArgs,
        #[arg(long)]
        json: bool,
    },
    /// One trace, with the representation identity checked at every event.
    Simulate {
        #[command(flatten)]
        net: NetworkArgs,
        #[command(flatten)]
        policy: PolicyArgs,
        #[arg(long, default_value_t = 100)]
        n: u64,
        #[arg(long, default_value_t = 5.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        replication: u64,
        /// Trace CSV destination.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Keep every k-th trace row.
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long, default_value_t = 1e-8)]
        tolerance: f64,
    },
    /// Null-probability ladder over n.
    Sweep {
        #[command(flatten)]
        net: NetworkArgs,
        #[command(flatten)]
        policy: PolicyArgs,
        /// Comma-separated n values.
        #[arg(long)]
        n: Option<String>,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        replications: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        /// Output directory for CSVs, summary and manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Growth of the total queue when arrival rates exceed the design point.
    Overload {
        #[command(flatten)]
        net: NetworkArgs,
        #[command(flatten)]
        policy: PolicyArgs,
        /// Multiplier applied to every arrival rate.
        #[arg(long, default_value = "1.1")]
        factor: String,
        #[arg(long, default_value_t = 400)]
        n: u64,
        #[arg(long, default_value = "5,10,20")]
        times: String,
        #[arg(long, default_value_t = 100)]
        replications: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Constrained limit diffusion by the projection scheme.
    Diffusion {
        #[command(flatten)]
        net: NetworkArgs,
        #[arg(long = "cycle-choice")]
        cycle_choice: Option<usize>,
        #[arg(long, default_value_t = 1)]
        j0: usize,
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 10.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1)]
        paths: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// CSV of the first path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, HarnessError> {
    s.split(',')
        .map(|v| v.trim().parse().map_err(|_| HarnessError::Config(format!("bad list entry {v:?}"))))
        .collect()
}

fn load(net: &NetworkArgs) -> Result<(NetworkSpec, ScenarioSection), HarnessError> {
    let (mut spec, section) = match (&net.config, net.example) {
        (Some(path), _) => {
            let cfg: ConfigFile = load_config(path)?;
            (cfg.spec()?, cfg.scenario)
        }
        (None, example) => {
            let spec = match example.unwrap_or(Example::Inward) {
                Example::TwoByThree => examples::two_by_three(),
                Example::Outward => examples::outward_cycle(),
                Example::Inward => examples::inward_cycle(),
                Example::Reversed => examples::reversed_cycle(),
            };
            (spec, ScenarioSection::default())
        }
    };
    if let Some(x) = &net.x {
        let x: Vec<Q> = x
            .split(',')
            .map(|v| parse_decimal(v).map_err(|e| HarnessError::Config(e.to_string())))
            .collect::<Result<_, _>>()?;
        if x.len() != spec.class_count() {
            return Err(HarnessError::Config(format!("--x needs {} entries", spec.class_count())));
        }
        spec = spec.with_x0_hat(x);
    }
    Ok((spec, section))
}

fn merge(mut s: ScenarioSection, p: &PolicyArgs) -> ScenarioSection {
    macro_rules! take {
        ($($field:ident <- $arg:expr),*) => { $(if $arg.is_some() { s.$field = $arg.clone(); })* };
    }
    take!(policy <- p.policy, cycle <- p.cycle_choice, i0 <- p.i0, j0 <- p.j0, kn_exponent <- p.kn_exponent,
          a0 <- p.a0, kappa <- p.kappa, delta <- p.delta, gamma <- p.gamma);
    s
}

fn write_csv_file(path: &Path, f: impl FnOnce(BufWriter<File>) -> csv::Result<()>) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    f(BufWriter::new(File::create(path)?))?;
    Ok(())
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Analyze { net, json } => {
            let (spec, _) = load(&net)?;
            let report = analyze(&spec)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report).map_err(|e| HarnessError::Config(e.to_string()))?);
            } else {
                print!("{}", report.to_text());
            }
        }
        Command::Simulate { net, policy, n, horizon, seed, replication, trace, stride, tolerance } => {
            let (spec, section) = load(&net)?;
            let choice = merge(section, &policy).policy_choice()?;
            let analysis = Analysis::new(spec)?;
            let inst = analysis.instance(n)?;
            let policy = make_policy(&analysis, &inst, &choice)?;
            let seed = StreamSeed::new(seed, replication);
            let mut record = Trace::with_seed(seed);
            let outcome = run(&inst, policy, horizon, seed, &mut record)
                .map_err(|source| HarnessError::Engine { n, replication, source })?;
            if let Some(path) = &trace {
                write_csv_file(path, |w| record.write_csv(w, stride.max(1)))?;
            }
            let report = check_representation(&record, &inst, &analysis.spec, &analysis.fluid, &analysis.cycles, tolerance)?;
            let stats = outcome.policy.stats();
            println!("policy {}  n {}  horizon {}  events {}", choice.name(), n, horizon, outcome.events);
            println!("final X {:?}  Y {:?}  Z {:?}", outcome.state.occ.x, outcome.state.occ.y, outcome.state.occ.z);
            println!("representation residual {:.3e} over {} records", report.max_residual, report.records);
            println!(
                "fallbacks {} (guard {}, negative {})  full-station events {}",
                stats.fallbacks(),
                stats.guard_fallbacks,
                stats.negative_fallbacks,
                stats.full_station_events()
            );
        }
        Command::Sweep { net, policy, n, epsilon, horizon, replications, seed, threads, out } => {
            let (spec, section) = load(&net)?;
            let mut section = merge(section, &policy);
            if let Some(n) = n {
                section.n = Some(parse_list(&n)?);
            }
            macro_rules! take {
                ($($field:ident),*) => { $(if $field.is_some() { section.$field = $field; })* };
            }
            take!(epsilon, horizon, replications, seed, threads);
            let scenario = section.scenario()?;
            let analysis = Analysis::new(spec)?;
            let summary = estimate_null_probability(&analysis, &scenario)?;
            print!("{}", summary_text(&summary));
            let out = out.or_else(|| section.output.as_ref().map(PathBuf::from));
            if let Some(dir) = out {
                write_summary(&dir, &summary, &Manifest::new("sweep", scenario.seed, &scenario))?;
                println!("wrote {}", dir.display());
            }
        }
        Command::Overload { net, policy, factor, n, times, replications, seed, out } => {
            let (spec, section) = load(&net)?;
            let choice = merge(section, &policy).policy_choice()?;
            let options = match choice {
                nullctl::harness::PolicyChoice::Preemptive(o) => o,
                _ => return Err(HarnessError::Config("overload runs the preemptive policy".into())),
            };
            let factor = parse_decimal(&factor).map_err(|e| HarnessError::Config(e.to_string()))?;
            let analysis = Analysis::new(spec)?;
            let scenario = OverloadScenario {
                lambda_prime: analysis.spec.lambda.iter().map(|l| l * &factor).collect(),
                n,
                times: parse_list(&times)?,
                replications,
                seed,
                options,
            };
            let stats = overloaded_sweep(&analysis, &scenario)?;
            print!("{}", overload_text(&stats));
            if let Some(dir) = out {
                write_overload(&dir, &stats, &Manifest::new("overload", seed, &scenario))?;
                println!("wrote {}", dir.display());
            }
        }
        Command::Diffusion { net, cycle_choice, j0, alpha, dt, horizon, paths, seed, out } => {
            let (spec, _) = load(&net)?;
            let analysis = Analysis::new(spec)?;
            let cycle = match cycle_choice {
                Some(0) => return Err(HarnessError::Config("cycle is 1-based".into())),
                Some(c) => c - 1,
                None => analysis.cycles.chosen.ok_or_else(|| HarnessError::Config(analysis.cycles.certificate()))?,
            };
            if cycle >= analysis.cycles.cycles.len() || j0 == 0 {
                return Err(HarnessError::Config("cycle or station index out of range".into()));
            }
            let x = analysis.spec.x0_hat.iter().map(nullctl::num::to_f64).collect();
            let dspec = DiffusionSpec::from_network(&analysis.spec, &analysis.fluid, &analysis.cycles, cycle, j0 - 1, alpha, x)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mut excess, mut violations, mut pushes) = (f64::NEG_INFINITY, 0, Vec::new());
            for p in 0..paths {
                let path = simulate_reflected(&dspec, dt, horizon, &mut rng)?;
                excess = excess.max(path.max_excess());
                violations += path.complementarity_violations(1e-9) + usize::from(!path.eta_nondecreasing());
                pushes.push(path.total_push());
                if p == 0 {
                    if let Some(file) = &out {
                        write_csv_file(file, |w| path.write_csv(w))?;
                    }
                }
            }
            println!("paths {paths}  dt {dt}  horizon {horizon}  alpha {alpha}");
            println!("max e.X + alpha over grid: {excess:.3e}");
            println!("constraint violations: {violations}");
            println!("median push eta(T): {:.4}", nullctl::harness::median(&pushes));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            // Distinguish a broken balance identity from ordinary refusals.
            if e.is_invariant_violation() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
