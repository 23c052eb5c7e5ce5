//! `kweights`: exact, quadrature and Monte Carlo evaluation of the three
//! graph-weight families, plus series operators on jet fixture files.
//!
//! Exit codes: 0 success, 1 statistical validation failure (|z| > 5),
//! 2 input or argument error.

mod operand;
mod render;
mod series_cmd;

use clap::{Parser, Subcommand, ValueEnum};
use kweights::exact::{render_decimal, render_rational, weight, Family, WeightQuery};
use kweights::integrate::{full_mc, rational_to_f64, reduced_gamma_mc, reduced_upsilon_quad};

const EXIT_VALIDATION: i32 = 1;
const EXIT_INPUT: i32 = 2;

#[derive(Parser)]
#[command(name = "kweights", version, about = "Kontsevich graph weights: exact values, quadrature, Monte Carlo and hbar-series operators", max_term_width = 100)]
struct Cli {
    /// Output format
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Human)]
    format: OutputFormat,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Human,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Gamma,
    Upsilon,
    Lambda,
}

impl FamilyArg {
    fn family(self) -> Family {
        match self {
            FamilyArg::Gamma => Family::Gamma,
            FamilyArg::Upsilon => Family::Upsilon,
            FamilyArg::Lambda => Family::Lambda,
        }
    }
    fn name(self) -> &'static str {
        match self {
            FamilyArg::Gamma => "gamma",
            FamilyArg::Upsilon => "upsilon",
            FamilyArg::Lambda => "lambda",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum McMode {
    Full,
    Reduced,
}

#[derive(Subcommand)]
enum Command {
    /// Exact weight of one graph
    Weight {
        #[arg(value_enum)]
        family: FamilyArg,
        n: u32,
    },
    /// Exact weights for n = 0..=max_n
    Table {
        #[arg(value_enum)]
        family: FamilyArg,
        max_n: u32,
    },
    /// Monte Carlo estimate over the gauge-fixed configuration space
    Mc {
        #[arg(value_enum)]
        family: FamilyArg,
        n: u32,
        #[arg(long, value_enum, default_value_t = McMode::Full)]
        mode: McMode,
        #[arg(long)]
        samples: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        chunks: u64,
    },
    /// Gauss-Legendre quadrature of the reduced boundary-edge integral
    Quad {
        #[arg(value_enum)]
        family: FamilyArg,
        n: u32,
        #[arg(long)]
        points: usize,
    },
    /// Series operators on a jet fixture file
    Series(series_cmd::SeriesArgs),
}

fn main() {
    let cli = Cli::parse();
    let code = run(&cli);
    std::process::exit(code);
}

fn fail_input(msg: &str) -> i32 {
    eprintln!("error: {msg}");
    EXIT_INPUT
}

fn run(cli: &Cli) -> i32 {
    match &cli.command {
        Command::Weight { family, n } => cmd_weight(*family, *n, cli.format),
        Command::Table { family, max_n } => cmd_table(*family, *max_n, cli.format),
        Command::Mc { family, n, mode, samples, seed, chunks } => {
            cmd_mc(*family, *n, *mode, *samples, *seed, *chunks, cli.format)
        }
        Command::Quad { family, n, points } => cmd_quad(*family, *n, *points, cli.format),
        Command::Series(args) => series_cmd::run(args, cli.format == OutputFormat::Json),
    }
}

fn cmd_weight(family: FamilyArg, n: u32, format: OutputFormat) -> i32 {
    let res = weight(WeightQuery { family: family.family(), n });
    match format {
        OutputFormat::Human => {
            println!("family: {}", family.name());
            println!("n: {n}");
            println!("exact: {}", render_rational(&res.value));
            println!("decimal: {}", render_decimal(&res.value));
        }
        OutputFormat::Json => {
            println!(
                "{}",
                serde_json::json!({
                    "family": family.name(),
                    "n": n,
                    "exact": render_rational(&res.value),
                    "decimal": render_decimal(&res.value),
                })
            );
        }
    }
    0
}

fn cmd_table(family: FamilyArg, max_n: u32, format: OutputFormat) -> i32 {
    let values: Vec<_> = (0..=max_n)
        .map(|n| weight(WeightQuery { family: family.family(), n }).value)
        .collect();
    match format {
        OutputFormat::Human => {
            println!("# {} family, n = 0..={max_n}", family.name());
            for (n, v) in values.iter().enumerate() {
                println!("{n}\t{}\t{}", render_rational(v), render_decimal(v));
            }
        }
        OutputFormat::Json => {
            let rows: Vec<_> = values
                .iter()
                .enumerate()
                .map(|(n, v)| {
                    serde_json::json!({
                        "n": n,
                        "exact": render_rational(v),
                        "decimal": render_decimal(v),
                    })
                })
                .collect();
            println!(
                "{}",
                serde_json::json!({ "family": family.name(), "rows": rows })
            );
        }
    }
    0
}

fn cmd_mc(
    family: FamilyArg,
    n: u32,
    mode: McMode,
    samples: u64,
    seed: u64,
    chunks: u64,
    format: OutputFormat,
) -> i32 {
    if samples == 0 || chunks == 0 {
        return fail_input("samples and chunks must be positive");
    }
    let query = WeightQuery { family: family.family(), n };
    let est = match (mode, family.family()) {
        (McMode::Reduced, Family::Gamma) => reduced_gamma_mc(n, samples, seed),
        (McMode::Reduced, _) => {
            return fail_input("reduced mode is only available for the gamma family");
        }
        (McMode::Full, _) => full_mc(query, samples, seed, chunks),
    };
    let exact = rational_to_f64(&weight(query).value);
    let z = est.z_score(exact);
    match format {
        OutputFormat::Human => {
            println!("family: {}  n: {n}  samples: {samples}  seed: {seed}", family.name());
            println!("estimate: {:.9}", est.mean);
            println!("std_error: {:.3e}", est.std_error);
            println!("exact: {:.9}", exact);
            println!("z: {:.3}", z);
        }
        OutputFormat::Json => {
            println!(
                "{}",
                serde_json::json!({
                    "family": family.name(),
                    "n": n,
                    "samples": samples,
                    "seed": seed,
                    "chunks": chunks,
                    "estimate": est.mean,
                    "std_error": est.std_error,
                    "exact": exact,
                    "z": z,
                })
            );
        }
    }
    if z.abs() > 5.0 {
        eprintln!("validation failure: |z| = {:.3} exceeds 5", z.abs());
        EXIT_VALIDATION
    } else {
        0
    }
}

fn cmd_quad(family: FamilyArg, n: u32, points: usize, format: OutputFormat) -> i32 {
    if !matches!(family, FamilyArg::Upsilon) {
        return fail_input("quadrature is only available for the upsilon family");
    }
    if points < 2 {
        return fail_input("points must be at least 2");
    }
    let value = reduced_upsilon_quad(n, points);
    let exact = rational_to_f64(&kweights::exact::weight_upsilon(n));
    let error = (value - exact).abs();
    match format {
        OutputFormat::Human => {
            println!("family: upsilon  n: {n}  points: {points}");
            println!("value: {value:.15}");
            println!("exact: {exact:.15}");
            println!("abs_error: {error:.3e}");
        }
        OutputFormat::Json => {
            println!(
                "{}",
                serde_json::json!({
                    "family": "upsilon",
                    "n": n,
                    "points": points,
                    "value": value,
                    "exact": exact,
                    "abs_error": error,
                })
            );
        }
    }
    0
}
