use clap::{Parser, Subcommand};

use coutile_cli::{
    dump_config, execute_run, execute_sweep, parse_config, parse_fracs, summarize, SimArgs,
};

/// Deterministic peer-to-peer simulator for co-utile, circuit-free
/// multiparty computation.
#[derive(Parser)]
#[command(name = "coutile", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write fig1/fig2/fig3 and reputation CSVs.
    Run(SimArgs),
    /// Run the baseline-comparison grid over malicious fractions and write
    /// fig4.csv.
    Sweep {
        #[command(flatten)]
        sim: SimArgs,
        /// Comma-separated malicious fractions to sweep.
        #[arg(long, default_value = "0.1,0.2,0.3,0.4")]
        fracs: String,
    },
    /// Print the effective configuration as key=value text.
    DumpConfig(SimArgs),
    /// Run one simulation with channel trace logging enabled.
    Trace(SimArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(&args, false),
        Command::Trace(args) => run(&args, true),
        Command::Sweep { sim, fracs } => match parse_fracs(&fracs) {
            Ok(fracs) => sweep(&sim, &fracs),
            Err(problem) => {
                eprintln!("error: --fracs {problem}");
                std::process::exit(2);
            }
        },
        Command::DumpConfig(args) => parse_config(&args).map(|config| {
            print!("{}", dump_config(&config));
        }),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}

fn run(args: &SimArgs, trace: bool) -> Result<(), coutile_cli::CliError> {
    let config = parse_config(args)?;
    let metrics = execute_run(&config, trace)?;
    println!("{}", summarize(&metrics));
    println!("wrote {}", config.output_dir.display());
    Ok(())
}

fn sweep(args: &SimArgs, fracs: &[f64]) -> Result<(), coutile_cli::CliError> {
    let config = parse_config(args)?;
    let rows = execute_sweep(&config, fracs)?;
    for row in &rows {
        println!(
            "frac {} mode {} class {}: rate {:.4}",
            row.malicious_frac, row.mode, row.client_class, row.rate
        );
    }
    println!("wrote {}", config.output_dir.join("fig4.csv").display());
    Ok(())
}
