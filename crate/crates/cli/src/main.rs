use std::io::{self, Read};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mipsim_core::cli::{self, selftest::DEFAULT_TRIALS, EXIT_INPUT};

#[derive(Parser)]
#[command(name = "mipsim", version, about = "Mobile IPv4 registration simulator and dissector")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and check its expectations
    Run {
        file: PathBuf,
        /// Write the trace here instead of standard output
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Decode a hex-encoded registration message or IPv4 packet (`-` reads stdin)
    Dissect {
        input: String,
        /// Keyfile used to verify authentication extensions
        #[arg(long)]
        keys: Option<PathBuf>,
    },
    /// Print a random 128-bit key as hex
    Keygen {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Measure the authenticator's avalanche behaviour
    Selftest {
        #[arg(long, default_value_t = DEFAULT_TRIALS)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn read_input(name: &str) -> io::Result<String> {
    if name == "-" {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s)?;
        Ok(s)
    } else {
        std::fs::read_to_string(name)
    }
}

fn exit(status: i32) -> ExitCode {
    ExitCode::from(status as u8)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return exit(if e.use_stderr() { EXIT_INPUT } else { 0 });
        }
    };
    let (mut out, mut err) = (io::stdout().lock(), io::stderr().lock());
    match args.command {
        Command::Run { file, trace, seed } => exit(cli::cmd_run(&file, trace.as_deref(), seed, &mut out, &mut err).status),
        Command::Dissect { input, keys } => {
            let hex = match read_input(&input) {
                Ok(h) => h,
                Err(e) => {
                    eprintln!("{input}: {e}");
                    return exit(EXIT_INPUT);
                }
            };
            let keyfile = match keys.map(std::fs::read_to_string).transpose() {
                Ok(k) => k,
                Err(e) => {
                    eprintln!("keyfile: {e}");
                    return exit(EXIT_INPUT);
                }
            };
            exit(cli::cmd_dissect(&hex, keyfile.as_deref(), &mut out, &mut err))
        }
        Command::Keygen { seed } => {
            println!("{}", cli::cmd_keygen(seed));
            exit(0)
        }
        Command::Selftest { trials, seed } => exit(cli::cmd_selftest(trials, seed, &mut out, &mut err)),
    }
}
