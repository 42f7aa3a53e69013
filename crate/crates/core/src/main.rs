use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use qdiff::io::{self, Certificate, GenSpec, Overrides, ProblemFile};
use qdiff::{Error, Result};

/// Normal forms, theta summation, Stokes cocycles and classification of
/// irregular linear q-difference systems.
#[derive(Parser, Debug)]
#[command(name = "qdiff", version)]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Shared {
    /// Real part of q, overriding the file.
    #[arg(long, global = true, allow_negative_numbers = true)]
    q_re: Option<f64>,
    /// Imaginary part of q, overriding the file.
    #[arg(long, global = true, allow_negative_numbers = true)]
    q_im: Option<f64>,
    /// Truncation window N.
    #[arg(long, global = true)]
    window: Option<i32>,
    /// Numerical tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Seed for sample grids, divisors and generated instances.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path; the certificate also gets a `.csv` sibling.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Birkhoff-Guenther normal form.
    NormalForm {
        file: PathBuf,
        /// Where to write the normal-form problem file.
        #[arg(long)]
        normal: Option<PathBuf>,
    },
    /// Summed gauge from the graded part to the system.
    Sum {
        file: PathBuf,
        /// Zero-based index of the divisor in the file.
        #[arg(long, default_value_t = 0)]
        divisor: usize,
    },
    /// Stokes cocycle across the file's divisors.
    Cocycle { file: PathBuf },
    /// Analytic equivalence of two systems with the same graded part.
    Classify { first: PathBuf, second: PathBuf },
    /// Seeded random instance.
    Gen {
        /// Comma-separated slopes, strictly decreasing.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "1,0")]
        slopes: Vec<i32>,
        /// Comma-separated block ranks.
        #[arg(long, value_delimiter = ',')]
        ranks: Option<Vec<usize>>,
        /// Number of allowed divisors to attach.
        #[arg(long, default_value_t = 1)]
        divisors: usize,
        /// Also write a gauge-equivalent partner to this path.
        #[arg(long)]
        planted: Option<PathBuf>,
    },
    /// Property suite on a single file.
    Check { file: PathBuf },
}

fn read(path: &Path, o: &Overrides) -> Result<ProblemFile> {
    let mut f = ProblemFile::read(path)?;
    f.apply(o);
    Ok(f)
}

fn emit(cert: &Certificate, output: &Option<PathBuf>) -> Result<()> {
    match output {
        Some(p) => cert.write(p),
        None => {
            print!("{}", cert.to_json());
            Ok(())
        }
    }
}

/// Exit status for a successful run: 0 when every check passes.
fn status(cert: &Certificate) -> u8 {
    if cert.passed() {
        0
    } else {
        4
    }
}

fn run(cli: Cli) -> Result<u8> {
    let s = &cli.shared;
    let o = Overrides { q_re: s.q_re, q_im: s.q_im, window: s.window, tol: s.tol, seed: s.seed };
    match cli.command {
        Command::NormalForm { file, normal } => {
            let (cert, out) = io::cmd_normal_form(&read(&file, &o)?)?;
            if let Some(p) = normal {
                out.write(&p)?;
            }
            emit(&cert, &s.output)?;
            Ok(status(&cert))
        }
        Command::Sum { file, divisor } => {
            let cert = io::cmd_sum(&read(&file, &o)?, divisor)?;
            emit(&cert, &s.output)?;
            Ok(status(&cert))
        }
        Command::Cocycle { file } => {
            let cert = io::cmd_cocycle(&read(&file, &o)?)?;
            emit(&cert, &s.output)?;
            Ok(status(&cert))
        }
        Command::Classify { first, second } => {
            let cert = io::cmd_classify(&read(&first, &o)?, &read(&second, &o)?)?;
            emit(&cert, &s.output)?;
            Ok(status(&cert))
        }
        Command::Check { file } => {
            let cert = io::cmd_check(&read(&file, &o)?)?;
            emit(&cert, &s.output)?;
            Ok(status(&cert))
        }
        Command::Gen { slopes, ranks, divisors, planted } => {
            let d = GenSpec::default();
            let spec = GenSpec {
                q: Complex64::new(s.q_re.unwrap_or(d.q.re), s.q_im.unwrap_or(d.q.im)),
                window: s.window.unwrap_or(d.window),
                tol: s.tol.unwrap_or(d.tol),
                ranks: ranks.unwrap_or_else(|| vec![1; slopes.len()]),
                slopes,
                divisors,
                ..d
            };
            let seed = s.seed.unwrap_or(0);
            let (first, second) = match &planted {
                Some(_) => {
                    let (a, b) = io::gen_planted(seed, &spec)?;
                    (a, Some(b))
                }
                None => (io::gen_instance(seed, &spec)?, None),
            };
            match &s.output {
                Some(p) => first.write(p)?,
                None => print!("{}", first.to_json()),
            }
            if let (Some(p), Some(b)) = (planted, second) {
                b.write(&p)?;
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("qdiff: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
