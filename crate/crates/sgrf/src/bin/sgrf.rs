//! Command-line front end: filter-bank pre-computation, field sampling,
//! the covariance validation study, and spectrum inspection.
//!
//! Exit codes: 0 success, 2 usage error, 3 numeric/spectrum error, 4 I/O
//! error. Every failure prints a single `error[<kind>]: ...` line first.

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use num_complex::Complex64;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use sgrf::error::{Error, ErrorClass};
use sgrf::filterbank::{precompute_with_options, FilterBank, LatitudeGrid, PrecomputeOptions};
use sgrf::sampler::RngStream;
use sgrf::specfun::DEFAULT_TERM_CAP;
use sgrf::spectrum::PowerSpectrum;
use sgrf::validate::{convergence_study, StudyOptions};

#[derive(Parser)]
#[command(
    name = "sgrf",
    version,
    about = "Isotropic Gaussian random fields on the sphere via per-mode Markov marching"
)]
struct Cli {
    /// Worker threads for pre-computation and validation (falls back to
    /// SGRF_THREADS, then to 1 for reproducible timings).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

/// One operator root, written as `re,im`.
#[derive(Clone, Debug)]
struct KappaArg(Complex64);

impl FromStr for KappaArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (re, im) = s
            .split_once(',')
            .ok_or_else(|| format!("expected `re,im`, got `{s}`"))?;
        let re: f64 = re
            .trim()
            .parse()
            .map_err(|e| format!("bad real part `{re}`: {e}"))?;
        let im: f64 = im
            .trim()
            .parse()
            .map_err(|e| format!("bad imag part `{im}`: {e}"))?;
        Ok(KappaArg(Complex64::new(re, im)))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Pre-compute the conditional covariance filter bank and persist it.
    Precompute {
        /// Latitude resolution: the grid has 2n+1 iso-latitude rings.
        #[arg(long)]
        n: usize,
        /// Azimuthal band limit (default: n).
        #[arg(long)]
        m_max: Option<usize>,
        /// Ring length (default: 2n; must be at least 2*m_max).
        #[arg(long)]
        n_phi: Option<usize>,
        /// Operator root `re,im`; repeat for each root.
        #[arg(long = "kappa", value_name = "RE,IM")]
        kappas: Vec<KappaArg>,
        /// Shortcut for the order-2 family kappa = (i*a, -i*a), a = sqrt(A2).
        #[arg(long, value_name = "A2")]
        squared_amplitude: Option<f64>,
        /// Hypergeometric series term cap (default 2e6).
        #[arg(long)]
        term_cap: Option<usize>,
        /// Bank file to write.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Generate field samples from a persisted bank.
    Sample {
        /// Bank file produced by `precompute`.
        #[arg(long)]
        bank: PathBuf,
        /// Base seed; sample k uses the (seed, k) substream.
        #[arg(long)]
        seed: u64,
        /// Number of samples to generate.
        #[arg(long, default_value_t = 1)]
        count: u64,
        /// Output directory.
        #[arg(short, long)]
        output: PathBuf,
        /// Write plain CSV matrices instead of the binary field format.
        #[arg(long)]
        csv: bool,
    },
    /// Run the multi-resolution covariance validation study.
    Validate {
        #[arg(long = "kappa", value_name = "RE,IM")]
        kappas: Vec<KappaArg>,
        #[arg(long, value_name = "A2")]
        squared_amplitude: Option<f64>,
        /// Ascending list of latitude resolutions, e.g. 4,8,16,32.
        #[arg(long, value_delimiter = ',')]
        resolutions: Vec<usize>,
        /// Samples per resolution.
        #[arg(long, default_value_t = 40_000)]
        samples: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        term_cap: Option<usize>,
        /// Report JSON path (stdout when omitted).
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Directory for per-resolution covariance curve CSVs.
        #[arg(long)]
        curve_dir: Option<PathBuf>,
    },
    /// Print the spectrum decomposition (lambda_i, b_i) and a C_l table.
    SpectrumInfo {
        #[arg(long = "kappa", value_name = "RE,IM")]
        kappas: Vec<KappaArg>,
        #[arg(long, value_name = "A2")]
        squared_amplitude: Option<f64>,
        /// Largest degree printed in the C_l table.
        #[arg(long, default_value_t = 16)]
        l_max: u32,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            eprintln!("error[usage]: {}", e.kind());
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = match e.class() {
                ErrorClass::Usage => ("usage", 2),
                ErrorClass::Numeric => ("numeric", 3),
                ErrorClass::Io => ("io", 4),
            };
            eprintln!("error[{kind}]: {e}");
            ExitCode::from(code)
        }
    }
}

fn threads_from(cli_threads: Option<usize>) -> Result<usize, Error> {
    if let Some(t) = cli_threads {
        if t == 0 {
            return Err(Error::InvalidArgument(
                "--threads must be at least 1".into(),
            ));
        }
        return Ok(t);
    }
    match std::env::var("SGRF_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&t| t >= 1)
            .ok_or_else(|| Error::InvalidArgument(format!("bad SGRF_THREADS value `{v}`"))),
        Err(_) => Ok(1),
    }
}

fn spectrum_from(
    kappas: &[KappaArg],
    squared_amplitude: Option<f64>,
) -> Result<PowerSpectrum, Error> {
    match (kappas.is_empty(), squared_amplitude) {
        (false, None) => {
            let ks: Vec<Complex64> = kappas.iter().map(|k| k.0).collect();
            PowerSpectrum::from_kappas(&ks)
        }
        (true, Some(a2)) => PowerSpectrum::from_squared_amplitude(a2),
        (true, None) => Err(Error::InvalidArgument(
            "specify the spectrum with --kappa (repeatable) or --squared-amplitude".into(),
        )),
        (false, Some(_)) => Err(Error::InvalidArgument(
            "--kappa and --squared-amplitude are mutually exclusive".into(),
        )),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let threads = threads_from(cli.threads)?;
    match cli.command {
        Command::Precompute {
            n,
            m_max,
            n_phi,
            kappas,
            squared_amplitude,
            term_cap,
            output,
        } => {
            let spectrum = spectrum_from(&kappas, squared_amplitude)?;
            let m_max = m_max.unwrap_or(n);
            let n_phi = n_phi.unwrap_or(2 * n);
            let grid = LatitudeGrid::new(n, m_max, n_phi)?;
            let opts = PrecomputeOptions {
                term_cap: term_cap.unwrap_or(DEFAULT_TERM_CAP),
                threads,
            };
            let bank = precompute_with_options(&spectrum, &grid, &opts)?;
            bank.save(&output)?;
            println!(
                "wrote bank {} (n={n}, m_max={m_max}, n_phi={n_phi}, M={})",
                output.display(),
                spectrum.order()
            );
            Ok(())
        }
        Command::Sample {
            bank,
            seed,
            count,
            output,
            csv,
        } => {
            let bank = FilterBank::load(&bank)?;
            std::fs::create_dir_all(&output)?;
            let mut sampler = sgrf::sampler::FieldSampler::new(&bank);
            for k in 0..count {
                let mut rng = RngStream::substream(seed, k);
                let sample = sampler.sample(&mut rng);
                let path = sample_path(&output, k, csv);
                if csv {
                    let file = std::fs::File::create(&path)?;
                    sample.write_csv(std::io::BufWriter::new(file))?;
                } else {
                    sample.save(&path)?;
                }
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::Validate {
            kappas,
            squared_amplitude,
            resolutions,
            samples,
            seed,
            term_cap,
            output,
            curve_dir,
        } => {
            let spectrum = spectrum_from(&kappas, squared_amplitude)?;
            let opts = StudyOptions {
                samples,
                seed,
                threads,
                term_cap: term_cap.unwrap_or(DEFAULT_TERM_CAP),
            };
            let study = convergence_study(&spectrum, &resolutions, &opts)?;
            if let Some(dir) = &curve_dir {
                std::fs::create_dir_all(dir)?;
                for rc in &study.curves {
                    let eq_path = dir.join(format!("equator_n{}.csv", rc.n_theta));
                    rc.equator.write_csv(std::fs::File::create(&eq_path)?)?;
                    let mer_path = dir.join(format!("meridian_n{}.csv", rc.n_theta));
                    rc.meridian.write_csv(std::fs::File::create(&mer_path)?)?;
                }
            }
            let json = serde_json::to_string_pretty(&study.report)?;
            match output {
                Some(path) => {
                    std::fs::write(&path, json.as_bytes())?;
                    println!("wrote report {}", path.display());
                }
                None => println!("{json}"),
            }
            Ok(())
        }
        Command::SpectrumInfo {
            kappas,
            squared_amplitude,
            l_max,
        } => {
            let spectrum = spectrum_from(&kappas, squared_amplitude)?;
            println!(
                "M = {}, amplitude = {}",
                spectrum.order(),
                spectrum.amplitude()
            );
            let (h_i, h_k, h_l, h_b) = ("i", "kappa", "lambda", "residue");
            println!("{h_i:<4} {h_k:<44} {h_l:<44} {h_b}");
            let (ks, ls, bs) = (spectrum.kappas(), spectrum.lambdas(), spectrum.residues());
            for i in 0..spectrum.order() {
                println!(
                    "{:<4} {:<44} {:<44} {}",
                    i,
                    ks[i].to_string(),
                    ls[i].to_string(),
                    bs[i]
                );
            }
            let (h_l, h_c) = ("l", "C_l");
            println!("{h_l:<6} {h_c}");
            for l in 0..=l_max {
                println!("{:<6} {}", l, spectrum.angular_power(l));
            }
            Ok(())
        }
    }
}

fn sample_path(dir: &Path, index: u64, csv: bool) -> PathBuf {
    let ext = if csv { "csv" } else { "field" };
    dir.join(format!("sample_{index:05}.{ext}"))
}
