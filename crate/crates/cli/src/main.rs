use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use pnnid_core::certify::{
    activation_threshold, cert_architecture, cert_biased_network_weights, cert_network_weights, NetworkCertificate,
    Overall,
};
use pnnid_core::io::{
    parse_document, parse_net, parse_poly, to_json, CertDocument, Document, NetDocument, PolyDocument, Tolerances,
};
use pnnid_core::krank::DEFAULT_TOL;
use pnnid_core::network::{augment_nonunique, canonicalize, expand, homogenize_network, Architecture, Params};
use pnnid_core::neurovariety::{expected_dimension, jacobian_rank};
use pnnid_core::polyspace::{dehomogenize_poly, homogenize_poly, truncate_leadterm};
use pnnid_core::recover::{recover_deep, recover_with_bias, Diagnostics, RecoverOptions, RecoveryResult, DEFAULT_RESIDUAL_TOL};
use pnnid_core::rng::{gaussian_vector, seeded};
use pnnid_core::Error;

const EXIT_OK: u8 = 0;
const EXIT_NOT_UNIQUE: u8 = 1;
const EXIT_INCONCLUSIVE: u8 = 2;
const EXIT_HYPOTHESES: u8 = 3;
const EXIT_RECOVERY: u8 = 4;
const EXIT_USAGE: u8 = 64;
const EXIT_DATA: u8 = 65;

const EXIT_CODES: &str = "\
Exit codes:
  0   success; certificate UNIQUE_CERTIFIED
  1   certificate NOT_UNIQUE
  2   certificate INCONCLUSIVE
  3   hypotheses of the architecture certificate not met
  4   recovery failed
  64  malformed command line or invalid arguments
  65  unreadable or malformed input file";

#[derive(Parser, Debug)]
#[command(name = "pnnid", version, about = "Uniqueness certificates and weight recovery for polynomial networks", after_help = EXIT_CODES)]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, env = "PNNID_SEED", default_value_t = 0)]
    seed: u64,

    /// Write the main result here instead of standard output.
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,

    /// Print diagnostics on standard error.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ArchArgs {
    /// Layer widths d_0,...,d_L.
    #[arg(long, value_delimiter = ',', required = true)]
    widths: Vec<usize>,
    /// Activation degrees r_1,...,r_{L-1}; omit for a single linear layer.
    #[arg(long, value_delimiter = ',')]
    degrees: Vec<u32>,
    /// The network has biases.
    #[arg(long)]
    bias: bool,
}

impl ArchArgs {
    fn build(&self) -> Result<Architecture, Failure> {
        Architecture::new(self.widths.clone(), self.degrees.clone(), self.bias).map_err(Failure::usage)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generic identifiability verdict for an architecture.
    CertifyArch(ArchArgs),
    /// Uniqueness certificate for the weights in a pnn-v1 file.
    CertifyWeights {
        input: PathBuf,
        /// Relative tolerance of the Kruskal rank decisions.
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
    },
    /// Recover network weights from a poly-v1 file.
    Recover {
        input: PathBuf,
        #[command(flatten)]
        arch: ArchArgs,
        /// Largest accepted absolute coefficient error.
        #[arg(long, default_value_t = DEFAULT_RESIDUAL_TOL)]
        tol: f64,
        /// Attempt recovery even when the architecture is not certified.
        #[arg(long)]
        allow_uncertified: bool,
    },
    /// Homogenize a polynomial or lift a biased network.
    Homogenize { input: PathBuf },
    /// Set the last variable of a homogeneous polynomial to 1.
    Dehomogenize { input: PathBuf },
    /// Keep the top-degree part of a polynomial.
    Truncate { input: PathBuf },
    /// Expand a network into its polynomial coefficients.
    Expand { input: PathBuf },
    /// Draw a network with Gaussian weights.
    Random {
        #[command(flatten)]
        arch: ArchArgs,
        /// Add a hidden neuron with zero incoming weights to this layer (1-based).
        #[arg(long)]
        augment: Option<usize>,
        /// With --augment, also write the same network with another outgoing column.
        #[arg(long, requires = "augment")]
        companion: Option<PathBuf>,
    },
    /// Expected dimension of the image of the parametrization.
    Dimension {
        #[command(flatten)]
        arch: ArchArgs,
        /// Also compute the numerical rank of the Jacobian.
        #[arg(long)]
        rank: bool,
        #[arg(long, default_value_t = 3)]
        trials: usize,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
    },
    /// Canonical representative of the equivalence class of a network.
    Canonicalize { input: PathBuf },
    /// Degrees that make a width profile identifiable.
    Threshold {
        #[arg(long, value_delimiter = ',', required = true)]
        widths: Vec<usize>,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(e: impl ToString) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: e.to_string(),
        }
    }

    fn data(e: impl ToString) -> Self {
        Failure {
            code: EXIT_DATA,
            message: e.to_string(),
        }
    }
}

/// Output of a command: the main document and the exit code it implies.
struct Outcome {
    body: String,
    code: u8,
}

impl Outcome {
    fn ok(body: String) -> Self {
        Outcome { body, code: EXIT_OK }
    }
}

fn read_input(path: &Path) -> Result<String, Failure> {
    if path == Path::new("-") {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s).map_err(Failure::data)?;
        return Ok(s);
    }
    fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

/// Writes through a sibling temporary file so that a failure never leaves a
/// partial file behind.
fn write_atomic(path: &Path, body: &str) -> Result<(), Failure> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    let result = fs::write(&tmp, body).and_then(|_| fs::rename(&tmp, path));
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn verdict_code(cert: &NetworkCertificate, hypotheses_code: u8) -> u8 {
    match cert.overall {
        Overall::UniqueCertified => EXIT_OK,
        Overall::NotUnique => EXIT_NOT_UNIQUE,
        Overall::Inconclusive if !cert.hypotheses_unmet.is_empty() => hypotheses_code,
        Overall::Inconclusive => EXIT_INCONCLUSIVE,
    }
}

fn net_json(arch: &Architecture, params: &Params) -> String {
    to_json(&NetDocument::from_net(arch, params))
}

fn run(cli: &Cli) -> Result<Outcome, Failure> {
    match &cli.command {
        Command::CertifyArch(args) => {
            let arch = args.build()?;
            let cert = cert_architecture(&arch).map_err(|e| Failure {
                code: EXIT_HYPOTHESES,
                message: e.to_string(),
            })?;
            let code = verdict_code(&cert, EXIT_HYPOTHESES);
            Ok(Outcome {
                body: to_json(&CertDocument::new("architecture", None, cert)),
                code,
            })
        }
        Command::CertifyWeights { input, tol } => {
            if !(*tol > 0.0) {
                return Err(Failure::usage("--tol must be positive"));
            }
            let (arch, params) = parse_net(&read_input(input)?).map_err(Failure::data)?;
            let cert = if arch.has_bias {
                cert_biased_network_weights(&arch, &params, *tol)
            } else {
                cert_network_weights(&arch, &params, *tol)
            }
            .map_err(Failure::data)?;
            let code = verdict_code(&cert, EXIT_INCONCLUSIVE);
            Ok(Outcome {
                body: to_json(&CertDocument::new("weights", Some(Tolerances { krank_tol: *tol }), cert)),
                code,
            })
        }
        Command::Recover {
            input,
            arch,
            tol,
            allow_uncertified,
        } => {
            let arch = arch.build()?;
            if !(*tol > 0.0) {
                return Err(Failure::usage("--tol must be positive"));
            }
            let p = parse_poly(&read_input(input)?).map_err(Failure::data)?;
            let opts = RecoverOptions {
                tol: *tol,
                seed: cli.seed,
                allow_uncertified: *allow_uncertified,
                ..RecoverOptions::default()
            };
            let result = if arch.has_bias {
                recover_with_bias(&p, &arch, &opts)
            } else {
                recover_deep(&p, &arch, &opts)
            };
            let res = result.map_err(|e| match e {
                Error::Dimension(_) | Error::InvalidArgument(_) | Error::TooLarge(_) => Failure::data(e),
                other => Failure {
                    code: EXIT_RECOVERY,
                    message: other.to_string(),
                },
            })?;
            report_recovery(cli, &arch, &res)?;
            Ok(Outcome::ok(net_json(&arch, &res.params)))
        }
        Command::Homogenize { input } => match parse_document(&read_input(input)?).map_err(Failure::data)? {
            Document::Poly(p) => {
                let h = homogenize_poly(&p).map_err(Failure::data)?;
                Ok(Outcome::ok(to_json(&PolyDocument::from_poly(&h))))
            }
            Document::Net(arch, params) => {
                let (harch, hparams) = homogenize_network(&arch, &params).map_err(Failure::data)?;
                Ok(Outcome::ok(net_json(&harch, &hparams)))
            }
        },
        Command::Dehomogenize { input } => {
            let p = parse_poly(&read_input(input)?).map_err(Failure::data)?;
            let d = dehomogenize_poly(&p).map_err(Failure::data)?;
            Ok(Outcome::ok(to_json(&PolyDocument::from_poly(&d))))
        }
        Command::Truncate { input } => {
            let p = parse_poly(&read_input(input)?).map_err(Failure::data)?;
            let t = truncate_leadterm(&p).map_err(Failure::data)?;
            Ok(Outcome::ok(to_json(&PolyDocument::from_poly(&t))))
        }
        Command::Expand { input } => {
            let (arch, params) = parse_net(&read_input(input)?).map_err(Failure::data)?;
            let p = expand(&arch, &params).map_err(Failure::data)?;
            Ok(Outcome::ok(to_json(&PolyDocument::from_poly(&p))))
        }
        Command::Random {
            arch,
            augment,
            companion,
        } => {
            let arch = arch.build()?;
            let mut rng = seeded(cli.seed);
            let params = Params::random(&arch, &mut rng);
            let Some(layer) = *augment else {
                return Ok(Outcome::ok(net_json(&arch, &params)));
            };
            if layer == 0 || layer >= arch.n_layers() {
                return Err(Failure::usage(format!(
                    "--augment must name a hidden layer in 1..={}",
                    arch.n_layers() - 1
                )));
            }
            let width = arch.widths[layer + 1];
            let u = gaussian_vector(&mut rng, width);
            let (aug_arch, aug) = augment_nonunique(&arch, &params, layer, u.as_slice()).map_err(Failure::usage)?;
            if let Some(path) = companion {
                let v = gaussian_vector(&mut rng, width);
                let (_, other) = augment_nonunique(&arch, &params, layer, v.as_slice()).map_err(Failure::usage)?;
                write_atomic(path, &net_json(&aug_arch, &other))?;
            }
            Ok(Outcome::ok(net_json(&aug_arch, &aug)))
        }
        Command::Dimension { arch, rank, trials, tol } => {
            let arch = arch.build()?;
            let report = if *rank {
                jacobian_rank(&arch, cli.seed, *trials, *tol)
            } else {
                expected_dimension(&arch)
            }
            .map_err(Failure::usage)?;
            Ok(Outcome::ok(to_json(&report)))
        }
        Command::Canonicalize { input } => {
            let (arch, params) = parse_net(&read_input(input)?).map_err(Failure::data)?;
            let canon = canonicalize(&arch, &params).map_err(Failure::data)?;
            Ok(Outcome::ok(net_json(&arch, &canon)))
        }
        Command::Threshold { widths } => {
            let degrees = activation_threshold(widths).map_err(Failure::usage)?;
            Ok(Outcome::ok(to_json(&degrees)))
        }
    }
}

#[derive(Serialize)]
struct RecoveryReport<'a> {
    residual: f64,
    diagnostics: &'a Diagnostics,
    #[serde(skip_serializing_if = "Option::is_none")]
    canonical: Option<NetDocument>,
}

/// Residual, diagnostics and canonical form of a recovered network. They go
/// to standard output when the network itself is written to a file.
fn report_recovery(cli: &Cli, arch: &Architecture, res: &RecoveryResult) -> Result<(), Failure> {
    let report = RecoveryReport {
        residual: res.residual,
        diagnostics: &res.diagnostics,
        canonical: canonicalize(arch, &res.params).ok().map(|c| NetDocument::from_net(arch, &c)),
    };
    let text = to_json(&report);
    if cli.output.is_some() {
        io::stdout().write_all(text.as_bytes()).map_err(Failure::usage)
    } else {
        if cli.verbose {
            eprint!("{text}");
        } else {
            eprintln!("residual: {:e}", res.residual);
        }
        Ok(())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(outcome) => {
            let written = match &cli.output {
                Some(path) => write_atomic(path, &outcome.body),
                None => io::stdout().write_all(outcome.body.as_bytes()).map_err(Failure::usage),
            };
            match written {
                Ok(()) => ExitCode::from(outcome.code),
                Err(f) => {
                    eprintln!("error: {}", f.message);
                    ExitCode::from(f.code)
                }
            }
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
