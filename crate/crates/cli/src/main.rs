use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use covgroup::{FrechetConfig, Parametrization};
use covgroup_cli::commands::{self, FitOptions, LikelihoodOptions, SimulateSpec, TestOptions};

#[derive(Parser)]
#[command(
    name = "covgroup",
    version,
    about = "Group-level connectivity statistics on the SPD manifold"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParamArg {
    Tangent,
    Flat,
}

impl From<ParamArg> for Parametrization {
    fn from(p: ParamArg) -> Self {
        match p {
            ParamArg::Tangent => Parametrization::Tangent,
            ParamArg::Flat => Parametrization::Flat,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SimParamArg {
    Tangent,
    Flat,
    Both,
}

#[derive(clap::Args)]
struct FrechetArgs {
    /// Maximum intrinsic-mean iterations.
    #[arg(long, default_value_t = 200)]
    max_iterations: usize,
    /// Stop when the mean log-residual norm falls below this.
    #[arg(long, default_value_t = 1e-8)]
    tolerance: f64,
}

impl FrechetArgs {
    fn config(&self) -> anyhow::Result<FrechetConfig> {
        Ok(FrechetConfig::new(self.max_iterations, self.tolerance)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit the group model on control time series.
    Fit {
        #[arg(long, num_args = 1.., required = true)]
        controls: Vec<PathBuf>,
        /// Confound files, paired with --controls by position.
        #[arg(long, num_args = 1..)]
        confounds: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "tangent")]
        parametrization: ParamArg,
        #[command(flatten)]
        frechet: FrechetArgs,
    },
    /// Test one patient against the controls, pair by pair.
    Test {
        #[arg(long, num_args = 1.., required = true)]
        controls: Vec<PathBuf>,
        #[arg(long, num_args = 1..)]
        confounds: Vec<PathBuf>,
        #[arg(long)]
        patient: PathBuf,
        #[arg(long)]
        patient_confounds: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Bootstrap draws for the null distribution.
        #[arg(long, default_value_t = 1000)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, value_enum, default_value = "tangent")]
        parametrization: ParamArg,
        #[command(flatten)]
        frechet: FrechetArgs,
    },
    /// Log-likelihood of subjects under a fitted model, or leave-one-out over controls.
    Likelihood {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, num_args = 1..)]
        subjects: Vec<PathBuf>,
        #[arg(long, num_args = 1..)]
        subject_confounds: Vec<PathBuf>,
        /// Score each control under the model fitted on the others.
        #[arg(long)]
        loo: bool,
        #[arg(long, num_args = 1..)]
        controls: Vec<PathBuf>,
        #[arg(long, num_args = 1..)]
        confounds: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "tangent")]
        parametrization: ParamArg,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        frechet: FrechetArgs,
    },
    /// ROC simulation study on synthetic populations.
    Simulate {
        /// JSON grid description; replaces the grid flags below.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, num_args = 1.., default_values_t = [20])]
        n_controls: Vec<usize>,
        #[arg(long, num_args = 1.., default_values_t = [0.1])]
        sigma: Vec<f64>,
        #[arg(long, num_args = 1.., default_values_t = [0.0, 0.1, 0.2])]
        d_sigma: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        k_diffs: usize,
        #[arg(long, default_value_t = 10)]
        n_patients: usize,
        #[arg(long, default_value_t = 1000)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, value_enum, default_value = "both")]
        parametrization: SimParamArg,
        /// Decay of the synthetic group matrix rho^|i-j|.
        #[arg(long, default_value_t = 0.3)]
        rho: f64,
        /// Take the group matrix from a fitted model file.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Fit {
            controls,
            confounds,
            out,
            parametrization,
            frechet,
        } => {
            let opts = FitOptions {
                controls,
                confounds,
                out,
                parametrization: parametrization.into(),
                frechet: frechet.config()?,
            };
            commands::cmd_fit(&opts, &mut stdout)?;
        }
        Command::Test {
            controls,
            confounds,
            patient,
            patient_confounds,
            out,
            m,
            seed,
            alpha,
            parametrization,
            frechet,
        } => {
            let opts = TestOptions {
                controls,
                confounds,
                patient,
                patient_confounds,
                out,
                m,
                seed,
                alpha,
                parametrization: parametrization.into(),
                frechet: frechet.config()?,
            };
            commands::cmd_test(&opts, &mut stdout)?;
        }
        Command::Likelihood {
            model,
            subjects,
            subject_confounds,
            loo,
            controls,
            confounds,
            parametrization,
            out,
            frechet,
        } => {
            let opts = LikelihoodOptions {
                model,
                subjects,
                subject_confounds,
                loo,
                controls,
                confounds,
                parametrization: parametrization.into(),
                frechet: frechet.config()?,
                out,
            };
            commands::cmd_likelihood(&opts, &mut stdout)?;
        }
        Command::Simulate {
            config,
            out,
            n,
            n_controls,
            sigma,
            d_sigma,
            k_diffs,
            n_patients,
            m,
            seed,
            alpha,
            parametrization,
            rho,
            model,
        } => {
            let spec = match config {
                Some(path) => SimulateSpec::load(&path)?,
                None => SimulateSpec {
                    n,
                    n_controls,
                    sigma,
                    d_sigma,
                    k_diffs,
                    n_patients,
                    m,
                    seed,
                    parametrizations: match parametrization {
                        SimParamArg::Tangent => vec![Parametrization::Tangent],
                        SimParamArg::Flat => vec![Parametrization::Flat],
                        SimParamArg::Both => vec![Parametrization::Tangent, Parametrization::Flat],
                    },
                    rho,
                    model,
                    alpha,
                },
            };
            commands::cmd_simulate(&spec, &out, &mut stdout)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
