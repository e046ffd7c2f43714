use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use dtr::inference::{run_chain, PosteriorDraws};
use dtr::io::{self, Dataset, PatientInput, PolicyReport, RunConfig};
use dtr::joint::ModelVariant;
use dtr::policy::{evaluate_policy, optimize, EvalPolicy, ParamMask, SgdConfig, StepRule};
use dtr::sim::{simulate_cohort, RewardSpec, Truths};

#[derive(Parser)]
#[command(name = "dtr", version, about = "Joint-model fitting and policy optimization for continuous-time treatment regimes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a cohort and write it as a dataset directory.
    SimulateCohort {
        /// Truth parameters (JSON); omit for the built-in reference values.
        #[arg(long)]
        truths: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the joint model by MCMC.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// Hyperparameters and sampler settings (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "joint")]
        variant: ModelVariant,
        /// Overrides the sampler seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Write thinned parameter traces as CSV.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Print the WAIC of a fitted posterior.
    Waic {
        #[arg(long)]
        posterior: PathBuf,
    },
    /// Optimize the decision policy for one patient.
    Optimize {
        #[arg(long)]
        posterior: PathBuf,
        /// JSON with `y0` and either `x` (model scale) or raw `covariates`.
        #[arg(long)]
        patient_covariates: PathBuf,
        #[arg(long, default_value = "both")]
        mask: ParamMask,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        /// Rollouts per step; defaults to the number of posterior draws.
        #[arg(long)]
        rollouts: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Share one step size across coordinates.
        #[arg(long)]
        scalar_step: bool,
        /// Penalize each follow-up visit by this amount (negative values).
        #[arg(long)]
        visit_penalty: Option<f64>,
        /// Visit every this many days and tune only the dosage (needs --mask dosage).
        #[arg(long)]
        fixed_interval: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Iteration vs mean reward; defaults to `<out>` with a .csv extension.
        #[arg(long)]
        curve_out: Option<PathBuf>,
    },
    /// Roll out a policy repeatedly and write per-rollout results.
    EvaluatePolicy {
        #[arg(long)]
        posterior: PathBuf,
        /// Policy JSON from `optimize`, or fixed:<days>.
        #[arg(long)]
        policy: String,
        /// Required with fixed schedules.
        #[arg(long)]
        patient_covariates: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_patient(path: &Path, post: &PosteriorDraws) -> Result<dtr::policy::PatientProfile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let input: PatientInput = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(input.to_profile(&post.covariate_names, &post.standardization)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SimulateCohort { truths, n, seed, out } => {
            let truths = match truths {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str::<Truths>(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                None => Truths::reference(),
            };
            let cohort = simulate_cohort(&truths, n, seed)?;
            let deaths = cohort.records.iter().filter(|r| r.delta).count();
            io::write_dataset(&out, &Dataset::from(cohort))?;
            log::info!("wrote {n} patients ({deaths} deaths) to {}", out.display());
        }
        Command::Fit {
            data,
            config,
            variant,
            seed,
            out,
            trace_out,
        } => {
            let mut cfg = match config {
                Some(p) => RunConfig::from_json(
                    &std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?,
                )
                .with_context(|| format!("parsing {}", p.display()))?,
                None => RunConfig::default(),
            };
            cfg.mcmc.variant = variant;
            if let Some(s) = seed {
                cfg.mcmc.seed = s;
            }
            cfg.mcmc.validate()?;
            let ds = io::load_dataset(&data)?;
            log::info!("loaded {} patients from {}", ds.records.len(), data.display());
            let mut post = run_chain(&ds.records, &cfg.hyper, &cfg.mcmc, None)?;
            post.covariate_names = ds.covariate_names;
            post.standardization = ds.standardization;
            io::save_posterior(&out, &post)?;
            io::write_standardization(&out.with_extension("standardization.json"), &post.standardization)?;
            if let Some(t) = trace_out {
                io::write_trace(&t, &post)?;
            }
            println!("draws: {}", post.len());
            println!("waic: {}", post.waic()?);
        }
        Command::Waic { posterior } => {
            let post = io::load_posterior(&posterior)?;
            println!("{}", post.waic()?);
        }
        Command::Optimize {
            posterior,
            patient_covariates,
            mask,
            steps,
            rollouts,
            seed,
            scalar_step,
            visit_penalty,
            fixed_interval,
            out,
            curve_out,
        } => {
            let post = io::load_posterior(&posterior)?;
            let patient = load_patient(&patient_covariates, &post)?;
            let config = SgdConfig {
                steps,
                rollouts_per_step: rollouts,
                fixed_interval,
                mask,
                step_rule: if scalar_step { StepRule::ScalarNorm } else { StepRule::PerCoordinate },
                reward: match visit_penalty {
                    Some(eta0) => RewardSpec::PenalizedVisits { eta0 },
                    None => RewardSpec::LogMedianSurvival,
                },
                master_seed: seed,
                ..SgdConfig::default()
            };
            let theta0 = post.mean_theta()?;
            let result = optimize(&theta0, &post.draws, &patient, &config)?;
            println!(
                "initial reward {:.5}, best {:.5} at step {}",
                result.initial_reward(),
                result.best_reward,
                result.best_index
            );
            io::write_reward_curve(&curve_out.unwrap_or_else(|| out.with_extension("csv")), &result)?;
            io::save_policy(&out, &PolicyReport { patient, config, result })?;
        }
        Command::EvaluatePolicy {
            posterior,
            policy,
            patient_covariates,
            reps,
            seed,
            out,
        } => {
            let post = io::load_posterior(&posterior)?;
            let (eval, patient, reward) = if let Some(days) = policy.strip_prefix("fixed:") {
                let interval: f64 = days.parse().with_context(|| format!("bad interval in '{policy}'"))?;
                let Some(p) = patient_covariates else {
                    bail!("--patient-covariates is required with a fixed schedule");
                };
                let patient = load_patient(&p, &post)?;
                let dosage = post.mean_theta()?;
                (EvalPolicy::Fixed { interval, dosage }, patient, RewardSpec::LogMedianSurvival)
            } else {
                let report = io::load_policy(Path::new(&policy))?;
                let patient = match patient_covariates {
                    Some(p) => load_patient(&p, &post)?,
                    None => report.patient.clone(),
                };
                let theta = report.result.best_theta;
                let eval = match report.config.fixed_interval {
                    Some(interval) => EvalPolicy::Fixed { interval, dosage: theta },
                    None => EvalPolicy::Intensity(theta),
                };
                (eval, patient, report.config.reward)
            };
            let outcomes = evaluate_policy(&eval, &post.draws, &patient, reps, reward, seed)?;
            let mean = outcomes.iter().map(|o| o.median_time).sum::<f64>() / outcomes.len().max(1) as f64;
            println!("mean median survival: {mean:.2} days over {reps} rollouts");
            io::write_evaluation(&out, &outcomes)?;
        }
    }
    Ok(())
}
