use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use drfg::autoencoder::train_autoencoder;
use drfg::backbones::fit_standardizer;
use drfg::data::TrainingSet;
use drfg::harness::{self, ExperimentConfig};
use drfg::metrics::{aggregate_by_classifier, read_trial_csv};
use drfg::nn::{save_checkpoint, TrainConfig};
use drfg::store::FeatureStore;
use drfg::tsne::{tsne_embed, TsneConfig};
use drfg::Result;

#[derive(Parser)]
#[command(version, about = "Quadrant multi-backbone features, latent compression and shallow classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract quadrant features for every image of the dataset.
    Extract {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the config's `feature_store`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the repeated-trial experiment.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the protocol on one backbone's whole-image features.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        backbone: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Embed the vectors of a feature store in two dimensions.
    Tsne {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30.0)]
        perplexity: f64,
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train an autoencoder on a whole feature store and write its latents.
    Encode {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Recompute aggregates from a per-trial CSV.
    Metrics {
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &PathBuf, output: Option<PathBuf>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(dir) = output {
        cfg.output_dir = dir;
    }
    Ok(cfg)
}

fn print_summary(report: &harness::ExperimentReport) {
    for (name, agg) in harness::aggregates(report) {
        println!(
            "{name}: accuracy mean {:.4} median {:.4} over {} trials",
            agg.accuracy.mean, agg.accuracy.median, agg.n_trials
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Extract { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out.or(cfg.feature_store.clone()).ok_or_else(|| {
                drfg::Error::Config("give --out or set feature_store in the config".into())
            })?;
            let store = harness::extract_from_dataset(&cfg)?;
            store.write(&out)?;
            println!("{} samples × {} features → {}", store.len(), store.dim(), out.display());
        }
        Command::Experiment { config, output } => {
            let cfg = load_config(&config, output)?;
            let report = harness::run_experiment(&cfg)?;
            print_summary(&report);
        }
        Command::Benchmark {
            config,
            backbone,
            output,
        } => {
            let cfg = load_config(&config, output)?;
            let report = harness::run_benchmark(&cfg, &backbone)?;
            print_summary(&report);
        }
        Command::Tsne {
            store,
            out,
            perplexity,
            iterations,
            seed,
        } => {
            let store = FeatureStore::read(&store)?;
            let cfg = TsneConfig {
                perplexity,
                iterations,
                seed,
                ..TsneConfig::default()
            };
            let result = tsne_embed(&store.to_labeled()?, &cfg)?;
            result.embedding.save_csv(&out, Some(store.class_names()))?;
            println!(
                "final KL {:.4} → {}",
                result.kl_history.last().copied().unwrap_or(f64::NAN),
                out.display()
            );
        }
        Command::Encode {
            config,
            store,
            out,
            checkpoint,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let features = FeatureStore::read(&store)?;
            let set = features.to_labeled()?;
            let standardizer = fit_standardizer(set.features.view())?;
            let train = TrainingSet::new(set.with_features(standardizer.apply_rows(set.features.view())?)?);
            let ae_cfg = drfg::autoencoder::AutoencoderConfig {
                input_dim: train.dim(),
                ..cfg.autoencoder
            };
            let train_cfg = TrainConfig {
                shuffle_seed: cfg.master_seed,
                ..cfg.autoencoder_train
            };
            let (ae, _) = train_autoencoder(&train, &ae_cfg, &train_cfg, cfg.master_seed)?;
            let latents = train.with_features(ae.encode_batch(train.features.view())?)?;
            FeatureStore::from_labeled(&latents, features.class_names().to_vec())?.write(&out)?;
            if let Some(path) = checkpoint {
                save_checkpoint(ae.network(), &path)?;
            }
            println!("{} latents of width {} → {}", latents.len(), latents.dim(), out.display());
        }
        Command::Metrics { trials, out } => {
            let rows = read_trial_csv(BufReader::new(File::open(&trials)?))?;
            let agg = aggregate_by_classifier(&rows)?;
            let json = serde_json::to_string_pretty(
                &agg.into_iter().collect::<std::collections::BTreeMap<_, _>>(),
            )?;
            match out {
                Some(path) => std::fs::write(path, json)?,
                None => println!("{json}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
