use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use latent_concepts::pipeline::{self, Overrides, PipelineConfig, Stage};

#[derive(Parser)]
#[command(name = "latent-concepts", version, about = "Discover and annotate latent concepts in contextual embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration file.
    #[arg(long, global = true, default_value = "config.toml")]
    config: PathBuf,

    /// Restrict to these layers (repeatable).
    #[arg(long, global = true)]
    layer: Vec<u32>,

    /// Number of clusters per layer.
    #[arg(long, global = true)]
    k: Option<usize>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for probing and ranking.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Base URL of an OpenAI-compatible chat endpoint.
    #[arg(long, global = true)]
    endpoint: Option<String>,

    /// Label with a local deterministic mock server instead of a real LLM.
    #[arg(long, global = true)]
    mock_llm: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Filter the corpus into the token dataset.
    Ingest,
    /// Write seeded stand-in embeddings for every configured layer.
    SynthEmbeddings,
    /// Agglomerative clustering of each layer.
    Cluster,
    /// Label every concept with the LLM.
    Annotate,
    /// Train and evaluate one probe per concept.
    Probe,
    /// Neuron rankings and super-concept alignment.
    Neurons,
    /// Inter-annotator agreement and concept-type distribution.
    Evaluate,
    /// Write the concept net JSONL.
    Export,
    /// Word clouds and result tables.
    Report,
    /// All stages in order.
    Pipeline,
}

impl From<Command> for Stage {
    fn from(c: Command) -> Stage {
        match c {
            Command::Ingest => Stage::Ingest,
            Command::SynthEmbeddings => Stage::SynthEmbeddings,
            Command::Cluster => Stage::Cluster,
            Command::Annotate => Stage::Annotate,
            Command::Probe => Stage::Probe,
            Command::Neurons => Stage::Neurons,
            Command::Evaluate => Stage::Evaluate,
            Command::Export => Stage::Export,
            Command::Report => Stage::Report,
            Command::Pipeline => Stage::Pipeline,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = PipelineConfig::load(&cli.config).and_then(|mut config| {
        config.apply(&Overrides {
            layers: cli.layer.clone(),
            k: cli.k,
            seed: cli.seed,
            jobs: cli.jobs,
            endpoint: cli.endpoint.clone(),
            mock_llm: cli.mock_llm,
        });
        pipeline::run(cli.command.into(), &config)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
