mod commands;
mod params;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;

use commands::{launch, manifest_path, BaselineTfidf, BuildKb, Command, Concat, Eval, Retrieve, TrainEmbed, TrainMeta};
use params::*;
use run::{error_kind, fail, sibling};

/// Lifelong domain word embeddings: build a knowledge base of past domains,
/// train the pair meta-learner, retrieve relevant contexts for a new domain
/// and train embeddings with them.
///
/// Options resolve in the order command line, LDEM_* environment variables,
/// the matching section of --config, built-in default.
#[derive(Debug, Parser)]
#[command(name = "ldem", version)]
struct Cli {
    /// TOML file with one table per command, e.g. [train-embed].
    #[arg(long, global = true, env = "LDEM_CONFIG")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Build a knowledge base from past domain directories.
    BuildKb {
        /// Domain directories; each file line is a document, the directory name is the domain id.
        #[arg(long, num_args = 1.., required = true)]
        domains: Vec<PathBuf>,
        /// Knowledge-base directory to create.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: BuildKbLayer,
    },
    /// Train the base meta-learner and store it in the knowledge base.
    TrainMeta {
        /// Knowledge-base directory.
        #[arg(long)]
        kb: PathBuf,
        /// Comma-separated domain ids.
        #[arg(long, value_delimiter = ',', required = true)]
        train_domains: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        valid_domains: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        test_domains: Vec<String>,
        /// Exclude the split domains from later retrieval.
        #[arg(long)]
        reserve: bool,
        /// Metrics log [default: <KB>.train-meta.metrics.jsonl]
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[command(flatten)]
        params: TrainMetaLayer,
    },
    /// Retrieve relevant past contexts for a new domain and add it to the knowledge base.
    Retrieve {
        /// Knowledge-base directory.
        #[arg(long)]
        kb: PathBuf,
        /// Directory of the new domain.
        #[arg(long)]
        new_domain: PathBuf,
        /// Relevant-knowledge TSV to write.
        #[arg(long)]
        out: PathBuf,
        /// Adapted meta-learner [default: <OUT>.model.bin]
        #[arg(long)]
        model_out: Option<PathBuf>,
        #[command(flatten)]
        params: RetrieveLayer,
    },
    /// Train skip-gram embeddings, optionally with retrieved contexts.
    TrainEmbed {
        /// Corpus directories or files; documents are one per line.
        #[arg(long, num_args = 1.., required = true)]
        corpus: Vec<PathBuf>,
        /// Relevant-knowledge TSV, required in augmented mode.
        #[arg(long)]
        relevant: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: TrainEmbedLayer,
    },
    /// Borrow past-domain sentences similar to the new domain by TF-IDF cosine.
    BaselineTfidf {
        #[arg(long, num_args = 1.., required = true)]
        past_domains: Vec<PathBuf>,
        /// Directory of the new domain.
        #[arg(long)]
        new_domain: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: BaselineLayer,
    },
    /// Evaluate embedding files on a labelled document set.
    Eval {
        #[arg(long, num_args = 1.., required = true)]
        embeddings: Vec<PathBuf>,
        /// One `label TAB text` line per document.
        #[arg(long)]
        dataset: PathBuf,
        /// JSON report to write.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: EvalLayer,
    },
    /// Concatenate two embedding files word by word.
    Concat {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        params: ConcatLayer,
    },
    /// Re-run a recorded command and check that its outputs are reproduced.
    Replay {
        /// A `*.run.json` manifest.
        manifest: PathBuf,
    },
}

const SECTIONS: [&str; 7] = [
    BuildKb::NAME,
    TrainMeta::NAME,
    Retrieve::NAME,
    TrainEmbed::NAME,
    BaselineTfidf::NAME,
    Eval::NAME,
    Concat::NAME,
];

/// The config file, parsed once.
struct ConfigFile(toml::Table);

impl ConfigFile {
    fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(ConfigFile(toml::Table::new()));
        };
        let text = std::fs::read_to_string(path).map_err(|e| ldem::Error::io(path, e))?;
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| fail("config", format!("{}: {}", path.display(), e.message())))?;
        if let Some(k) = table.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
            return Err(fail("config", format!("{}: unknown section [{k}]", path.display())));
        }
        Ok(ConfigFile(table))
    }

    fn section<T: DeserializeOwned + Default>(&self, name: &str) -> anyhow::Result<T> {
        match self.0.get(name) {
            None => Ok(T::default()),
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e: toml::de::Error| fail("config", format!("[{name}]: {}", e.message()))),
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let file = ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        Cmd::BuildKb { domains, out, params } => launch(&BuildKb {
            domains,
            out,
            params: params.over(file.section(BuildKb::NAME)?).resolve(),
        })
        .map(drop),
        Cmd::TrainMeta {
            kb,
            train_domains,
            valid_domains,
            test_domains,
            reserve,
            metrics,
            params,
        } => launch(&TrainMeta {
            metrics: metrics.unwrap_or_else(|| sibling(&kb, "train-meta.metrics.jsonl")),
            kb,
            train_domains,
            valid_domains,
            test_domains,
            reserve,
            params: params.over(file.section(TrainMeta::NAME)?).resolve(),
        })
        .map(drop),
        Cmd::Retrieve {
            kb,
            new_domain,
            out,
            model_out,
            params,
        } => launch(&Retrieve {
            kb,
            new_domain,
            model_out: model_out.unwrap_or_else(|| sibling(&out, "model.bin")),
            out,
            params: params.over(file.section(Retrieve::NAME)?).resolve(),
        })
        .map(drop),
        Cmd::TrainEmbed {
            corpus,
            relevant,
            out,
            params,
        } => launch(&TrainEmbed {
            corpus,
            relevant,
            out,
            params: params.over(file.section(TrainEmbed::NAME)?).resolve(),
        })
        .map(drop),
        Cmd::BaselineTfidf {
            past_domains,
            new_domain,
            out,
            params,
        } => launch(&BaselineTfidf {
            past_domains,
            new_domain,
            out,
            params: params.over(file.section(BaselineTfidf::NAME)?).resolve(),
        })
        .map(drop),
        Cmd::Eval {
            embeddings,
            dataset,
            out,
            params,
        } => launch(&Eval {
            embeddings,
            dataset,
            out,
            params: params.over(file.section(Eval::NAME)?).resolve(),
        })
        .map(drop),
        Cmd::Concat { a, b, out, params } => launch(&Concat {
            a,
            b,
            out,
            params: params.over(file.section(Concat::NAME)?).resolve(),
        })
        .map(drop),
        Cmd::Replay { manifest } => replay(&manifest),
    }
}

fn replay_as<C: Command>(config: serde_json::Value, manifest: &Path) -> anyhow::Result<Vec<(String, String)>> {
    let cmd: C = serde_json::from_value(config)
        .map_err(|e| fail("format", format!("{}: config does not match {}: {e}", manifest.display(), C::NAME)))?;
    if manifest_path(&cmd) == manifest {
        // Keep the recorded manifest; the replay writes its own.
        let kept = sibling(manifest, "recorded");
        std::fs::copy(manifest, &kept).map_err(|e| ldem::Error::io(&kept, e))?;
    }
    launch(&cmd)
}

fn replay(manifest: &Path) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(manifest).map_err(|e| ldem::Error::io(manifest, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| fail("format", format!("{}: {e}", manifest.display())))?;
    let command = value["command"].as_str().unwrap_or_default().to_owned();
    let recorded: Vec<(String, String)> = serde_json::from_value(value["outputs"].clone())
        .map_err(|e| fail("format", format!("{}: outputs: {e}", manifest.display())))?;
    let config = value["config"].clone();
    let produced = match command.as_str() {
        BuildKb::NAME => replay_as::<BuildKb>(config, manifest)?,
        TrainMeta::NAME => replay_as::<TrainMeta>(config, manifest)?,
        Retrieve::NAME => replay_as::<Retrieve>(config, manifest)?,
        TrainEmbed::NAME => replay_as::<TrainEmbed>(config, manifest)?,
        BaselineTfidf::NAME => replay_as::<BaselineTfidf>(config, manifest)?,
        Eval::NAME => replay_as::<Eval>(config, manifest)?,
        Concat::NAME => replay_as::<Concat>(config, manifest)?,
        other => return Err(fail("format", format!("unknown command {other:?} in {}", manifest.display()))),
    };
    let differing: Vec<&str> = recorded
        .iter()
        .filter(|r| !produced.contains(r))
        .map(|(p, _)| p.as_str())
        .collect();
    if !differing.is_empty() {
        return Err(fail("not_reproduced", format!("outputs differ: {}", differing.join(", "))));
    }
    println!("replay: {command}: {} outputs reproduced", recorded.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let line = msg
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid usage")
                .trim_start_matches("error: ");
            eprintln!("error: usage: {line}");
            return ExitCode::from(2);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace(['\n', '\r'], " ");
            eprintln!("error: {}: {msg}", error_kind(&e));
            ExitCode::FAILURE
        }
    }
}
