use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crossview::ablate::run_ablate;
use crossview::config::{parse_config, Config};
use crossview::datasets::{
    generate_synthetic, load_manifest, read_embeddings, write_embeddings, write_manifest, EmbeddingTable,
    SampleRecord,
};
use crossview::eval::evaluate;
use crossview::sampler::{build_geo_pools, build_sim_pools, epoch_rng, plan_epoch, Strategy};
use crossview::trainer::{encode, evaluate_holdout, gradcheck, train, write_params, View};
use crossview::{Error, Result};

#[derive(Parser)]
#[command(name = "crossview", version, about = "Two-view contrastive retrieval toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired dataset.
    GenSynth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Extra `key=value` settings applied after the config file.
        #[arg(long = "set")]
        overrides: Vec<String>,
    },
    /// Write one epoch's batch plan as JSON lines.
    Plan {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, num_args = 2, value_names = ["QUERY", "REFERENCE"])]
        embeddings: Vec<PathBuf>,
        /// Defaults to `manifest.jsonl` next to the query embeddings.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        epoch: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set")]
        overrides: Vec<String>,
    },
    /// Train the encoder on a dataset directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set")]
        overrides: Vec<String>,
    },
    /// Retrieval metrics for query/reference embeddings.
    Eval {
        #[arg(long)]
        query: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the encoder and loss gradients.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long = "set")]
        overrides: Vec<String>,
    },
    /// Train every sampling strategy over several seeds.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set")]
        overrides: Vec<String>,
    },
}

const MANIFEST: &str = "manifest.jsonl";
const QUERY_EMB: &str = "query.emb";
const REFERENCE_EMB: &str = "reference.emb";

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::Io { path: parent.to_path_buf(), source: e })?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
}

fn config(path: &Option<PathBuf>, overrides: &[String]) -> Result<Config> {
    parse_config(path.as_deref(), overrides)
}

fn check_rows(table: &EmbeddingTable, manifest: &[SampleRecord], what: &str) -> Result<()> {
    let ids_match = table.row_ids().iter().zip(manifest).all(|(a, r)| *a == r.id);
    if table.count() != manifest.len() || !ids_match {
        return Err(Error::Invalid(format!("{what} rows do not follow the manifest order")));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynth { config: c, out, overrides } => {
            let cfg = config(&c, &overrides)?;
            let data = generate_synthetic(&cfg.synth)?;
            create_dir(&out)?;
            write_manifest(&data.manifest, out.join(MANIFEST))?;
            write_embeddings(&data.query_features, out.join(QUERY_EMB))?;
            write_embeddings(&data.reference_features, out.join(REFERENCE_EMB))?;
            write_text(&out.join("config.txt"), &cfg.to_text())
        }
        Command::Plan { config: c, embeddings, manifest, epoch, out, overrides } => {
            let cfg = config(&c, &overrides)?;
            let (qp, rp) = (&embeddings[0], &embeddings[1]);
            let manifest_path = manifest.unwrap_or_else(|| qp.with_file_name(MANIFEST));
            let records = load_manifest(&manifest_path)?;
            let sampler = cfg.sampler();
            let pools = match sampler.strategy.resolve(epoch, sampler.gps_epochs) {
                Strategy::Random => None,
                Strategy::Gps => Some(build_geo_pools(&records, sampler, cfg.geo())?),
                _ => {
                    let q = read_embeddings(qp)?;
                    let r = read_embeddings(rp)?;
                    check_rows(&q, &records, "query")?;
                    check_rows(&r, &records, "reference")?;
                    Some(build_sim_pools(&q, &r, sampler)?)
                }
            };
            let plan = plan_epoch(&records, pools.as_deref(), sampler, epoch, &mut epoch_rng(sampler.seed, epoch))?;
            write_text(&out, &plan.to_jsonl())
        }
        Command::Train { config: c, data, out, overrides } => {
            let cfg = config(&c, &overrides)?;
            let records = load_manifest(data.join(MANIFEST))?;
            let qf = read_embeddings(data.join(QUERY_EMB))?;
            let rf = read_embeddings(data.join(REFERENCE_EMB))?;
            let run = train(&records, &qf, &rf, &cfg.train)?;
            let report = evaluate_holdout(&run, &records, &qf, &rf)?;
            create_dir(&out)?;
            write_params(&run.params, run.logit_scale, &out)?;
            write_text(&out.join("history.jsonl"), &run.history_jsonl())?;
            write_text(&out.join("report.json"), &report.to_json())?;
            write_text(&out.join("config.txt"), &cfg.to_text())?;
            let rows: Vec<usize> = (run.n_train..records.len()).collect();
            write_embeddings(&encode(&run.params, &qf.select(&rows)?, View::Query)?, out.join(QUERY_EMB))?;
            write_embeddings(&encode(&run.params, &rf.select(&rows)?, View::Reference)?, out.join(REFERENCE_EMB))?;
            println!("{}", report.to_json());
            Ok(())
        }
        Command::Eval { query, reference, manifest, out } => {
            let records = load_manifest(&manifest)?;
            let q = read_embeddings(&query)?;
            let r = read_embeddings(&reference)?;
            let report = evaluate(&q, &r, &records)?;
            write_text(&out, &report.to_json())?;
            println!("{}", report.to_json());
            Ok(())
        }
        Command::Gradcheck { config: c, n, overrides } => {
            let cfg = config(&c, &overrides)?;
            let rep = gradcheck(&cfg.train, n, 16, 32, 8)?;
            println!("{}", serde_json::to_string_pretty(&rep).expect("report serialises"));
            if rep.max_rel_error > 1e-6 {
                return Err(Error::Invalid(format!("max relative error {:.3e} exceeds 1e-6", rep.max_rel_error)));
            }
            Ok(())
        }
        Command::Ablate { config: c, seeds, out, overrides } => {
            let cfg = config(&c, &overrides)?;
            let table = run_ablate(&cfg, seeds)?;
            write_text(&out, &table.to_csv())?;
            write_text(&out.with_extension("json"), &table.to_json())?;
            print!("{}", table.to_csv());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
