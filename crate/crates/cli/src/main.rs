use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use matformer_core::dataset::{forge, load_corpus, write_corpus, CorpusSpec};
use matformer_core::metrics::{compute_report, ReportOptions};
use matformer_core::sequencer::{Codec, NodeOrdering, Quantizer};
use matformer_core::{evaluate_graph, graphfile, validate, Library, MaterialGraph};
use matformer_gen::model::read_quantizer;
use matformer_gen::{generate_graph, ModelConfig, Models, SamplerConfig, Stage, TrainConfig, Trainer};
use matformer_nn::Checkpoint;
use matformer_service::{router, AppState, DATA_DIR_ENV};

#[derive(Parser)]
#[command(name = "matformer", version, about = "Procedural material graph generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize, augment, filter and split a training corpus.
    ForgeData {
        #[arg(long)]
        graphs: usize,
        #[arg(long, default_value_t = 100)]
        augment: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        min_nodes: usize,
        #[arg(long, default_value_t = 120)]
        max_nodes: usize,
        /// Base graphs held out for validation (default: a tenth, at most 5).
        #[arg(long)]
        validation_bases: Option<usize>,
    },
    /// Train one generation stage.
    Train {
        #[arg(long)]
        stage: Stage,
        #[arg(long, default_value = "r")]
        order: NodeOrdering,
        #[arg(long)]
        corpus: PathBuf,
        /// Final checkpoint (best validation weights).
        #[arg(long)]
        out: PathBuf,
        /// Resume from a training-state checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 3)]
        patience: usize,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long)]
        max_steps: Option<u64>,
        #[arg(long, default_value_t = 2)]
        layers: usize,
        #[arg(long, default_value_t = 4)]
        heads: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Package three stage checkpoints into a model directory.
    Bundle {
        #[arg(long)]
        nodes: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        edges: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate graphs from a model bundle.
    Sample {
        #[arg(long)]
        models: PathBuf,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also write channel renders as PNG.
        #[arg(long)]
        render: bool,
        #[arg(long, default_value_t = 256)]
        resolution: usize,
    },
    /// Check graph files (or directories of them) against every graph invariant.
    Validate { paths: Vec<PathBuf> },
    /// Compare generated graphs with a reference corpus.
    Eval {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 40)]
        max_edit_samples: usize,
    },
    /// Run the authoring HTTP service.
    Serve {
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Session log directory; falls back to the environment variable.
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::ForgeData { graphs, augment, seed, out, min_nodes, max_nodes, validation_bases } => {
            let spec = CorpusSpec {
                graph_count: graphs,
                min_nodes,
                max_nodes,
                augmentations: augment,
                validation_bases: validation_bases.unwrap_or(graphs.div_ceil(10).min(5)),
                seed,
            };
            forge_data(&spec, &out)
        }
        Command::Train { stage, order, corpus, out, resume, epochs, patience, batch_size, lr, max_steps, layers, heads, dim, seed } => {
            let mut cfg = TrainConfig::new(stage, order);
            cfg.max_epochs = epochs;
            cfg.patience = patience;
            cfg.batch_size = batch_size.unwrap_or(stage.default_batch_size());
            cfg.adam.lr = lr;
            cfg.max_steps = max_steps;
            cfg.model = ModelConfig { layers, heads, dim };
            cfg.seed = seed;
            train(cfg, &corpus, &out, resume.as_deref())
        }
        Command::Bundle { nodes, params, edges, out } => bundle(&nodes, &params, &edges, &out),
        Command::Sample { models, count, seed, temperature, out, render, resolution } => {
            sample(&models, count, seed, temperature, &out, render.then_some(resolution))
        }
        Command::Validate { paths } => validate_files(&paths),
        Command::Eval { generated, reference, out, max_edit_samples } => eval(&generated, &reference, &out, max_edit_samples),
        Command::Serve { models, addr, data_dir } => serve(models.as_deref(), addr, data_dir),
    }
}

fn forge_data(spec: &CorpusSpec, out: &Path) -> Result<()> {
    let library = Library::builtin();
    let (train, validation, report) = forge(library.clone(), spec)?;
    let manifest = write_corpus(out, &library, spec, &train, &validation, report)?;
    println!(
        "wrote {} training and {} validation graphs to {} ({} dropped by filters)",
        manifest.train.len(),
        manifest.validation.len(),
        out.display(),
        manifest.filter.dropped
    );
    Ok(())
}

/// Training-state checkpoint kept next to the final one.
fn resume_path(out: &Path) -> PathBuf {
    out.with_extension("resume.mfck")
}

fn log_path(out: &Path) -> PathBuf {
    out.with_extension("log.json")
}

fn train(cfg: TrainConfig, corpus_dir: &Path, out: &Path, resume: Option<&Path>) -> Result<()> {
    let library = Library::builtin();
    let corpus = load_corpus(corpus_dir, library.clone()).with_context(|| format!("loading corpus {}", corpus_dir.display()))?;
    if corpus.train.is_empty() {
        bail!("corpus {} has no training graphs", corpus_dir.display());
    }
    let quantizer = Quantizer::fit(&library, &corpus.train);
    let codec = Codec::new(library, quantizer);
    let mut trainer = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if read_quantizer(&ck)?.content_hash() != codec.quantizer.content_hash() {
                bail!("{} was trained on a different corpus (quantizer mismatch)", p.display());
            }
            let mut t = Trainer::resume(codec, &ck)?;
            t.state.config.max_epochs = cfg.max_epochs;
            t.state.config.patience = cfg.patience;
            t.state.config.max_steps = cfg.max_steps;
            if t.config().stage != cfg.stage || t.config().ordering != cfg.ordering {
                bail!(
                    "{} holds a {} model with ordering {}, asked for {} with {}",
                    p.display(),
                    t.config().stage,
                    t.config().ordering,
                    cfg.stage,
                    cfg.ordering
                );
            }
            eprintln!("resuming at epoch {} step {}", t.state.epoch, t.state.step);
            t
        }
        None => Trainer::new(codec, cfg)?,
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let (resume_file, log_file) = (resume_path(out), log_path(out));
    trainer.train(&corpus.train, &corpus.validation, |t, log| {
        let val = log.val_loss.map_or("n/a".to_string(), |v| format!("{v:.5}"));
        eprintln!("epoch {:>3}  steps {:>6}  train {:.5}  val {val}", log.epoch, t.state.step, log.train_loss);
        t.checkpoint()?.save(&resume_file)?;
        std::fs::write(&log_file, serde_json::to_string_pretty(&t.state.log)?)?;
        Ok(())
    })?;
    let codec = trainer.codec.clone();
    let model = trainer.finish();
    model.to_checkpoint(&codec)?.save(out)?;
    println!("wrote {} ({} stage, ordering {})", out.display(), model.stage, model.ordering);
    Ok(())
}

fn bundle(nodes: &Path, params: &Path, edges: &Path, out: &Path) -> Result<()> {
    let load = |p: &Path| Checkpoint::load(p).with_context(|| format!("reading {}", p.display()));
    let (n, p, e) = (load(nodes)?, load(params)?, load(edges)?);
    let models = Models::from_checkpoints(Library::builtin(), [&n, &p, &e])?;
    models.save(out)?;
    println!("bundled {} models (ordering {}) into {}", Stage::ALL.len(), models.ordering, out.display());
    Ok(())
}

fn sample(models_dir: &Path, count: usize, seed: u64, temperature: f64, out: &Path, render: Option<usize>) -> Result<()> {
    let models = Models::load(models_dir, Library::builtin()).with_context(|| format!("loading models {}", models_dir.display()))?;
    std::fs::create_dir_all(out)?;
    for i in 0..count {
        let cfg = SamplerConfig::with_temperature(temperature, matformer_gen::train::mix_seed(seed, i as u64, 0x5a));
        let g = generate_graph(&models, &cfg)?;
        let name = format!("sample_{i:05}");
        graphfile::save(&g.graph, &out.join(format!("{name}.mfg")))?;
        if let Some(res) = render {
            evaluate_graph(&g.graph, res)?.save_pngs(out, &name)?;
        }
    }
    println!("wrote {count} graphs to {}", out.display());
    Ok(())
}

fn graph_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .filter(|p| p.extension().is_some_and(|x| x == "mfg"))
            .collect();
        files.sort();
        Ok(files)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

fn load_graphs(dir: &Path, library: &Arc<Library>) -> Result<Vec<MaterialGraph>> {
    graph_files(dir)?.iter().map(|p| graphfile::load(p, library.clone()).with_context(|| p.display().to_string())).collect()
}

fn validate_files(paths: &[PathBuf]) -> Result<()> {
    let library = Library::builtin();
    let (mut ok, mut bad) = (0usize, 0usize);
    for path in paths {
        for file in graph_files(path)? {
            let result = graphfile::load(&file, library.clone()).map_err(anyhow::Error::from).and_then(|g| Ok(validate(&g)?));
            match result {
                Ok(()) => ok += 1,
                Err(e) => {
                    bad += 1;
                    eprintln!("{}: {e}", file.display());
                }
            }
        }
    }
    println!("{ok} valid, {bad} invalid");
    if bad > 0 {
        bail!("{bad} graph(s) failed validation");
    }
    Ok(())
}

fn eval(generated: &Path, reference: &Path, out: &Path, max_edit_samples: usize) -> Result<()> {
    let library = Library::builtin();
    let gen = load_graphs(generated, &library)?;
    let reference = load_graphs(reference, &library)?;
    let opts = ReportOptions { max_edit_samples, ..ReportOptions::default() };
    let report = compute_report(&gen, &reference, &opts)?;
    std::fs::write(out, serde_json::to_string_pretty(&report)? + "\n")?;
    print!("{}", report.to_table());
    Ok(())
}

fn serve(models: Option<&Path>, addr: SocketAddr, data_dir: Option<PathBuf>) -> Result<()> {
    let library = Library::builtin();
    let models = models.map(|m| Models::load(m, library.clone()).map(Arc::new)).transpose()?;
    let data_dir = data_dir.or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from));
    let state = Arc::new(AppState::new(library, models, data_dir)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(state)).await?;
        Ok(())
    })
}
