mod manifest;

use std::fs;
use std::io::Write;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use brm_core::corpus::{kfold_split, read_conllu_file, to_conllu, Proportions, SplitManifest};
use brm_core::eval::{annotate_trace, back_stats, back_stats_table, metrics_table, paired_bootstrap, score, Measure};
use brm_core::machine::{render_trace, TraceFile};
use brm_core::synthetic;
use brm_core::training::{decode_all, train, MetricsLog};
use brm_core::{MachineKind, Model, OptimizerConfig, Regime, Sentence, TrainConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use manifest::{sidecar, RunManifest};

#[derive(Parser)]
#[command(name = "brm", version, about = "Backtracking reading machines: tagging and arc-eager parsing with BACK")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write it with its metrics log and run manifest.
    Train(TrainArgs),
    /// Tag and/or parse a CoNLL-U file with a trained model.
    Decode(DecodeArgs),
    /// Score predictions against gold, optionally against a second system.
    Eval(EvalArgs),
    /// BACK action statistics of decode traces.
    Stats(StatsArgs),
    /// Render decode traces as tape diagrams.
    Trace(TraceArgs),
    /// Write k-fold train/dev/test splits of a corpus.
    Split(SplitArgs),
    /// Write a synthetic corpus.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Training corpus (CoNLL-U).
    #[arg(long, required_unless_present = "from_manifest")]
    train: Option<PathBuf>,
    /// Development corpus used to select the best epoch.
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON training configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Re-run a previous training run from its manifest.
    #[arg(long, conflicts_with_all = ["train", "dev", "config"])]
    from_manifest: Option<PathBuf>,
    #[arg(long)]
    machine: Option<MachineKind>,
    #[arg(long)]
    regime: Option<Regime>,
    /// BACK budget per word (rl-backtrack only).
    #[arg(long)]
    k: Option<u32>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    word_dim: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Pretrained word vectors in text format.
    #[arg(long)]
    word_vectors: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Output CoNLL-U file; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Expected machine kind; decoding fails if the model differs.
    #[arg(long)]
    machine: Option<MachineKind>,
    /// Override the BACK budget of a backtracking model.
    #[arg(long)]
    k: Option<u32>,
    /// Write tape diagrams of every sentence.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the action sequences as JSON (input of `stats` and `trace`).
    #[arg(long)]
    actions: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    /// Second system; prints paired bootstrap p-values against it.
    #[arg(long)]
    compare: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    resamples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct StatsArgs {
    /// Action file written by `decode --actions`.
    #[arg(long)]
    actions: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct TraceArgs {
    #[arg(long)]
    actions: PathBuf,
    /// The corpus that was decoded.
    #[arg(long)]
    input: PathBuf,
    /// Only this sentence (1-based).
    #[arg(long)]
    sentence: Option<usize>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.8)]
    train_share: f64,
    #[arg(long, default_value_t = 0.1)]
    dev_share: f64,
    #[arg(long, default_value_t = 0.1)]
    test_share: f64,
    /// Also write every fold as CoNLL-U files.
    #[arg(long)]
    write_files: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SyntheticKind {
    Toy,
    Alternation,
    RightContext,
    RandomTrees,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    kind: SyntheticKind,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum sentence length for random trees.
    #[arg(long, default_value_t = 10)]
    max_len: usize,
    #[arg(long)]
    output: PathBuf,
}

/// Error classes mapped to exit codes 2 and 1.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

type CmdResult<T = ()> = Result<T, Failure>;

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(anyhow!("{msg}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Trace(a) => cmd_trace(a),
        Command::Split(a) => cmd_split(a),
        Command::Generate(a) => cmd_generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Reads a corpus; a missing file is a usage error.
fn read_corpus(path: &Path) -> CmdResult<Vec<Sentence>> {
    if !path.is_file() {
        return Err(usage(format!("corpus file {} does not exist", path.display())));
    }
    Ok(read_conllu_file(path).with_context(|| format!("reading {}", path.display()))?)
}

fn write_file(path: &Path, contents: &str) -> CmdResult {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn build_config(args: &TrainArgs) -> CmdResult<TrainConfig> {
    let value = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
            serde_json::from_str::<serde_json::Value>(&text)
                .map_err(|e| usage(format!("config {}: {e}", path.display())))?
        }
        None => serde_json::json!({}),
    };
    let has_epochs = value.get("epochs").is_some();
    let mut config: TrainConfig = serde_json::from_value(value).map_err(|e| usage(format!("config: {e}")))?;
    if let Some(m) = args.machine {
        config.machine = m;
    }
    if let Some(r) = args.regime {
        config.regime = r;
    }
    if let Some(k) = args.k {
        config.k = k;
    }
    config.epochs = args
        .epochs
        .unwrap_or(if has_epochs { config.epochs } else { TrainConfig::default_epochs(config.machine) });
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let lr = args.lr.unwrap_or(config.optimizer.lr());
    config.optimizer = match (args.optimizer, config.optimizer) {
        (Some(OptimizerKind::Sgd), _) => OptimizerConfig::sgd(lr),
        (Some(OptimizerKind::Adam), _) => OptimizerConfig::adam(lr),
        (None, OptimizerConfig::Sgd { .. }) => OptimizerConfig::sgd(lr),
        (None, OptimizerConfig::Adam { beta1, beta2, eps, .. }) => OptimizerConfig::Adam { lr, beta1, beta2, eps },
    };
    if let Some(g) = args.gamma {
        config.gamma = g;
    }
    if let Some(b) = args.batch_size {
        config.batch_size = b;
    }
    if let Some(h) = args.hidden {
        config.dims.hidden = h;
    }
    if let Some(d) = args.word_dim {
        config.dims.word_dim = d;
    }
    if let Some(d) = args.embed_dim {
        config.dims.embed_dim = d;
    }
    if let Some(d) = args.dropout {
        config.dims.dropout = d;
    }
    if let Some(p) = &args.word_vectors {
        config.word_vectors = Some(p.clone());
    }
    config.validate().map_err(usage)?;
    Ok(config)
}

fn cmd_train(args: TrainArgs) -> CmdResult {
    let (config, train_path, dev_path) = match &args.from_manifest {
        Some(path) => {
            let old = RunManifest::read(path).map_err(Failure::Usage)?;
            let config: TrainConfig = serde_json::from_value(old.config.clone())
                .map_err(|e| usage(format!("manifest config: {e}")))?;
            config.validate().map_err(usage)?;
            for c in &old.corpora {
                let now = manifest::sha256_file(&c.path).map_err(Failure::Usage)?;
                if now != c.sha256 {
                    return Err(usage(format!("{} changed since the recorded run", c.path.display())));
                }
            }
            let train = old.corpus("train").ok_or_else(|| usage("manifest lists no training corpus"))?;
            (config, train.path.clone(), old.corpus("dev").map(|c| c.path.clone()))
        }
        None => (build_config(&args)?, args.train.clone().expect("required by clap"), args.dev.clone()),
    };
    let train_set = read_corpus(&train_path)?;
    let dev_set = match &dev_path {
        Some(p) => read_corpus(p)?,
        None => {
            warn!("no dev corpus: the best epoch is chosen on the training data");
            Vec::new()
        }
    };
    if train_set.is_empty() {
        return Err(usage(format!("{} contains no sentence", train_path.display())));
    }

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let model_path = args.out.join("model.brm");
    let last_path = args.out.join("last.brm");
    let metrics_path = args.out.join("metrics.jsonl");
    let manifest_path = args.out.join("manifest.json");

    let mut run = RunManifest::new("train", serde_json::to_value(&config)?);
    run.seeds.push(config.seed);
    run.add_corpus("train", &train_path, train_set.len())?;
    if let Some(p) = &dev_path {
        run.add_corpus("dev", p, dev_set.len())?;
    }
    run.model = Some(model_path.clone());
    run.outputs = vec![model_path.clone(), last_path.clone(), metrics_path.clone()];
    run.write(&manifest_path)?;

    info!(
        "training {} ({}, k={}) on {} sentences for {} epochs",
        config.machine,
        config.regime.name(),
        config.k,
        train_set.len(),
        config.epochs
    );
    let file = fs::File::create(&metrics_path).with_context(|| format!("creating {}", metrics_path.display()))?;
    let mut log = MetricsLog::new(std::io::BufWriter::new(file));
    let mut log_error = None;
    let outcome = train(&train_set, &dev_set, &config, &mut |m| match log.write(m) {
        Ok(()) => ControlFlow::Continue(()),
        Err(e) => {
            log_error = Some(e);
            ControlFlow::Break(())
        }
    })?;
    if let Some(e) = log_error {
        return Err(anyhow::Error::new(e).context("writing the metrics log").into());
    }
    outcome.best.save(&model_path).context("saving the model")?;
    outcome.last.save(&last_path).context("saving the model")?;
    info!("best epoch {} written to {}", outcome.best_epoch, model_path.display());
    Ok(())
}

fn load_model(path: &Path) -> CmdResult<Model> {
    if !path.is_file() {
        return Err(usage(format!("model file {} does not exist", path.display())));
    }
    Ok(Model::load(path).with_context(|| format!("loading {}", path.display()))?)
}

fn cmd_decode(args: DecodeArgs) -> CmdResult {
    let model = load_model(&args.model)?;
    if let Some(kind) = args.machine {
        if kind != model.machine.kind {
            return Err(anyhow!("model is a {} but --machine asks for a {kind}", model.machine.kind).into());
        }
    }
    if args.k.is_some_and(|k| k > 0) && !model.machine.is_backtracking() {
        return Err(usage("--k needs a model trained with the rl-backtrack regime"));
    }
    let input = read_corpus(&args.input)?;
    let machine = args.k.map_or(model.machine, |k| model.machine.with_k(k));
    let decoded = decode_all(&model, &input, args.k)?;
    let predicted: Vec<Sentence> = decoded.iter().map(|d| d.sentence.clone()).collect();
    let conllu = to_conllu(&predicted);

    let mut outputs = Vec::new();
    if let Some(path) = &args.trace {
        let mut text = String::new();
        for (i, (d, s)) in decoded.iter().zip(&input).enumerate() {
            let forms: Vec<&str> = s.forms().collect();
            text.push_str(&format!("# sentence {}\n", i + 1));
            text.push_str(&render_trace(&forms, &model.tags, &machine, &d.actions)?);
            text.push('\n');
        }
        write_file(path, &text)?;
        outputs.push(path.clone());
    }
    if let Some(path) = &args.actions {
        let mut file = TraceFile::new(&machine, &model.tags);
        decoded.iter().for_each(|d| file.push(&d.actions));
        write_file(path, &(serde_json::to_string_pretty(&file)? + "\n"))?;
        outputs.push(path.clone());
    }
    let backs: usize = decoded.iter().map(|d| d.n_backs()).sum();
    info!("decoded {} sentences, {backs} BACK actions", decoded.len());

    match &args.output {
        Some(path) => {
            write_file(path, &conllu)?;
            outputs.push(path.clone());
            let config = serde_json::json!({ "k": args.k, "machine": model.machine });
            let mut run = RunManifest::new("decode", config);
            run.add_corpus("input", &args.input, input.len())?;
            run.model = Some(args.model.clone());
            run.outputs = outputs;
            run.write(&sidecar(path))?;
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(conllu.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> CmdResult {
    let gold = read_corpus(&args.gold)?;
    let pred = read_corpus(&args.pred)?;
    let metrics = score(&pred, &gold)?;
    let mut rows = vec![(args.pred.display().to_string(), metrics)];
    let mut p_values = None;
    if let Some(other_path) = &args.compare {
        let other = read_corpus(other_path)?;
        rows.push((other_path.display().to_string(), score(&other, &gold)?));
        let p = |m| paired_bootstrap(&pred, &other, &gold, m, args.resamples, args.seed);
        p_values = Some((p(Measure::Upos)?, p(Measure::Uas)?));
    }
    if args.json {
        let report = serde_json::json!({
            "metrics": rows.iter().map(|(name, m)| serde_json::json!({ "system": name, "metrics": m })).collect::<Vec<_>>(),
            "p_values": p_values.map(|(u, h)| serde_json::json!({ "upos": u, "uas": h })),
            "resamples": args.resamples,
        });
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", metrics_table(&rows));
        if let Some((u, h)) = p_values {
            println!(
                "paired bootstrap ({} resamples), p that the second system is at least as good: UPOS {u:.4}, UAS {h:.4}",
                args.resamples
            );
        }
    }
    Ok(())
}

fn read_actions(path: &Path) -> CmdResult<TraceFile> {
    if !path.is_file() {
        return Err(usage(format!("action file {} does not exist", path.display())));
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?)
}

fn cmd_stats(args: StatsArgs) -> CmdResult {
    let file = read_actions(&args.actions)?;
    let gold = read_corpus(&args.gold)?;
    let actions = file.actions().map_err(|e| anyhow!("{}: {e}", args.actions.display()))?;
    if actions.len() != gold.len() {
        return Err(anyhow!("{} traces for {} gold sentences", actions.len(), gold.len()).into());
    }
    let machine = file.machine();
    let traces = actions
        .iter()
        .zip(&gold)
        .map(|(a, s)| annotate_trace(s, &file.tags, &machine, a))
        .collect::<Result<Vec<_>, _>>()?;
    let stats = back_stats(&traces)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&stats)?);
    } else {
        println!("{}", back_stats_table(&[(args.actions.display().to_string(), stats)]));
        if stats.undefined {
            println!("note: no BACK actions or no erroneous spans, undefined ratios are reported as 0");
        }
    }
    Ok(())
}

fn cmd_trace(args: TraceArgs) -> CmdResult {
    let file = read_actions(&args.actions)?;
    let input = read_corpus(&args.input)?;
    let actions = file.actions().map_err(|e| anyhow!("{}: {e}", args.actions.display()))?;
    if actions.len() != input.len() {
        return Err(anyhow!("{} traces for {} input sentences", actions.len(), input.len()).into());
    }
    let machine = file.machine();
    let selected: Vec<usize> = match args.sentence {
        Some(i) if i == 0 || i > input.len() => {
            return Err(usage(format!("--sentence must lie in 1..={}", input.len())));
        }
        Some(i) => vec![i - 1],
        None => (0..input.len()).collect(),
    };
    let mut out = String::new();
    for i in selected {
        let forms: Vec<&str> = input[i].forms().collect();
        out.push_str(&format!("# sentence {}\n", i + 1));
        out.push_str(&render_trace(&forms, &file.tags, &machine, &actions[i])?);
        out.push('\n');
    }
    print!("{out}");
    Ok(())
}

fn cmd_split(args: SplitArgs) -> CmdResult {
    let corpus = read_corpus(&args.input)?;
    let proportions = Proportions { train: args.train_share, dev: args.dev_share, test: args.test_share };
    let splits = kfold_split(corpus.len(), args.folds, args.seed, proportions).map_err(usage)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let split_path = args.out.join("split.json");
    let split = SplitManifest {
        seed: args.seed,
        folds: args.folds,
        proportions,
        corpus_size: corpus.len(),
        splits,
    };
    write_file(&split_path, &(serde_json::to_string_pretty(&split)? + "\n"))?;
    let mut outputs = vec![split_path];
    if args.write_files {
        for s in &split.splits {
            let dir = args.out.join(format!("fold-{}", s.fold_id));
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            for (name, indices) in [("train", &s.train), ("dev", &s.dev), ("test", &s.test)] {
                let part: Vec<Sentence> = indices.iter().map(|&i| corpus[i].clone()).collect();
                let path = dir.join(format!("{name}.conllu"));
                write_file(&path, &to_conllu(&part))?;
                outputs.push(path);
            }
        }
    }
    let mut run = RunManifest::new("split", serde_json::to_value(proportions)?);
    run.seeds.push(args.seed);
    run.add_corpus("input", &args.input, corpus.len())?;
    run.outputs = outputs;
    run.write(&args.out.join("manifest.json"))?;
    info!("{} folds written to {}", args.folds, args.out.display());
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> CmdResult {
    if args.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    let corpus = match args.kind {
        SyntheticKind::Toy => synthetic::toy_corpus(args.count, args.seed),
        SyntheticKind::Alternation => synthetic::alternation_corpus(args.count, args.seed),
        SyntheticKind::RightContext => synthetic::right_context_corpus(args.count, args.seed),
        SyntheticKind::RandomTrees => {
            if args.max_len == 0 {
                return Err(usage("--max-len must be at least 1"));
            }
            synthetic::random_trees(args.count, args.max_len, args.seed)
        }
    };
    write_file(&args.output, &to_conllu(&corpus))?;
    Ok(())
}
