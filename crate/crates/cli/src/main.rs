use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;

use knowddi::checkpoint::{Checkpoint, CheckpointMeta};
use knowddi::data::{from_planted, preprocess_files, Dataset, PreprocessOptions};
use knowddi::eval::evaluate;
use knowddi::explain::{enumerate_explaining_paths, export_dot, path_report, ExplainOptions};
use knowddi::graph::{CombinedNetwork, FactTriplet, NodeId};
use knowddi::subgraph::SubgraphMode;
use knowddi::synthetic::{planted_rule, PlantedSpec};
use knowddi::training::{train, Predictor};
use knowddi::{Error, RunConfig, Task};

const CHECKPOINT_FILE: &str = "checkpoint.kddi";
const CONFIG_FILE: &str = "config.txt";

#[derive(Parser, Debug)]
#[command(name = "knowddi", version, about = "Explainable drug-drug interaction prediction with learned knowledge subgraphs")]
struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Filter and split raw triples into a data directory.
    Preprocess(PreprocessArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Score a split and write a metrics report.
    Eval(EvalArgs),
    /// Predict interactions for drug pairs.
    Predict(PredictArgs),
    /// Rank explaining paths for a drug pair and export the subgraph.
    Explain(ExplainArgs),
    /// Run the built-in reference checks.
    Selftest(SelftestArgs),
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    /// DDI triples (head, relation, tail; tab-separated).
    #[arg(long, required_unless_present = "synthetic")]
    ddi: Option<PathBuf>,
    /// External knowledge-graph triples.
    #[arg(long)]
    kg: Option<PathBuf>,
    /// Generate the planted-rule benchmark instead of reading files.
    #[arg(long, conflicts_with_all = ["ddi", "kg"])]
    synthetic: bool,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep one relation per ordered drug pair.
    #[arg(long)]
    one_relation_per_pair: bool,
    /// Keep relations ranked START..END by frequency with at least MIN triples.
    #[arg(long, value_name = "START,END,MIN")]
    rank_window: Option<String>,
    /// train,valid,test proportions.
    #[arg(long, default_value = "7,1,2")]
    ratios: String,
}

/// Flags shared by commands that build a run configuration.
#[derive(Args, Debug, Default)]
struct ConfigFlags {
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    kg_fraction: Option<f64>,
    #[arg(long)]
    subgraph_mode: Option<SubgraphMode>,
    /// Override any configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigFlags {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.task {
            cfg.task = t;
        }
        if let Some(f) = self.kg_fraction {
            cfg.kg_fraction = f;
        }
        if let Some(m) = self.subgraph_mode {
            cfg.subgraph_mode = m;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    flags: ConfigFlags,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long)]
    data_dir: PathBuf,
    /// Checkpoint file, or a training output directory holding one.
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "test", value_parser = ["train", "valid", "test"])]
    split: String,
    /// Where to write metrics.txt and metrics.kv.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// HEAD,TAIL drug labels (repeatable).
    #[arg(long = "pair")]
    pairs: Vec<String>,
    /// File with one HEAD<TAB>TAIL pair per line.
    #[arg(long)]
    pair_file: Option<PathBuf>,
    /// Write predictions here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExplainArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    pair: String,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    max_paths: usize,
    /// Pad paths with the tail's identity loop and include it in the mean.
    #[arg(long)]
    pad_identity: bool,
}

#[derive(Args, Debug)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Errors in command-line use rather than in the data.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return 1;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 1,
        Some(Error::NonFinite(_)) | Some(Error::Shape { .. }) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads.max(1)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| run(cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cmd: Command) -> anyhow::Result<ExitCode> {
    match cmd {
        Command::Preprocess(a) => preprocess(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Explain(a) => explain_cmd(a),
        Command::Selftest(a) => selftest(a),
    }
}

fn parse_list(s: &str, n: usize, what: &str) -> anyhow::Result<Vec<usize>> {
    let v: Vec<usize> = s
        .split(',')
        .map(|x| x.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| Usage(format!("{what}: expected {n} comma-separated integers, got `{s}`")))?;
    if v.len() != n {
        bail!(Usage(format!("{what}: expected {n} values, got {}", v.len())));
    }
    Ok(v)
}

fn preprocess(a: PreprocessArgs) -> anyhow::Result<ExitCode> {
    let r = parse_list(&a.ratios, 3, "--ratios")?;
    let opts = PreprocessOptions {
        one_relation_per_pair: a.one_relation_per_pair,
        rank_window: match &a.rank_window {
            Some(w) => {
                let v = parse_list(w, 3, "--rank-window")?;
                Some((v[0], v[1], v[2]))
            }
            None => None,
        },
        ratios: (r[0] as u32, r[1] as u32, r[2] as u32),
        seed: a.seed,
    };
    let (ds, source) = if a.synthetic {
        let spec = PlantedSpec {
            seed: a.seed,
            ..PlantedSpec::default()
        };
        (from_planted(planted_rule(&spec), &opts)?, "synthetic planted rule".to_owned())
    } else {
        let ddi = a.ddi.as_deref().expect("required by clap");
        (
            preprocess_files(ddi, a.kg.as_deref(), &opts)?,
            format!("{} + {}", ddi.display(), a.kg.as_ref().map_or("no KG".into(), |k| k.display().to_string())),
        )
    };
    let mut notes = String::new();
    let _ = writeln!(notes, "source={source}");
    let _ = writeln!(notes, "seed={}", opts.seed);
    let _ = writeln!(notes, "ratios={}", a.ratios);
    let _ = writeln!(notes, "one_relation_per_pair={}", opts.one_relation_per_pair);
    let _ = writeln!(notes, "rank_window={}", a.rank_window.as_deref().unwrap_or("none"));
    ds.write(&a.out_dir, &notes)?;
    println!(
        "wrote {} (train {}, valid {}, test {}, kg {})",
        a.out_dir.display(),
        ds.splits.train.len(),
        ds.splits.valid.len(),
        ds.splits.test.len(),
        ds.kg.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn train_cmd(a: TrainArgs) -> anyhow::Result<ExitCode> {
    let cfg = a.flags.resolve()?;
    let ds = Dataset::load(&a.data_dir)?;
    let net = ds.network(cfg.kg_fraction, cfg.seed);
    info!(
        "combined network: {} nodes, {} edges, {} DDI relations",
        net.num_nodes(),
        net.num_edges(),
        net.ddi_relations().len()
    );
    create_dir(&a.out_dir)?;
    write_file(&a.out_dir.join(CONFIG_FILE), &cfg.to_text())?;
    let out = train(&net, &ds.splits, &cfg)?;
    let mut log = String::from("epoch\ttrain_loss\tvalid_loss\n");
    for h in &out.history {
        let _ = writeln!(log, "{}\t{:?}\t{:?}", h.epoch, h.train_loss, h.valid_loss);
    }
    write_file(&a.out_dir.join("train_log.tsv"), &log)?;
    let ckpt = Checkpoint {
        config: cfg,
        meta: CheckpointMeta {
            epochs_run: out.epochs_run,
            best_epoch: out.best_epoch,
            best_valid_loss: out.best_valid_loss,
            ..CheckpointMeta::for_network(&net)
        },
        model: out.model,
    };
    let path = a.out_dir.join(CHECKPOINT_FILE);
    ckpt.save(&path)?;
    println!(
        "trained {} epochs (best {} with validation loss {:.6}); checkpoint {}",
        out.epochs_run,
        out.best_epoch,
        out.best_valid_loss,
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

struct Loaded {
    ckpt: Checkpoint,
    ds: Dataset,
    net: CombinedNetwork,
}

fn load_model(m: &ModelArgs) -> anyhow::Result<Loaded> {
    let path = if m.checkpoint.is_dir() {
        m.checkpoint.join(CHECKPOINT_FILE)
    } else {
        m.checkpoint.clone()
    };
    let ckpt = Checkpoint::load(&path)?;
    let ds = Dataset::load(&m.data_dir)?;
    let net = ds.network(ckpt.config.kg_fraction, ckpt.config.seed);
    ckpt.check_network(&net)?;
    Ok(Loaded { ckpt, ds, net })
}

fn eval_cmd(a: EvalArgs) -> anyhow::Result<ExitCode> {
    let l = load_model(&a.model)?;
    let triples = match a.split.as_str() {
        "train" => &l.ds.splits.train,
        "valid" => &l.ds.splits.valid,
        _ => &l.ds.splits.test,
    };
    let known: HashSet<FactTriplet> = l.ds.splits.all().copied().collect();
    let predictor = Predictor::new(&l.ckpt.model, &l.net, &l.ckpt.config)?;
    let report = evaluate(&predictor, triples, &known, l.ckpt.config.seed ^ 0xE7A1)?;
    let text = report.to_text();
    print!("{text}");
    if let Some(dir) = &a.out_dir {
        create_dir(dir)?;
        write_file(&dir.join("metrics.txt"), &text)?;
        let mut kv = format!("split={}\nrecords={}\n", a.split, triples.len());
        kv.push_str(&report.to_kv());
        write_file(&dir.join("metrics.kv"), &kv)?;
        write_file(&dir.join(CONFIG_FILE), &l.ckpt.config.to_text())?;
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_pair(net: &CombinedNetwork, s: &str) -> anyhow::Result<(NodeId, NodeId)> {
    let (h, t) = s
        .split_once(',')
        .or_else(|| s.split_once('\t'))
        .ok_or_else(|| Usage(format!("pair `{s}` must be HEAD,TAIL")))?;
    let vocab = net.vocab();
    Ok((vocab.node(h.trim())?, vocab.node(t.trim())?))
}

fn predict_cmd(a: PredictArgs) -> anyhow::Result<ExitCode> {
    let l = load_model(&a.model)?;
    let mut specs = a.pairs.clone();
    if let Some(f) = &a.pair_file {
        let text = std::fs::read_to_string(f).map_err(|e| Error::Io {
            path: f.clone(),
            source: e,
        })?;
        specs.extend(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_owned),
        );
    }
    if specs.is_empty() {
        bail!(Usage("give at least one --pair or a --pair-file".into()));
    }
    let pairs: Vec<(NodeId, NodeId)> = specs.iter().map(|s| parse_pair(&l.net, s)).collect::<anyhow::Result<_>>()?;
    let predictor = Predictor::new(&l.ckpt.model, &l.net, &l.ckpt.config)?;
    let preds = predictor.predict_many(&pairs)?;
    let vocab = l.net.vocab();
    let labels: Vec<&str> = l.net.ddi_relations().iter().map(|&r| vocab.relations.label(r)).collect();
    let mut out = String::new();
    match l.ckpt.config.task {
        Task::Multiclass => {
            out.push_str("head\ttail\tpredicted\tprobability\n");
            for p in &preds {
                let c = p.class.expect("multiclass prediction has a class");
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{:.6}",
                    vocab.nodes.label(p.head),
                    vocab.nodes.label(p.tail),
                    labels[c],
                    p.scores[c]
                );
            }
        }
        Task::Multilabel => {
            let _ = writeln!(out, "head\ttail\t{}", labels.join("\t"));
            for p in &preds {
                let scores: Vec<String> = p.scores.iter().map(|s| format!("{s:.6}")).collect();
                let _ = writeln!(out, "{}\t{}\t{}", vocab.nodes.label(p.head), vocab.nodes.label(p.tail), scores.join("\t"));
            }
        }
    }
    match &a.output {
        Some(p) => write_file(p, &out)?,
        None => print!("{out}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn explain_cmd(a: ExplainArgs) -> anyhow::Result<ExitCode> {
    let l = load_model(&a.model)?;
    let (h, t) = parse_pair(&l.net, &a.pair)?;
    let predictor = Predictor::new(&l.ckpt.model, &l.net, &l.ckpt.config)?;
    let ks = predictor.knowledge_subgraph(h, t)?;
    let opts = ExplainOptions {
        max_paths: a.max_paths,
        pad_with_identity: a.pad_identity,
    };
    let paths = enumerate_explaining_paths(&ks, &opts);
    let vocab = l.net.vocab();
    let report = path_report(&ks, vocab, &paths);
    if paths.is_empty() {
        println!("no explaining path with positive strength");
    } else {
        print!("{report}");
    }
    if let Some(dir) = &a.out_dir {
        create_dir(dir)?;
        write_file(&dir.join("paths.tsv"), &report)?;
        write_file(&dir.join("subgraph.dot"), &export_dot(&ks, vocab, &paths))?;
        write_file(&dir.join(CONFIG_FILE), &l.ckpt.config.to_text())?;
    }
    Ok(ExitCode::SUCCESS)
}

fn selftest(a: SelftestArgs) -> anyhow::Result<ExitCode> {
    let results = knowddi::selftest::run_all(a.seed);
    let mut ok = true;
    for r in &results {
        println!("{} {:<20} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        ok &= r.passed;
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(3) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(exit_code(&anyhow::Error::new(Error::Config("x".into()))), 1);
        assert_eq!(exit_code(&anyhow::Error::new(Usage("x".into()))), 1);
        assert_eq!(exit_code(&anyhow::Error::new(Error::Data("x".into()))), 2);
        assert_eq!(exit_code(&anyhow::Error::new(Error::NonFinite("x".into()))), 3);
    }

    #[test]
    fn comma_lists() {
        assert_eq!(parse_list("7, 1,2", 3, "r").unwrap(), vec![7, 1, 2]);
        assert!(parse_list("7,1", 3, "r").is_err());
        assert!(parse_list("a,b,c", 3, "r").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
