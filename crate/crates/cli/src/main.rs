//! Command-line pipeline: data preparation, training, evaluation, and
//! edge-trust reports. Every subcommand echoes its effective configuration
//! into the output directory and is reproducible from that echo plus the
//! seed; artifacts carry no timestamps.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use edgetrust::attention;
use edgetrust::checkpoint;
use edgetrust::eval::Evaluator;
use edgetrust::graph::{GraphBuilder, Split, Triple};
use edgetrust::interpret::{self, OcclusionMode};
use edgetrust::perturb::{self, ConditionName};
use edgetrust::snapshot;
use edgetrust::train::{self, TrainConfig};
use edgetrust::{KnowledgeGraph, ModelParameters};

/// Top-level configuration, loadable from TOML and overridable per flag.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RunConfig {
    /// Seed for data operations (prepare, gen-dd).
    seed: u64,
    /// Worker-thread cap; 0 lets the runtime decide.
    threads: usize,
    /// Condition for `prepare`.
    condition: Option<String>,
    /// Fraction for the sweep condition.
    fraction: Option<f64>,
    train: TrainConfig,
}

#[derive(Parser)]
#[command(
    name = "edgetrust",
    version,
    about = "Link prediction over multi-relational graphs with learnable per-edge trust weights"
)]
struct Cli {
    /// Seed override for both data operations and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML configuration file; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a condition graph from triple files.
    Prepare(PrepareArgs),
    /// Train a model on a prepared graph.
    Train(TrainArgs),
    /// Rank-based evaluation of a checkpoint.
    Evaluate(EvaluateArgs),
    /// Occlusion scan of an arbitrary triple.
    Interrogate(InterrogateArgs),
    /// Top/bottom incoming edges of an entity by learned weight.
    Influencers(InfluencersArgs),
    /// Per-edge raw and normalized weight CSV.
    ExportWeights(ExportWeightsArgs),
    /// Generate a duplication-divergence benchmark graph.
    GenDd(GenDdArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// Training triples (head<TAB>relation<TAB>tail).
    #[arg(long)]
    triples: PathBuf,
    /// Validation triples.
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Test triples.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Condition: full, half, skip, noised, sweep.
    #[arg(long)]
    condition: Option<String>,
    /// Noise fraction for sweep.
    #[arg(long)]
    fraction: Option<f64>,
    /// Disable inverse-relation augmentation.
    #[arg(long)]
    no_inverse: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Prepared graph snapshot.
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    dropout_emb: Option<f64>,
    #[arg(long)]
    dropout_link: Option<f64>,
    /// distmult or complex.
    #[arg(long)]
    decoder: Option<String>,
    /// learned or fixed-uniform.
    #[arg(long)]
    attention: Option<String>,
    /// Disable the per-node bias term.
    #[arg(long)]
    no_bias: bool,
    #[arg(long)]
    valid_every: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// train, valid or test.
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct InterrogateArgs {
    /// Subject entity name.
    subject: String,
    /// Relation name.
    relation: String,
    /// Object entity name.
    object: String,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Additional run checkpoints for standard errors.
    #[arg(long, value_delimiter = ',')]
    runs: Vec<PathBuf>,
    /// Zero the edge without redistributing the node's budget.
    #[arg(long)]
    freeze_siblings: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct InfluencersArgs {
    /// Entity name.
    entity: String,
    #[arg(short, long, default_value_t = 6)]
    k: usize,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_delimiter = ',')]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ExportWeightsArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenDdArgs {
    /// Neighbor-copy probability.
    #[arg(long)]
    p: f64,
    /// Original-link probability.
    #[arg(long)]
    q: f64,
    /// Target node count.
    #[arg(long)]
    nodes: usize,
    /// Also split edges gold/add/noise and emit a prepared graph.
    #[arg(long)]
    gold_frac: Option<f64>,
    #[arg(long)]
    add_frac: Option<f64>,
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() {
    let code = match run() {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err:#}");
            let invalid_argument = err
                .downcast_ref::<edgetrust::Error>()
                .map(|e| matches!(e, edgetrust::Error::InvalidArgument(_)))
                .unwrap_or(false);
            if invalid_argument {
                2
            } else {
                1
            }
        }
    };
    std::process::exit(code);
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            toml::from_str::<RunConfig>(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.train.seed = seed;
    }
    if let Some(threads) = cli.threads {
        config.threads = threads;
    }
    if config.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build_global()
            .context("configuring worker threads")?;
    }

    match cli.command {
        Command::Prepare(args) => prepare(args, config),
        Command::Train(args) => train_cmd(args, config),
        Command::Evaluate(args) => evaluate_cmd(args, config),
        Command::Interrogate(args) => interrogate(args, config),
        Command::Influencers(args) => influencers(args, config),
        Command::ExportWeights(args) => export_weights(args),
        Command::GenDd(args) => gen_dd(args, config),
    }
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn echo_config(config: &RunConfig, dir: &Path) -> Result<()> {
    let text = toml::to_string_pretty(config).context("serializing config echo")?;
    fs::write(dir.join("config.toml"), text)
        .with_context(|| format!("writing config echo into {}", dir.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| {
        format!("creating {}", path.display())
    })?))
}

fn seeded_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

fn load_graph(path: &Path) -> Result<KnowledgeGraph> {
    snapshot::load(path).with_context(|| format!("loading graph {}", path.display()))
}

fn load_model(path: &Path, kg: &KnowledgeGraph) -> Result<ModelParameters> {
    let (params, _config) = checkpoint::load(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))?;
    params
        .validate(kg)
        .context("checkpoint does not match the graph")?;
    Ok(params)
}

fn prepare(args: PrepareArgs, mut config: RunConfig) -> Result<()> {
    if let Some(name) = &args.condition {
        config.condition = Some(name.clone());
    }
    if let Some(f) = args.fraction {
        config.fraction = Some(f);
    }
    let name = ConditionName::parse(
        config.condition.as_deref().unwrap_or("full"),
        config.fraction,
    )?;

    let mut builder = GraphBuilder::new();
    let report = builder
        .load_triples(&args.triples, Split::Train)
        .with_context(|| format!("loading {}", args.triples.display()))?;
    println!(
        "loaded {} train triples ({} duplicates dropped)",
        report.triples, report.duplicates
    );
    if let Some(path) = &args.valid {
        builder.load_triples(path, Split::Valid)?;
    }
    if let Some(path) = &args.test {
        builder.load_triples(path, Split::Test)?;
    }
    let base = builder.build(!args.no_inverse);

    let mut rng = seeded_rng(config.seed);
    let condition = perturb::build_condition(&base, name, &mut rng)?;

    ensure_out_dir(&args.out_dir)?;
    echo_config(&config, &args.out_dir)?;
    snapshot::save(&condition.kg, &args.out_dir.join("graph.kg"))?;
    perturb::write_provenance_csv(&condition.kg, create(&args.out_dir.join("provenance.csv"))?)?;
    let mut summary = create(&args.out_dir.join("summary.txt"))?;
    writeln!(summary, "# prepared condition")?;
    writeln!(summary, "condition = {}", condition.name)?;
    writeln!(summary, "entities = {}", condition.kg.num_entities())?;
    writeln!(summary, "relations = {}", condition.kg.num_relations())?;
    writeln!(summary, "forward_edges = {}", condition.kg.num_forward_edges())?;
    writeln!(summary, "targets = {}", condition.summary.targets)?;
    writeln!(summary, "adjacency_only = {}", condition.summary.adjacency_only)?;
    writeln!(summary, "noise = {}", condition.summary.noise)?;
    println!(
        "prepared `{}`: {} targets, {} adjacency-only ({} noise) -> {}",
        condition.name,
        condition.summary.targets,
        condition.summary.adjacency_only,
        condition.summary.noise,
        args.out_dir.display()
    );
    Ok(())
}

fn train_cmd(args: TrainArgs, mut config: RunConfig) -> Result<()> {
    let cfg = &mut config.train;
    if let Some(v) = args.dim {
        cfg.dim = v;
    }
    if let Some(v) = args.negatives {
        cfg.n_negatives = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.dropout_emb {
        cfg.dropout_emb = v;
    }
    if let Some(v) = args.dropout_link {
        cfg.dropout_link = v;
    }
    if let Some(v) = &args.decoder {
        cfg.decoder = v.parse()?;
    }
    if let Some(v) = &args.attention {
        cfg.attention = v.parse()?;
    }
    if args.no_bias {
        cfg.use_bias = false;
    }
    if let Some(v) = args.valid_every {
        cfg.valid_every = v;
    }

    let kg = load_graph(&args.graph)?;
    let (params, report) = train::train(&config.train, &kg)?;

    ensure_out_dir(&args.out_dir)?;
    echo_config(&config, &args.out_dir)?;
    let config_json = serde_json::to_string(&config.train)?;
    checkpoint::save(&params, &config_json, &args.out_dir.join("checkpoint.bin"))?;
    report.write_log(create(&args.out_dir.join("train_log.csv"))?)?;
    println!(
        "trained {} epochs in {:.1}s; final loss {:.6}; snapshot {}{}",
        report.epoch_loss.len(),
        report.wall_secs,
        report.epoch_loss.last().copied().unwrap_or(f64::NAN),
        report.snapshot_id,
        match report.best_epoch {
            Some(e) => format!(
                " (best validation MRR {:.4} at epoch {e})",
                report
                    .val_mrr
                    .iter()
                    .find(|(epoch, _)| *epoch == e)
                    .map(|(_, m)| *m)
                    .unwrap_or(f64::NAN)
            ),
            None => String::new(),
        }
    );
    Ok(())
}

fn parse_split(name: &str) -> Result<Split> {
    match name {
        "valid" => Ok(Split::Valid),
        "test" => Ok(Split::Test),
        "train" => Ok(Split::Train),
        other => Err(anyhow!(edgetrust::Error::InvalidArgument(format!(
            "unknown split `{other}` (expected train, valid or test)"
        )))),
    }
}

fn evaluate_cmd(args: EvaluateArgs, config: RunConfig) -> Result<()> {
    let kg = load_graph(&args.graph)?;
    let params = load_model(&args.checkpoint, &kg)?;
    let split = parse_split(&args.split)?;
    let report = Evaluator::new(&params, &kg)?.evaluate(split)?;

    ensure_out_dir(&args.out_dir)?;
    echo_config(&config, &args.out_dir)?;
    report.write_summary(create(&args.out_dir.join("eval_report.txt"))?)?;
    report.write_ranks_csv(&kg, create(&args.out_dir.join("ranks.csv"))?)?;
    println!(
        "{} split: filtered MRR {:.4}, Hits@1/3/10 {:.3}/{:.3}/{:.3} (raw MRR {:.4})",
        split.name(),
        report.mrr_filtered,
        report.hits_filtered[0],
        report.hits_filtered[1],
        report.hits_filtered[2],
        report.mrr_raw
    );
    Ok(())
}

fn resolve_triple(
    kg: &KnowledgeGraph,
    subject: &str,
    relation: &str,
    object: &str,
) -> Result<Triple> {
    let vocab = kg.vocab();
    let s = vocab
        .entity_id(subject)
        .ok_or_else(|| anyhow!("unknown entity `{subject}`"))?;
    let r = vocab
        .relation_id(relation)
        .ok_or_else(|| anyhow!("unknown relation `{relation}`"))?;
    let o = vocab
        .entity_id(object)
        .ok_or_else(|| anyhow!("unknown entity `{object}`"))?;
    Ok(Triple::new(s, r, o))
}

fn load_runs(
    primary: &Path,
    extra: &[PathBuf],
    kg: &KnowledgeGraph,
) -> Result<Vec<ModelParameters>> {
    let mut runs = vec![load_model(primary, kg)?];
    for path in extra {
        runs.push(load_model(path, kg)?);
    }
    Ok(runs)
}

fn interrogate(args: InterrogateArgs, config: RunConfig) -> Result<()> {
    let kg = load_graph(&args.graph)?;
    let runs = load_runs(&args.checkpoint, &args.runs, &kg)?;
    let run_refs: Vec<&ModelParameters> = runs.iter().collect();
    let target = resolve_triple(&kg, &args.subject, &args.relation, &args.object)?;
    let mode = if args.freeze_siblings {
        OcclusionMode::FreezeSiblings
    } else {
        OcclusionMode::Renormalize
    };
    let report = interpret::occlusion_scan(&run_refs, &kg, target, mode)?;

    ensure_out_dir(&args.out_dir)?;
    echo_config(&config, &args.out_dir)?;
    report.write_csv(&kg, create(&args.out_dir.join("occlusion.csv"))?)?;
    let mut summary = create(&args.out_dir.join("occlusion.txt"))?;
    writeln!(summary, "# occlusion scan")?;
    writeln!(
        summary,
        "target = {}\t{}\t{}",
        args.subject, args.relation, args.object
    )?;
    writeln!(summary, "runs = {}", runs.len())?;
    writeln!(summary, "baseline_probability = {}", report.baseline.mean)?;
    if let Some(se) = report.baseline.stderr {
        writeln!(summary, "baseline_stderr = {se}")?;
    }
    writeln!(summary, "edges_scanned = {}", report.rows.len())?;
    println!(
        "baseline probability {:.4}; scanned {} edges; strongest supporter delta {:.4}",
        report.baseline.mean,
        report.rows.len(),
        report.rows.first().map(|r| r.delta.mean).unwrap_or(0.0)
    );
    Ok(())
}

fn influencers(args: InfluencersArgs, config: RunConfig) -> Result<()> {
    let kg = load_graph(&args.graph)?;
    let runs = load_runs(&args.checkpoint, &args.runs, &kg)?;
    let normalized: Vec<_> = runs.iter().map(|p| p.normalized_attention(&kg)).collect();
    let refs: Vec<&attention::NormalizedAttention> = normalized.iter().collect();
    let entity = kg
        .vocab()
        .entity_id(&args.entity)
        .ok_or_else(|| anyhow!("unknown entity `{}`", args.entity))?;
    let report = interpret::rank_influencers(&refs, &kg, entity, args.k)?;

    ensure_out_dir(&args.out_dir)?;
    echo_config(&config, &args.out_dir)?;
    report.write_csv(&kg, create(&args.out_dir.join("influencers.csv"))?)?;
    if let Some(note) = &report.note {
        println!("{}: {note}", args.entity);
    } else {
        println!(
            "{}: top edge weight {:.4}, bottom edge weight {:.4} over {} run(s)",
            args.entity,
            report.top.first().map(|e| e.weight.mean).unwrap_or(0.0),
            report.bottom.first().map(|e| e.weight.mean).unwrap_or(0.0),
            runs.len()
        );
    }
    Ok(())
}

fn export_weights(args: ExportWeightsArgs) -> Result<()> {
    let kg = load_graph(&args.graph)?;
    let params = load_model(&args.checkpoint, &kg)?;
    let c = params.normalized_attention(&kg);
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    attention::write_weight_csv(&params.attention, &c, &kg, create(&args.out)?)?;
    println!("wrote {} edge weights to {}", kg.num_edges(), args.out.display());
    Ok(())
}

fn gen_dd(args: GenDdArgs, config: RunConfig) -> Result<()> {
    let mut rng = seeded_rng(config.seed);
    let graph = perturb::generate_dd(args.p, args.q, args.nodes, &mut rng)?;
    ensure_out_dir(&args.out_dir)?;
    echo_config(&config, &args.out_dir)?;

    let mut edges_file = create(&args.out_dir.join("dd_edges.tsv"))?;
    for &(u, v) in &graph.edges {
        writeln!(edges_file, "n{u}\tinteracts\tn{v}")?;
    }
    edges_file.flush()?;
    let stats = format!(
        "nodes={} edges={} edge_vertex_ratio={:.3}",
        graph.num_nodes,
        graph.edges.len(),
        graph.edge_vertex_ratio()
    );
    fs::write(args.out_dir.join("stats.txt"), format!("{stats}\n"))?;
    println!("{stats}");

    match (args.gold_frac, args.add_frac) {
        (None, None) => {}
        (Some(gold), Some(add)) => {
            let split = perturb::split_dd(&graph, gold, add, &mut rng)?;
            let kg = perturb::dd_split_to_graph(&split, graph.num_nodes);
            snapshot::save(&kg, &args.out_dir.join("graph.kg"))?;
            perturb::write_provenance_csv(&kg, create(&args.out_dir.join("provenance.csv"))?)?;
            println!(
                "split: gold={} add={} noise={} rest={} -> graph.kg",
                split.gold.len(),
                split.add.len(),
                split.noise.len(),
                split.rest.len()
            );
        }
        _ => bail!("--gold-frac and --add-frac must be given together"),
    }
    Ok(())
}
