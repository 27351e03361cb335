use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wsfe::bench::{self, GridPoint};
use wsfe::config::{parse_ks, sidecar_path, KeyValues, PipelineConfig, RefScale};
use wsfe::graph::{build_ground_truth_many, ground_truth_tsv};
use wsfe::{
    evaluate, export_layer_features, import_layer_features, load_interactions, mc_sw2, propagate,
    train_bpr, w2_1d, Encoder, EncodingMatrix, Error, Exec, InputFormat, InteractionGraph, Layout,
    NormalizedAdjacency, Normalization, PointSet, ProjectionSet, ReferenceSet,
};

#[derive(Parser)]
#[command(name = "wsfe", version, about = "Sliced-Wasserstein user encoding pipeline")]
struct Cli {
    /// Pipeline config file (`key=value` lines); flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for data-parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Run every stage on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse an interaction file, print its statistics and persist the graph.
    Ingest(IngestArgs),
    /// Train a LightGCN/BPR backbone and export its layer features.
    Train(TrainArgs),
    /// Encode layer features into WSFE vectors.
    Encode(EncodeArgs),
    /// Score encodings on similar-user retrieval.
    Eval(EvalArgs),
    /// Ad-hoc 1D / sliced Wasserstein distances between two point sets.
    Distance(DistanceArgs),
    /// Time encoding over a grid of sizes.
    Bench(BenchArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value = "tsv_pairs")]
    format: String,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also export overlap ground truth for every user as TSV.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    depth: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Output layer-feature file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    /// Propagation depth L.
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    reg: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the per-epoch loss trace here.
    #[arg(long)]
    loss_trace: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of slices S.
    #[arg(long = "S", alias = "slices")]
    slices: Option<usize>,
    #[arg(long)]
    layout: Option<String>,
    #[arg(long)]
    normalization: Option<String>,
    /// Reference standard deviation, or `auto` to match the features.
    #[arg(long)]
    ref_scale: Option<String>,
    #[arg(long)]
    projection_seed: Option<u64>,
    #[arg(long)]
    reference_seed: Option<u64>,
    /// Encode every entity instead of only the users.
    #[arg(long)]
    all_entities: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    encodings: Option<PathBuf>,
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Layer features for the mean-layer baseline.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Comma-separated cut-offs.
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write `metric@K=value` lines here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DistanceArgs {
    /// Points as `x1,x2,..;y1,y2,..`.
    #[arg(long)]
    p: String,
    #[arg(long)]
    q: String,
    /// Use this single direction instead of random slices.
    #[arg(long)]
    theta: Option<String>,
    #[arg(long = "S", alias = "slices", default_value_t = 64)]
    slices: usize,
    #[arg(long, default_value_t = 17)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "1000,10000")]
    users: String,
    #[arg(long = "S", alias = "slices", default_value = "64")]
    slices: String,
    #[arg(long, default_value = "64")]
    dims: String,
    #[arg(long, default_value_t = 3)]
    depth: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
}

/// Failure split by exit code: 2 for usage problems, 1 for runtime errors.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NotFound(_) | Error::Invalid(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn required(path: Option<PathBuf>, flag: &str) -> CliResult<PathBuf> {
    path.ok_or_else(|| Failure::Usage(format!("missing --{flag}")))
}

fn existing(path: PathBuf) -> CliResult<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Failure::Usage(format!("input not found: {}", path.display())))
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> CliResult<T> {
    s.parse::<T>().map_err(Failure::from)
}

fn list(s: &str) -> CliResult<Vec<usize>> {
    s.split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| Failure::Usage(format!("bad list `{s}`")))
}

fn load_sidecar(artifact: &Path) -> CliResult<Option<KeyValues>> {
    let path = sidecar_path(artifact);
    if path.exists() {
        Ok(Some(KeyValues::load(path)?))
    } else {
        Ok(None)
    }
}

fn meta_usize(kv: &KeyValues, key: &str) -> CliResult<Option<usize>> {
    kv.get(key)
        .map(|v| {
            v.parse()
                .map_err(|_| Failure::Runtime(format!("corrupt metadata value {key}={v}")))
        })
        .transpose()
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::from_kv(&KeyValues::load(existing(p.clone())?)?)?,
        None => PipelineConfig::default(),
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        wsfe::par::init_threads(t);
    }
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    };
    match cli.command {
        Command::Ingest(a) => ingest(a, &mut cfg, exec),
        Command::Train(a) => train(a, &mut cfg, exec),
        Command::Encode(a) => encode(a, &mut cfg, exec),
        Command::Eval(a) => eval(a, &mut cfg, exec),
        Command::Distance(a) => distance(a),
        Command::Bench(a) => bench_cmd(a, exec),
    }
}

fn ingest(a: IngestArgs, cfg: &mut PipelineConfig, exec: Exec) -> CliResult<()> {
    let input = existing(required(a.input.or(cfg.data.clone()), "input")?)?;
    let format: InputFormat = parse(&a.format)?;
    let (graph, _) = load_interactions(&input, format)?;
    let stats = graph.stats();
    println!("{stats}");
    cfg.data = Some(input);
    if let Some(out) = a.out.or(cfg.graph.clone()) {
        graph.save(&out)?;
        cfg.graph = Some(out.clone());
        let mut meta = KeyValues::new();
        meta.set("num_users", stats.num_users);
        meta.set("num_items", stats.num_items);
        meta.set("num_edges", stats.num_edges);
        meta.set("format", &a.format);
        meta.extend_prefixed("config.", &cfg.to_kv());
        meta.save(sidecar_path(&out))?;
    }
    if let Some(gt) = a.ground_truth {
        let users: Vec<usize> = (0..graph.num_users()).collect();
        let rankings = build_ground_truth_many(&graph, &users, a.depth, exec)?;
        fs::write(&gt, ground_truth_tsv(&rankings)).map_err(|e| Failure::Runtime(format!("{}: {e}", gt.display())))?;
    }
    Ok(())
}

fn train(a: TrainArgs, cfg: &mut PipelineConfig, exec: Exec) -> CliResult<()> {
    let graph_path = existing(required(a.graph.or(cfg.graph.clone()), "graph")?)?;
    let out = required(a.out.or(cfg.features.clone()), "out")?;
    macro_rules! over {
        ($($field:ident <- $val:expr),*) => { $( if let Some(v) = $val { cfg.$field = v; } )* };
    }
    over!(dim <- a.dim, depth <- a.depth, epochs <- a.epochs, lr <- a.lr, reg <- a.reg,
          batch_size <- a.batch_size, train_seed <- a.seed);
    cfg.graph = Some(graph_path.clone());
    cfg.features = Some(out.clone());

    let graph = InteractionGraph::load(&graph_path)?;
    let trained = train_bpr(&graph, &cfg.bpr(), exec)?;
    let features = propagate(&trained.embeddings, &NormalizedAdjacency::new(&graph), cfg.depth, exec)?;
    export_layer_features(&features, &out)?;

    let mut meta = KeyValues::new();
    meta.set("num_users", graph.num_users());
    meta.set("num_items", graph.num_items());
    meta.set("entities", features.entities());
    meta.set("layers", features.layers());
    meta.set("dim", features.dim());
    if let (Some(first), Some(last)) = (trained.loss_trace.first(), trained.loss_trace.last()) {
        meta.set("loss_first", first);
        meta.set("loss_last", last);
    }
    meta.extend_prefixed("config.", &cfg.to_kv());
    meta.save(sidecar_path(&out))?;
    if let Some(p) = a.loss_trace {
        let text: String = trained
            .loss_trace
            .iter()
            .enumerate()
            .map(|(e, l)| format!("{e}\t{l}\n"))
            .collect();
        fs::write(&p, text).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?;
    }
    println!(
        "trained {} entities, L={}, d={}, final loss {:.6}",
        features.entities(),
        cfg.depth,
        features.dim(),
        trained.loss_trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn encode(a: EncodeArgs, cfg: &mut PipelineConfig, exec: Exec) -> CliResult<()> {
    let feat_path = existing(required(a.features.or(cfg.features.clone()), "features")?)?;
    let out = required(a.out.or(cfg.encodings.clone()), "out")?;
    if let Some(s) = a.slices {
        cfg.slices = s;
    }
    if let Some(l) = &a.layout {
        cfg.layout = parse::<Layout>(l)?;
    }
    if let Some(n) = &a.normalization {
        cfg.normalization = parse::<Normalization>(n)?;
    }
    if let Some(r) = &a.ref_scale {
        cfg.ref_scale = parse::<RefScale>(r)?;
    }
    if let Some(s) = a.projection_seed {
        cfg.projection_seed = s;
    }
    if let Some(s) = a.reference_seed {
        cfg.reference_seed = s;
    }
    if cfg.slices == 0 {
        return Err(Failure::Usage("--S must be at least 1".into()));
    }
    cfg.features = Some(feat_path.clone());
    cfg.encodings = Some(out.clone());

    let all = import_layer_features(&feat_path)?;
    let upstream = load_sidecar(&feat_path)?;
    if let Some(up) = &upstream {
        for (key, actual) in [("entities", all.entities()), ("layers", all.layers()), ("dim", all.dim())] {
            if let Some(expected) = meta_usize(up, key)? {
                if expected != actual {
                    return Err(Failure::Runtime(format!(
                        "stale metadata: feature sidecar says {key}={expected}, file has {actual}"
                    )));
                }
            }
        }
    }
    let users = match &upstream {
        Some(up) if !a.all_entities => meta_usize(up, "num_users")?.unwrap_or(all.entities()),
        _ => all.entities(),
    };
    let features = all.head(users)?;
    let scale = match cfg.ref_scale {
        RefScale::Auto => features.entry_std(),
        RefScale::Fixed(x) => x,
    };
    let encoder = Encoder::new(
        ReferenceSet::gaussian(features.depth(), features.dim(), cfg.reference_seed, scale)?,
        ProjectionSet::sample(cfg.slices, features.dim(), cfg.projection_seed),
        cfg.layout,
        cfg.normalization,
    )?;
    let enc = encoder.encode_all(&features, exec)?;
    enc.save(&out)?;

    let mut meta = KeyValues::new();
    meta.set("rows", enc.rows());
    meta.set("width", enc.dim());
    meta.set("S", cfg.slices);
    meta.set("L", features.depth());
    meta.set("d", features.dim());
    meta.set("layout", cfg.layout);
    meta.set("normalization", cfg.normalization);
    meta.set("coordinate_scale", encoder.scale());
    meta.set("reference_scale", scale);
    meta.set("projection_seed", cfg.projection_seed);
    meta.set("reference_seed", cfg.reference_seed);
    meta.extend_prefixed("config.", &cfg.to_kv());
    if let Some(up) = &upstream {
        meta.extend_prefixed("features.", up);
    }
    meta.save(sidecar_path(&out))?;
    println!("encoded {} rows x {} columns ({})", enc.rows(), enc.dim(), cfg.layout);
    Ok(())
}

fn eval(a: EvalArgs, cfg: &mut PipelineConfig, exec: Exec) -> CliResult<()> {
    let enc_path = existing(required(a.encodings.or(cfg.encodings.clone()), "encodings")?)?;
    let graph_path = existing(required(a.graph.or(cfg.graph.clone()), "graph")?)?;
    if let Some(k) = &a.k {
        cfg.ks = parse_ks(k)?;
    }
    if let Some(q) = a.queries {
        cfg.num_queries = q;
    }
    if let Some(s) = a.seed {
        cfg.eval_seed = s;
    }
    let enc = EncodingMatrix::load(&enc_path)?;
    let graph = InteractionGraph::load(&graph_path)?;
    if enc.rows() != graph.num_users() {
        return Err(Failure::Runtime(format!(
            "encoding has {} rows but graph has {} users",
            enc.rows(),
            graph.num_users()
        )));
    }
    let enc_meta = load_sidecar(&enc_path)?;
    let report = evaluate(&enc, &graph, &cfg.ks, cfg.num_queries, cfg.eval_seed, exec)?;
    print!("{}", report.to_table("wsfe"));
    let mut kv = report.to_kv_lines("");

    if let Some(fp) = a.features.or(cfg.features.clone()) {
        let features = import_layer_features(existing(fp)?)?;
        if let Some(m) = &enc_meta {
            for (key, actual) in [("d", features.dim()), ("L", features.depth())] {
                if let Some(expected) = meta_usize(m, key)? {
                    if expected != actual {
                        return Err(Failure::Runtime(format!(
                            "mismatched metadata: encoding {key}={expected}, features have {actual}"
                        )));
                    }
                }
            }
        }
        let users = features.head(graph.num_users())?;
        let base = evaluate(&users.mean_layer(), &graph, &cfg.ks, cfg.num_queries, cfg.eval_seed, exec)?;
        print!("{}", base.to_table("mean-layer baseline"));
        kv.push_str(&base.to_kv_lines("baseline."));
    }
    if let Some(out) = a.out.or(cfg.report.clone()) {
        fs::write(&out, &kv).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
        let mut meta = KeyValues::new();
        meta.extend_prefixed("config.", &cfg.to_kv());
        if let Some(m) = &enc_meta {
            meta.extend_prefixed("encodings.", m);
        }
        meta.save(sidecar_path(&out))?;
    }
    Ok(())
}

fn points(s: &str) -> CliResult<PointSet> {
    let rows = s
        .split(';')
        .map(|p| {
            p.split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| Failure::Usage(format!("bad point list `{s}`")))?;
    PointSet::new(rows).map_err(|e| Failure::Usage(e.to_string()))
}

fn distance(a: DistanceArgs) -> CliResult<()> {
    let p = points(&a.p)?;
    let q = points(&a.q)?;
    if p.len() != q.len() || p.dim() != q.dim() {
        return Err(Failure::Usage("point sets must have the same size and dimension".into()));
    }
    if p.dim() == 1 {
        let xs: Vec<f64> = p.points().map(|v| v[0]).collect();
        let ys: Vec<f64> = q.points().map(|v| v[0]).collect();
        println!("w2_1d={}", w2_1d(&xs, &ys)?);
    }
    let proj = match &a.theta {
        Some(t) => {
            let dir = t
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| Failure::Usage(format!("bad direction `{t}`")))?;
            ProjectionSet::from_directions(vec![dir])?
        }
        None => {
            if a.slices == 0 {
                return Err(Failure::Usage("--S must be at least 1".into()));
            }
            ProjectionSet::sample(a.slices, p.dim(), a.seed)
        }
    };
    println!("mc_sw2={}", mc_sw2(&p, &q, &proj).map_err(|e| Failure::Usage(e.to_string()))?);
    Ok(())
}

fn bench_cmd(a: BenchArgs, exec: Exec) -> CliResult<()> {
    let users = list(&a.users)?;
    let slices = list(&a.slices)?;
    let dims = list(&a.dims)?;
    if users.contains(&0) || slices.contains(&0) || dims.contains(&0) {
        return Err(Failure::Usage("grid sizes must be at least 1".into()));
    }
    let rows = bench::run_grid(&users, &slices, &dims, a.depth, a.repeats, exec)?;
    print!("{}", bench::render_table(&rows));
    let lookup = |p: GridPoint| rows.iter().find(|t| t.point == p).map(|t| t.seconds);
    let (d, s0, m0) = (dims[0], slices[0], users[0]);
    for &m in &users[1..] {
        let base = GridPoint { users: m0, slices: s0, dim: d, depth: a.depth };
        if let (Some(t0), Some(t1)) = (lookup(base), lookup(GridPoint { users: m, ..base })) {
            println!("ratio M {m0}->{m}: {:.3}", t1 / t0);
        }
    }
    for &s in &slices[1..] {
        let base = GridPoint { users: m0, slices: s0, dim: d, depth: a.depth };
        if let (Some(t0), Some(t1)) = (lookup(base), lookup(GridPoint { slices: s, ..base })) {
            println!("ratio S {s0}->{s}: {:.3}", t1 / t0);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
