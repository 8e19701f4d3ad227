//! `ollog`: build, query, update and evaluate k-NN graphs from the shell.
//!
//! Exit status is 0 on success, 1 for usage errors and 2 for data errors.
//! Results go to stdout as `key=value` lines; logs go to stderr.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use ollog::eval::{self, evaluate_graph, DataSource, ExperimentConfig, TruthCache};
use ollog::{
    ehc_search, gen_uniform, io, lgd_search, recall_at_k, BuildConfig, GraphBuilder, GroundTruth,
    Metric, OrthoGraph, SearchParams, SearchScratch, Variant, VertexId,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "ollog", version, about = "Online approximate k-NN graphs")]
struct Cli {
    /// Worker threads for exhaustive ground-truth scans (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write uniform [0, 1) vectors to an fvecs file.
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a graph from an fvecs file.
    Build {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        build: BuildArgs,
        #[arg(long, default_value_t = Metric::L2)]
        metric: Metric,
        #[arg(long)]
        out: PathBuf,
    },
    /// Search a graph for each query vector and write the ids found.
    Query {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Random seeds per query (default: k).
        #[arg(long)]
        p: Option<usize>,
        /// Candidate queue size (default: k).
        #[arg(long)]
        breadth: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Skip occluded neighbors while climbing.
        #[arg(long)]
        lgd: bool,
        /// Must match the graph's metric when given.
        #[arg(long)]
        metric: Option<Metric>,
        /// Exact neighbors of each query as an id-list file, to report recall.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Add the vectors of an fvecs file to a graph.
    Insert {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = Variant::LgdPlus)]
        variant: Variant,
        #[arg(long)]
        p: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        r2np_shuffle: bool,
        /// Defaults to overwriting the input graph.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Remove vertices from a graph.
    Remove {
        #[arg(long)]
        graph: PathBuf,
        /// Comma-separated vertex ids.
        #[arg(long, value_delimiter = ',', required = true)]
        ids: Vec<VertexId>,
        /// Refill lists that lost a neighbor by searching for their owners.
        #[arg(long)]
        repair: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a graph against exact neighbors, or run a build-and-score
    /// experiment when no graph is given.
    Eval(EvalArgs),
    /// Verify a graph file and print every structural violation.
    Check {
        #[arg(long)]
        graph: PathBuf,
    },
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long, default_value_t = Variant::LgdPlus)]
    variant: Variant,
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Random seeds per insertion (default: k).
    #[arg(long)]
    p: Option<usize>,
    #[arg(long, default_value_t = ollog::DEFAULT_BOOTSTRAP)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Visit neighborhood members in random order during propagation.
    #[arg(long)]
    r2np_shuffle: bool,
    #[arg(long)]
    r2np_max_depth: Option<usize>,
}

impl BuildArgs {
    fn config(&self) -> BuildConfig {
        let mut cfg = BuildConfig::new(self.k)
            .variant(self.variant)
            .seeds(self.p.unwrap_or(self.k))
            .bootstrap(self.bootstrap)
            .rng_seed(self.seed);
        cfg.r2np_shuffle = self.r2np_shuffle;
        cfg.r2np_max_depth = self.r2np_max_depth;
        cfg
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Graph to score; its own vectors serve as the ground-truth corpus.
    #[arg(long, conflicts_with_all = ["data", "n"])]
    graph: Option<PathBuf>,
    /// Exact neighbors as an id-list file: one row per live vertex in id
    /// order, or one row per query with --queries.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Score search results for these queries instead of the graph's lists.
    #[arg(long, requires = "graph")]
    queries: Option<PathBuf>,
    /// Recall depth(s), comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "1,10")]
    at: Vec<usize>,
    /// fvecs file for an experiment run.
    #[arg(long, conflicts_with = "n")]
    data: Option<PathBuf>,
    /// Uniform synthetic data size for an experiment run.
    #[arg(long, requires = "d")]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    #[arg(long, default_value_t = Metric::L2)]
    metric: Metric,
    #[command(flatten)]
    build: BuildArgs,
    /// Append one CSV row per run to this file.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Report wall_ms as 0 so rows are byte-for-byte reproducible.
    #[arg(long)]
    no_wall_time: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn load(path: &PathBuf) -> anyhow::Result<OrthoGraph> {
    io::load_graph(path).with_context(|| format!("loading graph {}", path.display()))
}

fn read_vecs(path: &PathBuf) -> anyhow::Result<ollog::Dataset> {
    io::read_vecs(path).with_context(|| format!("reading {}", path.display()))
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Gen { n, d, seed, out } => {
            if n == 0 || d == 0 {
                return Err(usage("--n and --d must be at least 1"));
            }
            io::write_vecs(&out, &gen_uniform(n, d, seed))?;
            println!("n={n} d={d} seed={seed} out={}", out.display());
        }
        Command::Build {
            data,
            build,
            metric,
            out,
        } => {
            let data = read_vecs(&data)?;
            let (g, stats) = ollog::build(&data, metric, &build.config())?;
            io::save_graph(&g, &out)?;
            println!(
                "n={} d={} metric={metric} variant={} k={} {stats}",
                g.live_count(),
                g.dim(),
                build.variant,
                g.k()
            );
        }
        Command::Query {
            graph,
            queries,
            k,
            p,
            breadth,
            seed,
            lgd,
            metric,
            truth,
            out,
        } => {
            let g = load(&graph)?;
            if let Some(m) = metric {
                if m != g.metric() {
                    return Err(usage(format!(
                        "--metric {m} does not match the graph's metric {}",
                        g.metric()
                    )));
                }
            }
            let qs = read_vecs(&queries)?;
            let params = SearchParams::new(k)
                .with_seeds(p.unwrap_or(k))
                .with_breadth(breadth.unwrap_or(k));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut scratch = SearchScratch::new();
            let mut found = Vec::with_capacity(qs.len());
            let mut distances = 0u64;
            for (i, q) in qs.rows().enumerate() {
                let r = if lgd {
                    lgd_search(&g, q, params, &mut rng, &mut scratch)
                } else {
                    ehc_search(&g, q, params, &mut rng, &mut scratch)
                }
                .with_context(|| format!("query {i}"))?;
                if r.neighbors.len() < k {
                    bail!("query {i} reached only {} vertices, fewer than k = {k}", r.neighbors.len());
                }
                distances += r.distance_count;
                found.push(r.ids());
            }
            let lists: Vec<Vec<u64>> = found
                .iter()
                .map(|l| l.iter().map(|&v| v as u64).collect())
                .collect();
            io::write_ids(&out, &lists)?;
            let mean = if qs.is_empty() {
                0.0
            } else {
                distances as f64 / qs.len() as f64
            };
            let mut line = format!("queries={} k={k} mean_distance_count={mean}", qs.len());
            if let Some(t) = truth {
                let t = truth_from_file(&t, &g, |i| qs.row(i))?;
                line.push_str(&format!(" recall{k}={}", recall_at_k(&found, &t, k)?));
            }
            println!("{line}");
        }
        Command::Insert {
            graph,
            data,
            variant,
            p,
            seed,
            r2np_shuffle,
            out,
        } => {
            let g = load(&graph)?;
            let data = read_vecs(&data)?;
            let mut cfg = BuildConfig::new(g.k())
                .variant(variant)
                .seeds(p.unwrap_or(g.k()))
                .rng_seed(seed);
            cfg.r2np_shuffle = r2np_shuffle;
            let mut b = GraphBuilder::from_graph(g, cfg);
            let first = b.graph().id_bound();
            for (i, row) in data.rows().enumerate() {
                b.insert_sample(row).with_context(|| format!("inserting record {i}"))?;
            }
            let stats = b.stats();
            io::save_graph(b.graph(), out.as_ref().unwrap_or(&graph))?;
            println!(
                "inserted={} first_id={first} live={} distance_count={}",
                data.len(),
                b.graph().live_count(),
                stats.distance_count
            );
        }
        Command::Remove {
            graph,
            ids,
            repair,
            seed,
            out,
        } => {
            let g = load(&graph)?;
            let cfg = BuildConfig::new(g.k()).rng_seed(seed);
            let mut b = GraphBuilder::from_graph(g, cfg);
            let (mut dropped, mut added) = (0, 0);
            for &s in &ids {
                if repair {
                    let (d, a) = b.remove_and_repair(s).with_context(|| format!("removing {s}"))?;
                    dropped += d;
                    added += a;
                } else {
                    dropped += b.remove_sample(s).with_context(|| format!("removing {s}"))?;
                }
            }
            io::save_graph(b.graph(), out.as_ref().unwrap_or(&graph))?;
            println!(
                "removed={} dropped_edges={dropped} repaired_edges={added} live={}",
                ids.len(),
                b.graph().live_count()
            );
        }
        Command::Eval(args) => run_eval(args)?,
        Command::Check { graph } => {
            let g = io::load_graph_unverified(&graph)
                .with_context(|| format!("loading graph {}", graph.display()))?;
            let violations = g.check_consistency();
            for v in &violations {
                println!("violation={v}");
            }
            println!(
                "live={} k={} metric={} violations={}",
                g.live_count(),
                g.k(),
                g.metric(),
                violations.len()
            );
            if !violations.is_empty() {
                bail!("{} consistency violations", violations.len());
            }
        }
    }
    Ok(())
}

/// Reads an id-list truth file and recomputes distances against `g`'s
/// vectors, with row `i` measured from `query(i)`.
fn truth_from_file<'a>(
    path: &PathBuf,
    g: &'a OrthoGraph,
    query: impl Fn(usize) -> &'a [f32],
) -> anyhow::Result<GroundTruth> {
    let lists = io::read_ids(path).with_context(|| format!("reading {}", path.display()))?;
    let depth = lists.first().map_or(0, |l| l.len());
    let mut ids = Vec::with_capacity(lists.len());
    let mut dists = Vec::with_capacity(lists.len());
    for (i, l) in lists.into_iter().enumerate() {
        let row: Vec<VertexId> = l
            .into_iter()
            .map(|v| {
                VertexId::try_from(v)
                    .ok()
                    .filter(|&v| (v as usize) < g.id_bound())
                    .with_context(|| format!("truth row {i}: id {v} out of range"))
            })
            .collect::<anyhow::Result<_>>()?;
        dists.push(
            row.iter()
                .map(|&v| g.metric().eval(query(i), g.vector(v)))
                .collect(),
        );
        ids.push(row);
    }
    Ok(GroundTruth::from_rows(depth, ids, dists)?)
}

fn run_eval(args: EvalArgs) -> anyhow::Result<()> {
    if let Some(path) = &args.graph {
        let g = load(path)?;
        if let Some(qpath) = &args.queries {
            let qs = read_vecs(qpath)?;
            let depth = args.at.iter().copied().max().unwrap_or(1);
            let truth = match &args.truth {
                Some(t) => truth_from_file(t, &g, |i| qs.row(i))?,
                None => {
                    let live: Vec<VertexId> = g.live_ids().collect();
                    TruthCache::from_env().brute_force(g.dataset(), &live, Some(&qs), depth, g.metric())?
                }
            };
            let k = args.build.k.max(depth);
            let params = SearchParams::new(k)
                .with_seeds(args.build.p.unwrap_or(k));
            let mut rng = ChaCha8Rng::seed_from_u64(args.build.seed);
            let mut scratch = SearchScratch::new();
            let mut found = Vec::with_capacity(qs.len());
            let mut distances = 0u64;
            for q in qs.rows() {
                let r = ehc_search(&g, q, params, &mut rng, &mut scratch)?;
                distances += r.distance_count;
                found.push(r.ids());
            }
            let mut line = format!("mode=search queries={} dist_count={distances}", qs.len());
            for &at in &args.at {
                line.push_str(&format!(" recall{at}={}", recall_at_k(&found, &truth, at)?));
            }
            println!("{line}");
            return Ok(());
        }
        let mut line = format!("mode=graph n={} k={}", g.live_count(), g.k());
        match &args.truth {
            Some(t) => {
                let live: Vec<VertexId> = g.live_ids().collect();
                let truth = truth_from_file(t, &g, |i| g.vector(live[i]))?;
                for &at in &args.at {
                    line.push_str(&format!(" recall{at}={}", eval::graph_recall(&g, &truth, at)?));
                }
            }
            None => {
                if let Some(&at) = args.at.iter().find(|&&at| at > g.k()) {
                    return Err(usage(format!("--at {at} exceeds the graph's k = {}", g.k())));
                }
                let cache = TruthCache::from_env();
                for (at, r) in evaluate_graph(&g, &args.at, Some(&cache))? {
                    line.push_str(&format!(" recall{at}={r}"));
                }
            }
        }
        println!("{line}");
        return Ok(());
    }

    let source = match (&args.data, args.n, args.d) {
        (Some(p), _, _) => DataSource::File(p.clone()),
        (None, Some(n), Some(d)) => DataSource::Uniform {
            n,
            d,
            seed: args.data_seed,
        },
        _ => return Err(usage("eval needs --graph, --data, or --n and --d")),
    };
    let mut cfg = ExperimentConfig::new(source, args.metric, args.build.config());
    cfg.depths = args.at.clone();
    cfg.cache = Some(TruthCache::from_env());
    cfg.csv = args.csv.clone();
    cfg.record_wall_time = !args.no_wall_time;
    let (report, _) = eval::run_experiment(&cfg)?;
    println!("mode=graph {report}");
    Ok(())
}
