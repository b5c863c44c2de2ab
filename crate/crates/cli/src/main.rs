use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use hgwrec::data::{ingest_dir, Dataset};
use hgwrec::hypergraph::{density, Hypergraph};
use hgwrec::model::{self, Checkpoint, ModelConfig};
use hgwrec::pipeline::{self, group_sequences};
use hgwrec::recsys::{self, EvalReport, PopularityBaseline};
use hgwrec::spectral::{chebyshev_coeffs, loglog_slope, ExactSpectrum, Kernel};
use hgwrec::sweep::{self, SweepConfig};
use hgwrec::synthgen::{generate_records, GenConfig};
use hgwrec::RunConfig;

/// Session-based job recommender with hypergraph wavelet features.
#[derive(Parser, Debug)]
#[command(name = "hgwrec", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Validate a dataset directory and summarize its sessions.
    Ingest(Stage),
    /// Fit the topic model and dump topic vectors.
    Topics(Stage),
    /// Cluster jobs and users into groups.
    Cluster(Stage),
    /// Build the per-group hypergraphs.
    Graph(Stage),
    /// Train the recommender.
    Train(Stage),
    /// Evaluate a checkpoint on the held-out sessions.
    Eval(EvalArgs),
    /// Compare the full model with its no-wavelet ablation across noise rates.
    NoiseSweep(SweepArgs),
    /// Time Chebyshev coefficient computation against dense eigendecomposition.
    SpectralBench(BenchArgs),
}

#[derive(Args, Debug)]
struct Output {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set lr=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct Stage {
    /// Directory with jobs.jsonl, resumes.jsonl and interactions.jsonl.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[command(flatten)]
    output: Output,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    topics: Option<usize>,
    /// Probability that an emitted interaction is noise.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    session_len: Option<f64>,
    #[arg(long)]
    vocab: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// List length; defaults to the checkpoint's `k`.
    #[arg(long)]
    k: Option<usize>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6")]
    rhos: Vec<f64>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Override one run configuration key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Interpolation degrees for the coefficient timings.
    #[arg(long, value_delimiter = ',', default_value = "256,512,1024,2048,4096,8192")]
    degrees: Vec<usize>,
    /// Matrix sizes for the eigendecomposition timings.
    #[arg(long, value_delimiter = ',', default_value = "64,128,256,512")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[command(flatten)]
    output: Output,
}

fn prepare_output(o: &Output) -> Result<()> {
    if o.out.exists() {
        let non_empty = fs::read_dir(&o.out)
            .with_context(|| format!("reading {}", o.out.display()))?
            .next()
            .is_some();
        if non_empty && !o.overwrite {
            return Err(hgwrec::Error::Invalid(format!(
                "output directory {} is not empty; pass --overwrite",
                o.out.display()
            ))
            .into());
        }
    }
    fs::create_dir_all(&o.out).with_context(|| format!("creating {}", o.out.display()))?;
    Ok(())
}

fn write(dir: &Path, name: &str, body: impl AsRef<[u8]>) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, body).with_context(|| format!("writing {}", p.display()))
}

fn apply_overrides(cfg: &mut RunConfig, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let Some((k, v)) = o.split_once('=') else {
            return Err(hgwrec::Error::Config {
                field: o.clone(),
                message: "override must look like key=value".into(),
            }
            .into());
        };
        cfg.set(k.trim(), v)?;
    }
    Ok(())
}

fn resolve(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply_overrides(&mut cfg, &args.overrides)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(dir: &Path) -> Result<Dataset> {
    let (ds, report) = ingest_dir(dir)?;
    if report.warnings > 0 {
        log::warn!("{} input lines skipped", report.warnings);
    }
    log::info!(
        "loaded {} users, {} jobs, {} interactions, {} sessions",
        ds.users.len(),
        ds.jobs.len(),
        ds.interactions.len(),
        ds.sessions.len()
    );
    Ok(ds)
}

/// Validate, load and echo the configuration for a pipeline stage.
fn start_stage(stage: &Stage) -> Result<(RunConfig, Dataset)> {
    let cfg = resolve(&stage.config)?;
    prepare_output(&stage.output)?;
    write(&stage.output.out, "config.txt", cfg.to_text())?;
    let ds = load_data(&stage.data)?;
    Ok((cfg, ds))
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let mut cfg = GenConfig {
        seed: a.seed,
        ..GenConfig::default()
    };
    if let Some(v) = a.users {
        cfg.n_users = v;
    }
    if let Some(v) = a.jobs {
        cfg.n_jobs = v;
    }
    if let Some(v) = a.topics {
        cfg.n_topics = v;
    }
    if let Some(v) = a.noise {
        cfg.noise_pct = v;
    }
    if let Some(v) = a.session_len {
        cfg.mean_session_len = v;
    }
    if let Some(v) = a.vocab {
        cfg.vocab_size = v;
    }
    cfg.validate()?;
    prepare_output(&a.output)?;
    let g = generate_records(&cfg)?;
    g.write_dir(&a.output.out)?;
    write(&a.output.out, "config.txt", cfg.to_text())?;
    log::info!("wrote {} interactions to {}", g.interactions.len(), a.output.out.display());
    Ok(())
}

fn cmd_ingest(stage: &Stage) -> Result<()> {
    let cfg = resolve(&stage.config)?;
    prepare_output(&stage.output)?;
    write(&stage.output.out, "config.txt", cfg.to_text())?;
    let (ds, report) = ingest_dir(&stage.data)?;
    let mut csv = String::from("session,user,resume_version,start_ts,end_ts,jobs\n");
    for (i, s) in ds.sessions.iter().enumerate() {
        let jobs: Vec<&str> = s.jobs().map(|j| ds.jobs[j].id.as_str()).collect();
        csv.push_str(&format!(
            "{i},{},{},{},{},{}\n",
            ds.users[s.user].id,
            s.resume_version,
            s.interactions.first().map_or(0, |x| x.ts),
            s.interactions.last().map_or(0, |x| x.ts),
            jobs.join(" ")
        ));
    }
    let summary = json!({
        "users": ds.users.len(),
        "jobs": ds.jobs.len(),
        "documents": ds.documents.len(),
        "interactions": ds.interactions.len(),
        "sessions": ds.sessions.len(),
        "labels": ds.n_labels(),
        "warnings": report.warnings,
    });
    write(&stage.output.out, "sessions.csv", csv)?;
    write(&stage.output.out, "summary.json", serde_json::to_string_pretty(&summary)? + "\n")?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn cmd_topics(stage: &Stage) -> Result<()> {
    let (cfg, ds) = start_stage(stage)?;
    let out = &stage.output.out;
    let (model, trace, doc_topics) = pipeline::fit_topics(&ds, &cfg)?;
    model.save(&out.join("topic_model.bin"))?;
    let mut tr = String::from("iteration,log_likelihood\n");
    for (i, ll) in trace.iter().enumerate() {
        tr.push_str(&format!("{i},{ll:.10}\n"));
    }
    write(out, "em_trace.csv", tr)?;
    let mut dt = String::from("document");
    for z in 0..cfg.k_topics {
        dt.push_str(&format!(",topic_{z}"));
    }
    dt.push('\n');
    for (d, row) in doc_topics.iter().enumerate() {
        dt.push_str(&ds.documents[d].id);
        for p in row {
            dt.push_str(&format!(",{p:.10}"));
        }
        dt.push('\n');
    }
    write(out, "doc_topics.csv", dt)?;
    let mut tw = String::new();
    for z in 0..model.n_topics {
        let words: Vec<String> = model.top_words(z, 10).iter().map(|(w, p)| format!("{w}:{p:.4}")).collect();
        tw.push_str(&format!("{z}\t{}\n", words.join(" ")));
    }
    write(out, "top_words.txt", tw)?;
    log::info!("EM stopped after {} iterations", trace.len().saturating_sub(1));
    Ok(())
}

fn cmd_cluster(stage: &Stage) -> Result<()> {
    let (cfg, ds) = start_stage(stage)?;
    let out = &stage.output.out;
    let (_, _, doc_topics) = pipeline::fit_topics(&ds, &cfg)?;
    let (jobs, users) = pipeline::cluster(&ds, &doc_topics, &cfg)?;
    let mut jc = String::from("job,group\n");
    for (j, g) in jobs.assignment.iter().enumerate() {
        jc.push_str(&format!("{},{g}\n", ds.jobs[j].id));
    }
    let mut uc = String::from("user,group\n");
    for (u, g) in users.assignment.iter().enumerate() {
        uc.push_str(&format!("{},{g}\n", ds.users[u].id));
    }
    write(out, "job_groups.csv", jc)?;
    write(out, "user_groups.csv", uc)?;
    let summary = json!({
        "job_groups": jobs.k,
        "job_inertia": jobs.inertia,
        "user_groups": users.k,
        "user_inertia": users.inertia,
    });
    write(out, "clusters.json", serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(())
}

fn cmd_graph(stage: &Stage) -> Result<()> {
    let (cfg, ds) = start_stage(stage)?;
    let out = &stage.output.out;
    let prep = pipeline::prepare(&ds, &cfg)?;
    let n_nodes = prep.job_clustering.k;
    let seqs = group_sequences(
        &ds,
        &prep.split.train,
        &prep.session_group,
        &prep.job_clustering.assignment,
        prep.user_clustering.k,
    );
    let mut groups = Vec::new();
    for (g, gg) in prep.inputs.graphs.iter().enumerate() {
        let h = &gg.hypergraph;
        write(out, &format!("group_{g}.triplets"), h.to_triplets())?;
        write(out, &format!("group_{g}.kinds"), h.to_kinds())?;
        let session_only = Hypergraph::from_sessions(n_nodes, &seqs[g], false);
        let (both, sessions) = if n_nodes >= 2 {
            (
                Some(density(&h.clique_expansion())?),
                Some(density(&session_only.clique_expansion())?),
            )
        } else {
            (None, None)
        };
        let ratio = match (both, sessions) {
            (Some(b), Some(s)) if s > 0.0 => Some(b / s),
            _ => None,
        };
        groups.push(json!({
            "group": g,
            "nodes": h.n_nodes,
            "hyperedges": h.n_edges(),
            "density": both,
            "density_sessions_only": sessions,
            "density_ratio": ratio,
        }));
    }
    let stats = json!({ "groups": groups });
    write(out, "graph_stats.json", serde_json::to_string_pretty(&stats)? + "\n")?;
    Ok(())
}

fn cmd_train(stage: &Stage) -> Result<()> {
    let (cfg, ds) = start_stage(stage)?;
    let out = &stage.output.out;
    let prep = pipeline::prepare(&ds, &cfg)?;
    let t = Instant::now();
    let outcome = model::train(&ds, &prep, &cfg)?;
    log::info!("trained in {:.1?}, best epoch {}", t.elapsed(), outcome.best_epoch);
    write(out, "metrics.csv", model::metrics_csv(&outcome.trace, cfg.k))?;
    let ckpt = Checkpoint {
        params: outcome.params,
        adam: outcome.adam,
        config_text: cfg.to_text(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
    };
    ckpt.save(&out.join("checkpoint.bin"))?;
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let mut cfg = RunConfig::parse_text(&ckpt.config_text)?;
    if cfg.hash() != ckpt.config_hash {
        bail!("checkpoint configuration does not match its recorded hash");
    }
    if let Some(k) = a.k {
        cfg.set("k", &k.to_string())?;
    }
    prepare_output(&a.output)?;
    write(&a.output.out, "config.txt", cfg.to_text())?;
    let ds = load_data(&a.data)?;
    let prep = pipeline::prepare(&ds, &cfg)?;
    let mcfg = ModelConfig::from(&cfg);
    let (recs, truth) = recsys::evaluate_test(&ckpt.params, &prep, &ds, &mcfg, cfg.min_prefix, cfg.k)?;
    let config = cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    let report = EvalReport::new(&ds, &recs, &truth, cfg.k, config)?;
    let pop = PopularityBaseline::from_sessions(&ds, &prep.split.train);
    let pop_recs: Vec<_> = recs.iter().map(|r| pop.recommend(r.user, r.session, cfg.k)).collect();
    let mut body = report.to_json();
    body["popularity"] = json!({
        format!("H@{}", cfg.k): recsys::hit_ratio(&pop_recs, &truth, cfg.k)?,
        format!("M@{}", cfg.k): recsys::mrr(&pop_recs, &truth, cfg.k)?,
    });
    write(&a.output.out, "eval.json", serde_json::to_string_pretty(&body)? + "\n")?;
    print!("{}", report.table());
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let mut cfg = SweepConfig::desk();
    cfg.seeds = (0..a.seeds).collect();
    cfg.rhos = a.rhos.clone();
    if let Some(v) = a.users {
        cfg.world.n_users = v;
    }
    if let Some(v) = a.jobs {
        cfg.world.n_jobs = v;
    }
    apply_overrides(&mut cfg.run, &a.overrides)?;
    cfg.run.validate()?;
    cfg.world.validate()?;
    prepare_output(&a.output)?;
    let out = &a.output.out;
    write(out, "config.txt", cfg.run.to_text())?;
    write(out, "world.txt", cfg.world.to_text())?;
    let rows = sweep::run_sweep(&cfg)?;
    write(out, "sweep.csv", sweep::rows_csv(&rows, cfg.run.k))?;
    for (seed, full, ablated) in sweep::drops(&rows, 0.0, 0.5) {
        println!("seed {seed}: H@{k} drop 0 -> 0.5 full {full:.4}, ablated {ablated:.4}", k = cfg.run.k);
    }
    Ok(())
}

/// Median wall time of `f` over `reps` runs, in seconds.
fn median_time(reps: usize, mut f: impl FnMut()) -> f64 {
    let mut times: Vec<f64> = (0..reps.max(1))
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(f64::total_cmp);
    times[times.len() / 2]
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    prepare_output(&a.output)?;
    let mut csv = String::from("kind,n,seconds\n");
    let mut coeff = Vec::new();
    for &n in &a.degrees {
        let mut err = None;
        let s = median_time(a.reps, || {
            if let Err(e) = chebyshev_coeffs(Kernel::Heat, 1.0, 20.min(n), n, 2.0) {
                err = Some(e);
            }
        });
        if let Some(e) = err {
            return Err(e.into());
        }
        csv.push_str(&format!("coefficients,{n},{s:.9}\n"));
        coeff.push((n as f64, s));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut eig = Vec::new();
    for &n in &a.sizes {
        let r = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>());
        let sym = &r + r.transpose();
        let s = median_time(a.reps.min(3), || {
            std::hint::black_box(ExactSpectrum::of(&sym));
        });
        csv.push_str(&format!("eigen,{n},{s:.9}\n"));
        eig.push((n as f64, s));
    }
    write(&a.output.out, "spectral_bench.csv", csv)?;
    let summary = json!({
        "coefficient_slope": loglog_slope(&coeff).ok(),
        "eigen_slope": loglog_slope(&eig).ok(),
    });
    write(&a.output.out, "summary.json", serde_json::to_string_pretty(&summary)? + "\n")?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(hgwrec::Error::Config {
                field: "threads".into(),
                message: "must be at least 1".into(),
            }
            .into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Ingest(s) => cmd_ingest(s),
        Command::Topics(s) => cmd_topics(s),
        Command::Cluster(s) => cmd_cluster(s),
        Command::Graph(s) => cmd_graph(s),
        Command::Train(s) => cmd_train(s),
        Command::Eval(a) => cmd_eval(a),
        Command::NoiseSweep(a) => cmd_sweep(a),
        Command::SpectralBench(a) => cmd_bench(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use hgwrec::Error as E;
    match err.downcast_ref::<E>() {
        Some(E::Config { .. } | E::Reference { .. } | E::Invalid(_) | E::Dimension { .. }) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
