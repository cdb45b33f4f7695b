use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use gin_core::clicklog::{parse_click_log, retain_recent, segment_sessions, sort_events, SessionConfig};
use gin_core::cograph::{self, load_graph, save_graph, CoGraph};
use gin_core::ctrmodel::{
    end_to_end_grad_check, load_checkpoint, parse_samples, save_checkpoint, write_samples,
    Aggregator, GradCheckSetup, ModelConfig, ModelParams, Sample, TrainConfig,
};
use gin_core::eval::{auc, bucket_report};
use gin_core::syndata::{self, SynConfig};

use crate::config::{usage, FileConfig};
use crate::{BuildGraphArgs, EvalArgs, GenDataArgs, GradcheckArgs, ModelArgs, TrainArgs};

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn read_samples(path: &Path) -> Result<Vec<Sample>> {
    parse_samples(open(path)?).with_context(|| format!("reading samples {}", path.display()))
}

fn read_graph(path: &Path) -> Result<CoGraph> {
    load_graph(open(path)?).with_context(|| format!("reading graph {}", path.display()))
}

pub fn gen_data(a: GenDataArgs) -> Result<ExitCode> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let out: PathBuf = file.required(a.output, "output")?;
    let d = SynConfig::default();
    let cfg = SynConfig {
        num_items: file.or(a.num_items, "num-items", d.num_items)?,
        num_clusters: file.or(a.num_clusters, "num-clusters", d.num_clusters)?,
        num_users: file.or(a.num_users, "num-users", d.num_users)?,
        sessions_per_user: file.or(a.sessions_per_user, "sessions-per-user", d.sessions_per_user)?,
        bridge_prob: file.or(a.bridge_prob, "bridge-prob", d.bridge_prob)?,
        sparsity_mix: file.or(a.sparsity_mix, "sparsity-mix", d.sparsity_mix)?,
        ctr_signal: file.or(a.ctr_signal, "ctr-signal", d.ctr_signal)?,
        holdout_frac: file.or(a.holdout_frac, "holdout-frac", d.holdout_frac)?,
        samples_per_user: file.or(a.samples_per_user, "samples-per-user", d.samples_per_user)?,
        test_samples_per_user: file.or(
            a.test_samples_per_user,
            "test-samples-per-user",
            d.test_samples_per_user,
        )?,
        seed: file.seed(a.common.seed)?,
        ..d
    };
    let data = syndata::generate(&cfg)?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("clicks.tsv"), data.click_log_text())?;
    write_file(&out.join("train.tsv"), |w| Ok(write_samples(&data.train, w)?))?;
    write_file(&out.join("test.tsv"), |w| Ok(write_samples(&data.test, w)?))?;
    println!(
        "wrote {} clicks in {} sessions, {} train and {} test samples to {}",
        data.click_log.len(),
        data.sessions,
        data.train.len(),
        data.test.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn build_graph(a: BuildGraphArgs) -> Result<ExitCode> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let input: PathBuf = file.required(a.input, "input")?;
    let output: PathBuf = file.required(a.output, "output")?;
    let window = file.or(a.window, "window", 1usize)?;
    let session = SessionConfig::new(
        file.or(a.jaccard, "jaccard", 0.3)?,
        file.or(a.session_gap_secs, "session-gap-secs", 1800)?,
    )?;
    let max_age_days: Option<u64> = file.pick(a.max_age_days, "max-age-days")?;

    let mut events = parse_click_log(open(&input)?)
        .with_context(|| format!("reading click log {}", input.display()))?;
    if let Some(days) = max_age_days {
        retain_recent(&mut events, days.saturating_mul(86_400));
    }
    sort_events(&mut events);
    let sessions = segment_sessions(&events, &session)?;
    let graph = cograph::build_graph(&sessions, window)?;
    write_file(&output, |w| Ok(save_graph(&graph, w)?))?;
    println!(
        "{} events, {} sessions, graph with {} nodes and {} edges",
        events.len(),
        sessions.len(),
        graph.num_nodes(),
        graph.num_edges()
    );
    Ok(ExitCode::SUCCESS)
}

fn model_config(file: &FileConfig, m: ModelArgs) -> Result<ModelConfig> {
    let d = ModelConfig::default();
    let aggregator: String = file.or(m.aggregator, "aggregator", "gin".to_string())?;
    Ok(ModelConfig {
        dim: file.or(m.dim, "dim", d.dim)?,
        depth: file.or(m.depth, "depth", d.depth)?,
        neighbors: file.or(m.neighbors, "neighbors", d.neighbors)?,
        clicks: file.or(m.clicks, "clicks", d.clicks)?,
        aggregator: aggregator
            .parse::<Aggregator>()
            .map_err(|e| usage(e.to_string()))?,
        ..d
    })
}

/// Key-value lines shared by the training log and the eval report.
fn metric_lines(name: &str, pctrs: &[f64], samples: &[Sample]) -> Result<String> {
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let mut out = String::new();
    writeln!(out, "{name}.samples\t{}", samples.len())?;
    writeln!(out, "{name}.auc\t{:.17}", auc(pctrs, &labels)?)?;
    writeln!(
        out,
        "{name}.logloss\t{:.17}",
        gin_core::ctrmodel::cross_entropy(pctrs, &labels)?
    )?;
    Ok(out)
}

pub fn train(a: TrainArgs) -> Result<ExitCode> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let input: PathBuf = file.required(a.input, "input")?;
    let graph_path: PathBuf = file.required(a.graph, "graph")?;
    let output: PathBuf = file.required(a.output, "output")?;
    let log_path = file
        .pick(a.log, "log")?
        .unwrap_or_else(|| PathBuf::from(format!("{}.log", output.display())));
    let eval_input: Option<PathBuf> = file.pick(a.eval_input, "eval-input")?;
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        model: model_config(&file, a.model)?,
        lr: file.or(a.lr, "lr", d.lr)?,
        epochs: file.or(a.epochs, "epochs", d.epochs)?,
        batch: file.or(a.batch, "batch", d.batch)?,
        seed: file.seed(a.common.seed)?,
        threads: file.or(a.threads, "threads", d.threads)?,
    };
    cfg.validate()?;

    let data = read_samples(&input)?;
    let graph = read_graph(&graph_path)?;
    let outcome = gin_core::ctrmodel::train(&data, &graph, &cfg)?;

    let mut log = String::new();
    let m = &cfg.model;
    writeln!(
        log,
        "config\tdim={} depth={} neighbors={} clicks={} aggregator={} lr={} epochs={} batch={} seed={}",
        m.dim, m.depth, m.neighbors, m.clicks, m.aggregator, cfg.lr, cfg.epochs, cfg.batch, cfg.seed
    )?;
    for (i, loss) in outcome.history.iter().enumerate() {
        writeln!(log, "epoch\t{}\tloss\t{loss:.17}", i + 1)?;
    }
    let final_set = match &eval_input {
        Some(p) => read_samples(p)?,
        None => data,
    };
    let pctrs = outcome.params.predict(&final_set, &graph)?;
    log.push_str(&metric_lines("final", &pctrs, &final_set)?);

    write_file(&output, |w| Ok(save_checkpoint(&outcome.params, w)?))?;
    fs::write(&log_path, &log).with_context(|| format!("writing {}", log_path.display()))?;
    print!("{log}");
    Ok(ExitCode::SUCCESS)
}

fn model_name(path: &Path, taken: &[String]) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    let mut name = stem.clone();
    let mut k = 2;
    while taken.contains(&name) {
        name = format!("{stem}#{k}");
        k += 1;
    }
    name
}

pub fn eval(a: EvalArgs) -> Result<ExitCode> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let input: PathBuf = file.required(a.input, "input")?;
    let graph_path: PathBuf = file.required(a.graph, "graph")?;
    let output: Option<PathBuf> = file.pick(a.output, "output")?;

    let samples = read_samples(&input)?;
    let graph = read_graph(&graph_path)?;
    let mut names = Vec::new();
    let mut models: Vec<(String, Vec<f64>)> = Vec::new();
    let mut first: Option<ModelParams> = None;
    let mut finals = String::new();
    for path in &a.checkpoints {
        let params = load_checkpoint(open(path)?, None)
            .with_context(|| format!("reading checkpoint {}", path.display()))?;
        let name = model_name(path, &names);
        let pctrs = params.predict(&samples, &graph)?;
        finals.push_str(&metric_lines(&name, &pctrs, &samples)?);
        names.push(name.clone());
        models.push((name, pctrs));
        first.get_or_insert(params);
    }
    let clicks = first.map_or(usize::MAX, |p| p.config.clicks);
    let lens: Vec<usize> = samples.iter().map(|s| s.pre_clicks.len().min(clicks)).collect();
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let report = bucket_report(&lens, &labels, &models)?;

    let text = format!("{}\n{}{}", report.to_table(), finals, bucket_lines(&report));
    if let Some(path) = &output {
        fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{text}");
    Ok(ExitCode::SUCCESS)
}

/// The per-bucket part of the key-value report.
fn bucket_lines(report: &gin_core::eval::EvalReport) -> String {
    report
        .to_key_values()
        .lines()
        .filter(|l| l.starts_with("bucket."))
        .map(|l| format!("{l}\n"))
        .collect()
}

pub fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let d = GradCheckSetup::default();
    let setup = GradCheckSetup {
        seed: file.seed(a.common.seed)?,
        dim: file.or(a.dim, "dim", d.dim)?,
        depth: file.or(a.depth, "depth", d.depth)?,
        neighbors: file.or(a.neighbors, "neighbors", d.neighbors)?,
        ..d
    };
    let report = end_to_end_grad_check(&setup)?;
    let width = report.params.iter().map(|p| p.name.len()).max().unwrap_or(0);
    for p in &report.params {
        println!("{:<width$}  {:.3e}", p.name, p.max_rel_error);
    }
    println!("max relative error: {:.3e} (tol {:.0e})", report.max_rel_error, report.tol);
    if report.passed {
        println!("PASS");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("FAIL");
        Ok(ExitCode::from(2))
    }
}
