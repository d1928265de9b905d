//! `latcode`: generate, learn, binarize, optimize, index, query, evaluate,
//! benchmark and inspect latent-code retrieval artifacts.
//!
//! Exit codes: 0 success, 1 contract violation, 2 I/O failure, 64 usage.

mod manifest;

use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use latcode::codebook::{compactness, learn_codebook, norm_stats, LearnConfig};
use latcode::eval::{retrieval_benchmark, timing_bench, BenchmarkConfig};
use latcode::hashing::{
    argmin_sets, binarize_codebook, compression_ratio, optimize_bits_with_stats, round_small_norms,
};
use latcode::search::{volume_topq, QueryOptions};
use latcode::synth::{generate, SynthConfig};
use latcode::{par, BinaryCodebook, Codebook, Dataset, Metric, ReferenceIndex, Semantics, Stream};

use manifest::Recorder;

const EXIT_CONTRACT: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_USAGE: u8 = 64;

const DATASET_FILE: &str = "dataset.jsonl";
const INDEX_FILE: &str = "index.json";

fn codebook_file(stream: Stream) -> String {
    format!("codebook_{stream}.json")
}

fn binary_file(stream: Stream) -> String {
    format!("binary_{stream}.json")
}

#[derive(Parser)]
#[command(name = "latcode", version, about = "Latent-code similarity search toolkit")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Report format on stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Where to write the run manifest (default: next to the output, else stderr).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Json,
    Table,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its two codebooks.
    Synth(SynthArgs),
    /// Learn a codebook from a JSON array of vectors.
    LearnCodebook(LearnArgs),
    /// Round small-norm rows, then encode every pairwise hyperplane as a bit.
    Binarize(BinarizeArgs),
    /// Greedily drop bits while preserving every row's Hamming nearest set.
    Optimize(OptimizeArgs),
    /// Check that two binary codebooks have identical Hamming nearest sets.
    Verify(VerifyArgs),
    /// Build optimized binary codebooks for a dataset directory.
    Index(IndexArgs),
    /// Volume-wise top-Q retrieval for one query slice.
    Query(QueryArgs),
    /// Retrieval benchmark over one query per abnormal volume.
    Eval(EvalArgs),
    /// Time exhaustive Euclidean vs Hamming distance computation.
    Bench(BenchArgs),
    /// Codebook norm distribution and compactness.
    Stats(StatsArgs),
}

#[derive(Args, Serialize)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 40)]
    volumes: usize,
    #[arg(long, default_value_t = 32)]
    slices: usize,
    /// Latent grid side length.
    #[arg(long, default_value_t = 8)]
    grid: usize,
    /// Label map side length.
    #[arg(long, default_value_t = 64)]
    labels: usize,
    #[arg(long, default_value_t = 128)]
    k: usize,
    #[arg(long, default_value_t = 16)]
    d: usize,
    #[arg(long, default_value_t = 0.75)]
    lesion_rate: f64,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
}

#[derive(Args, Serialize)]
struct LearnArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 512)]
    k: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 1024)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = Stream::Normal)]
    stream: Stream,
    #[arg(long, default_value_t = LearnConfig::default().seed_radius)]
    seed_radius: f64,
}

#[derive(Args, Serialize)]
struct BinarizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1e-5)]
    threshold: f64,
}

#[derive(Args, Serialize)]
struct OptimizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct VerifyArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
}

#[derive(Args, Serialize)]
struct IndexArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 1e-5)]
    threshold: f64,
}

#[derive(Args, Serialize)]
struct QueryArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    volume: String,
    /// Query slice (default: the volume's slice with the largest abnormal area).
    #[arg(long)]
    slice: Option<u32>,
    #[arg(long, default_value_t = Semantics::Sum)]
    semantics: Semantics,
    #[arg(long, default_value_t = Metric::Euclidean)]
    metric: Metric,
    #[arg(long, default_value_t = 10)]
    topq: usize,
    /// Allow results from the query's own volume.
    #[arg(long)]
    include_own: bool,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 10)]
    topq: usize,
    /// Include the label-overlap oracle (brutal search).
    #[arg(long)]
    oracle: bool,
    /// Omit the seeded random baseline row.
    #[arg(long)]
    no_random: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the report here as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct BenchArgs {
    #[arg(long)]
    codebook: PathBuf,
    #[arg(long)]
    binary: PathBuf,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
}

#[derive(Args, Serialize)]
struct StatsArgs {
    #[arg(long)]
    codebook: PathBuf,
    #[arg(long, default_value_t = 1e-5)]
    threshold: f64,
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_codebook(path: &Path) -> anyhow::Result<Codebook> {
    Codebook::from_json(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_binary(path: &Path) -> anyhow::Result<BinaryCodebook> {
    BinaryCodebook::from_json(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_dataset(path: &Path) -> anyhow::Result<Dataset> {
    let file = fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed = Dataset::read_jsonl(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?;
    parsed.with_context(|| format!("parsing {}", path.display()))
}

/// Loads a dataset directory; binary codebooks are attached when present.
fn load_index(dir: &Path, rec: &mut Recorder) -> anyhow::Result<ReferenceIndex> {
    let dataset_path = dir.join(DATASET_FILE);
    let dataset = load_dataset(&dataset_path)?;
    rec.input(&dataset_path);
    let mut codebooks = Vec::new();
    let mut binaries = Vec::new();
    for stream in Stream::ALL {
        let path = dir.join(codebook_file(stream));
        codebooks.push(load_codebook(&path)?);
        rec.input(&path);
        let bin_path = dir.join(binary_file(stream));
        binaries.push(if bin_path.exists() {
            rec.input(&bin_path);
            Some(load_binary(&bin_path)?)
        } else {
            None
        });
    }
    let abnormal_bits = binaries.pop().flatten();
    let normal_bits = binaries.pop().flatten();
    let abnormal = codebooks.pop().expect("two codebooks");
    let normal = codebooks.pop().expect("two codebooks");
    Ok(ReferenceIndex::build(
        dataset,
        normal,
        abnormal,
        normal_bits,
        abnormal_bits,
    )?)
}

fn print(format: Format, value: &serde_json::Value, table: impl FnOnce() -> String) {
    let text = match format {
        Format::Json => serde_json::to_string_pretty(value).expect("json value serializes"),
        Format::Table => table(),
    };
    println!("{}", text.trim_end());
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("arguments serialize")
}

/// Output of a command: the manifest and where it goes by default.
struct Done {
    recorder: Recorder,
    primary: Option<PathBuf>,
}

fn synth(args: &SynthArgs, format: Format) -> anyhow::Result<Done> {
    let mut rec = Recorder::new("synth", to_value(args));
    let config = SynthConfig {
        volumes: args.volumes,
        slices_per_volume: args.slices,
        grid_h: args.grid,
        grid_w: args.grid,
        label_h: args.labels,
        label_w: args.labels,
        k: args.k,
        d: args.d,
        lesion_rate: args.lesion_rate,
        seed: args.seed,
        noise_std: args.noise,
        epochs: args.epochs,
    };
    let out = generate(&config)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let dataset_path = args.out.join(DATASET_FILE);
    let file = fs::File::create(&dataset_path).with_context(|| format!("writing {}", dataset_path.display()))?;
    let mut writer = BufWriter::new(file);
    out.dataset.write_jsonl(&mut writer).context("writing dataset")?;
    writer.flush().context("writing dataset")?;
    rec.output(&dataset_path);
    for cb in [&out.normal, &out.abnormal] {
        let path = args.out.join(codebook_file(cb.stream()));
        write_text(&path, &cb.to_json())?;
        rec.output(&path);
    }
    let summary = json!({
        "records": out.dataset.len(),
        "volumes": out.dataset.volume_ids().len(),
        "k": args.k,
        "d": args.d,
        "out": args.out.display().to_string(),
    });
    print(format, &summary, || {
        format!(
            "wrote {} records from {} volumes (K={}, D={}) to {}",
            out.dataset.len(),
            out.dataset.volume_ids().len(),
            args.k,
            args.d,
            args.out.display()
        )
    });
    Ok(Done {
        recorder: rec,
        primary: Some(args.out.clone()),
    })
}

fn learn(args: &LearnArgs, format: Format) -> anyhow::Result<Done> {
    let mut rec = Recorder::new("learn-codebook", to_value(args));
    let text = read_text(&args.input)?;
    rec.input(&args.input);
    let rows: Vec<Vec<f64>> = serde_json::from_str(&text)
        .map_err(|e| latcode::Error::Format {
            what: "vector file",
            reason: e.to_string(),
        })
        .with_context(|| format!("parsing {}", args.input.display()))?;
    let d = rows
        .first()
        .map(Vec::len)
        .ok_or(latcode::Error::Empty("training vectors"))?;
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(latcode::Error::DimensionMismatch {
            expected: d,
            actual: bad.len(),
        }
        .into());
    }
    let flat: Vec<f64> = rows.concat();
    let config = LearnConfig {
        stream: args.stream,
        k: args.k,
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: args.seed,
        seed_radius: args.seed_radius,
        ..LearnConfig::default()
    };
    let cb = learn_codebook(&flat, d, &config)?;
    write_text(&args.out, &cb.to_json())?;
    rec.output(&args.out);
    let summary = json!({
        "vectors": rows.len(),
        "k": cb.k(),
        "d": cb.d(),
        "compactness": compactness(&cb, 1e-5),
    });
    print(format, &summary, || {
        format!(
            "learned K={} D={} codebook from {} vectors; compactness {:.4}",
            cb.k(),
            cb.d(),
            rows.len(),
            compactness(&cb, 1e-5)
        )
    });
    Ok(Done {
        recorder: rec,
        primary: Some(args.out.clone()),
    })
}

fn binarize(args: &BinarizeArgs, format: Format) -> anyhow::Result<Done> {
    let mut rec = Recorder::new("binarize", to_value(args));
    if !(args.threshold.is_finite() && args.threshold >= 0.0) {
        return Err(latcode::Error::InvalidArgument("threshold must be finite and non-negative".into()).into());
    }
    let cb = load_codebook(&args.input)?;
    rec.input(&args.input);
    let rounded = round_small_norms(&cb, args.threshold);
    let zeroed = cb.k() - compactness_count(&rounded);
    let result = binarize_codebook(&rounded)?;
    write_text(&args.out, &result.codebook.to_json())?;
    rec.output(&args.out);
    let summary = json!({
        "k": result.codebook.k(),
        "bits": result.codebook.e_bits(),
        "rows_rounded_to_zero": zeroed,
        "incidence": result.incidence,
    });
    print(format, &summary, || {
        format!(
            "K={} -> {} bits per row; {} rows rounded to zero; {} on-hyperplane incidences ({} degenerate pairs)",
            result.codebook.k(),
            result.codebook.e_bits(),
            zeroed,
            result.incidence.count,
            result.incidence.degenerate_pairs
        )
    });
    Ok(Done {
        recorder: rec,
        primary: Some(args.out.clone()),
    })
}

/// Number of rows with non-zero norm.
fn compactness_count(cb: &Codebook) -> usize {
    cb.norms().iter().filter(|&&n| n > 0.0).count()
}

fn optimize(args: &OptimizeArgs, format: Format) -> anyhow::Result<Done> {
    let mut rec = Recorder::new("optimize", to_value(args));
    let b = load_binary(&args.input)?;
    rec.input(&args.input);
    let (opt, stats) = optimize_bits_with_stats(&b);
    write_text(&args.out, &opt.to_json())?;
    rec.output(&args.out);
    let ratio = compression_ratio(&opt, &b)?;
    let summary = json!({
        "initial_bits": stats.initial_bits,
        "kept_bits": stats.kept_bits,
        "ratio": ratio,
        "decisions": stats.decisions,
    });
    print(format, &summary, || {
        format!(
            "kept {} of {} bits (E*/E = {:.5})",
            stats.kept_bits, stats.initial_bits, ratio
        )
    });
    Ok(Done {
        recorder: rec,
        primary: Some(args.out.clone()),
    })
}

fn verify(args: &VerifyArgs, format: Format) -> anyhow::Result<(Done, bool)> {
    let mut rec = Recorder::new("verify", to_value(args));
    let a = load_binary(&args.a)?;
    rec.input(&args.a);
    let b = load_binary(&args.b)?;
    rec.input(&args.b);
    if a.k() != b.k() {
        bail!(latcode::Error::ShapeMismatch(format!("k = {} vs k = {}", a.k(), b.k())));
    }
    let sets_a = argmin_sets(&a);
    let sets_b = argmin_sets(&b);
    let changed: Vec<usize> = (0..a.k()).filter(|&i| sets_a[i] != sets_b[i]).collect();
    let preserved = changed.is_empty();
    let summary = json!({
        "argmin_sets_preserved": preserved,
        "changed_anchors": changed,
        "bits": [a.e_bits(), b.e_bits()],
    });
    print(format, &summary, || {
        let mut s = format!("argmin sets preserved: {preserved}");
        if !preserved {
            s += &format!(" ({} anchors changed)", changed.len());
        }
        s
    });
    Ok((
        Done {
            recorder: rec,
            primary: None,
        },
        preserved,
    ))
}

fn index(args: &IndexArgs, format: Format) -> anyhow::Result<Done> {
    let mut rec = Recorder::new("index", to_value(args));
    let dataset_path = args.dataset.join(DATASET_FILE);
    let dataset = load_dataset(&dataset_path)?;
    rec.input(&dataset_path);
    let mut summary = serde_json::Map::new();
    let mut codebooks = Vec::new();
    let mut binaries = Vec::new();
    for stream in Stream::ALL {
        let path = args.dataset.join(codebook_file(stream));
        let cb = load_codebook(&path)?;
        rec.input(&path);
        let full = binarize_codebook(&round_small_norms(&cb, args.threshold))?.codebook;
        let (opt, stats) = optimize_bits_with_stats(&full);
        let out = args.dataset.join(binary_file(stream));
        write_text(&out, &opt.to_json())?;
        rec.output(&out);
        summary.insert(
            stream.to_string(),
            json!({ "k": cb.k(), "d": cb.d(), "bits": stats.initial_bits, "kept_bits": stats.kept_bits }),
        );
        codebooks.push(cb);
        binaries.push(opt);
    }
    let abnormal_bits = binaries.pop();
    let normal_bits = binaries.pop();
    let abnormal = codebooks.pop().expect("two codebooks");
    let normal = codebooks.pop().expect("two codebooks");
    let idx = ReferenceIndex::build(dataset, normal, abnormal, normal_bits, abnormal_bits)?;
    summary.insert("records".into(), json!(idx.records().len()));
    summary.insert("volumes".into(), json!(idx.volumes().len()));
    let summary = serde_json::Value::Object(summary);
    let index_path = args.dataset.join(INDEX_FILE);
    write_text(&index_path, &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    rec.output(&index_path);
    print(format, &summary, || {
        let mut s = format!(
            "indexed {} records from {} volumes",
            idx.records().len(),
            idx.volumes().len()
        );
        for stream in Stream::ALL {
            let entry = &summary[stream.as_str()];
            s += &format!(
                "\n{stream}: K={} kept {} of {} bits",
                entry["k"], entry["kept_bits"], entry["bits"]
            );
        }
        s
    });
    Ok(Done {
        recorder: rec,
        primary: Some(index_path),
    })
}

fn query(args: &QueryArgs, format: Format) -> anyhow::Result<Done> {
    let mut rec = Recorder::new("query", to_value(args));
    let idx = load_index(&args.dataset, &mut rec)?;
    let volume = idx
        .volume(&args.volume)
        .ok_or_else(|| latcode::Error::InvalidArgument(format!("unknown volume {:?}", args.volume)))?;
    let qi = match args.slice {
        Some(s) => *volume
            .records
            .iter()
            .find(|&&ri| idx.records()[ri].slice_index == s)
            .ok_or_else(|| latcode::Error::InvalidArgument(format!("volume {} has no slice {s}", args.volume)))?,
        None => {
            // first slice with the largest abnormal area
            let mut best = volume.records[0];
            for &ri in &volume.records {
                if idx.records()[ri].abnormal_labels.foreground_area()
                    > idx.records()[best].abnormal_labels.foreground_area()
                {
                    best = ri;
                }
            }
            best
        }
    };
    let q = &idx.records()[qi];
    let opts = QueryOptions {
        semantics: args.semantics,
        metric: args.metric,
        q: args.topq,
        exclude_own_volume: !args.include_own,
    };
    let result = volume_topq(q, &idx, &opts)?;
    let value = json!({
        "query": { "volume_id": q.volume_id, "slice_index": q.slice_index },
        "result": result,
    });
    print(format, &value, || {
        let mut s = format!(
            "query {} slice {} ({} / {}, top-{}{})\n",
            q.volume_id,
            q.slice_index,
            args.semantics,
            args.metric,
            args.topq,
            if result.short { ", fewer volumes available" } else { "" }
        );
        s += &format!("{:>4}  {:<10} {:>6} {:>14}\n", "rank", "volume", "slice", "score");
        for (rank, e) in result.entries.iter().enumerate() {
            s += &format!(
                "{:>4}  {:<10} {:>6} {:>14.6}\n",
                rank + 1,
                e.volume_id,
                e.slice_index,
                e.score
            );
        }
        s
    });
    Ok(Done {
        recorder: rec,
        primary: None,
    })
}

fn eval(args: &EvalArgs, format: Format) -> anyhow::Result<Done> {
    let mut rec = Recorder::new("eval", to_value(args));
    let idx = load_index(&args.dataset, &mut rec)?;
    let metrics: Vec<Metric> = Metric::ALL.into_iter().filter(|&m| idx.has_metric(m)).collect();
    let config = BenchmarkConfig {
        topq: args.topq,
        metrics,
        include_oracle: args.oracle,
        include_random: !args.no_random,
        seed: args.seed,
        dataset_id: args.dataset.display().to_string(),
        ..BenchmarkConfig::default()
    };
    let report = retrieval_benchmark(&idx, &config)?;
    let text = match format {
        Format::Json => report.to_json(),
        Format::Table => report.to_table(),
    };
    if let Some(out) = &args.out {
        write_text(out, &(report.to_json().trim_end().to_string() + "\n"))?;
        rec.output(out);
    }
    println!("{}", text.trim_end());
    if !idx.has_metric(Metric::Hamming) {
        eprintln!(
            "note: no binary codebooks in {}; run `latcode index` to add D_H",
            args.dataset.display()
        );
    }
    Ok(Done {
        recorder: rec,
        primary: args.out.clone(),
    })
}

fn bench(args: &BenchArgs, format: Format) -> anyhow::Result<Done> {
    let mut rec = Recorder::new("bench", to_value(args));
    let cb = load_codebook(&args.codebook)?;
    rec.input(&args.codebook);
    let b = load_binary(&args.binary)?;
    rec.input(&args.binary);
    let report = par::with_jobs(Some(1), || timing_bench(&cb, &b, args.repeats))?;
    print(format, &to_value(&report), || {
        format!(
            "K={} D={} E={} bits, {} repeats\nEuclidean  {:.6e} s\nHamming    {:.6e} s\nreduction  {:.1}%",
            report.k,
            report.d,
            report.e_bits,
            report.repeats,
            report.t_euclidean,
            report.t_hamming,
            100.0 * report.reduction
        )
    });
    Ok(Done {
        recorder: rec,
        primary: None,
    })
}

fn stats(args: &StatsArgs, format: Format) -> anyhow::Result<Done> {
    let mut rec = Recorder::new("stats", to_value(args));
    let cb = load_codebook(&args.codebook)?;
    rec.input(&args.codebook);
    let norms = norm_stats(&cb);
    let c = compactness(&cb, args.threshold);
    let value = json!({
        "k": cb.k(),
        "d": cb.d(),
        "threshold": args.threshold,
        "compactness": c,
        "norms_descending": norms,
    });
    print(format, &value, || {
        // norms are descending, so quantile f sits at position 1 - f
        let pick = |f: f64| norms[((norms.len() - 1) as f64 * f).round() as usize];
        format!(
            "K={} D={}\nnorm max {:.4e}  p25 {:.4e}  median {:.4e}  p75 {:.4e}  min {:.4e}\ncompactness (norm < {:e}): {:.4}",
            cb.k(),
            cb.d(),
            pick(0.0),
            pick(0.75),
            pick(0.5),
            pick(0.25),
            pick(1.0),
            args.threshold,
            c
        )
    });
    Ok(Done {
        recorder: rec,
        primary: None,
    })
}

fn run(cli: &Cli) -> anyhow::Result<bool> {
    let format = cli.format;
    if cli.jobs == Some(0) {
        return Err(anyhow!(latcode::Error::InvalidArgument(
            "--jobs must be positive".into()
        )));
    }
    let (done, ok) = par::with_jobs(cli.jobs, || -> anyhow::Result<(Done, bool)> {
        Ok(match &cli.command {
            Command::Synth(a) => (synth(a, format)?, true),
            Command::LearnCodebook(a) => (learn(a, format)?, true),
            Command::Binarize(a) => (binarize(a, format)?, true),
            Command::Optimize(a) => (optimize(a, format)?, true),
            Command::Verify(a) => verify(a, format)?,
            Command::Index(a) => (index(a, format)?, true),
            Command::Query(a) => (query(a, format)?, true),
            Command::Eval(a) => (eval(a, format)?, true),
            Command::Bench(a) => (bench(a, format)?, true),
            Command::Stats(a) => (stats(a, format)?, true),
        })
    })?;
    let manifest = done.recorder.finish().context("hashing run files")?;
    manifest::emit(&manifest, cli.manifest.as_deref(), done.primary.as_deref()).context("writing manifest")?;
    Ok(ok)
}

/// I/O failures anywhere in the chain map to exit 2, everything else to 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.downcast_ref::<io::Error>().is_some()) {
        EXIT_IO
    } else {
        EXIT_CONTRACT
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CONTRACT),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
