use std::collections::HashSet;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use edda::augment::{self, dedup_filter, normalize_text, run_pipeline, AugmentedInstance, Lexicon};
use edda::config::RunConfig;
use edda::corpus::{self, split_cross_target, split_zero_shot, subsample, Dataset, DatasetFormat, LabelMap, LabeledInstance, Split, StanceLabel};
use edda::formats::{self, FileKind};
use edda::llm::{gateway_from_env, mock_gateway, Gateway, GatewayStats};
use edda::metrics::{self, HashedNgramEmbedder, HttpEmbedder, Prediction};
use edda::prompts::TextStyle;
use edda::ren::{self, RenFixture};
use edda::rules::{encode_all, IfThenRule};
use edda::{jsonl, tdda};

#[derive(Parser)]
#[command(name = "edda", version, about = "LLM data augmentation and evaluation for zero-shot stance detection")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// Key-value TOML run configuration; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    model: Option<String>,
    /// Response cache directory.
    #[arg(long, global = true, env = "EDDA_CACHE_DIR")]
    cache_dir: Option<PathBuf>,
    /// Answer LLM calls from a directory of canned replies instead of the network.
    #[arg(long, global = true)]
    mock_gateway: Option<PathBuf>,
    #[arg(long, global = true)]
    concurrency: Option<usize>,
    #[arg(long, global = true)]
    max_retries: Option<u32>,
    /// Manifest path; defaults to `<output>.manifest.json`, or
    /// `edda.manifest.json` for commands without an output file.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Load a raw dataset and write instance files, optionally split.
    Ingest(IngestArgs),
    /// Ask the LLM for an if-then rule per training instance.
    EncodeRules {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate augmented instances from rules.
    Augment(AugmentArgs),
    /// Rolling-exemplar baseline generator.
    Tdda {
        #[arg(long)]
        train: PathBuf,
        #[arg(long, default_value = "sem16")]
        format: DatasetFormat,
        #[arg(long, default_value_t = 9)]
        iterations: usize,
        #[arg(long)]
        out: PathBuf,
        /// Pool membership at each iteration boundary, one JSON array per line.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        min_tokens: Option<usize>,
    },
    /// Zero-shot LLM classification of a test file.
    Label {
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against gold labels.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, value_enum, default_value_t = Metric::MacroAvg)]
        metric: Metric,
    },
    /// Similarity between augmented and test texts.
    Similarity {
        #[arg(long)]
        aug: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = metrics::REPORT_ITERATIONS)]
        iterations: usize,
        #[arg(long, default_value_t = metrics::REPORT_SAMPLE)]
        sample: usize,
        #[arg(long, value_enum, default_value_t = Embedder::Hashed)]
        embedder: Embedder,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Invariant and gradient checks for the attention head.
    RenCheck {
        #[arg(long, default_value_t = 20)]
        configs: usize,
        /// Also write a weight fixture for the external trainer.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Score at increasing augmented-subset sizes.
    Sweep(SweepArgs),
    /// Run the external trainer.
    Train(TrainArgs),
    /// Validate line-record files.
    CheckFormat {
        #[arg(long)]
        kind: FileKind,
        /// Rules file for provenance checks on augmented files.
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "sem16")]
    format: DatasetFormat,
    /// Extra raw-label mappings, e.g. `pro=favor,con=against`.
    #[arg(long)]
    label_map: Option<String>,
    /// Split tag for unsplit output.
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    split: SplitArg,
    /// Zero-shot: hold this target out as test.
    #[arg(long, conflicts_with = "cross")]
    held_out: Option<String>,
    #[arg(long)]
    dev_frac: Option<f64>,
    /// Cross-target `SOURCE:DEST`.
    #[arg(long)]
    cross: Option<String>,
    /// Keep this fraction of the training portion.
    #[arg(long)]
    subsample: Option<f64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    rules: PathBuf,
    #[arg(long)]
    lexicon: PathBuf,
    /// Instance files whose texts must not reappear (repeatable).
    #[arg(long)]
    train: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Input plus derived rules; defaults to `<out stem>.rules.jsonl`.
    #[arg(long)]
    rules_out: Option<PathBuf>,
    #[arg(long)]
    rrs_probability: Option<f64>,
    #[arg(long)]
    tweets_per_target: Option<usize>,
    #[arg(long)]
    targets_per_rule: Option<usize>,
    #[arg(long)]
    text_style: Option<TextStyle>,
    #[arg(long)]
    filter_disagreements: bool,
    #[arg(long)]
    min_tokens: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    /// Augmented instances to subset.
    #[arg(long)]
    aug: PathBuf,
    /// Gold instances scored at every size.
    #[arg(long)]
    gold: PathBuf,
    /// Comma-separated sizes; default 0, step, 2*step, ..., all.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1000)]
    step: usize,
    #[arg(long, value_enum, default_value_t = Metric::MacroAvg)]
    metric: Metric,
    /// Precomputed predictions, `{size}` is substituted.
    #[arg(long, conflicts_with = "trainer_cmd")]
    predictions: Option<String>,
    /// Trainer executable; trained once per size.
    #[arg(long, requires_all = ["train", "dev", "rules"])]
    trainer_cmd: Option<String>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Working directory for subsets and trainer outputs.
    #[arg(long, default_value = "sweep")]
    work_dir: PathBuf,
    /// Table output (TSV); always printed to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    trainer_cmd: String,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    rules: PathBuf,
    #[arg(long)]
    augmented: Option<PathBuf>,
    /// Predict on this file after training.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    /// Mean F1 over favor and against.
    MacroAvg,
    /// Mean F1 over all three classes.
    MacroF1,
}

#[derive(Clone, Copy, ValueEnum)]
enum Embedder {
    Hashed,
    /// `POST $EDDA_BASE_URL/embeddings`.
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Test => Split::Test,
        }
    }
}

/// Bad invocation; exits with status 1.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

#[derive(Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

fn digest(path: &Path) -> FileDigest {
    let sha256 = std::fs::read(path).map(|b| hex::encode(Sha256::digest(b))).unwrap_or_default();
    FileDigest { path: path.display().to_string(), sha256 }
}

#[derive(Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: String,
    config_hash: String,
    config: RunConfig,
    seed: Option<u64>,
    model: String,
    parallel: bool,
    gateway: Option<GatewayStats>,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

struct Run {
    cfg: RunConfig,
    global: Global,
    command: &'static str,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    gateway: Option<Gateway>,
}

impl Run {
    fn seed(&self) -> Result<u64> {
        self.cfg.seed.ok_or_else(|| UsageError(format!("`{}` samples randomly and needs --seed (or `seed` in the config file)", self.command)).into())
    }

    fn gateway(&mut self) -> Result<&Gateway> {
        if self.gateway.is_none() {
            let gcfg = self.cfg.gateway();
            let gw = match &self.global.mock_gateway {
                Some(dir) => mock_gateway(dir, gcfg).with_context(|| format!("loading mock gateway from {}", dir.display()))?,
                None => gateway_from_env(gcfg)?,
            };
            self.gateway = Some(gw);
        }
        Ok(self.gateway.as_ref().expect("gateway set"))
    }

    fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    fn output(&mut self, p: &Path) {
        self.outputs.push(p.to_path_buf());
    }

    fn write_manifest(&self) -> Result<()> {
        let path = match (&self.global.manifest, self.outputs.first()) {
            (Some(p), _) => p.clone(),
            (None, Some(out)) => out.with_extension("manifest.json"),
            (None, None) => PathBuf::from("edda.manifest.json"),
        };
        let m = Manifest {
            tool: "edda",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command.to_string(),
            config_hash: self.cfg.hash(),
            config: self.cfg.clone(),
            seed: self.cfg.seed,
            model: self.cfg.model.clone(),
            parallel: edda::par::is_parallel(),
            gateway: self.gateway.as_ref().map(Gateway::stats),
            inputs: self.inputs.iter().map(|p| digest(p)).collect(),
            outputs: self.outputs.iter().map(|p| digest(p)).collect(),
        };
        let mut text = serde_json::to_string_pretty(&m)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing manifest {}", path.display()))
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_lines<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    ensure_parent(path)?;
    jsonl::write(path, records).with_context(|| format!("writing {}", path.display()))
}

fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    jsonl::read(path).with_context(|| format!("reading {}", path.display()))
}

/// `(id, label)` pairs from any line file with `id` and a `label` or
/// `pseudo_label` field.
fn read_gold(path: &Path) -> Result<Vec<(String, StanceLabel)>> {
    let rows: Vec<serde_json::Value> = read_lines(path)?;
    rows.into_iter()
        .enumerate()
        .map(|(i, v)| {
            let id = v.get("id").and_then(|x| x.as_str()).ok_or_else(|| anyhow!("{}:{}: missing id", path.display(), i + 1))?;
            let label = v
                .get("label")
                .or_else(|| v.get("pseudo_label"))
                .and_then(|x| x.as_str())
                .ok_or_else(|| anyhow!("{}:{}: missing label", path.display(), i + 1))?;
            Ok((id.to_string(), label.parse::<StanceLabel>().map_err(|e| anyhow!("{}:{}: {e}", path.display(), i + 1))?))
        })
        .collect()
}

fn read_texts(path: &Path) -> Result<Vec<String>> {
    let rows: Vec<serde_json::Value> = read_lines(path)?;
    rows.into_iter()
        .enumerate()
        .map(|(i, v)| {
            v.get("text")
                .and_then(|x| x.as_str())
                .map(str::to_string)
                .ok_or_else(|| anyhow!("{}:{}: missing text", path.display(), i + 1))
        })
        .collect()
}

fn train_text_set(paths: &[PathBuf]) -> Result<HashSet<String>> {
    let mut set = HashSet::new();
    for p in paths {
        set.extend(corpus::read_instances(p)?.instances().iter().map(|i| normalize_text(&i.text)));
    }
    Ok(set)
}

fn score(metric: Metric, preds: &[Prediction], gold: &[(String, StanceLabel)]) -> Result<f64> {
    let (p, g) = metrics::align_by_id(preds, gold)?;
    Ok(match metric {
        Metric::MacroAvg => metrics::macro_avg(&p, &g)?,
        Metric::MacroF1 => metrics::macro_f1(&p, &g, &StanceLabel::ALL)?.macro_score,
    })
}

fn cmd_ingest(run: &mut Run, a: &IngestArgs) -> Result<()> {
    let mut map = a.format.default_label_map();
    if let Some(extra) = &a.label_map {
        map = map.merged(&LabelMap::parse(extra)?);
    }
    run.input(&a.input);
    let mut d = corpus::load_dataset(&a.input, a.format, &map)?;
    let mut outputs: Vec<(&str, Dataset)> = Vec::new();
    if let Some(held) = &a.held_out {
        let seed = run.seed()?;
        let target = d.resolve_target(held)?;
        let s = split_zero_shot(&d, &target, a.dev_frac.unwrap_or(run.cfg.dev_frac), seed)?;
        outputs.extend([("train", s.train), ("dev", s.dev), ("test", s.test)]);
    } else if let Some(cross) = &a.cross {
        let (src, dst) = cross.split_once(':').ok_or_else(|| UsageError(format!("--cross expects SOURCE:DEST, got `{cross}`")))?;
        let (train, test) = split_cross_target(&d, &d.resolve_target(src)?, &d.resolve_target(dst)?)?;
        outputs.extend([("train", train), ("test", test)]);
    } else {
        let split: Split = a.split.into();
        let tagged: Vec<LabeledInstance> = d.into_instances().into_iter().map(|mut i| {
            i.split = split;
            i
        }).collect();
        d = Dataset::new("instances", tagged)?;
        outputs.push(("instances", d));
    }
    if let Some(frac) = a.subsample {
        let seed = run.seed()?;
        for (name, ds) in outputs.iter_mut() {
            if matches!(*name, "train" | "instances") {
                *ds = subsample(ds, frac, seed)?;
            }
        }
    }
    std::fs::create_dir_all(&a.out_dir)?;
    for (name, ds) in &outputs {
        let path = a.out_dir.join(format!("{name}.jsonl"));
        write_lines(&path, ds.instances())?;
        eprintln!("{}: {} instances", path.display(), ds.len());
        run.output(&path);
    }
    Ok(())
}

fn cmd_encode(run: &mut Run, train: &Path, out: &Path) -> Result<()> {
    run.input(train);
    let d = corpus::read_instances(train)?;
    let outcome = encode_all(d.instances(), run.gateway()?);
    write_lines(out, &outcome.rules)?;
    run.output(out);
    eprintln!(
        "{} rules, {} failures, {} stance disagreements",
        outcome.rules.len(),
        outcome.failures.len(),
        outcome.disagreements
    );
    if outcome.rules.is_empty() && !d.is_empty() {
        bail!("no rule could be parsed from any instance");
    }
    Ok(())
}

fn cmd_augment(run: &mut Run, a: &AugmentArgs) -> Result<()> {
    let seed = run.seed()?;
    if let Some(p) = a.rrs_probability {
        run.cfg.rrs_probability = p;
    }
    if let Some(n) = a.tweets_per_target {
        run.cfg.tweets_per_target = n;
    }
    if let Some(n) = a.targets_per_rule {
        run.cfg.targets_per_rule = n;
    }
    if let Some(s) = a.text_style {
        run.cfg.text_style = s;
    }
    if let Some(n) = a.min_tokens {
        run.cfg.min_tokens = n;
    }
    run.cfg.filter_disagreements |= a.filter_disagreements;
    let acfg = run.cfg.augment(seed);
    acfg.validate().map_err(|e| UsageError(e.to_string()))?;

    run.input(&a.rules);
    run.input(&a.lexicon);
    let rules: Vec<IfThenRule> = read_lines(&a.rules)?;
    let lex = Lexicon::load(&a.lexicon)?;
    for t in &a.train {
        run.input(t);
    }
    let train = train_text_set(&a.train)?;
    let min_tokens = run.cfg.min_tokens;
    let out = run_pipeline(&rules, &lex, &acfg, run.gateway()?)?;
    let generated = out.instances.len();
    let kept = dedup_filter(out.instances, &train, min_tokens);
    eprintln!(
        "{generated} generated, {} kept after dedup, {} derived rules, {} failures",
        kept.len(),
        out.derived_rules.len(),
        out.failures.len()
    );
    write_lines(&a.out, &kept)?;
    run.output(&a.out);

    let rules_out = a.rules_out.clone().unwrap_or_else(|| a.out.with_extension("rules.jsonl"));
    let mut all_rules = rules;
    all_rules.extend(out.derived_rules);
    write_lines(&rules_out, &all_rules)?;
    run.output(&rules_out);
    Ok(())
}

fn cmd_tdda(run: &mut Run, train: &Path, fmt: DatasetFormat, iterations: usize, out: &Path, trace: Option<&Path>, min_tokens: Option<usize>) -> Result<()> {
    let seed = run.seed()?;
    if let Some(n) = min_tokens {
        run.cfg.min_tokens = n;
    }
    run.input(train);
    let d = corpus::read_instances(train)?;
    let res = tdda::tdda_generate(&d, iterations, fmt, run.gateway()?, seed)?;
    let train_set: HashSet<String> = d.instances().iter().map(|i| normalize_text(&i.text)).collect();
    let generated = res.instances.len();
    let kept: Vec<AugmentedInstance> = dedup_filter(res.instances, &train_set, run.cfg.min_tokens);
    eprintln!("{generated} generated, {} kept after dedup, {} failures", kept.len(), res.failures.len());
    write_lines(out, &kept)?;
    run.output(out);
    if let Some(t) = trace {
        write_lines(t, &res.pool_trace)?;
        run.output(t);
    }
    Ok(())
}

fn cmd_label(run: &mut Run, test: &Path, out: &Path) -> Result<()> {
    run.input(test);
    let d = corpus::read_instances(test)?;
    let gw = run.gateway()?;
    let results = edda::par::map(d.instances(), |i| augment::pseudo_label(&i.text, &i.target, gw));
    let mut preds = Vec::with_capacity(d.len());
    let mut unparsed = 0;
    for (inst, r) in d.instances().iter().zip(results) {
        let pred = match r {
            Ok(l) => l,
            Err(augment::AugmentError::UnparseableStance(reply)) => {
                log::warn!("{}: no stance in reply `{reply}`, predicting neutral", inst.id);
                unparsed += 1;
                StanceLabel::Neutral
            }
            Err(e) => return Err(e).with_context(|| format!("labeling {}", inst.id)),
        };
        let mut probs = vec![0.0; StanceLabel::ALL.len()];
        probs[pred.index()] = 1.0;
        preds.push(Prediction { id: inst.id.clone(), pred, probs });
    }
    write_lines(out, &preds)?;
    run.output(out);
    eprintln!("{} predictions, {unparsed} defaulted to neutral", preds.len());
    Ok(())
}

fn cmd_evaluate(run: &mut Run, pred: &Path, gold: &Path, metric: Metric) -> Result<()> {
    run.input(pred);
    run.input(gold);
    let preds: Vec<Prediction> = read_lines(pred)?;
    let s = score(metric, &preds, &read_gold(gold)?)?;
    println!("{s:.4}");
    Ok(())
}

fn cmd_similarity(run: &mut Run, aug: &Path, test: &Path, iterations: usize, sample: usize, embedder: Embedder, out: Option<&Path>) -> Result<()> {
    let seed = run.seed()?;
    run.input(aug);
    run.input(test);
    let a = read_texts(aug)?;
    let t = read_texts(test)?;
    let ar: Vec<&str> = a.iter().map(String::as_str).collect();
    let tr: Vec<&str> = t.iter().map(String::as_str).collect();
    let report = match embedder {
        Embedder::Hashed => metrics::similarity_report_with(&ar, &tr, &HashedNgramEmbedder::default(), seed, iterations, sample)?,
        Embedder::Remote => {
            let base = std::env::var("EDDA_BASE_URL").unwrap_or_else(|_| edda::llm::DEFAULT_BASE_URL.to_string());
            let ep = HttpEmbedder::new(base, std::env::var("EDDA_API_KEY").ok(), "text-embedding-ada-002");
            metrics::similarity_report_with(&ar, &tr, &ep, seed, iterations, sample)?
        }
    };
    let text = serde_json::to_string(&report)?;
    println!("{text}");
    if let Some(o) = out {
        ensure_parent(o)?;
        std::fs::write(o, format!("{text}\n"))?;
        run.output(o);
    }
    Ok(())
}

fn cmd_ren_check(run: &mut Run, configs: usize, export: Option<&Path>) -> Result<()> {
    let seed = run.seed()?;
    let results = ren::invariant_suite(seed, configs);
    let mut failed = 0;
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        failed += usize::from(!r.passed);
    }
    if let Some(path) = export {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, hx, hr, _) = ren::random_case(&mut rng);
        let fx = RenFixture::new(p, hx, hr)?;
        ensure_parent(path)?;
        ren::write_fixture(path, &fx)?;
        run.output(path);
    }
    if failed > 0 {
        bail!("{failed} check(s) failed");
    }
    Ok(())
}

fn default_sizes(total: usize, step: usize) -> Vec<usize> {
    let step = step.max(1);
    let mut sizes: Vec<usize> = (0..=total / step).map(|k| k * step).collect();
    if sizes.last() != Some(&total) {
        sizes.push(total);
    }
    sizes
}

/// Splits a command string on whitespace; no shell quoting.
fn command_parts(cmd: &str) -> Result<(String, Vec<String>)> {
    let mut parts = cmd.split_whitespace().map(str::to_string);
    let prog = parts.next().ok_or_else(|| UsageError("empty trainer command".into()))?;
    Ok((prog, parts.collect()))
}

fn run_trainer(cmd: &str, args: &[String]) -> Result<()> {
    let (prog, mut base) = command_parts(cmd)?;
    base.extend(args.iter().cloned());
    log::info!("running {prog} {}", base.join(" "));
    let status = std::process::Command::new(&prog)
        .args(&base)
        .status()
        .with_context(|| format!("starting trainer `{prog}`"))?;
    if !status.success() {
        bail!("trainer `{prog}` exited with {status}");
    }
    Ok(())
}

fn path_arg(p: &Path) -> String {
    p.display().to_string()
}

fn check_predictions(path: &Path) -> Result<()> {
    let v = formats::check_file(FileKind::Predictions, path);
    if let Some(first) = v.first() {
        bail!("{} has {} format violation(s), first: {first}", path.display(), v.len());
    }
    Ok(())
}

fn cmd_sweep(run: &mut Run, a: &SweepArgs) -> Result<()> {
    run.input(&a.aug);
    run.input(&a.gold);
    let aug: Vec<AugmentedInstance> = read_lines(&a.aug)?;
    let gold = read_gold(&a.gold)?;
    let sizes = a.sizes.clone().unwrap_or_else(|| default_sizes(aug.len(), a.step));
    if let Some(&bad) = sizes.iter().find(|&&s| s > aug.len()) {
        return Err(UsageError(format!("size {bad} exceeds the {} augmented instances", aug.len())).into());
    }
    if a.predictions.is_none() && a.trainer_cmd.is_none() {
        return Err(UsageError("sweep needs --predictions TEMPLATE or --trainer-cmd".into()).into());
    }
    // Nested subsets: every size is a prefix of one seeded permutation.
    let mut order: Vec<usize> = (0..aug.len()).collect();
    if a.trainer_cmd.is_some() {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(run.seed()?));
    }
    let mut rows = Vec::new();
    for &size in &sizes {
        let pred_path = if let Some(tpl) = &a.predictions {
            PathBuf::from(tpl.replace("{size}", &size.to_string()))
        } else {
            let cmd = a.trainer_cmd.as_deref().expect("checked above");
            let dir = a.work_dir.join(format!("size-{size}"));
            std::fs::create_dir_all(&dir)?;
            let subset: Vec<&AugmentedInstance> = order[..size].iter().map(|&i| &aug[i]).collect();
            let subset_path = dir.join("augmented.jsonl");
            write_lines(&subset_path, &subset)?;
            let rules = a.rules.as_deref().expect("clap requires rules");
            let mut train_args = vec![
                "train".into(),
                "--train".into(),
                path_arg(a.train.as_deref().expect("clap requires train")),
                "--dev".into(),
                path_arg(a.dev.as_deref().expect("clap requires dev")),
                "--rules".into(),
                path_arg(rules),
                "--out-dir".into(),
                path_arg(&dir),
                "--seed".into(),
                run.seed()?.to_string(),
            ];
            if size > 0 {
                train_args.extend(["--augmented".into(), path_arg(&subset_path)]);
            }
            run_trainer(cmd, &train_args)?;
            let pred = dir.join("predictions.jsonl");
            run_trainer(
                cmd,
                &[
                    "predict".into(),
                    "--checkpoint".into(),
                    path_arg(&dir),
                    "--test".into(),
                    path_arg(&a.gold),
                    "--rules".into(),
                    path_arg(rules),
                    "--out".into(),
                    path_arg(&pred),
                ],
            )?;
            pred
        };
        check_predictions(&pred_path)?;
        run.input(&pred_path);
        let preds: Vec<Prediction> = read_lines(&pred_path)?;
        rows.push((size, score(a.metric, &preds, &gold)?));
    }
    let mut table = String::from("size\tscore\n");
    for (size, s) in &rows {
        table.push_str(&format!("{size}\t{s:.4}\n"));
    }
    print!("{table}");
    if let Some(o) = &a.out {
        ensure_parent(o)?;
        std::fs::write(o, &table)?;
        run.output(o);
    }
    Ok(())
}

fn cmd_train(run: &mut Run, a: &TrainArgs) -> Result<()> {
    let seed = run.seed()?;
    std::fs::create_dir_all(&a.out_dir)?;
    for p in [&a.train, &a.dev, &a.rules] {
        run.input(p);
    }
    let mut args = vec![
        "train".into(),
        "--train".into(),
        path_arg(&a.train),
        "--dev".into(),
        path_arg(&a.dev),
        "--rules".into(),
        path_arg(&a.rules),
        "--out-dir".into(),
        path_arg(&a.out_dir),
        "--seed".into(),
        seed.to_string(),
    ];
    if let Some(aug) = &a.augmented {
        run.input(aug);
        args.extend(["--augmented".into(), path_arg(aug)]);
    }
    run_trainer(&a.trainer_cmd, &args)?;
    if let Some(test) = &a.test {
        run.input(test);
        let pred = a.out_dir.join("predictions.jsonl");
        run_trainer(
            &a.trainer_cmd,
            &[
                "predict".into(),
                "--checkpoint".into(),
                path_arg(&a.out_dir),
                "--test".into(),
                path_arg(test),
                "--rules".into(),
                path_arg(&a.rules),
                "--out".into(),
                path_arg(&pred),
            ],
        )?;
        check_predictions(&pred)?;
        run.output(&pred);
    }
    Ok(())
}

fn cmd_check_format(run: &mut Run, kind: FileKind, rules: Option<&Path>, files: &[PathBuf]) -> Result<()> {
    let rule_set: Option<Vec<IfThenRule>> = rules.map(read_lines).transpose()?;
    let mut total = 0;
    for f in files {
        run.input(f);
        let mut v = formats::check_file(kind, f);
        if let (Some(rs), FileKind::Augmented) = (&rule_set, kind) {
            if v.is_empty() {
                let recs: Vec<AugmentedInstance> = read_lines(f)?;
                v = formats::check_provenance(&recs, rs);
            }
        }
        for x in &v {
            println!("{}: {x}", f.display());
        }
        total += v.len();
    }
    if total > 0 {
        bail!("{total} format violation(s)");
    }
    println!("ok: {} file(s)", files.len());
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let mut cfg = RunConfig::load_or_default(g.config.as_deref()).map_err(|e| UsageError(e.to_string()))?;
    if let Some(s) = g.seed {
        cfg.seed = Some(s);
    }
    if let Some(m) = &g.model {
        cfg.model = m.clone();
    }
    if let Some(d) = &g.cache_dir {
        cfg.cache_dir = Some(d.clone());
    }
    if let Some(c) = g.concurrency {
        cfg.concurrency = c;
    }
    if let Some(r) = g.max_retries {
        cfg.max_retries = r;
    }
    let command = match &cli.cmd {
        Cmd::Ingest(_) => "ingest",
        Cmd::EncodeRules { .. } => "encode-rules",
        Cmd::Augment(_) => "augment",
        Cmd::Tdda { .. } => "tdda",
        Cmd::Label { .. } => "label",
        Cmd::Evaluate { .. } => "evaluate",
        Cmd::Similarity { .. } => "similarity",
        Cmd::RenCheck { .. } => "ren-check",
        Cmd::Sweep(_) => "sweep",
        Cmd::Train(_) => "train",
        Cmd::CheckFormat { .. } => "check-format",
    };
    let mut run = Run { cfg, global: cli.global, command, inputs: Vec::new(), outputs: Vec::new(), gateway: None };
    let result = match &cli.cmd {
        Cmd::Ingest(a) => cmd_ingest(&mut run, a),
        Cmd::EncodeRules { train, out } => cmd_encode(&mut run, train, out),
        Cmd::Augment(a) => cmd_augment(&mut run, a),
        Cmd::Tdda { train, format, iterations, out, trace, min_tokens } => {
            cmd_tdda(&mut run, train, *format, *iterations, out, trace.as_deref(), *min_tokens)
        }
        Cmd::Label { test, out } => cmd_label(&mut run, test, out),
        Cmd::Evaluate { pred, gold, metric } => cmd_evaluate(&mut run, pred, gold, *metric),
        Cmd::Similarity { aug, test, iterations, sample, embedder, out } => {
            cmd_similarity(&mut run, aug, test, *iterations, *sample, *embedder, out.as_deref())
        }
        Cmd::RenCheck { configs, export } => cmd_ren_check(&mut run, *configs, export.as_deref()),
        Cmd::Sweep(a) => cmd_sweep(&mut run, a),
        Cmd::Train(a) => cmd_train(&mut run, a),
        Cmd::CheckFormat { kind, rules, files } => cmd_check_format(&mut run, *kind, rules.as_deref(), files),
    };
    result?;
    run.write_manifest()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = std::io::stdout().flush();
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        assert_eq!(default_sizes(2500, 1000), [0, 1000, 2000, 2500]);
        assert_eq!(default_sizes(2000, 1000), [0, 1000, 2000]);
        assert_eq!(default_sizes(0, 1000), [0]);
    }

    #[test]
    fn cli_definition() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
