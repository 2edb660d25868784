use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bros::data::{generate_range, read_jsonl, write_atomic, write_jsonl, Document, Vocab};
use bros::harness::gradcheck::run_trials;
use bros::harness::{
    checkpoint, collect_classes, evaluate, finetune, format_table, load_prefix, manifest_path, order_study, pretrain,
    select_subset, EvalReport, Manifest, Model, RunConfig, Task, TrainSummary, Variant,
};
use bros::Error;
use clap::{Parser, Subcommand};
use serde::Serialize;

const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "bros", version, about = "Layout-aware encoder: data generation, training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic train/test split and its vocabulary.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_train: usize,
        #[arg(long)]
        n_test: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Masked-LM pre-training on the train split.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Supervised fine-tuning; the encoder is loaded from --ckpt, or
    /// randomly initialized when it is omitted.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        task: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, conflicts_with = "train_fraction")]
        train_count: Option<usize>,
        #[arg(long)]
        train_fraction: Option<f64>,
    },
    /// Score a fine-tuned checkpoint on the test split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        task: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "identity")]
        variant: String,
        #[arg(long)]
        angle: Option<f64>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score a checkpoint under every reading-order variant.
    OrderStudy {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Compare analytic and numeric gradients on random small models.
    GradCheck {
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

/// Process outcome with its exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config(_) | Error::Contract(_) => Failure::Usage(msg),
            Error::Numeric(_) | Error::Dimension { .. } => Failure::Numeric(msg),
            Error::Data(_)
            | Error::Schema { .. }
            | Error::Parse { .. }
            | Error::Integrity { .. }
            | Error::Generation(_)
            | Error::Io { .. } => Failure::Data(msg),
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = match &f {
                Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => m,
            };
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}

fn run(command: Command) -> CliResult {
    match command {
        Command::GenData {
            config,
            out,
            n_train,
            n_test,
            seed,
        } => gen_data(&config, &out, n_train, n_test, seed),
        Command::Pretrain { config, data, out, steps } => run_pretrain(&config, &data, &out, steps),
        Command::Finetune {
            config,
            ckpt,
            task,
            data,
            out,
            train_count,
            train_fraction,
        } => run_finetune(&config, ckpt.as_deref(), &task, &data, &out, train_count, train_fraction),
        Command::Eval {
            ckpt,
            task,
            data,
            variant,
            angle,
            report,
        } => run_eval(&ckpt, &task, &data, &variant, angle, report.as_deref()),
        Command::OrderStudy { ckpt, data, report } => run_order_study(&ckpt, &data, &report),
        Command::GradCheck { trials, seed, report } => run_grad_check(trials, seed, report.as_deref()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report serializes");
    bytes.push(b'\n');
    Ok(write_atomic(path, &bytes)?)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn split_path(data: &Path, split: &str) -> PathBuf {
    data.join(format!("{split}.jsonl"))
}

fn read_split(data: &Path, split: &str) -> CliResult<Vec<Document>> {
    let docs = read_jsonl(&split_path(data, split))?;
    if docs.is_empty() {
        return Err(Failure::Data(format!("{} holds no documents", split_path(data, split).display())));
    }
    Ok(docs)
}

fn gen_data(config: &Path, out: &Path, n_train: usize, n_test: usize, seed: u64) -> CliResult {
    let cfg = RunConfig::load(config)?;
    let mut gen = cfg.generator.clone();
    gen.seed = seed;
    let mut train = generate_range(&gen, 0..n_train)?;
    let mut test = generate_range(&gen, n_train..n_train + n_test)?;
    train.iter_mut().for_each(|d| d.split = Some("train".into()));
    test.iter_mut().for_each(|d| d.split = Some("test".into()));
    let vocab = Vocab::build(
        Vocab::standard()
            .tokens()
            .iter()
            .skip(bros::data::vocab::SPECIALS.len())
            .cloned()
            .chain(train.iter().flat_map(|d| d.blocks.iter().flat_map(|b| b.text.split_whitespace().map(String::from)))),
    );
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    write_jsonl(&train, &split_path(out, "train"))?;
    write_jsonl(&test, &split_path(out, "test"))?;
    write_atomic(&out.join("vocab.txt"), vocab.to_lines().as_bytes())?;

    println!("{:<6} {:>6} {:>8} {:>9} {:>6}", "split", "docs", "blocks", "entities", "links");
    for (name, docs) in [("train", &train), ("test", &test)] {
        let blocks: usize = docs.iter().map(|d| d.blocks.len()).sum();
        let entities: usize = docs.iter().map(|d| d.entities.len()).sum();
        let links: usize = docs.iter().map(|d| d.links.len()).sum();
        println!("{name:<6} {:>6} {blocks:>8} {entities:>9} {links:>6}", docs.len());
    }
    println!("vocabulary {} tokens", vocab.len());

    let mut cfg = cfg;
    cfg.seed = seed;
    cfg.generator = gen;
    let mut m = Manifest::new("gen-data", &cfg);
    m.input(config)?;
    m.output(out)?;
    m.write(&out.join("gen-data.manifest.json"))?;
    Ok(())
}

fn load_vocab(data: &Path) -> CliResult<Vocab> {
    Ok(Vocab::load(&data.join("vocab.txt"))?)
}

#[derive(Serialize)]
struct TrainReport<'a> {
    task: &'a str,
    steps: usize,
    final_loss: Option<f64>,
    initialized: Vec<String>,
    final_eval: Option<EvalReport>,
    summary: &'a TrainSummary,
}

/// Save the last finite parameters next to `out` and turn the error into
/// a numeric failure.
fn abort_with_last_good(model: &Model, out: &Path, err: Error) -> Failure {
    let last = with_suffix(out, ".last-good");
    match checkpoint::save(model, &last) {
        Ok(()) => eprintln!("training aborted; last good parameters saved to {}", last.display()),
        Err(e) => eprintln!("training aborted; could not save last good parameters: {e}"),
    }
    Failure::from(err)
}

fn run_pretrain(config: &Path, data: &Path, out: &Path, steps: Option<usize>) -> CliResult {
    let cfg = RunConfig::load(config)?;
    let vocab = load_vocab(data)?;
    let docs = read_split(data, "train")?;
    let mut model = Model::new(cfg.clone(), Task::Pretrain, vocab, Vec::new())?;
    let summary = match pretrain(&mut model, &docs, steps) {
        Ok(s) => s,
        Err(e @ Error::Numeric(_)) => return Err(abort_with_last_good(&model, out, e)),
        Err(e) => return Err(e.into()),
    };
    checkpoint::save(&model, out)?;
    let report = TrainReport {
        task: "pretrain",
        steps: summary.steps.len(),
        final_loss: summary.final_loss(),
        initialized: model.params.names().cloned().collect(),
        final_eval: None,
        summary: &summary,
    };
    let report_path = with_suffix(out, ".report.json");
    write_json(&report_path, &report)?;
    println!("{:<10} {:>7} {:>10} {:>10} {:>10}", "task", "steps", "loss", "area_mask", "tok_mask");
    println!(
        "{:<10} {:>7} {:>10.4} {:>10.4} {:>10.4}",
        "pretrain",
        report.steps,
        report.final_loss.unwrap_or(f64::NAN),
        summary.area_mask_fraction.unwrap_or(0.0),
        summary.token_mask_fraction.unwrap_or(0.0)
    );
    let mut m = Manifest::new("pretrain", &model.config);
    m.input(config)?;
    m.input(data)?;
    m.output(out)?;
    m.output(&report_path)?;
    m.write(&manifest_path(out))?;
    Ok(())
}

fn parse_task(task: &str) -> CliResult<Task> {
    match Task::parse(task)? {
        Task::Pretrain => Err(Failure::Usage("pretrain is not a fine-tuning task".into())),
        t => Ok(t),
    }
}

fn run_finetune(
    config: &Path,
    ckpt: Option<&Path>,
    task: &str,
    data: &Path,
    out: &Path,
    train_count: Option<usize>,
    train_fraction: Option<f64>,
) -> CliResult {
    let task = parse_task(task)?;
    let mut cfg = RunConfig::load(config)?;
    if train_count.is_some() || train_fraction.is_some() {
        cfg.subset.train_count = train_count;
        cfg.subset.train_fraction = train_fraction;
    }
    let base = ckpt.map(checkpoint::load).transpose()?;
    let vocab = match &base {
        Some(b) => {
            if b.config.encoder != cfg.encoder {
                log::info!("using the encoder architecture stored in the checkpoint");
            }
            cfg.encoder = b.config.encoder.clone();
            b.vocab.clone()
        }
        None => load_vocab(data)?,
    };
    let all = read_split(data, "train")?;
    let test = read_split(data, "test")?;
    let subset = select_subset(all.len(), &cfg.subset, cfg.seed)?;
    let train: Vec<Document> = subset.iter().map(|&i| all[i].clone()).collect();
    let classes = if cfg.heads.classes.is_empty() {
        collect_classes(&all)
    } else {
        cfg.heads.classes.clone()
    };
    let mut model = Model::new(cfg, task, vocab, classes)?;
    let initialized = match &base {
        Some(b) => load_prefix(&mut model.params, &b.params, "encoder.")?,
        None => model.params.names().cloned().collect(),
    };
    for name in &initialized {
        log::info!("initialized {name}");
    }
    let summary = match finetune(&mut model, &train, Some(&test)) {
        Ok(s) => s,
        Err(e @ Error::Numeric(_)) => return Err(abort_with_last_good(&model, out, e)),
        Err(e) => return Err(e.into()),
    };
    let final_eval = evaluate(&model, &test, Variant::Identity)?;
    checkpoint::save(&model, out)?;
    print!("{}", format_table(std::slice::from_ref(&final_eval)));
    let report = TrainReport {
        task: task.name(),
        steps: summary.steps.len(),
        final_loss: summary.final_loss(),
        initialized,
        final_eval: Some(final_eval),
        summary: &summary,
    };
    let report_path = with_suffix(out, ".report.json");
    write_json(&report_path, &report)?;
    let mut m = Manifest::new("finetune", &model.config);
    m.input(config)?;
    if let Some(c) = ckpt {
        m.input(c)?;
    }
    m.input(data)?;
    m.output(out)?;
    m.output(&report_path)?;
    m.write(&manifest_path(out))?;
    Ok(())
}

fn load_task_model(ckpt: &Path, task: Option<Task>) -> CliResult<Model> {
    let model = checkpoint::load(ckpt)?;
    if model.task == Task::Pretrain {
        return Err(Failure::Usage("checkpoint holds a pre-trained encoder without task heads".into()));
    }
    if let Some(t) = task {
        if t != model.task {
            return Err(Failure::Usage(format!(
                "checkpoint was fine-tuned for {}, not {}",
                model.task.name(),
                t.name()
            )));
        }
    }
    Ok(model)
}

fn run_eval(ckpt: &Path, task: &str, data: &Path, variant: &str, angle: Option<f64>, report: Option<&Path>) -> CliResult {
    let task = parse_task(task)?;
    let model = load_task_model(ckpt, Some(task))?;
    let angle = angle.unwrap_or(model.config.eval.rotate_angle);
    let variant = Variant::parse(variant, angle)?;
    let docs = read_split(data, "test")?;
    let r = evaluate(&model, &docs, variant)?;
    print!("{}", format_table(std::slice::from_ref(&r)));
    let mut m = Manifest::new("eval", &model.config);
    m.input(ckpt)?;
    m.input(data)?;
    let manifest = match report {
        Some(p) => {
            write_json(p, &r)?;
            m.output(p)?;
            manifest_path(p)
        }
        None => with_suffix(ckpt, ".eval.manifest.json"),
    };
    m.write(&manifest)?;
    Ok(())
}

#[derive(Serialize)]
struct OrderStudyReport {
    task: String,
    reports: Vec<EvalReport>,
}

fn run_order_study(ckpt: &Path, data: &Path, report: &Path) -> CliResult {
    let model = load_task_model(ckpt, None)?;
    let docs = read_split(data, "test")?;
    let reports = order_study(&model, &docs)?;
    print!("{}", format_table(&reports));
    write_json(
        report,
        &OrderStudyReport {
            task: model.task.name().into(),
            reports,
        },
    )?;
    let mut m = Manifest::new("order-study", &model.config);
    m.input(ckpt)?;
    m.input(data)?;
    m.output(report)?;
    m.write(&manifest_path(report))?;
    Ok(())
}

fn run_grad_check(trials: usize, seed: u64, report: Option<&Path>) -> CliResult {
    let start = std::time::Instant::now();
    let results = run_trials(trials, seed)?;
    println!("{:>5} {:<6} {:<9} {:>3} {:>6} {:>6} {:>5} {:>6} {:>10}", "trial", "head", "spatial", "1d", "layers", "hidden", "heads", "tokens", "rel_err");
    for r in &results {
        println!(
            "{:>5} {:<6} {:<9} {:>3} {:>6} {:>6} {:>5} {:>6} {:>10.3e}",
            r.trial,
            format!("{:?}", r.objective).to_lowercase(),
            format!("{:?}", r.spatial_mode).to_lowercase(),
            if r.use_1d_positions { "on" } else { "off" },
            r.layers,
            r.hidden,
            r.heads,
            r.tokens,
            r.max_rel_error
        );
    }
    let worst = results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    println!("worst relative error {worst:.3e} over {trials} trials in {:.1?}", start.elapsed());
    if let Some(p) = report {
        write_json(p, &results)?;
        let mut cfg = RunConfig::default();
        cfg.seed = seed;
        let mut m = Manifest::new("grad-check", &cfg);
        m.output(p)?;
        m.write(&manifest_path(p))?;
    }
    if worst > GRAD_TOLERANCE {
        return Err(Failure::Numeric(format!("gradient check exceeded {GRAD_TOLERANCE:e}")));
    }
    Ok(())
}
