use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use encoderlab::corpus::{self, NormalizationPolicy};
use encoderlab::encoder::ModelConfig;
use encoderlab::evaluation::{
    compute_metrics, discrepancy_report, discrepancy_text, published_comparison, read_comparison, read_scores,
    run_protocol, FoldPredictions, Gold, MetricReport, Outcomes, Protocol, Reading,
};
use encoderlab::pipeline::{run_demo, DemoConfig};
use encoderlab::pretrain_data::{self, build_instances, InstanceConfig};
use encoderlab::settings::{self, Settings};
use encoderlab::tokenizer::{self, Algorithm, TokenizerModel};
use encoderlab::training::{
    self, FinetuneOptions, Label, Prediction, Pretrainer, TaskExample, TaskKind, TaskModel, TaskSpec, TrainHyper,
};
use encoderlab::Execution;

use crate::manifest::Run;
use crate::tasks::{infer_classes, read_task_file};
use crate::{
    Algo, Cli, Command, CompareArgs, ConfigArgs, ConfigError, CorpusCmd, DemoArgs, EvalArgs, FinetuneArgs, Preset,
    PretrainArgs, PretrainDataCmd, TaskArgs, VocabCmd,
};

struct Ctx {
    exec: Execution,
    out_root: PathBuf,
}

impl Ctx {
    /// `explicit` if given, else `<out root>/<name>`.
    fn out(&self, explicit: Option<PathBuf>, name: &str) -> Result<PathBuf> {
        let path = explicit.unwrap_or_else(|| self.out_root.join(name));
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        Ok(path)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx {
        exec: if cli.serial { Execution::Serial } else { Execution::default() },
        out_root: cli.out_root,
    };
    match cli.command {
        Command::Corpus(CorpusCmd::Ingest {
            input,
            out,
            strip_diacritics,
            lowercase,
        }) => ingest(&ctx, &input, out, strip_diacritics, lowercase),
        Command::Vocab(VocabCmd::Train { algo, size, corpus, out }) => vocab(&ctx, algo, size, &corpus, out),
        Command::PretrainData(cmd) => pretrain_data(&ctx, cmd),
        Command::Pretrain(a) => pretrain(&ctx, a),
        Command::Finetune(a) => finetune(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Compare(a) => compare(&ctx, a),
        Command::Demo(a) => demo(&ctx, a),
    }
}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

/// `base`, then the config file, then `--set` overrides, then `--seed`.
fn resolve(args: &ConfigArgs, base: Settings, run: &mut Run) -> Result<Settings> {
    let mut s = base;
    if let Some(path) = &args.config {
        let file = settings::load(path)?;
        run.input(path);
        s = settings::merge(&s, &file);
    }
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| config_err(format!("override {o:?} is not KEY=VALUE")))?;
        s.insert(k.trim().to_string(), v.trim().to_string());
    }
    if let Some(seed) = args.seed {
        s.insert("seed".into(), seed.to_string());
    }
    run.seed = settings::get(&s, "seed")?;
    run.config = s.clone();
    Ok(s)
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<std::fs::File>) -> Result<()>) -> Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn load_vocab(path: &Path) -> Result<TokenizerModel> {
    let f = std::fs::File::open(path).map_err(|e| encoderlab::Error::Io {
        path: path.into(),
        source: e,
    })?;
    Ok(TokenizerModel::read_vocab(BufReader::new(f))?)
}

fn ingest(ctx: &Ctx, input: &Path, out: Option<PathBuf>, strip: bool, lower: bool) -> Result<()> {
    let mut run = Run::new("corpus ingest");
    let paths: Vec<PathBuf> = if input.is_dir() {
        let mut v: Vec<PathBuf> = std::fs::read_dir(input)
            .with_context(|| format!("listing {}", input.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .collect();
        v.sort();
        v
    } else {
        vec![input.to_path_buf()]
    };
    let policy = NormalizationPolicy {
        keep_diacritics: !strip,
        keep_casing: !lower,
        ..Default::default()
    };
    let report = corpus::ingest(&paths, &policy, ctx.exec)?;
    for p in &paths {
        run.input(p);
    }
    run.config.insert("strip_diacritics".into(), strip.to_string());
    run.config.insert("lowercase".into(), lower.to_string());
    let out = ctx.out(out, "corpus.txt")?;
    write_file(&out, |w| Ok(corpus::write_corpus(&report.documents, w)?))?;
    run.output(&out);
    run.finish()?;
    println!(
        "{} documents from {} files ({} empty blocks skipped) -> {}",
        report.documents.len(),
        paths.len(),
        report.skipped_empty,
        out.display()
    );
    Ok(())
}

fn vocab(ctx: &Ctx, algo: Algo, size: usize, corpus_path: &Path, out: Option<PathBuf>) -> Result<()> {
    let mut run = Run::new("vocab train");
    let docs = corpus::read_corpus(corpus_path)?;
    run.input(corpus_path);
    let algorithm = match algo {
        Algo::Wordpiece => Algorithm::WordPiece,
        Algo::Unigram => Algorithm::Unigram,
    };
    let model = tokenizer::train(algorithm, &docs, size)?;
    run.config.insert("algo".into(), format!("{algo:?}").to_lowercase());
    run.config.insert("size".into(), size.to_string());
    let out = ctx.out(out, "vocab.txt")?;
    write_file(&out, |w| Ok(model.write_vocab(w)?))?;
    run.output(&out);
    run.finish()?;
    println!("{} tokens (target {size}) -> {}", model.len(), out.display());
    Ok(())
}

fn pretrain_data(ctx: &Ctx, cmd: PretrainDataCmd) -> Result<()> {
    let PretrainDataCmd::Build {
        corpus: corpus_path,
        vocab,
        out,
        objective,
        max_len,
        mask_policy,
        mask_rate,
        seed,
    } = cmd;
    let mut run = Run::new("pretrain-data build");
    let cfg = InstanceConfig {
        max_len,
        objective: objective.parse()?,
        mask_policy: mask_policy.parse()?,
        mask_rate,
        seed,
    };
    let docs = corpus::read_corpus(&corpus_path)?;
    let tok = load_vocab(&vocab)?;
    run.input(&corpus_path);
    run.input(&vocab);
    let report = build_instances(&docs, &tok, &cfg, ctx.exec)?;
    run.seed = Some(seed);
    for (k, v) in [
        ("objective", objective),
        ("max_len", max_len.to_string()),
        ("mask_policy", mask_policy),
        ("mask_rate", mask_rate.to_string()),
    ] {
        run.config.insert(k.into(), v);
    }
    let out = ctx.out(out, "instances.jsonl")?;
    write_file(&out, |w| Ok(pretrain_data::write_jsonl(&report.instances, w)?))?;
    run.output(&out);
    run.finish()?;
    println!(
        "{} instances ({} pairs skipped) -> {}",
        report.instances.len(),
        report.skipped,
        out.display()
    );
    Ok(())
}

fn preset(p: Preset, vocab_size: usize) -> ModelConfig {
    match p {
        Preset::Tiny => ModelConfig::tiny(vocab_size),
        Preset::Demo => DemoConfig::default().model(vocab_size),
        Preset::BertBase => ModelConfig::bert_base(vocab_size),
        Preset::AlbertBase => ModelConfig::albert_base(vocab_size),
    }
}

fn pretrain(ctx: &Ctx, a: PretrainArgs) -> Result<()> {
    let mut run = Run::new("pretrain");
    let tok = load_vocab(&a.vocab)?;
    run.input(&a.vocab);
    let mut trainer = if let Some(path) = &a.resume {
        run.input(path);
        let t = Pretrainer::load(path, ctx.exec)?;
        if t.config.vocab_size != tok.len() {
            return Err(config_err(format!(
                "checkpoint vocabulary has {} entries, {} has {}",
                t.config.vocab_size,
                a.vocab.display(),
                tok.len()
            )));
        }
        let mut s = t.config.to_kv();
        s.extend(t.hyper.to_settings());
        run.config = s;
        run.seed = Some(t.hyper.seed);
        t
    } else {
        let mut base = preset(a.model, tok.len()).to_kv();
        base.extend(TrainHyper::desk().to_settings());
        let s = resolve(&a.cfg, base, &mut run)?;
        let config = ModelConfig::from_kv(&s)?;
        if config.vocab_size != tok.len() {
            return Err(config_err(format!(
                "vocab_size {} does not match the vocabulary ({} entries)",
                config.vocab_size,
                tok.len()
            )));
        }
        let hyper = TrainHyper::from_settings(&s, &TrainHyper::desk())?;
        Pretrainer::new(config, hyper, ctx.exec)?
    };
    let data_path = match (&a.data, run.config.get("data")) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => PathBuf::from(p),
        (None, None) => return Err(config_err("no instance file: pass --data or set the data key")),
    };
    let f = std::fs::File::open(&data_path).map_err(|e| encoderlab::Error::Io {
        path: data_path.clone(),
        source: e,
    })?;
    let data = pretrain_data::read_jsonl(BufReader::new(f))?;
    run.input(&data_path);
    let trace = trainer.run_until(&data, trainer.hyper.total_steps)?;
    let out = ctx.out(a.out, "pretrain.ckpt")?;
    trainer.save(&out)?;
    let trace_path = match a.trace {
        Some(p) => ctx.out(Some(p), "")?,
        None => {
            let mut s = out.clone().into_os_string();
            s.push(".loss.csv");
            PathBuf::from(s)
        }
    };
    write_file(&trace_path, |w| Ok(trace.write_csv(w)?))?;
    run.output(&out);
    run.output(&trace_path);
    run.finish()?;
    let last = trace.rows.last();
    println!(
        "{} steps, final mlm {:.4} pair {:.4} (ln V = {:.4}) -> {}",
        trainer.step,
        last.map_or(f64::NAN, |r| r.mlm_loss),
        last.map_or(f64::NAN, |r| r.pair_loss),
        (tok.len() as f64).ln(),
        out.display()
    );
    Ok(())
}

fn task_kind(s: &str) -> Result<TaskKind> {
    Ok(s.replace('-', "_").parse()?)
}

fn finetune_defaults() -> TrainHyper {
    TrainHyper {
        learning_rate: 1e-3,
        warmup_steps: 10,
        total_steps: 200,
        batch_size: 16,
        ..TrainHyper::default()
    }
}

/// Task spec and examples from the shared task flags.
fn load_task(t: &TaskArgs, run: &mut Run, max_positions: usize) -> Result<(TaskSpec, Vec<TaskExample>)> {
    let kind = task_kind(
        t.task_kind
            .as_deref()
            .ok_or_else(|| config_err("--task-kind is required"))?,
    )?;
    let tok = load_vocab(&t.vocab)?;
    run.input(&t.vocab);
    let examples = read_task_file(&t.data, &tok, kind)?;
    run.input(&t.data);
    let spec = TaskSpec {
        name: t.task_name.clone(),
        kind,
        num_classes: if kind.is_regression() {
            0
        } else {
            t.num_classes.unwrap_or_else(|| infer_classes(&examples))
        },
        max_len: t.max_len.min(max_positions),
    };
    spec.validate()?;
    for (k, v) in [
        ("task.name", spec.name.clone()),
        ("task.kind", kind.as_str().to_string()),
        ("task.num_classes", spec.num_classes.to_string()),
        ("task.max_len", spec.max_len.to_string()),
    ] {
        run.config.insert(k.into(), v);
    }
    Ok((spec, examples))
}

fn finetune(ctx: &Ctx, a: FinetuneArgs) -> Result<()> {
    let mut run = Run::new("finetune");
    let s = resolve(&a.cfg, finetune_defaults().to_settings(), &mut run)?;
    let hyper = TrainHyper::from_settings(&s, &finetune_defaults())?;
    let trainer = Pretrainer::load(&a.checkpoint, ctx.exec)?;
    run.input(&a.checkpoint);
    let (task, examples) = load_task(&a.task, &mut run, trainer.config.max_positions)?;
    run.config.insert("head_only".into(), a.head_only.to_string());
    let opts = FinetuneOptions {
        hyper,
        head_only: a.head_only,
    };
    let model = training::finetune(
        &trainer.config,
        &trainer.encoder_params(),
        &task,
        &examples,
        &opts,
        ctx.exec,
    )?;
    let out = ctx.out(a.out, "task.model")?;
    model.save(&out)?;
    run.output(&out);
    run.finish()?;
    println!("{} examples, task {} -> {}", examples.len(), task.name, out.display());
    Ok(())
}

fn gold_of(examples: &[TaskExample]) -> Gold {
    let classes: Option<Vec<usize>> = examples
        .iter()
        .map(|e| match e.label {
            Label::Class(c) => Some(c),
            Label::Score(_) => None,
        })
        .collect();
    match classes {
        Some(c) => Gold::Classes(c),
        None => Gold::Scores(
            examples
                .iter()
                .map(|e| match e.label {
                    Label::Class(c) => c as f64,
                    Label::Score(s) => s,
                })
                .collect(),
        ),
    }
}

fn fold_predictions(preds: &[Prediction]) -> FoldPredictions {
    match preds.first() {
        Some(Prediction::Score(_)) => FoldPredictions::Scores(preds.iter().map(Prediction::value).collect()),
        _ => FoldPredictions::Classes(
            preds
                .iter()
                .map(|p| match p {
                    Prediction::Class { label, .. } => *label,
                    Prediction::Score(s) => *s as usize,
                })
                .collect(),
        ),
    }
}

fn eval(ctx: &Ctx, a: EvalArgs) -> Result<()> {
    let mut run = Run::new("eval");
    let report: MetricReport = if let Some(model_path) = &a.model {
        let model = TaskModel::load(model_path)?;
        run.input(model_path);
        let mut t = a.task.clone();
        t.task_kind.get_or_insert_with(|| model.task.kind.as_str().to_string());
        if task_kind(t.task_kind.as_deref().unwrap_or_default())? != model.task.kind {
            return Err(config_err(format!("model was trained for {}", model.task.kind.as_str())));
        }
        let (_, examples) = load_task(&t, &mut run, model.config.max_positions)?;
        let preds = training::predict(&model, &examples, ctx.exec)?;
        match (gold_of(&examples), fold_predictions(&preds)) {
            (Gold::Classes(gold), FoldPredictions::Classes(pred)) => compute_metrics(
                &model.task.name,
                Outcomes::Classes {
                    pred: &pred,
                    gold: &gold,
                },
            )?,
            (Gold::Scores(gold), FoldPredictions::Scores(pred)) => compute_metrics(
                &model.task.name,
                Outcomes::Scores {
                    pred: &pred,
                    gold: &gold,
                },
            )?,
            _ => return Err(config_err("task file labels do not match the model's task kind")),
        }
    } else if let (Some(ck), Some(protocol)) = (&a.checkpoint, &a.protocol) {
        let protocol: Protocol = protocol.parse()?;
        let s = resolve(&a.cfg, finetune_defaults().to_settings(), &mut run)?;
        let hyper = TrainHyper::from_settings(&s, &finetune_defaults())?;
        run.config.insert("protocol".into(), protocol.to_string());
        let trainer = Pretrainer::load(ck, ctx.exec)?;
        run.input(ck);
        let (task, examples) = load_task(&a.task, &mut run, trainer.config.max_positions)?;
        let encoder = trainer.encoder_params();
        let opts = FinetuneOptions {
            hyper: hyper.clone(),
            head_only: false,
        };
        let exec = ctx.exec;
        run_protocol(&task.name, protocol, &gold_of(&examples), hyper.seed, exec, |_, train, test| {
            let pick = |idx: &[usize]| idx.iter().map(|&i| examples[i].clone()).collect::<Vec<_>>();
            let model = training::finetune(&trainer.config, &encoder, &task, &pick(train), &opts, exec)?;
            Ok(fold_predictions(&training::predict(&model, &pick(test), exec)?))
        })?
    } else {
        return Err(config_err("pass --model, or --checkpoint with --protocol"));
    };
    let out = ctx.out(a.out, "metrics.csv")?;
    std::fs::write(&out, report.to_csv()).with_context(|| format!("writing {}", out.display()))?;
    run.output(&out);
    run.finish()?;
    println!("{}", report.summary());
    Ok(())
}

fn compare(ctx: &Ctx, a: CompareArgs) -> Result<()> {
    let mut run = Run::new("compare");
    let f = std::fs::File::open(&a.scores).map_err(|e| encoderlab::Error::Io {
        path: a.scores.clone(),
        source: e,
    })?;
    let records = read_scores(f)?;
    run.input(&a.scores);
    let reference = match &a.reference {
        Some(p) => {
            let f = std::fs::File::open(p).map_err(|e| encoderlab::Error::Io {
                path: p.clone(),
                source: e,
            })?;
            run.input(p);
            read_comparison(f)?
        }
        None => published_comparison(),
    };
    run.config.insert("threshold".into(), a.threshold.to_string());
    let ledger = Reading::AllCells.ledger(&records, a.threshold)?;
    let readings = discrepancy_report(&records, a.threshold, &reference)?;
    let mut text = format!(
        "pairwise comparison ({}, threshold {})\n\n{}\ndiscrepancies against the reference counts\n{}",
        Reading::AllCells.describe(),
        a.threshold,
        ledger.table_text(),
        discrepancy_text(&readings)
    );
    if !text.ends_with('\n') {
        text.push('\n');
    }
    let out = ctx.out(a.out, "comparison.csv")?;
    std::fs::write(&out, ledger.to_csv()).with_context(|| format!("writing {}", out.display()))?;
    let txt = out.with_extension("txt");
    std::fs::write(&txt, &text).with_context(|| format!("writing {}", txt.display()))?;
    run.output(&out);
    run.output(&txt);
    run.finish()?;
    print!("{text}");
    Ok(())
}

fn demo(ctx: &Ctx, a: DemoArgs) -> Result<()> {
    let mut run = Run::new("demo");
    let cfg = DemoConfig::with_seed(a.seed);
    let dir = match a.out {
        Some(d) => d,
        None => ctx.out_root.join("demo"),
    };
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    run.seed = Some(a.seed);
    let mut conf = cfg.model(cfg.vocab_size).to_kv();
    conf.extend(cfg.pretrain.to_settings().into_iter().map(|(k, v)| (format!("pretrain.{k}"), v)));
    conf.extend(cfg.finetune.to_settings().into_iter().map(|(k, v)| (format!("finetune.{k}"), v)));
    conf.remove("vocab_size");
    conf.insert("target_vocab_size".into(), cfg.vocab_size.to_string());
    run.config = conf;
    let report = run_demo(&cfg, Some(&dir), ctx.exec)?;
    for p in &report.artifacts {
        run.output(p);
    }
    run.finish()?;
    print!("{}", report.render());
    println!("report -> {}", dir.join("report.txt").display());
    Ok(())
}
