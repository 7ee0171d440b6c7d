use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use palm::config::{Ablation, RunConfig};
use palm::corpus::{corpus_fragments, load_pairs, read_corpus, save_pairs, shuffle_pairs, Pair, PairStats};
use palm::dataset::{load_supervised, Example};
use palm::error::Error;
use palm::eval::{evaluate, generate, total_nll};
use palm::experiment::{self, Prepared, RawData, ROW_HEADER};
use palm::kv;
use palm::model::checkpoint::Checkpoint;
use palm::model::Model;
use palm::tokenizer::Vocab;
use palm::training::{finish_pretraining, StepStats, Trainer};

const VERSION: &str = env!("CARGO_PKG_VERSION");
const LOG_EVERY: usize = 50;

#[derive(Parser)]
#[command(name = "palm", version, about = "Joint autoencoding and autoregressive pre-training for context-conditioned generation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Config file of key=value lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 gives bit-exact runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run directory name under the run root.
    #[arg(long, global = true)]
    name: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a subword vocabulary from a corpus.
    Vocab {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cut a corpus into context/continuation pairs.
    Fragments {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Two-stage pre-training on a pair file.
    Pretrain {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many steps and write a resumable checkpoint.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Train on labelled `source<TAB>target` or `passage<TAB>question<TAB>target` lines.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Beam-decode one output per input line (`source` or `passage<TAB>question`).
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Perplexity and ROUGE on labelled lines, or perplexity on a pair file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pre-train, fine-tune and evaluate ablation arms; rows are appended to the report.
    Ablate {
        /// One of full, no_pointer, no_autoencoding, no_autoregression, no_pretraining; repeatable.
        #[arg(long)]
        arm: Vec<String>,
    },
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Vocab { .. } => "vocab",
            Cmd::Fragments { .. } => "fragments",
            Cmd::Pretrain { .. } => "pretrain",
            Cmd::Finetune { .. } => "finetune",
            Cmd::Generate { .. } => "generate",
            Cmd::Eval { .. } => "eval",
            Cmd::Ablate { .. } => "ablate",
        }
    }
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Usage(e.to_string()),
            e => Failure::Data(e),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Data(e.into())
    }
}

type Result<T> = std::result::Result<T, Failure>;

/// `runs/<name>/` with the resolved config and a log.
struct Run {
    dir: PathBuf,
    log: File,
}

impl Run {
    fn open(name: &str, cfg: &RunConfig, argv: &[String]) -> Result<Self> {
        let root = std::env::var_os("PALM_RUN_DIR").map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        let dir = root.join(name);
        fs::create_dir_all(dir.join("checkpoints")).map_err(Error::at_path(&dir))?;
        let header = format!("# palm {VERSION}\n# {}\n", argv.join(" ").replace('\n', " "));
        fs::write(dir.join("config.resolved"), header + &cfg.render()).map_err(Error::at_path(&dir))?;
        let path = dir.join("log.txt");
        let log = OpenOptions::new().create(true).append(true).open(&path).map_err(Error::at_path(&path))?;
        let mut run = Self { dir, log };
        run.line(&format!("palm {VERSION}: {}", argv.join(" ")));
        Ok(run)
    }

    fn line(&mut self, msg: &str) {
        eprintln!("{msg}");
        let _ = writeln!(self.log, "{msg}");
    }

    fn step(&mut self, s: &StepStats) {
        if s.step.is_multiple_of(LOG_EVERY) || s.step == 1 {
            let part = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
            self.line(&format!(
                "step={} lr={:.3e} loss={:.4} gen={} mlm={} grad_norm={:.3}",
                s.step,
                s.lr,
                s.loss,
                part(s.gen_loss),
                part(s.mlm_loss),
                s.grad_norm
            ));
        }
    }
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut pairs = match &common.config {
        Some(p) => kv::parse(&fs::read_to_string(p).map_err(Error::at_path(p))?)?,
        None => Vec::new(),
    };
    for s in &common.set {
        let (k, v) = s.split_once('=').ok_or_else(|| Failure::Usage(format!("--set {s:?}: expected KEY=VALUE")))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = common.seed {
        pairs.push(("seed".into(), seed.to_string()));
    }
    Ok(RunConfig::from_entries(pairs)?)
}

fn load_model(path: &Path, vocab: &Vocab) -> Result<(Model<f32>, Vec<(String, String)>)> {
    let (model, meta, _) = Model::<f32>::from_checkpoint(Checkpoint::load(path)?)?;
    if model.config.vocab_size != vocab.len() {
        return Err(Failure::Data(Error::Vocab(format!(
            "checkpoint has {} ids, vocabulary has {}",
            model.config.vocab_size,
            vocab.len()
        ))));
    }
    Ok((model, meta))
}

fn write_out(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(Error::at_path(parent))?;
    }
    fs::write(path, text).map_err(Error::at_path(path))?;
    Ok(())
}

fn run(cli: Cli, argv: &[String]) -> Result<()> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Failure::Usage(format!("--threads: {e}")))?;
    }
    let mut cfg = resolve(&cli.common)?;
    let name = cli.common.name.clone().unwrap_or_else(|| cli.cmd.name().to_string());
    match cli.cmd {
        Cmd::Vocab { corpus, size, out } => {
            let text = read_corpus(&corpus)?;
            let vocab = Vocab::build(&text, size.unwrap_or(cfg.vocab_target))?;
            vocab.save(&out)?;
            println!("tokens={}", vocab.len());
        }
        Cmd::Fragments { corpus, vocab, out } => {
            let vocab = Vocab::load(&vocab)?;
            cfg.model.vocab_size = vocab.len();
            let text = read_corpus(&corpus)?;
            let mut pairs: Vec<Pair> = corpus_fragments(&text, &vocab, &cfg.fragments()).iter().map(Pair::from).collect();
            shuffle_pairs(&mut pairs, cfg.train.seed);
            save_pairs(&out, &pairs)?;
            print!("{}", PairStats::new(&pairs).render());
        }
        Cmd::Pretrain { pairs, vocab, out, resume, stop_after } => {
            let vocab = Vocab::load(&vocab)?;
            cfg.model.vocab_size = vocab.len();
            let pairs = load_pairs(&pairs)?;
            if let Some((i, id)) = pairs
                .iter()
                .enumerate()
                .find_map(|(i, p)| p.context.iter().chain(&p.target).find(|&&id| id as usize >= vocab.len()).map(|&id| (i, id)))
            {
                return Err(Failure::Data(Error::Record {
                    what: "pair file",
                    index: i as u64,
                    detail: format!("id {id} outside the vocabulary of {}", vocab.len()),
                }));
            }
            let mut run = Run::open(&name, &cfg, argv)?;
            let out = out.unwrap_or_else(|| run.dir.join("checkpoints/final.plmc"));
            if cfg.train.ablation.no_pretraining {
                Model::<f32>::new(cfg.model.clone(), cfg.train.seed)?.save(&out)?;
                run.line("no_pretraining: wrote the initial model");
                return Ok(());
            }
            let mut trainer = match resume {
                Some(p) => {
                    let t = Trainer::resume(Checkpoint::load(&p)?, cfg.train.clone())?;
                    if t.model.config != cfg.model {
                        return Err(Failure::Usage("resumed checkpoint has a different model config".into()));
                    }
                    run.line(&format!("resumed at step {}", t.step));
                    t
                }
                None => Trainer::new(Model::new(cfg.model.clone(), cfg.train.seed)?, cfg.train.clone())?,
            };
            let until = stop_after.unwrap_or(cfg.train.total_steps);
            let every = cfg.train.checkpoint_every;
            let ck_dir = run.dir.join("checkpoints");
            trainer.pretrain(&pairs, until, |t, s| {
                run.step(s);
                if every > 0 && s.step % every == 0 {
                    t.checkpoint().save(ck_dir.join(format!("step-{}.plmc", s.step)))?;
                }
                Ok(())
            })?;
            if trainer.step < cfg.train.total_steps {
                trainer.checkpoint().save(&out)?;
                run.line(&format!("stopped at step {}; resumable checkpoint {}", trainer.step, out.display()));
                return Ok(());
            }
            finish_pretraining(&mut trainer.model, &cfg.train);
            trainer.checkpoint().save(&out)?;
            run.line(&format!("done: {} steps, {} skipped, {} clamped; {}", trainer.step, trainer.skipped_batches, trainer.clamped, out.display()));
        }
        Cmd::Finetune { checkpoint, vocab, pairs, out } => {
            let vocab = Vocab::load(&vocab)?;
            let (model, meta) = load_model(&checkpoint, &vocab)?;
            cfg.model = model.config.clone();
            let examples = load_supervised(&pairs, &vocab, cfg.model.max_context, cfg.model.max_target)?;
            let mut run = Run::open(&name, &cfg, argv)?;
            let out = out.unwrap_or_else(|| run.dir.join("checkpoints/finetuned.plmc"));
            let model = experiment::finetune(model, &cfg, &examples, &mut |_, s| {
                run.step(s);
                Ok(())
            })?;
            model.to_checkpoint(&meta, Vec::new()).save(&out)?;
            run.line(&format!("done: {}", out.display()));
        }
        Cmd::Generate { checkpoint, vocab, input, out } => {
            let vocab = Vocab::load(&vocab)?;
            let (model, _) = load_model(&checkpoint, &vocab)?;
            let text = fs::read_to_string(&input).map_err(Error::at_path(&input))?;
            let run = Run::open(&name, &cfg, argv)?;
            let (mc, mt) = (model.config.max_context, model.config.max_target);
            let mut lines = String::new();
            for (n, line) in text.lines().enumerate() {
                let (p, q) = match line.split_once('\t') {
                    Some((p, q)) => (p, Some(q)),
                    None => (line, None),
                };
                let ex = Example::supervised(p, q, "", &vocab, mc, mt).map_err(|e| Error::Record {
                    what: "input file",
                    index: n as u64 + 1,
                    detail: e.to_string(),
                })?;
                lines.push_str(&generate(&model, &vocab, &ex, &cfg.decode, cfg.train.ablation.use_pointer())?);
                lines.push('\n');
            }
            write_out(&run.dir.join("samples.txt"), &lines)?;
            match out {
                Some(p) => write_out(&p, &lines)?,
                None => print!("{lines}"),
            }
        }
        Cmd::Eval { checkpoint, vocab, pairs, out } => {
            let vocab = Vocab::load(&vocab)?;
            let (model, _) = load_model(&checkpoint, &vocab)?;
            let run = Run::open(&name, &cfg, argv)?;
            let pointer = cfg.train.ablation.use_pointer();
            let is_pair_file = fs::read(&pairs).map_err(Error::at_path(&pairs))?.starts_with(b"PLMF");
            let report = if is_pair_file {
                let examples: Vec<Example> = load_pairs(&pairs)?.iter().map(Example::from).collect();
                let t = total_nll(&model, &examples, pointer)?;
                format!("examples={}\ntokens={}\nperplexity={:.6}\nclamped={}\n", examples.len(), t.tokens, t.perplexity(), t.clamped)
            } else {
                let examples = load_supervised(&pairs, &vocab, model.config.max_context, model.config.max_target)?;
                evaluate(&model, &vocab, &examples, &cfg.decode, pointer)?.render()
            };
            write_out(&run.dir.join("report.txt"), &report)?;
            match out {
                Some(p) => write_out(&p, &report)?,
                None => print!("{report}"),
            }
        }
        Cmd::Ablate { arm } => {
            let mut arms = if arm.is_empty() { Ablation::ARMS.iter().map(|s| s.to_string()).collect() } else { arm };
            for a in &arms {
                Ablation::arm(a)?;
            }
            if !arms.iter().any(|a| a == "full") {
                arms.insert(0, "full".into());
            }
            let mut run = Run::open(&name, &cfg, argv)?;
            let raw = RawData::load(&cfg)?;
            let data = Prepared::new(&raw, &cfg)?;
            data.vocab.save(run.dir.join("vocab.txt"))?;
            let report = run.dir.join("report.txt");
            if !report.exists() {
                write_out(&report, &format!("{ROW_HEADER}\n"))?;
            }
            for a in &arms {
                run.line(&format!("arm {a}"));
                let row = experiment::run_arm(&cfg, a, &data, &mut |_, s| {
                    run.step(s);
                    Ok(())
                })?;
                let mut f = OpenOptions::new().append(true).open(&report).map_err(Error::at_path(&report))?;
                writeln!(f, "{}", row.render())?;
                let samples = run.dir.join("samples.txt");
                let mut f = OpenOptions::new().create(true).append(true).open(&samples).map_err(Error::at_path(&samples))?;
                write!(f, "arm={a}\nseed={}\n{}\n", row.seed, row.report.render())?;
                run.line(&row.render());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
