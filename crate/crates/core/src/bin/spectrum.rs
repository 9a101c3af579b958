use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use spectrum::checkpoint;
use spectrum::config::{Ablation, Config, RhoMode};
use spectrum::encoders::ModalityMask;
use spectrum::eval::{mask_sweep, mean_attribute_auc, mean_losses, run_eval};
use spectrum::io::lexicon::{EmotionLexicon, FieldTaxonomy};
use spectrum::io::manifest::{load_manifest, CorpusItem};
use spectrum::io::spft::read_tensor;
use spectrum::io::synth::{synth_corpus, SynthConfig};
use spectrum::io::text::Stopwords;
use spectrum::io::vectors::load_word_vectors;
use spectrum::metrics::MetricReport;
use spectrum::model::retrieved_text;
use spectrum::train::{build_model, fit, prepare_corpus, run_training, EvalLog, LogLine};

#[derive(Parser)]
#[command(name = "spectrum", version, about = "Emotion-informed video captioning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic corpus (features, embeddings, manifests).
    Synth(SynthArgs),
    /// Train a model and save a checkpoint directory.
    Train(TrainArgs),
    /// Decode a test manifest and write a metric report.
    Eval(EvalArgs),
    /// Caption one video from its feature files.
    Caption(CaptionArgs),
    /// Train and evaluate the standard ablation configurations.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct Resources {
    /// Emotion lexicon JSON; the bundled one when omitted.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Field taxonomy JSON; the bundled one when omitted.
    #[arg(long)]
    fields: Option<PathBuf>,
    /// Stopword list, one per line.
    #[arg(long)]
    stopwords: Option<PathBuf>,
}

impl Resources {
    fn load(&self) -> Result<(EmotionLexicon, FieldTaxonomy, Stopwords)> {
        let lex = match &self.lexicon {
            Some(p) => EmotionLexicon::load(p)?,
            None => EmotionLexicon::default(),
        };
        let tax = match &self.fields {
            Some(p) => FieldTaxonomy::load(p)?,
            None => FieldTaxonomy::default(),
        };
        let stop = match &self.stopwords {
            Some(p) => Stopwords::parse(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
            None => Stopwords::default(),
        };
        Ok((lex, tax, stop))
    }
}

/// Per-field overrides of the JSON config.
#[derive(Args, Default)]
struct ConfigArgs {
    /// JSON config file; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the pretrained-scale schedule (lr 5e-7, batch 128, 50 epochs).
    #[arg(long)]
    pretrained_hparams: bool,
    #[arg(long)]
    d_h: Option<usize>,
    #[arg(long)]
    d_b: Option<usize>,
    #[arg(long)]
    d_e: Option<usize>,
    #[arg(long)]
    n_layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    l_max: Option<usize>,
    #[arg(long)]
    top_k_factual: Option<usize>,
    #[arg(long)]
    k_top: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    /// Overridden in turn by SPECTRUM_SEED.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda_fld: Option<f64>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    length_normalize: Option<bool>,
    #[arg(long)]
    n_t: Option<usize>,
    #[arg(long)]
    exclude_self: Option<bool>,
    /// Modalities, e.g. `V+A+T` or `V`.
    #[arg(long)]
    mask: Option<String>,
    #[arg(long)]
    cfb: Option<bool>,
    #[arg(long)]
    aeb: Option<bool>,
    #[arg(long)]
    field_emb: Option<bool>,
    #[arg(long)]
    emotion_emb: Option<bool>,
    /// `ground_truth` or `predicted`.
    #[arg(long)]
    rho_mode: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<Config> {
        self.apply(Config::default())
    }

    /// `base` (or the `--config` file when given) with every passed flag applied.
    fn apply(&self, base: Config) -> Result<Config> {
        let mut c = match (&self.config, self.pretrained_hparams) {
            (Some(p), _) => Config::load(p)?,
            (None, true) => Config::pretrained_hparams(),
            (None, false) => base,
        };
        if self.config.is_some() && self.pretrained_hparams {
            let p = Config::pretrained_hparams().train;
            c.train.lr = p.lr;
            c.train.batch = p.batch;
            c.train.epochs = p.epochs;
        }
        macro_rules! set {
            ($($field:ident => $($path:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { c.$($path).+ = v; })*
            };
        }
        set!(
            d_h => model.d_h, d_b => model.d_b, d_e => model.d_e, n_layers => model.n_layers,
            heads => model.heads, l_max => model.l_max, top_k_factual => model.top_k_factual,
            k_top => k_top, gamma => gamma,
            lr => train.lr, batch => train.batch, epochs => train.epochs,
            weight_decay => train.weight_decay, lr_decay => train.lr_decay, seed => train.seed,
            lambda_fld => train.lambda_fld,
            beam => decode.beam, length_normalize => decode.length_normalize,
            n_t => retrieval.n_t, exclude_self => retrieval.exclude_self,
            cfb => ablation.cfb, aeb => ablation.aeb,
            field_emb => ablation.field_emb, emotion_emb => ablation.emotion_emb,
        );
        if let Some(m) = &self.mask {
            c.ablation.mask = ModalityMask::parse(m)?;
        }
        if let Some(r) = &self.rho_mode {
            c.ablation.rho_mode = r.parse::<RhoMode>()?;
        }
        let c = c.with_env_seed()?;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// JSON synth settings; missing keys take defaults.
    #[arg(long)]
    synth_config: Option<PathBuf>,
    #[arg(long)]
    videos: Option<usize>,
    #[arg(long)]
    d_b: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    resources: Resources,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    /// Checkpoint directory to write.
    #[arg(long)]
    out: PathBuf,
    /// Evaluate on this manifest after training and write `report.json`.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Whitespace-separated word vectors for the text embedding table.
    #[arg(long)]
    word_vectors: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    resources: Resources,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Report path; with several masks, one file per mask is written next to it.
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
    /// Modality masks to sweep; repeatable.
    #[arg(long = "sweep-mask")]
    sweep: Vec<String>,
    /// Load despite an architecture hash mismatch.
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct CaptionArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    appearance: PathBuf,
    #[arg(long)]
    motion: PathBuf,
    #[arg(long)]
    audio: PathBuf,
    /// Retrieval embedding of the video (SPFT, one row).
    #[arg(long)]
    video_embedding: Option<PathBuf>,
    /// Per-attribute cross-attention dump.
    #[arg(long, default_value = "attention.csv")]
    attention: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Seeds run per configuration, starting at the configured seed.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    resources: Resources,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn synth(a: SynthArgs) -> Result<()> {
    let (lex, tax, _) = a.resources.load()?;
    let mut sc = match &a.synth_config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => SynthConfig::default(),
    };
    if let Some(v) = a.videos {
        sc.videos = v;
    }
    if let Some(d) = a.d_b {
        sc.d_b = d;
    }
    let s = synth_corpus(&sc, a.seed, &lex, &tax, &a.out)?;
    println!("{}", s.train_manifest.display());
    println!("{}", s.test_manifest.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let config = a.config.resolve()?;
    let (lex, tax, stop) = a.resources.load()?;
    let corpus = load_manifest(&a.train, &tax, config.model.l_max)?;
    fs::create_dir_all(&a.out)?;
    let mut log = Vec::new();
    let mut sink = Tee(&mut log);
    let mut model = build_model(&config, &corpus, &lex, &tax, &stop)?;
    if let Some(wv) = &a.word_vectors {
        let n = model.load_text_vectors(&load_word_vectors(wv, config.model.d_b)?)?;
        eprintln!("loaded {n} word vectors");
    }
    let mut outcome = fit(model, &corpus, &mut sink)?;
    checkpoint::save(&a.out, &outcome.model, outcome.pool.as_ref())?;
    if let Some(test) = &a.test {
        let tc = load_manifest(test, &tax, config.model.l_max)?;
        let data = prepare_corpus(&outcome.model, &tc, outcome.pool.as_ref())?;
        let report = run_eval(&outcome.model, &data)?;
        let epoch = outcome.log.epochs.len().saturating_sub(1);
        let line = LogLine::Eval(EvalLog { epoch, report: report.clone() });
        writeln!(sink, "{}", serde_json::to_string(&line)?)?;
        outcome.log.evals.push(EvalLog { epoch, report: report.clone() });
        write_text(&a.out.join("report.json"), &(report.to_json() + "\n"))?;
    }
    write_text(&a.out.join("trainlog.jsonl"), &String::from_utf8(log)?)?;
    Ok(())
}

/// Writes log lines to stdout and keeps a copy.
struct Tee<'a>(&'a mut Vec<u8>);

impl Write for Tee<'_> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.extend_from_slice(buf);
        io::stdout().write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        io::stdout().flush()
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    let ck = checkpoint::load(&a.checkpoint, None, false)?;
    let mut model = ck.model;
    // flags not passed keep the values the checkpoint was trained with
    let mut wanted = a.config.apply(model.config.clone())?;
    if wanted.model != model.config.model {
        if !a.force {
            bail!(
                "architecture hash {} differs from checkpoint {}; pass --force to override",
                wanted.model_hash(),
                model.config.model_hash()
            );
        }
        wanted.model = model.config.model.clone();
    }
    model.config = wanted;
    let corpus = load_manifest(&a.test, &model.taxonomy, model.config.model.l_max)?;
    let data = prepare_corpus(&model, &corpus, ck.pool.as_ref())?;
    println!("mask,{}", MetricReport::csv_header());
    if a.sweep.is_empty() {
        let r = run_eval(&model, &data)?;
        println!("{},{}", model.config.ablation.mask.label(), r.csv_row());
        write_text(&a.out, &(r.to_json() + "\n"))?;
        return Ok(());
    }
    let masks: Vec<ModalityMask> = a.sweep.iter().map(|m| ModalityMask::parse(m)).collect::<Result<_, _>>()?;
    let stem = a.out.file_stem().and_then(|s| s.to_str()).unwrap_or("report").to_string();
    for (m, r) in mask_sweep(&model, &data, &masks)? {
        println!("{},{}", m.label(), r.csv_row());
        let name = format!("{stem}.{}.json", m.label().replace('+', ""));
        write_text(&a.out.with_file_name(name), &(r.to_json() + "\n"))?;
    }
    Ok(())
}

fn caption(a: CaptionArgs) -> Result<()> {
    let ck = checkpoint::load(&a.checkpoint, None, a.force)?;
    let model = ck.model;
    let video_embedding = match &a.video_embedding {
        Some(p) => Some(read_tensor(p)?.1.row_slice(0).to_vec()),
        None => None,
    };
    let item = CorpusItem {
        video_id: "query".into(),
        appearance: a.appearance,
        motion: a.motion,
        audio: a.audio,
        captions: Vec::new(),
        field: 0,
        caption_embeddings: None,
        video_embedding,
    };
    let r = &model.config.retrieval;
    let text = retrieved_text(&item, ck.pool.as_ref(), r.n_t, false)?;
    let prepared = model.prepare(&item, &text)?;
    let ctx = model.context(&prepared)?;
    let hyp = model.generate(&ctx)?;
    println!("{}", model.vocab.decode(&hyp.tokens).join(" "));
    let mass = model.attention_mass(&ctx, &hyp.tokens)?;
    let first = ctx.memory_rows;
    let mut csv = String::from("attribute,probability,attention\n");
    for (k, &att) in ctx.attribute_rows.iter().enumerate() {
        let word = &model.attrs.attrs()[att].word;
        csv.push_str(&format!("{word},{:.6},{:.6}\n", ctx.pr[att], mass[first + k]));
    }
    write_text(&a.attention, &csv)
}

/// The structural configurations compared by `ablate`.
fn ablations() -> Vec<Ablation> {
    let mut out = vec![Ablation::baseline()];
    for mask in ["V+A", "V+A+T"] {
        out.push(Ablation {
            mask: ModalityMask::parse(mask).unwrap(),
            ..Ablation::baseline()
        });
    }
    let full = Ablation::default();
    for (cfb, aeb) in [(true, false), (false, true), (true, true)] {
        out.push(Ablation { cfb, aeb, ..full.clone() });
    }
    for (field_emb, emotion_emb) in [(true, false), (false, true)] {
        out.push(Ablation {
            field_emb,
            emotion_emb,
            ..full.clone()
        });
    }
    out
}

fn ablate(a: AblateArgs) -> Result<()> {
    let base = a.config.resolve()?;
    if a.seeds == 0 {
        bail!("--seeds must be positive");
    }
    let (lex, tax, stop) = a.resources.load()?;
    let train_c = load_manifest(&a.train, &tax, base.model.l_max)?;
    let test_c = load_manifest(&a.test, &tax, base.model.l_max)?;
    fs::create_dir_all(&a.out)?;
    let mut csv = format!("config,seed,train_total,test_total,auc,{}\n", MetricReport::csv_header());
    print!("{csv}");
    for ab in ablations() {
        for s in 0..a.seeds {
            let mut c = base.clone();
            c.ablation = Ablation {
                rho_mode: base.ablation.rho_mode,
                ..ab.clone()
            };
            c.train.seed = base.train.seed + s;
            let out = run_training(&c, &train_c, &lex, &tax, &stop, &mut io::sink())?;
            let data = prepare_corpus(&out.model, &test_c, out.pool.as_ref())?;
            let report = run_eval(&out.model, &data)?;
            let held = mean_losses(&out.model, &data)?;
            let auc = mean_attribute_auc(&out.model, &data)?.unwrap_or(f64::NAN);
            let last = out.log.epochs.last().map_or(f64::NAN, |e| e.total);
            let row = format!(
                "{},{},{:.4},{:.4},{:.4},{}\n",
                ab.label(),
                c.train.seed,
                last,
                held.total,
                auc,
                report.csv_row()
            );
            print!("{row}");
            csv.push_str(&row);
        }
    }
    write_text(&a.out.join("ablation.csv"), &csv)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Caption(a) => caption(a),
        Command::Ablate(a) => ablate(a),
    }
}
