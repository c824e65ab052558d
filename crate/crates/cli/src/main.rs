use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use modfuse_core::config::RunConfig;
use modfuse_core::data::{
    generate_synthetic, shuffle_labels, subject_split, DatasetManifest, MAX_SUBJECTS,
};
use modfuse_core::report::{
    aggregate, collect_results, emit_barplot_data, emit_table, parse_metrics, Condition,
    MetricRecord, TableFormat,
};
use modfuse_core::train::{finetune_fusion, pretrain_modality, Checkpoint, MultimodalModel, Stage};
use modfuse_core::{Error, Modality, Result, Trial};

/// Multimodal emotion recognition: synthesize data, pretrain encoders,
/// fine-tune the fusion head, report.
#[derive(Parser)]
#[command(name = "modfuse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its manifest.
    Synth(SynthArgs),
    /// Train one modality encoder with its own classifier head.
    Pretrain(PretrainArgs),
    /// Freeze three pretrained encoders and train the fusion head.
    Finetune(FinetuneArgs),
    /// Aggregate metrics lines into a subject-wise table.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    /// Run configuration file (`key = value` lines) [default: built-in defaults]
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// RNG seed [default: the config's `seed`]
    #[arg(long, env = "MODFUSE_SEED", value_name = "N")]
    seed: Option<u64>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    modality: ModalityArg,
    /// Dataset directory or manifest file
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Subject id, 1..42
    #[arg(long, value_name = "K")]
    subject: u32,
    /// Checkpoint directory to write
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct FinetuneArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset directory or manifest file
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Subject id, 1..42
    #[arg(long, value_name = "K")]
    subject: u32,
    /// Vision, audio and eeg checkpoint directories, comma separated
    #[arg(long, value_name = "DIR,DIR,DIR", value_delimiter = ',')]
    encoders: Vec<PathBuf>,
    /// Checkpoint directory to write
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Metrics files (`subject,condition,train_acc,val_acc` lines)
    #[arg(long, value_name = "FILE", num_args = 1.., required = true)]
    metrics: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Output file [default: standard output]
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModalityArg {
    Vision,
    Audio,
    Eeg,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Vision => Modality::Vision,
            ModalityArg::Audio => Modality::Audio,
            ModalityArg::Eeg => Modality::Eeg,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Markdown,
    Barplot,
}

fn run_config(common: &Common) -> Result<RunConfig> {
    let cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    Ok(match common.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    })
}

fn check_subject(subject: u32) -> Result<()> {
    if (1..=MAX_SUBJECTS).contains(&subject) {
        Ok(())
    } else {
        Err(Error::Usage(format!(
            "subject out of range 1..{MAX_SUBJECTS}"
        )))
    }
}

fn load_subject(data: &Path, subject: u32, cfg: &RunConfig) -> Result<Vec<Trial>> {
    let mut trials = DatasetManifest::read(data)?.load(Some(subject))?;
    if trials.is_empty() {
        return Err(Error::Data(format!(
            "subject {subject} has no trials in {}",
            data.display()
        )));
    }
    if cfg.shuffle_labels {
        shuffle_labels(&mut trials, cfg.seed);
    }
    Ok(trials)
}

/// Finetune validation trials must be held out from every encoder too.
fn check_same_split(cfg: &RunConfig, encoder: &RunConfig, m: Modality) -> Result<()> {
    let split = |c: &RunConfig| (c.split_seed(), c.test_fraction, c.shuffle_labels, c.seed);
    if split(cfg) != split(encoder) {
        return Err(Error::Config(format!(
            "{m} encoder was trained on a different split (seed {}, split.test_fraction {}, split.repeat {}, train.shuffle_labels {})",
            encoder.seed, encoder.test_fraction, encoder.split_repeat, encoder.shuffle_labels
        )));
    }
    Ok(())
}

fn echo(cfg: &RunConfig) -> Vec<(String, String)> {
    cfg.entries()
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

fn metrics_line(subject: u32, condition: Condition, ckpt: &Checkpoint) -> MetricRecord {
    MetricRecord {
        subject_id: subject,
        condition,
        train_acc: Some(ckpt.meta.train_acc),
        val_acc: ckpt.meta.val_acc,
    }
}

fn synth(args: SynthArgs) -> Result<()> {
    let cfg = run_config(&args.common)?;
    let manifest = generate_synthetic(&cfg.synth_config(), &args.out)?;
    eprintln!(
        "wrote {} trials to {}",
        manifest.records.len(),
        args.out.display()
    );
    Ok(())
}

fn pretrain(args: PretrainArgs) -> Result<()> {
    check_subject(args.subject)?;
    let cfg = run_config(&args.common)?;
    let m = Modality::from(args.modality);
    let encoder = cfg.encoder(m)?;
    let trials = load_subject(&args.data, args.subject, &cfg)?;
    let split = &subject_split(&trials, cfg.test_fraction, cfg.split_seed(), false)?[&args.subject];
    let mut ckpt = pretrain_modality(
        &encoder,
        &split.train_trials(&trials),
        &split.test_trials(&trials),
        &cfg.pretrain_config(),
    )?;
    ckpt.meta.config = echo(&cfg);
    ckpt.save(&args.out)?;
    println!("{}", metrics_line(args.subject, Condition::from(m), &ckpt));
    Ok(())
}

fn finetune(args: FinetuneArgs) -> Result<()> {
    check_subject(args.subject)?;
    let cfg = run_config(&args.common)?;
    if args.encoders.len() > 3 {
        return Err(Error::Usage(format!(
            "--encoders takes three directories, got {}",
            args.encoders.len()
        )));
    }
    let mut encoders = Vec::with_capacity(3);
    let mut checkpoints = Vec::with_capacity(3);
    for (i, m) in Modality::ALL.into_iter().enumerate() {
        let dir = args
            .encoders
            .get(i)
            .filter(|p| !p.as_os_str().is_empty())
            .ok_or_else(|| Error::Usage(format!("missing {m} encoder checkpoint in --encoders")))?;
        if !dir.is_dir() {
            return Err(Error::Usage(format!(
                "{m} encoder checkpoint {} does not exist",
                dir.display()
            )));
        }
        let ckpt = Checkpoint::load(dir)?;
        if ckpt.meta.stage != Stage::Pretrain || ckpt.meta.modality != Some(m) {
            return Err(Error::Usage(format!(
                "{} is not a {m} encoder checkpoint",
                dir.display()
            )));
        }
        let enc_cfg = RunConfig::from_pairs(
            ckpt.meta
                .config
                .iter()
                .map(|(k, v)| (k.as_str(), v.as_str())),
        )?;
        check_same_split(&cfg, &enc_cfg, m)?;
        encoders.push(enc_cfg.encoder(m)?);
        checkpoints.push(ckpt);
    }
    let encoders: [_; 3] = encoders.try_into().expect("three encoders");
    let model = MultimodalModel::new(encoders, cfg.fusion_config())?;

    let trials = load_subject(&args.data, args.subject, &cfg)?;
    let split = &subject_split(&trials, cfg.test_fraction, cfg.split_seed(), true)?[&args.subject];
    let regs = [
        &checkpoints[0].registry,
        &checkpoints[1].registry,
        &checkpoints[2].registry,
    ];
    let mut ckpt = finetune_fusion(
        &model,
        regs,
        &split.train_trials(&trials),
        &split.test_trials(&trials),
        &cfg.finetune_config(),
    )?;
    ckpt.meta.config = echo(&cfg);
    ckpt.save(&args.out)?;
    println!(
        "{}",
        metrics_line(args.subject, Condition::Multimodal, &ckpt)
    );
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let mut records = Vec::new();
    for path in &args.metrics {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        records.extend(parse_metrics(&text, path)?);
    }
    let table = aggregate(collect_results(&records)?)?;
    let text = match args.format {
        FormatArg::Csv => emit_table(&table, TableFormat::Csv),
        FormatArg::Markdown => emit_table(&table, TableFormat::Markdown),
        FormatArg::Barplot => emit_barplot_data(&table),
    };
    match &args.out {
        Some(path) => fs::write(path, text).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Finetune(a) => finetune(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("modfuse: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
