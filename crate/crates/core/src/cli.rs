//! Command-line front end: `gen-data`, `train`, `eval` and `gradcheck`.
//!
//! Exit codes: 0 success, 1 usage or parameter error, 2 I/O or file format
//! error, 3 numeric failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{generate, read_dataset, write_dataset, ClassLabels, GenerateConfig, VideoDataset};
use crate::encoder::Space;
use crate::error::{Error, Result};
use crate::eval::{embed_dataset, first_hit_ranks, hit_rates, is_held_out, linear_probe, EmbeddingTable, ProbeConfig};
use crate::losses::LossConfig;
use crate::trainer::{fit, LossPreset};
use crate::verify::{gradient_suite, GRADCHECK_TOLERANCE};

#[derive(Debug, Parser)]
#[command(name = "cyclecon", version, about = "Cycle-consistent contrastive learning on toy videos")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic video set into a CCV1 file.
    GenData(GenDataArgs),
    /// Train a query/key encoder pair.
    Train(TrainArgs),
    /// Evaluate a checkpoint by linear probe or k-NN retrieval.
    Eval(EvalArgs),
    /// Compare analytic loss gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub videos: usize,
    #[arg(long, default_value_t = 4)]
    pub frames: usize,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    /// Frame height and width in pixels.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Flags override values from `--config`, which override the defaults.
#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Loss preset: intra-image, intra-video or full.
    #[arg(long)]
    pub loss: Option<LossPreset>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Probe,
    Retrieve,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SpaceArg {
    Backbone,
    Video,
    Cycle,
}

impl From<SpaceArg> for Space {
    fn from(s: SpaceArg) -> Self {
        match s {
            SpaceArg::Backbone => Space::Backbone,
            SpaceArg::Video => Space::VideoHead,
            SpaceArg::Cycle => Space::CycleHead,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Gallery / probe-training set.
    #[arg(long)]
    pub data: PathBuf,
    /// Query / probe-test set. Without it, videos with id ≡ 4 (mod 5) of
    /// `--data` are held out as queries.
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Mode,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    pub k: Vec<usize>,
    #[arg(long, value_enum, default_value_t = SpaceArg::Backbone)]
    pub space: SpaceArg,
    /// Results file; defaults to `<ckpt>.<mode>.txt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write per-query first-hit ranks as CSV (retrieve mode).
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cmd: Command) -> Result<i32> {
    match cmd {
        Command::GenData(a) => gen_data(&a).map(|_| 0),
        Command::Train(a) => train(&a).map(|_| 0),
        Command::Eval(a) => eval(&a).map(|_| 0),
        Command::Gradcheck(a) => gradcheck(&a),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let cfg = GenerateConfig {
        num_videos: a.videos,
        frames_per_video: a.frames,
        num_classes: a.classes,
        height: a.size,
        width: a.size,
        seed: a.seed,
        ..GenerateConfig::default()
    };
    let (ds, labels) = generate(&cfg)?;
    write_dataset(&a.out, &ds, &labels)?;
    println!(
        "wrote {}: CCV1 videos={} frames={} size={}x{} classes={} seed={}",
        a.out.display(),
        ds.num_videos(),
        ds.frames_per_video(),
        ds.height(),
        ds.width(),
        ds.num_classes(),
        ds.seed()
    );
    Ok(())
}

/// Merges defaults, `--config` and flags into the effective configuration.
pub fn effective_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &a.data {
        cfg.data = Some(d.clone());
    }
    if let Some(o) = &a.out {
        cfg.out = Some(o.clone());
    }
    if let Some(l) = a.loss {
        cfg.train.preset = l;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = effective_config(a)?;
    let data = cfg
        .data
        .clone()
        .ok_or_else(|| Error::Config("no dataset: pass --data or set `data` in the config".into()))?;
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| Error::Config("no output directory: pass --out or set `out` in the config".into()))?;
    cfg.train.validate()?;
    let (ds, _labels) = read_dataset(&data)?;
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_text(&out.join("effective_config.txt"), &cfg.to_text())?;
    let report = fit(&cfg.train, &ds, &out)?;
    let last = report.records.last();
    println!(
        "trained {} steps ({}) in {:.1}s; final loss {}",
        report.records.len(),
        cfg.train.preset,
        report.elapsed_seconds,
        last.map_or_else(|| "n/a".into(), |r| format!("{:.4}", r.loss_total))
    );
    println!("checkpoint {}", report.final_checkpoint.display());
    println!("metrics {}", report.metrics_csv.display());
    Ok(())
}

/// Query and gallery tables for evaluation: `--test-data` as queries when
/// given, otherwise a held-out fifth of `--data`.
fn eval_tables(
    ck: &Checkpoint,
    a: &EvalArgs,
    space: Space,
) -> Result<(EmbeddingTable, EmbeddingTable, usize)> {
    let (ds, labels): (VideoDataset, ClassLabels) = read_dataset(&a.data)?;
    let all = embed_dataset(ck, &ds, &labels, space, 0)?;
    match &a.test_data {
        Some(path) => {
            let (tds, tlabels) = read_dataset(path)?;
            let classes = ds.num_classes().max(tds.num_classes());
            Ok((embed_dataset(ck, &tds, &tlabels, space, 1)?, all, classes))
        }
        None => Ok((
            all.filter_videos(is_held_out),
            all.filter_videos(|v| !is_held_out(v)),
            ds.num_classes(),
        )),
    }
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.ckpt)?;
    let space = Space::from(a.space);
    let (query, gallery, classes) = eval_tables(&ck, a, space)?;
    if query.is_empty() {
        return Err(Error::param("no query rows (held-out split is empty)"));
    }
    let mode = match a.mode {
        Mode::Probe => "probe",
        Mode::Retrieve => "retrieve",
    };
    let mut text = String::new();
    let _ = writeln!(text, "mode = {mode}");
    let space_name = match a.space {
        SpaceArg::Backbone => "backbone",
        SpaceArg::Video => "video",
        SpaceArg::Cycle => "cycle",
    };
    let _ = writeln!(text, "space = {space_name}");
    let _ = writeln!(text, "checkpoint_step = {}", ck.step);
    let _ = writeln!(text, "num_classes = {classes}");
    let _ = writeln!(text, "query_rows = {}", query.len());
    let _ = writeln!(text, "gallery_rows = {}", gallery.len());
    match a.mode {
        Mode::Probe => {
            let acc = linear_probe(&gallery, &query, &ProbeConfig::default())?;
            let _ = writeln!(text, "probe_top1 = {acc:.6}");
        }
        Mode::Retrieve => {
            if let Some(&k) = a.k.iter().find(|&&k| k == 0 || k > gallery.len()) {
                return Err(Error::param(format!(
                    "k = {k} must lie in [1, {}] (gallery size)",
                    gallery.len()
                )));
            }
            let ranks = first_hit_ranks(&query, &gallery)?;
            for (k, rate) in a.k.iter().zip(hit_rates(&ranks, &a.k)) {
                let _ = writeln!(text, "hit@{k} = {rate:.6}");
            }
            if a.verbose {
                let mut csv = String::from("source,video_id,frame_idx,label,first_hit_rank\n");
                for (id, (label, rank)) in query.ids.iter().zip(query.labels.iter().zip(&ranks)) {
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},{}",
                        id.source,
                        id.video_id,
                        id.frame_idx,
                        label,
                        rank.map_or_else(String::new, |r| r.to_string())
                    );
                }
                let path = results_path(a).with_extension("ranks.csv");
                write_text(&path, &csv)?;
                println!("ranks {}", path.display());
            }
        }
    }
    let path = results_path(a);
    write_text(&path, &text)?;
    print!("{text}");
    println!("results {}", path.display());
    Ok(())
}

fn results_path(a: &EvalArgs) -> PathBuf {
    a.out.clone().unwrap_or_else(|| {
        let mode = match a.mode {
            Mode::Probe => "probe",
            Mode::Retrieve => "retrieve",
        };
        let mut name = a.ckpt.file_name().unwrap_or_default().to_os_string();
        name.push(format!(".{mode}.txt"));
        a.ckpt.with_file_name(name)
    })
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<i32> {
    let checks = gradient_suite(a.seed, a.trials, &LossConfig::default())?;
    let mut code = 0;
    for c in &checks {
        let verdict = if c.passed() { "ok" } else { "FAIL" };
        println!(
            "{:<20} worst relative error {:.3e} over {} trials (trial {})  {verdict}",
            c.name, c.max_rel_error, c.trials, c.worst_trial
        );
        if !c.passed() {
            code = 3;
        }
    }
    println!("tolerance {GRADCHECK_TOLERANCE:e}");
    Ok(code)
}
