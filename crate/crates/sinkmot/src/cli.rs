//! Command-line driver.
//!
//! Settings resolve as built-in defaults, then `--config`, then flags.
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal invariant
//! violation (including a failed gradient check).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use sinkmot_core::assoc::{self, AffinityMatrix, FORBIDDEN};
use sinkmot_core::embeddings::{EmbeddingSource, EmbeddingTable};
use sinkmot_core::geom::FrameSize;
use sinkmot_core::linalg::Matrix;
use sinkmot_core::metrics::{evaluate, EvalReport};
use sinkmot_core::params::{ParameterStore, Parameters};
use sinkmot_core::tracker::{run_sequence, TrackerError};
use sinkmot_core::train::{gradcheck, train_loop, LabeledObject, TrainError, TrainingSequence};

use crate::checkpoint::{load_params_any, save_params};
use crate::config::RunConfig;
use crate::embedfile::load_embeddings;
use crate::error::{read_text, write_text};
use crate::formats::{detection_sequence, gt_by_frame, parse_detections, parse_frame_size, parse_ground_truth, parse_results, write_results};
use crate::report;

#[derive(Debug, Parser)]
#[command(name = "sinkmot", version, about = "Graph-feature multi-object tracker with Sinkhorn association")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Track every detection file and write MOTChallenge results.
    Track(TrackArgs),
    /// Train the model on annotated sequences.
    Train(TrainArgs),
    /// Score result files against ground truth (CLEAR-MOT).
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients on random instances.
    Gradcheck(GradcheckArgs),
    /// Normalize a score matrix and print it with its marginals.
    SinkhornDemo(SinkhornArgs),
}

/// Hyperparameter overrides shared by the model commands. A bad
/// configuration file is a usage error.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Run configuration file (`key = value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Random seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Entropic parameter of the Sinkhorn kernel [default: 5]
    #[arg(long)]
    pub l: Option<f64>,
    /// Sinkhorn iterations, one row and one column pass each [default: 8]
    #[arg(long)]
    pub iters: Option<usize>,
    /// Score of the slack row and column [default: 0.2]
    #[arg(long = "s-slack")]
    pub s_slack: Option<f64>,
    /// Normalized assignments below this value never match [default: 0.2]
    #[arg(long = "s-thres")]
    pub s_thres: Option<f64>,
    /// Candidate gate on box center distance, in pixels [default: 200]
    #[arg(long = "gate-px")]
    pub gate_px: Option<f64>,
    /// Weight of positive labels in the loss [default: 10]
    #[arg(long)]
    pub w: Option<f64>,
    /// Adam learning rate [default: 0.002]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Largest frame gap sampled during training [default: 45]
    #[arg(long)]
    pub lookback: Option<usize>,
    /// Number of GCN layers [default: 2]
    #[arg(long)]
    pub layers: Option<usize>,
}

impl Overrides {
    pub fn resolve(&self) -> Result<RunConfig, Failure> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).map_err(|e| Failure::Usage(e.to_string()))?,
            None => RunConfig::default(),
        };
        macro_rules! over {
            ($($f:ident),*) => {$( if let Some(v) = self.$f { cfg.$f = v; } )*};
        }
        over!(seed, l, iters, s_slack, s_thres, gate_px, w, lr, lookback, layers);
        validate(&cfg)?;
        Ok(cfg)
    }
}

fn validate(cfg: &RunConfig) -> Result<(), Failure> {
    cfg.tracker().validate().map_err(|e| Failure::Usage(e.to_string()))?;
    cfg.train().validate().map_err(|e| Failure::Usage(e.to_string()))?;
    cfg.model().validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if !(cfg.l > 0.0) || cfg.iters == 0 {
        return Err(Failure::Usage("l must be positive and iters at least 1".into()));
    }
    if !(cfg.iou_threshold > 0.0 && cfg.iou_threshold <= 1.0) {
        return Err(Failure::Usage("iou_threshold must lie in (0, 1]".into()));
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    /// Parameter checkpoint.
    #[arg(long)]
    pub params: PathBuf,
    /// MOTChallenge detection files; the sequence name is the file stem.
    #[arg(long, required = true, num_args = 1..)]
    pub detections: Vec<PathBuf>,
    /// Embedding files covering every detection.
    #[arg(long, required = true, num_args = 1..)]
    pub embeddings: Vec<PathBuf>,
    /// Frame size as `WxH`, or a file with width and height on two lines.
    #[arg(long = "frames-wh")]
    pub frames_wh: Option<String>,
    /// Result file, or a directory when several sequences are tracked.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    /// Ground-truth files; the sequence name is the file stem.
    #[arg(long, required = true, num_args = 1..)]
    pub gt: Vec<PathBuf>,
    /// Embedding files; `det_index` is the row order within a frame of the gt file.
    #[arg(long, required = true, num_args = 1..)]
    pub embeddings: Vec<PathBuf>,
    /// Start from this checkpoint instead of a seeded initialization.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Frame size as `WxH`, or a file with width and height on two lines.
    #[arg(long = "frames-wh")]
    pub frames_wh: Option<String>,
    /// Number of epochs [default: 50]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Output checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss CSV [default: <out> with extension `loss.csv`]
    #[arg(long = "loss-csv")]
    pub loss_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run configuration file (only `iou_threshold` is used).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Ground-truth files.
    #[arg(long, required = true, num_args = 1..)]
    pub gt: Vec<PathBuf>,
    /// Result files, paired with `--gt` by position.
    #[arg(long, required = true, num_args = 1..)]
    pub hyp: Vec<PathBuf>,
    /// Minimum IoU of a match [default: 0.5]
    #[arg(long)]
    pub iou: Option<f64>,
    /// Also write the report as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    /// Tracklets per instance.
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    /// Detections per instance.
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    /// Test hook: perturb one analytic gradient so the check must fail.
    #[arg(long = "corrupt-gradient")]
    pub corrupt_gradient: bool,
}

#[derive(Debug, Args)]
pub struct SinkhornArgs {
    /// Augmented (M+1)x(N+1) score matrix: one row per line, values split by
    /// commas or spaces, `-inf` for a forbidden cell.
    #[arg(long)]
    pub matrix: PathBuf,
    /// Entropic parameter of the kernel [default: 5]
    #[arg(long)]
    pub l: Option<f64>,
    /// Iterations [default: 8]
    #[arg(long)]
    pub iters: Option<usize>,
}

/// A command failure, classified by exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
    Invariant(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Invariant(_) => 3,
        }
    }
}

/// The error chain, skipping causes whose text a previous message already
/// includes.
fn chain(e: &anyhow::Error) -> String {
    let mut out = e.to_string();
    for cause in e.chain().skip(1) {
        let m = cause.to_string();
        if !out.contains(&m) {
            out.push_str(": ");
            out.push_str(&m);
        }
    }
    out
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Data(e) => f.write_str(&chain(e)),
            Failure::Invariant(e) => write!(f, "internal invariant violated: {}", chain(e)),
        }
    }
}

fn data(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Data(e.into())
}

fn tracker_failure(e: TrackerError, seq: &str) -> Failure {
    let invariant = e.is_invariant_violation();
    let e = anyhow::Error::new(e).context(format!("sequence {seq}"));
    if invariant { Failure::Invariant(e) } else { Failure::Data(e) }
}

fn train_failure(e: TrainError) -> Failure {
    match &e {
        TrainError::InvalidConfig(_) => Failure::Usage(e.to_string()),
        TrainError::Diverged { .. } => Failure::Invariant(e.into()),
        TrainError::Pipeline(p) if p.is_invariant_violation() => Failure::Invariant(e.into()),
        _ => Failure::Data(e.into()),
    }
}

/// Sequence name of a data file: its stem, or for the benchmark layout
/// `<SEQ>/det/det.txt` and `<SEQ>/gt/gt.txt` the `<SEQ>` directory name.
pub fn sequence_name(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if stem == "det" || stem == "gt" {
        if let Some(seq) = path.parent().and_then(Path::parent).and_then(Path::file_name) {
            return seq.to_string_lossy().into_owned();
        }
    }
    stem
}

fn frame_size(arg: &Option<String>, cfg: &RunConfig) -> Result<FrameSize, Failure> {
    if let Some(v) = arg {
        let path = Path::new(v);
        return if path.is_file() {
            let text = read_text(path).map_err(data)?;
            parse_frame_size(&text).map_err(|e| data(crate::error::DataError::parse(path, e)))
        } else {
            parse_frame_size(v).map_err(|e| Failure::Usage(format!("--frames-wh {v:?}: {}", e.message)))
        };
    }
    match cfg.frame_size() {
        Some(r) => r.map_err(|e| Failure::Usage(format!("frame size: {e}"))),
        None => Err(Failure::Usage("frame size needed: pass --frames-wh or set frame_width/frame_height".into())),
    }
}

fn load_all_embeddings(paths: &[PathBuf]) -> Result<EmbeddingTable, Failure> {
    let mut tables = Vec::with_capacity(paths.len());
    for p in paths {
        tables.push((p, load_embeddings(p).map_err(data)?));
    }
    let dim = tables[0].1.dim();
    let mut all = EmbeddingTable::new(dim);
    for (p, t) in tables {
        for ((seq, frame, idx), e) in t.iter() {
            all.insert(seq, frame, idx, e.clone()).with_context(|| format!("{}", p.display())).map_err(data)?;
        }
    }
    Ok(all)
}

fn load_checkpoint(path: &Path) -> Result<Parameters, Failure> {
    load_params_any(path).with_context(|| format!("loading parameters from {}", path.display())).map_err(data)
}

pub fn cmd_track(a: &TrackArgs) -> Result<(), Failure> {
    let cfg = a.overrides.resolve()?;
    let fs = frame_size(&a.frames_wh, &cfg)?;
    let params = load_checkpoint(&a.params)?;
    let table = load_all_embeddings(&a.embeddings)?;
    let d_app = params.config().d_app;
    if table.dim() != d_app {
        return Err(data(anyhow!("embeddings have {} components but the checkpoint expects {d_app}", table.dim())));
    }
    let tracker = cfg.tracker();
    let several = a.detections.len() > 1 || a.out.is_dir();
    if several {
        std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display())).map_err(data)?;
    }
    for det in &a.detections {
        let name = sequence_name(det);
        let frames = parse_detections(det).map_err(data)?;
        let seq = detection_sequence(&name, fs, &frames, 0);
        let records = run_sequence(&seq, &tracker, &params, &table).map_err(|e| tracker_failure(e, &name))?;
        let out = if several { a.out.join(format!("{name}.txt")) } else { a.out.clone() };
        write_results(&records, &out).map_err(data)?;
        let ids: std::collections::BTreeSet<u64> = records.iter().map(|r| r.id).collect();
        log::info!("{name}: {} frames, {} boxes, {} identities", seq.frames.len(), records.len(), ids.len());
    }
    Ok(())
}

/// Annotated frames `1..=last` of one gt file with their embeddings.
pub fn training_sequence(name: &str, frame_size: FrameSize, gt_path: &Path, table: &dyn EmbeddingSource) -> Result<TrainingSequence, Failure> {
    let gt = parse_ground_truth(gt_path).map_err(data)?;
    let by_frame = gt_by_frame(&gt);
    let last = by_frame.keys().next_back().copied().unwrap_or(0);
    let mut frames = Vec::with_capacity(last as usize);
    for f in 1..=last {
        let rows = by_frame.get(&f).map(Vec::as_slice).unwrap_or(&[]);
        let mut objs = Vec::with_capacity(rows.len());
        for (idx, r) in rows.iter().enumerate() {
            let embedding = table.embedding(name, f, idx).map_err(data)?;
            objs.push(LabeledObject { id: r.id, bbox: r.bbox, embedding });
        }
        frames.push(objs);
    }
    Ok(TrainingSequence { name: name.to_string(), frame_size, frames })
}

pub fn cmd_train(a: &TrainArgs) -> Result<(), Failure> {
    let mut cfg = a.overrides.resolve()?;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let fs = frame_size(&a.frames_wh, &cfg)?;
    let table = load_all_embeddings(&a.embeddings)?;
    let initial = match &a.params {
        Some(p) => load_checkpoint(p)?,
        None => Parameters::init(&cfg.model(), cfg.seed).map_err(|e| Failure::Usage(e.to_string()))?,
    };
    let d_app = initial.config().d_app;
    if table.dim() != d_app {
        return Err(data(anyhow!("embeddings have {} components but the model expects d_app = {d_app}", table.dim())));
    }
    let mut data_set = Vec::with_capacity(a.gt.len());
    for gt in &a.gt {
        data_set.push(training_sequence(&sequence_name(gt), fs, gt, &table)?);
    }
    let mut store = ParameterStore::new(initial);
    let report = if cfg.epochs == 0 {
        Vec::new()
    } else {
        train_loop(&data_set, &mut store, &cfg.train()).map_err(train_failure)?.epoch_losses
    };
    save_params(&store.values, &a.out).map_err(data)?;
    let mut csv = String::from("epoch,mean_loss\n");
    for (i, l) in report.iter().enumerate() {
        writeln!(csv, "{},{l}", i + 1).expect("write to string");
    }
    let csv_path = a.loss_csv.clone().unwrap_or_else(|| a.out.with_extension("loss.csv"));
    write_text(&csv_path, &csv).map_err(data)?;
    if let (Some(first), Some(last)) = (report.first(), report.last()) {
        println!("trained {} epochs: mean loss {first:.6} -> {last:.6}", report.len());
    } else {
        println!("0 epochs: wrote initial parameters");
    }
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<(), Failure> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p).map_err(|e| Failure::Usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(t) = a.iou {
        cfg.iou_threshold = t;
    }
    if !(cfg.iou_threshold > 0.0 && cfg.iou_threshold <= 1.0) {
        return Err(Failure::Usage("--iou must lie in (0, 1]".into()));
    }
    if a.gt.len() != a.hyp.len() {
        return Err(Failure::Usage(format!("{} gt files but {} result files", a.gt.len(), a.hyp.len())));
    }
    let mut reports = Vec::with_capacity(a.gt.len());
    for (g, h) in a.gt.iter().zip(&a.hyp) {
        let gt = parse_ground_truth(g).map_err(data)?;
        let hyp = parse_results(h).map_err(data)?;
        let name = sequence_name(g);
        let r: EvalReport = evaluate(&gt, &hyp, cfg.iou_threshold).with_context(|| format!("sequence {name}")).map_err(data)?;
        reports.push((name, r));
    }
    print!("{}", report::text_table(&reports));
    if let Some(out) = &a.out {
        write_text(out, &report::csv(&reports)).map_err(data)?;
    }
    Ok(())
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<(), Failure> {
    let cfg = a.overrides.resolve()?;
    if a.m == 0 || a.n == 0 {
        return Err(Failure::Usage("--m and --n must be positive".into()));
    }
    let mut gc = cfg.gradcheck(a.m, a.n);
    gc.corrupt_gradient = a.corrupt_gradient;
    let r = gradcheck(&gc).map_err(train_failure)?;
    println!(
        "max relative error {:.3e} at {}[{}] over {} values (tolerance {:e})",
        r.max_rel_error, r.worst_tensor, r.worst_index, r.checked, r.tolerance
    );
    if r.passed() {
        println!("PASS");
        Ok(())
    } else {
        println!("FAIL");
        Err(Failure::Invariant(anyhow!("gradient check failed: {:.3e} >= {:e}", r.max_rel_error, r.tolerance)))
    }
}

/// Parses an augmented score matrix; `-inf` marks a forbidden cell.
pub fn parse_matrix(text: &str) -> Result<Matrix, crate::error::ParseError> {
    use crate::error::ParseError;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| match s {
                "-inf" => Ok(FORBIDDEN),
                _ => s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| ParseError::new(i + 1, format!("bad score {s:?}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(ParseError::new(i + 1, format!("expected {} values, found {}", first.len(), row.len())));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(ParseError::new(1, "empty matrix"));
    }
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    Ok(Matrix::from_rows(&refs))
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn cmd_sinkhorn_demo(a: &SinkhornArgs) -> Result<(), Failure> {
    let defaults = RunConfig::default();
    let l = a.l.unwrap_or(defaults.l);
    let iters = a.iters.unwrap_or(defaults.iters);
    if !(l > 0.0) || iters == 0 {
        return Err(Failure::Usage("l must be positive and iters at least 1".into()));
    }
    let text = read_text(&a.matrix).map_err(data)?;
    let scores = parse_matrix(&text).map_err(|e| data(crate::error::DataError::parse(&a.matrix, e)))?;
    let s = AffinityMatrix::from_augmented(scores)
        .ok_or_else(|| data(anyhow!("{}: slack row and column must be finite", a.matrix.display())))?;
    let out = assoc::sinkhorn(&s, l, iters).map_err(|e| {
        if e.is_invariant_violation() { Failure::Invariant(e.into()) } else { Failure::Data(e.into()) }
    })?;
    let (m, n) = (out.m(), out.n());
    println!("s_star ({}x{}, l = {l}, iters = {iters}):", m + 1, n + 1);
    for i in 0..=m {
        println!("{}", join(out.s_star.row(i)));
    }
    println!("row_sums: {}", join(&out.row_marginals));
    println!("row_targets: {}", join(&assoc::row_targets(m, n)));
    println!("col_sums: {}", join(&out.col_marginals));
    println!("col_targets: {}", join(&assoc::col_targets(m, n)));
    let (re, ce) = out.marginal_errors();
    println!("max_row_error: {re:e}");
    println!("max_col_error: {ce:e}");
    Ok(())
}

pub fn dispatch(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Track(a) => cmd_track(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::SinkhornDemo(a) => cmd_sinkhorn_demo(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn help_lists_defaults() {
        let mut cmd = Cli::command();
        let help = cmd.find_subcommand_mut("track").unwrap().render_long_help().to_string();
        for flag in ["--config", "--params", "--detections", "--embeddings", "--out", "--seed", "--frames-wh", "--l ", "--iters", "--s-slack", "--s-thres", "--gate-px", "--w ", "--lr", "--lookback", "--layers"] {
            assert!(help.contains(flag), "{flag} missing from help");
        }
        for default in ["[default: 5]", "[default: 8]", "[default: 0.2]", "[default: 200]", "[default: 10]", "[default: 0.002]", "[default: 45]", "[default: 2]"] {
            assert!(help.contains(default), "{default} missing from help");
        }
    }

    #[test]
    fn unknown_flags_are_usage_errors() {
        assert_eq!(run(["sinkmot", "gradcheck", "--bogus"]), 1);
        assert_eq!(run(["sinkmot", "nope"]), 1);
        assert_eq!(run(["sinkmot", "--help"]), 0);
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        std::fs::write(&p, "l = 20\niters = 100\n").unwrap();
        let o = Overrides { config: Some(p), iters: Some(3), ..Overrides::default() };
        let cfg = o.resolve().unwrap();
        assert_eq!((cfg.l, cfg.iters), (20.0, 3));
        let bad = Overrides { l: Some(-1.0), ..Overrides::default() };
        assert_eq!(bad.resolve().unwrap_err().exit_code(), 1);
    }

    #[test]
    fn sequence_names() {
        assert_eq!(sequence_name(Path::new("data/MOT17-02/det/det.txt")), "MOT17-02");
        assert_eq!(sequence_name(Path::new("x/toy.txt")), "toy");
    }

    #[test]
    fn matrix_parsing() {
        let m = parse_matrix("# demo\n0.5, -inf 0.2\n0.1 0.3 0.2\n0.2,0.2,0.2\n").unwrap();
        assert_eq!(m.shape(), (3, 3));
        assert_eq!(m[(0, 1)], FORBIDDEN);
        assert_eq!(parse_matrix("1 2\n3\n").unwrap_err().line, 2);
        assert!(parse_matrix("1 inf\n").is_err());
    }
}
