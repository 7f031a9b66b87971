//! Subcommand implementations. Every command checks its inputs before it
//! writes anything.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use stfgcn_core::datastore::{Dataset, Manifest};
use stfgcn_core::encoder::InputMode;
use stfgcn_core::graph::{export_graph, Adjacency, AdjacencyMethod};
use stfgcn_core::sigsynth::{synthesize_dataset, DatasetSpec, Modulation, Preset};
use stfgcn_core::stfgcn::{read_checkpoint, write_checkpoint, Model, ModelConfig, PoolGatVariant};
use stfgcn_core::training::{
    evaluate, examples, report_text, split, train, write_history, write_report, MetricsReport, Split, TrainOutcome,
};

use crate::config::{usage, RunConfig};
use crate::plot::{csv_columns, line_chart, Series};
use crate::{
    AblateArgs, Command, ConvertCheckArgs, EvalArgs, ExportGraphArgs, PlotArgs, RunArgs, SynthArgs, TrainArgs,
};

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(&a),
        Command::ConvertCheck(a) => convert_check(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Eval(a) => eval(&a),
        Command::Ablate(a) => ablate(&a),
        Command::ExportGraph(a) => export(&a),
        Command::Plot(a) => plot(&a),
    }
}

/// Mirrors progress lines to stderr and, once opened, to `run.log`.
struct RunLog {
    file: Option<File>,
}

impl RunLog {
    fn stderr() -> Self {
        Self { file: None }
    }

    fn open(&mut self, path: &Path) -> Result<()> {
        self.file = Some(File::create(path).with_context(|| format!("creating {}", path.display()))?);
        Ok(())
    }

    fn line(&mut self, msg: impl AsRef<str>) {
        let msg = msg.as_ref();
        eprintln!("{msg}");
        if let Some(f) = &mut self.file {
            let _ = writeln!(f, "{msg}");
        }
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(usage(format!("{what} `{}` does not exist", path.display())));
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Reads a dataset and its label names. Without a manifest, labels are the
/// class indices.
fn load_dataset(path: &Path) -> Result<(Dataset, Vec<String>)> {
    require_file(path, "dataset")?;
    let ds = Dataset::read(path).with_context(|| format!("reading {}", path.display()))?;
    let labels = if Manifest::path_for(path).is_file() {
        let m = Manifest::read(path)?;
        if m.labels.len() != ds.n_classes {
            anyhow::bail!("manifest lists {} labels but the dataset declares {} classes", m.labels.len(), ds.n_classes);
        }
        m.labels
    } else {
        (0..ds.n_classes).map(|k| k.to_string()).collect()
    };
    Ok((ds, labels))
}

fn parse_snrs(s: &str) -> Result<Vec<i32>> {
    let bad = || usage(format!("bad SNR list `{s}`: use `a,b,c` or `lo:hi:step`"));
    if let Some((lo, rest)) = s.split_once(':') {
        let (hi, step) = rest.split_once(':').unwrap_or((rest, "2"));
        let [lo, hi, step]: [i32; 3] = [lo, hi, step]
            .map(|v| v.trim().parse::<i32>())
            .into_iter()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad())?
            .try_into()
            .map_err(|_| bad())?;
        if step <= 0 || hi < lo {
            return Err(bad());
        }
        return Ok((lo..=hi).step_by(step as usize).collect());
    }
    s.split(',').map(|v| v.trim().parse().map_err(|_| bad())).collect()
}

fn parse_ratios(s: &str) -> Result<[f64; 3]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage(format!("bad split `{s}`")))?;
    v.try_into().map_err(|_| usage(format!("split `{s}` needs three ratios")))
}

fn synth(a: &SynthArgs) -> Result<()> {
    let preset = Preset::by_name(&a.preset).map_err(|e| usage(e.to_string()))?;
    let schemes = match &a.schemes {
        Some(names) => names
            .iter()
            .map(|n| n.parse::<Modulation>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| usage(e.to_string()))?,
        None => preset.schemes.clone(),
    };
    let snrs = match &a.snrs {
        Some(s) => parse_snrs(s)?,
        None => preset.snrs.clone(),
    };
    let spec = DatasetSpec {
        schemes,
        snrs,
        per_cell: a.per_cell,
        channel: preset.channel,
        samples_per_symbol: a.samples_per_symbol.unwrap_or(preset.samples_per_symbol),
        gamma: a.gamma,
        seed: a.seed,
        preset: preset.name.to_string(),
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let ds = synthesize_dataset(&spec, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!(
        "wrote {} records ({} classes x {} SNRs x {} per cell, frame length {}) to {}",
        ds.len(),
        spec.schemes.len(),
        spec.snrs.len(),
        spec.per_cell,
        spec.gamma,
        a.out.display()
    );
    Ok(())
}

fn census(ds: &Dataset, labels: &[String]) -> String {
    let mut per_label = vec![0usize; ds.n_classes];
    let mut per_snr = std::collections::BTreeMap::<i16, usize>::new();
    for r in &ds.records {
        per_label[usize::from(r.label)] += 1;
        *per_snr.entry(r.snr_db).or_default() += 1;
    }
    let mut out = format!("records: {}\nframe_length: {}\nclasses: {}\n", ds.len(), ds.gamma, ds.n_classes);
    for (name, n) in labels.iter().zip(&per_label) {
        let _ = writeln!(out, "  {name}: {n}");
    }
    let _ = writeln!(out, "snrs: {}", per_snr.len());
    for (snr, n) in &per_snr {
        let _ = writeln!(out, "  {snr:>4} dB: {n}");
    }
    out
}

fn convert_check(a: &ConvertCheckArgs) -> Result<()> {
    let (ds, labels) = load_dataset(&a.dataset)?;
    if let Some(g) = Manifest::read(&a.dataset).ok().and_then(|m| m.get("gamma").map(str::to_string)) {
        if g != ds.gamma.to_string() {
            anyhow::bail!("manifest records gamma={g} but the dataset frames have length {}", ds.gamma);
        }
    }
    print!("{}", census(&ds, &labels));
    Ok(())
}

/// Config, dataset and split for a training command, fully validated.
struct Prepared {
    cfg: RunConfig,
    ds: Dataset,
    labels: Vec<String>,
    split: Split,
}

fn prepare(run: &RunArgs) -> Result<Prepared> {
    let mut cfg = RunConfig::load(run.config.as_deref(), &run.overrides)?;
    if let Some(d) = &run.dataset {
        cfg.dataset = Some(d.clone());
    }
    if let Some(o) = &run.out {
        cfg.out_dir = o.clone();
    }
    if let Some(s) = run.seed {
        cfg.train.seed = s;
    }
    let path = cfg.dataset.clone().ok_or_else(|| usage("no dataset given (use --dataset or [data] dataset)"))?;
    let (ds, labels) = load_dataset(&path)?;
    if ds.gamma != cfg.model.gamma {
        return Err(usage(format!(
            "dataset frame length {} does not match model.gamma = {}",
            ds.gamma, cfg.model.gamma
        )));
    }
    cfg.model.n_classes = ds.n_classes;
    cfg.validate()?;
    let split = split(&ds, cfg.train.split, cfg.train.seed).map_err(|e| usage(e.to_string()))?;
    Ok(Prepared { cfg, ds, labels, split })
}

struct RunResult {
    model: Model,
    outcome: TrainOutcome,
    report: MetricsReport,
}

fn train_and_test(p: &Prepared, model_cfg: ModelConfig, log: &mut RunLog) -> Result<RunResult> {
    let tr = examples(&p.ds, &p.split.train);
    let va = examples(&p.ds, &p.split.val);
    let te = examples(&p.ds, &p.split.test);
    let mut model = Model::new(model_cfg, p.cfg.train.seed)?;
    log.line(format!(
        "model: {} parameters, nodes {:?}; split train/val/test = {}/{}/{}",
        model.num_params(),
        model.config().node_trace(),
        tr.len(),
        va.len(),
        te.len()
    ));
    let outcome = train(&mut model, &tr, &va, &p.cfg.train, |r| {
        log.line(format!(
            "epoch {:>3}  train_loss {:.5}  val_loss {:.5}  val_acc {:.4}  lr {:.2e}",
            r.epoch, r.train_loss, r.val_loss, r.val_acc, r.lr
        ))
    })?;
    log.line(format!(
        "best epoch {} of {}{}",
        outcome.best_epoch,
        outcome.history.len(),
        if outcome.stopped_early { " (early stop)" } else { "" }
    ));
    let report = evaluate(&model, &te, p.cfg.eval_batch)?;
    Ok(RunResult { model, outcome, report })
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let p = prepare(&a.run)?;
    let out = p.cfg.out_dir.clone();
    create_dir(&out)?;
    let mut log = RunLog::stderr();
    log.open(&out.join("run.log"))?;
    if a.run.deterministic {
        log.line("deterministic: serial execution");
    }
    log.line("effective configuration:");
    for l in p.cfg.to_text().lines() {
        log.line(format!("  {l}"));
    }
    fs::write(out.join("config.ini"), p.cfg.to_text())?;
    let r = train_and_test(&p, p.cfg.model.clone(), &mut log)?;
    write_history(&out.join("history.csv"), &r.outcome.history)?;
    write_checkpoint(&r.model, &out.join("checkpoint.stfw"))?;
    write_report(&out.join("test"), &r.report, &p.labels)?;
    log.line(format!(
        "test accuracy {:.4}, macro-F1 {:.4}, kappa {:.4}",
        r.report.overall_acc, r.report.macro_f1, r.report.kappa
    ));
    log.line(format!("outputs in {}", out.display()));
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    require_file(&a.checkpoint, "checkpoint")?;
    let (ds, labels) = load_dataset(&a.dataset)?;
    let ratios = parse_ratios(&a.split)?;
    if a.batch == 0 {
        return Err(usage("--batch must be positive"));
    }
    let model = read_checkpoint(&a.checkpoint)?;
    let mc = model.config();
    if mc.gamma != ds.gamma || mc.n_classes != ds.n_classes {
        return Err(usage(format!(
            "checkpoint expects frame length {} and {} classes; dataset has {} and {}",
            mc.gamma, mc.n_classes, ds.gamma, ds.n_classes
        )));
    }
    let indices: Vec<usize> = match a.subset.as_str() {
        "test" => split(&ds, ratios, a.seed).map_err(|e| usage(e.to_string()))?.test,
        "all" => (0..ds.len()).collect(),
        other => return Err(usage(format!("unknown subset `{other}` (expected test or all)"))),
    };
    let report = evaluate(&model, &examples(&ds, &indices), a.batch)?;
    write_report(&a.out, &report, &labels)?;
    if a.plot {
        let pts: Vec<(f64, f64)> = report.per_snr_acc().into_iter().map(|(s, acc)| (f64::from(s), acc)).collect();
        let svg = line_chart(
            "Accuracy vs SNR",
            "SNR (dB)",
            "accuracy",
            &[Series { name: "overall", points: pts }],
            Some((0.0, 1.0)),
        );
        fs::write(a.out.join("accuracy_vs_snr.svg"), svg)?;
    }
    print!("{}", report_text(&report, &labels));
    Ok(())
}

/// One ablation run: the sweep it belongs to, its label and its model.
type Variant = (&'static str, String, ModelConfig);

fn ablation_variants(a: &AblateArgs, base: &ModelConfig) -> Result<Vec<Variant>> {
    let mut out: Vec<Variant> = Vec::new();
    let bad = |e: String| usage(e);
    for &tau in &a.tau {
        out.push(("tau", tau.to_string(), ModelConfig { tau, ..base.clone() }));
    }
    for name in &a.adjacency {
        let adjacency: AdjacencyMethod = name.parse().map_err(bad)?;
        out.push(("adjacency", name.clone(), ModelConfig { adjacency, ..base.clone() }));
    }
    for name in &a.poolgat {
        let variant: PoolGatVariant = name.parse().map_err(bad)?;
        out.push(("poolgat", name.clone(), ModelConfig { variant, ..base.clone() }));
    }
    for name in &a.inputs {
        let inputs: InputMode = name.parse().map_err(bad)?;
        out.push(("inputs", name.clone(), ModelConfig { inputs, ..base.clone() }));
    }
    if out.is_empty() {
        return Err(usage("no sweep requested: give --tau, --adjacency, --poolgat or --inputs"));
    }
    for (sweep, label, cfg) in &out {
        cfg.validate().map_err(|e| usage(format!("{sweep}={label}: {e}")))?;
    }
    Ok(out)
}

pub const ABLATION_HEADER: &str = "sweep,variant,test_accuracy,macro_f1,kappa,params,best_epoch,epochs";

fn ablate(a: &AblateArgs) -> Result<()> {
    let p = prepare(&a.run)?;
    let variants = ablation_variants(a, &p.cfg.model)?;
    let out = p.cfg.out_dir.clone();
    create_dir(&out)?;
    let mut log = RunLog::stderr();
    log.open(&out.join("run.log"))?;
    log.line("base configuration:");
    for l in p.cfg.to_text().lines() {
        log.line(format!("  {l}"));
    }
    let mut csv = format!("{ABLATION_HEADER}\n");
    for (sweep, label, cfg) in variants {
        log.line(format!("== {sweep} = {label}"));
        let r = train_and_test(&p, cfg, &mut log)?;
        write_history(&out.join(format!("history_{sweep}_{label}.csv")), &r.outcome.history)?;
        let row = format!(
            "{sweep},{label},{},{},{},{},{},{}",
            r.report.overall_acc,
            r.report.macro_f1,
            r.report.kappa,
            r.model.num_params(),
            r.outcome.best_epoch,
            r.outcome.history.len()
        );
        log.line(&row);
        csv.push_str(&row);
        csv.push('\n');
        // Rewritten after every run so a long sweep leaves partial results.
        fs::write(out.join("ablation.csv"), &csv)?;
    }
    print!("{csv}");
    Ok(())
}

fn parse_stage(s: &str) -> Result<usize> {
    if s == "initial" {
        return Ok(0);
    }
    s.strip_prefix("pool")
        .and_then(|k| k.parse::<usize>().ok())
        .filter(|&k| k >= 1)
        .ok_or_else(|| usage(format!("unknown stage `{s}` (expected initial or poolK)")))
}

fn export(a: &ExportGraphArgs) -> Result<()> {
    let stage = parse_stage(&a.stage)?;
    require_file(&a.checkpoint, "checkpoint")?;
    let (ds, _) = load_dataset(&a.dataset)?;
    let model = read_checkpoint(&a.checkpoint)?;
    let mc = model.config();
    if stage > mc.psi {
        return Err(usage(format!("stage pool{stage} requested but the model has {} PoolGAT layers", mc.psi)));
    }
    if mc.gamma != ds.gamma {
        return Err(usage(format!("checkpoint expects frame length {}, dataset has {}", mc.gamma, ds.gamma)));
    }
    let rec = ds
        .records
        .get(a.index)
        .ok_or_else(|| usage(format!("index {} out of range ({} records)", a.index, ds.len())))?;
    let (i, q): (Vec<f64>, Vec<f64>) =
        (rec.i.iter().map(|&v| f64::from(v)).collect(), rec.q.iter().map(|&v| f64::from(v)).collect());
    let stages = model.graph_stages(&i, &q)?;
    let (x, adj) = &stages[stage];
    let n = x.shape()[0];
    let band = if stage == 0 && mc.adjacency == AdjacencyMethod::Correlation { mc.tau } else { n.saturating_sub(1) };
    let adj = Adjacency::from_dense(n, band, adj.data().to_vec());
    let edges = export_graph(&a.out, x, &adj, a.threshold)?;
    eprintln!("stage {}: {n} nodes, {edges} edges written to {}", a.stage, a.out.display());
    Ok(())
}

fn plot(a: &PlotArgs) -> Result<()> {
    require_file(&a.input, "input CSV")?;
    let text = fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let series =
        a.y.iter()
            .map(|y| Ok(Series { name: y, points: csv_columns(&text, &a.x, y).map_err(usage)? }))
            .collect::<Result<Vec<_>>>()?;
    let title = if a.title.is_empty() { a.y.join(", ") } else { a.title.clone() };
    let svg = line_chart(&title, &a.x, &a.y.join(", "), &series, None);
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(&a.out, svg).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snr_lists_and_ranges() {
        assert_eq!(parse_snrs("-4,0,4").unwrap(), vec![-4, 0, 4]);
        assert_eq!(parse_snrs("-20:18:2").unwrap().len(), 20);
        assert_eq!(parse_snrs("10:18:8").unwrap(), vec![10, 18]);
        assert!(parse_snrs("4:0:2").is_err());
        assert!(parse_snrs("a,b").is_err());
    }

    #[test]
    fn stages_parse() {
        assert_eq!(parse_stage("initial").unwrap(), 0);
        assert_eq!(parse_stage("pool1").unwrap(), 1);
        assert!(parse_stage("pool0").is_err());
        assert!(parse_stage("final").is_err());
    }

    #[test]
    fn ratios_parse() {
        assert_eq!(parse_ratios("0.6,0.2,0.2").unwrap(), [0.6, 0.2, 0.2]);
        assert!(parse_ratios("0.6,0.4").is_err());
    }
}
