use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use dirwrap::blackbox::{
    accuracy, load_predictions, save_predictions, train_simulated_blackbox, BlackBoxSource, BlackBoxTrainConfig,
    PredictionStore, Query, RemoteClient, SimulatedBlackBox,
};
use dirwrap::corpus::{generate_shift_scenario, load_dataset, save_dataset, EmbeddingTable, Example, Featurizer, ShiftScenario};
use dirwrap::gradcheck::{wrapper_gradcheck, GradCheckConfig};
use dirwrap::rejection::{default_fraction_grid, sweep_curve, ScoredOutcome};
use dirwrap::report::{
    load_curve_csv, render_curves_svg, summary_table, write_curve_csv, write_curves_csv, CurveBundle, Panel,
    SUMMARY_FRACTIONS,
};
use dirwrap::uncertainty::{baseline_entropy, score_dataset, write_scores_csv, ScoreRecord, UncertaintyScore};
use dirwrap::wrapper::{train_wrapper, TrainConfig, TrainingExample, WrapperModel};

use crate::{
    BbPredictArgs, BbTrainArgs, Cli, Command, FeatureArgs, GradcheckArgs, RejectArgs, ReportArgs, ScoreArgs,
    SynthArgs, WrapTrainArgs, DEFAULT_SEED,
};

struct Ctx<'a> {
    cli: &'a Cli,
}

impl Ctx<'_> {
    fn seed(&self) -> u64 {
        self.cli.seed.unwrap_or(DEFAULT_SEED)
    }

    fn output(&self, p: &Path) -> PathBuf {
        match &self.cli.out_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let ctx = Ctx { cli };
    match &cli.command {
        Command::Synth(a) => synth(&ctx, a),
        Command::BbTrain(a) => bb_train(&ctx, a),
        Command::BbPredict(a) => bb_predict(&ctx, a),
        Command::WrapTrain(a) => wrap_train(&ctx, a),
        Command::Score(a) => score(&ctx, a),
        Command::Reject(a) => reject(&ctx, a),
        Command::Report(a) => report(&ctx, a),
        Command::Gradcheck(a) => gradcheck(&ctx, a),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn load(path: &Path) -> Result<Vec<Example>> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn featurizer(args: &FeatureArgs, data: &[Example]) -> Result<Featurizer> {
    match &args.embeddings {
        Some(p) => Ok(Featurizer::Embedding(
            EmbeddingTable::load(p).with_context(|| format!("loading embeddings {}", p.display()))?,
        )),
        None => {
            if args.hash_dim == 0 {
                bail!("--hash-dim must be positive");
            }
            Ok(Featurizer::auto(data, args.hash_dim))
        }
    }
}

fn featurize_all(args: &FeatureArgs, data: &[Example]) -> Result<Vec<Vec<f64>>> {
    let f = featurizer(args, data)?;
    data.iter().map(|e| f.featurize(e).map_err(Into::into)).collect()
}

fn labelled(args: &FeatureArgs, data: &[Example]) -> Result<Vec<(Vec<f64>, usize)>> {
    Ok(featurize_all(args, data)?
        .into_iter()
        .zip(data)
        .map(|(x, e)| (x, e.label))
        .collect())
}

#[derive(Serialize)]
struct Manifest {
    scenario: ShiftScenario,
    files: BTreeMap<String, FileEntry>,
}

#[derive(Serialize)]
struct FileEntry {
    path: String,
    examples: usize,
}

fn synth(ctx: &Ctx, a: &SynthArgs) -> Result<()> {
    let scenario = ShiftScenario {
        n_source: a.n_source,
        n_target: a.n_target,
        dim: a.dim,
        class_separation: a.separation,
        shift_rotation_degrees: a.rotation,
        shift_translation: a.translation,
        noise_flip_rate: a.flip,
        seed: ctx.seed(),
    };
    let data = generate_shift_scenario(&scenario)?;
    let dir = ctx.output(&a.out);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut files = BTreeMap::new();
    for (domain, splits) in [("source", &data.source), ("target", &data.target)] {
        for (name, part) in [("train", &splits.train), ("validation", &splits.validation), ("test", &splits.test)] {
            let file = format!("{domain}_{name}.jsonl");
            save_dataset(part, &dir.join(&file))?;
            println!("wrote {} ({} examples)", dir.join(&file).display(), part.len());
            files.insert(
                format!("{domain}_{name}"),
                FileEntry {
                    path: file,
                    examples: part.len(),
                },
            );
        }
    }
    let manifest = Manifest { scenario, files };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn bb_train(ctx: &Ctx, a: &BbTrainArgs) -> Result<()> {
    let train = load(&a.data)?;
    let train_xy = labelled(&a.features, &train)?;
    let val_xy = match &a.validation {
        Some(p) => labelled(&a.features, &load(p)?)?,
        None => Vec::new(),
    };
    let config = BlackBoxTrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        lr: a.lr,
        seed: ctx.seed(),
        hidden: a.hidden.clone(),
    };
    log::info!("bb-train: {config:?}");
    let (bb, report) = train_simulated_blackbox(&train_xy, &val_xy, &config)?;
    let out = ctx.output(&a.out);
    ensure_parent(&out)?;
    bb.save(&out)?;
    println!("source train accuracy: {:.4}", report.train_accuracy);
    if let Some(v) = report.validation_accuracy {
        println!("source validation accuracy: {v:.4}");
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn bb_predict(ctx: &Ctx, a: &BbPredictArgs) -> Result<()> {
    let data = load(&a.data)?;
    let features = featurize_all(&a.features, &data)?;
    let source = match (&a.model, &a.endpoint) {
        (Some(m), None) => BlackBoxSource::Simulated(SimulatedBlackBox::load(m)?),
        (None, Some(url)) => BlackBoxSource::Remote(RemoteClient::new(url, Duration::from_millis(a.timeout_ms))),
        _ => bail!("exactly one of --model and --endpoint is required"),
    };
    let queries: Vec<Query> = data
        .iter()
        .zip(&features)
        .map(|(e, x)| Query {
            example_id: &e.example_id,
            features: x,
        })
        .collect();
    let records = source.batch_predict(&queries)?;
    let out = ctx.output(&a.out);
    ensure_parent(&out)?;
    save_predictions(&records, &out)?;
    let labels: Vec<usize> = data.iter().map(|e| e.label).collect();
    if !records.is_empty() {
        println!("accuracy on {}: {:.4}", a.data.display(), accuracy(&records, &labels)?);
    }
    println!("wrote {} ({} predictions)", out.display(), records.len());
    Ok(())
}

fn trace_path(model: &Path) -> PathBuf {
    let stem = model.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    model.with_file_name(format!("{stem}.loss.csv"))
}

fn wrap_train(ctx: &Ctx, a: &WrapTrainArgs) -> Result<()> {
    let data = load(&a.data)?;
    let store = PredictionStore::new(load_predictions(&a.preds)?)?;
    let features = featurize_all(&a.features, &data)?;
    let examples = data
        .iter()
        .zip(features)
        .map(|(e, x)| TrainingExample::new(e.example_id.clone(), x, e.label, store.get(&e.example_id)?.clone()))
        .collect::<dirwrap::Result<Vec<_>>>()?;
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        lr: a.lr,
        m_train: a.samples,
        lambda: a.lambda,
        seed: ctx.seed(),
        ..TrainConfig::default()
    };
    println!(
        "wrap-train: epochs={} lr={} batch={} lambda={} samples={} seed={}",
        config.epochs, config.lr, config.batch_size, config.lambda, config.m_train, config.seed
    );
    let outcome = train_wrapper(&examples, &config)?;
    let out = ctx.output(&a.out);
    ensure_parent(&out)?;
    outcome.model.save(&out)?;
    let trace = a.trace.as_ref().map(|t| ctx.output(t)).unwrap_or_else(|| trace_path(&out));
    ensure_parent(&trace)?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in outcome.loss_trace.iter().enumerate() {
        let _ = writeln!(csv, "{},{}", i + 1, l);
    }
    fs::write(&trace, csv).with_context(|| format!("writing {}", trace.display()))?;
    if let (Some(first), Some(last)) = (outcome.loss_trace.first(), outcome.loss_trace.last()) {
        println!("loss: epoch 1 {first:.6}, epoch {} {last:.6}", outcome.loss_trace.len());
    }
    println!("wrote {} and {}", out.display(), trace.display());
    Ok(())
}

fn score(ctx: &Ctx, a: &ScoreArgs) -> Result<()> {
    let data = load(&a.data)?;
    let store = PredictionStore::new(load_predictions(&a.preds)?)?;
    let ys = data
        .iter()
        .map(|e| store.get(&e.example_id).cloned())
        .collect::<dirwrap::Result<Vec<_>>>()?;
    let scores: Vec<UncertaintyScore> = match &a.wrapper {
        Some(path) if a.method.uses_wrapper() => {
            let model = WrapperModel::load(path)?;
            let features = featurize_all(&a.features, &data)?;
            let enriched = features
                .iter()
                .zip(&ys)
                .map(|(x, y)| model.enrich(x, y))
                .collect::<dirwrap::Result<Vec<_>>>()?;
            let ids: Vec<String> = data.iter().map(|e| e.example_id.clone()).collect();
            score_dataset(&ids, &enriched, a.method, a.samples, ctx.seed())?
        }
        None if a.method.uses_wrapper() => bail!("--method {} needs --wrapper", a.method),
        // the black-box entropy needs neither features nor a wrapper
        _ => data
            .iter()
            .zip(&ys)
            .map(|(e, y)| UncertaintyScore {
                example_id: e.example_id.clone(),
                method: a.method,
                value: baseline_entropy(y),
                m_used: 0,
            })
            .collect(),
    };
    let records: Vec<ScoreRecord> = scores
        .iter()
        .zip(&ys)
        .zip(&data)
        .map(|((s, y), e)| ScoreRecord::new(s, y, e.label))
        .collect();
    let out = ctx.output(&a.out);
    ensure_parent(&out)?;
    write_scores_csv(&records, &out)?;
    println!("wrote {} ({} scores, method {})", out.display(), records.len(), a.method);
    Ok(())
}

fn reject(ctx: &Ctx, a: &RejectArgs) -> Result<()> {
    let records = dirwrap::uncertainty::read_scores_csv(&a.scores)?;
    let scored: Vec<ScoredOutcome> = records.iter().map(|r| ScoredOutcome::new(r.score, r.correct)).collect();
    let grid = a.fractions.clone().unwrap_or_else(default_fraction_grid);
    let curve = sweep_curve(&scored, &grid)?;
    let out = ctx.output(&a.out);
    ensure_parent(&out)?;
    write_curve_csv(&curve, &out)?;
    for p in curve
        .iter()
        .filter(|p| [0.0, 0.1, 0.2, 0.3].iter().any(|f| (p.rejected_fraction - f).abs() < 1e-9))
    {
        println!(
            "rejected {:>3.0}%: nra {:.4} cq {:.4} rq {}",
            100.0 * p.rejected_fraction,
            p.nra,
            p.cq,
            p.rq
        );
    }
    println!("wrote {} ({} points)", out.display(), curve.len());
    Ok(())
}

fn curve_spec(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((label, path)) if !label.is_empty() => (label.to_string(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(spec);
            let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            (label, path)
        }
    }
}

fn report(ctx: &Ctx, a: &ReportArgs) -> Result<()> {
    let mut bundle = CurveBundle::new(&a.dataset);
    for spec in &a.curves {
        let (label, path) = curve_spec(spec);
        let rows = load_curve_csv(&path).with_context(|| format!("loading curve {}", path.display()))?;
        bundle.push_rows(label, rows)?;
    }
    let dir = ctx.output(&a.out);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_curves_csv(&bundle, &dir.join("curves.csv"))?;
    for panel in Panel::ALL {
        render_curves_svg(&bundle, panel, &dir.join(format!("{}.svg", panel.tag())))?;
    }
    let table = summary_table(&bundle, &SUMMARY_FRACTIONS)?;
    let summary = dir.join("summary.txt");
    fs::write(&summary, &table).with_context(|| format!("writing {}", summary.display()))?;
    print!("{table}");
    println!("wrote curves.csv, nra.svg, cq.svg, rq.svg, summary.txt to {}", dir.display());
    Ok(())
}

fn gradcheck(ctx: &Ctx, a: &GradcheckArgs) -> Result<()> {
    let cfg = GradCheckConfig {
        items: a.items,
        classes: a.classes,
        samples: a.samples,
        step: a.step,
        seed: ctx.seed(),
        ..GradCheckConfig::default()
    };
    let r = wrapper_gradcheck(&cfg)?;
    println!(
        "checked {} parameters: loss {:.6}, max relative error {:.3e} (parameter {})",
        r.parameters - r.at_kink.len(),
        r.loss,
        r.max_relative_error,
        r.worst_parameter
    );
    if !r.at_kink.is_empty() {
        println!("skipped {} parameters whose step crosses a ReLU kink or the beta floor", r.at_kink.len());
    }
    if !(r.max_relative_error < a.tolerance) {
        bail!("gradient check failed: {:.3e} >= {:.3e}", r.max_relative_error, a.tolerance);
    }
    println!("gradient check passed (tolerance {:.1e})", a.tolerance);
    Ok(())
}
