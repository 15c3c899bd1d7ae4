use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;

use super::config::{Aggregator, Baseline, EquivalenceKind, Normalization, ReportFormat, RunConfig, ScorerKind};
use super::{existing, required, usage, CliError, GradcheckArgs, SynthArgs};
use crate::data::{self, QuestionSample};
use crate::lars::{self, fit_partition, gradcheck, LarsModel, TrainOptions};
use crate::metrics::{self, EvalReport};
use crate::oracle::{EquivalenceOracle, ExactMatch, HttpEntailment, NeverEquivalent, RougeL, RougeThreshold};
use crate::scoring::{
    ExternalWeightsScorer, LengthNormalizedScorer, RelevanceWeightedScorer, Scorer, SequenceProbScorer,
    WeightNormalization,
};
use crate::synth::synthesize;
use crate::ue::{self, Clustering, SimilarityMatrix, UeScore};

type CmdResult = Result<(), CliError>;

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn load_samples(config: &RunConfig) -> Result<Vec<QuestionSample>, CliError> {
    let path = existing(&config.paths.data, "data file")?;
    let loaded = data::load_samples(&path, config.data.strict)?;
    for (line, why) in &loaded.skipped {
        eprintln!("skipped line {line}: {why}");
    }
    Ok(loaded.samples)
}

pub fn synth(config: &RunConfig, args: &SynthArgs) -> CmdResult {
    let out = required(&config.paths.out, "output file")?;
    let samples = synthesize(args.task, args.questions, args.generations, config.seed)?;
    data::write_samples(&out, &samples)?;
    println!("samples: {}", samples.len());
    println!("generations: {}", samples.iter().map(|s| s.generations().len()).sum::<usize>());
    Ok(())
}

pub fn build_calib(config: &RunConfig) -> CmdResult {
    let out = required(&config.paths.out, "output file")?;
    let samples = load_samples(config)?;
    let examples = data::build_calibration_set(&samples, config.data.dedup)?;
    data::write_calibration(&out, &examples)?;
    let positives = examples.iter().filter(|e| e.label == 1).count();
    println!("samples: {}", samples.len());
    println!("examples: {}", examples.len());
    println!("correct: {positives}");
    Ok(())
}

pub fn train(config: &RunConfig) -> CmdResult {
    let calib_path = existing(&config.paths.calib, "calibration file")?;
    let out_dir = required(&config.paths.out, "output directory")?;
    config.lars.validate().map_err(|e| usage(e.to_string()))?;
    if config.train.batch_size == 0 {
        return Err(usage("batch_size must be positive"));
    }

    let calibration = data::load_calibration(&calib_path)?;
    let (train_set, holdout) = data::split_calibration(&calibration, config.data.holdout_fraction, config.seed)?;
    let partition = fit_partition(&train_set, config.lars.k, config.lars.d)?;
    let model = LarsModel::new(config.lars.clone(), partition)?;
    let options = TrainOptions {
        optimizer: config.train.optimizer(),
        epochs: config.train.epochs,
        batch_size: config.train.batch_size,
        seed: config.seed,
    };
    println!(
        "train: {} examples, holdout: {}, parameters: {}",
        train_set.len(),
        holdout.len(),
        model.params.num_parameters()
    );
    let (model, history) = lars::train(model, &train_set, &holdout, &options)?;

    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    lars::save_model(&model, out_dir.join("model.lars"))?;
    let mut metrics_file = create(&out_dir.join("metrics.csv"))?;
    lars::train::write_metrics_csv(&mut metrics_file, &history)?;
    metrics_file.flush()?;
    fs::write(
        out_dir.join("config.toml"),
        format!("# fingerprint: {}\n{}", config.fingerprint(), config.to_toml()),
    )
    .with_context(|| format!("writing config to {}", out_dir.display()))?;

    for m in &history {
        println!(
            "epoch {:>3}  train_loss {:.6}  holdout_loss {}  holdout_auroc {}",
            m.epoch,
            m.train_loss,
            m.holdout_loss.map_or("-".into(), |x| format!("{x:.6}")),
            m.holdout_auroc.map_or("-".into(), |x| format!("{x:.4}")),
        );
    }
    if let Some(a) = history.last().and_then(|m| m.holdout_auroc) {
        println!("holdout_auroc: {a:.4}");
    }
    println!("fingerprint: {}", config.fingerprint());
    Ok(())
}

fn build_scorer(kind: ScorerKind, config: &RunConfig) -> Result<Box<dyn Scorer>, CliError> {
    Ok(match kind {
        ScorerKind::Lns => Box::new(LengthNormalizedScorer),
        ScorerKind::SeqProb => Box::new(SequenceProbScorer),
        ScorerKind::Weighted => match &config.paths.weights {
            Some(_) => Box::new(ExternalWeightsScorer::load(existing(&config.paths.weights, "weights file")?)?),
            None => {
                let norm = match config.scoring.normalization {
                    Normalization::SumToOne => WeightNormalization::SumToOne,
                    Normalization::None => WeightNormalization::None,
                };
                Box::new(RelevanceWeightedScorer::new(Arc::new(RougeL), norm))
            }
        },
        ScorerKind::Lars => Box::new(lars::load_model(existing(&config.paths.model, "model file")?)?),
    })
}

fn build_equivalence(config: &RunConfig) -> Result<Box<dyn EquivalenceOracle>, CliError> {
    let o = &config.oracle;
    Ok(match o.equivalence {
        EquivalenceKind::ExactMatch => Box::new(ExactMatch),
        EquivalenceKind::Rouge => Box::new(RougeThreshold {
            threshold: o.rouge_threshold,
        }),
        EquivalenceKind::Never => Box::new(NeverEquivalent),
        EquivalenceKind::Http => {
            let url = o
                .entailment_url
                .clone()
                .ok_or_else(|| usage("equivalence = http needs an entailment_url"))?;
            if !(o.timeout_secs > 0.0 && o.timeout_secs.is_finite()) {
                return Err(usage("timeout_secs must be positive"));
            }
            Box::new(HttpEntailment::new(url, Duration::from_secs_f64(o.timeout_secs)))
        }
    })
}

#[derive(serde::Serialize)]
struct ScoreLine<'a> {
    id: &'a str,
    generation: usize,
    scorer: &'static str,
    score: f64,
    log_score: f64,
    config_fingerprint: &'a str,
}

pub fn score(config: &RunConfig) -> CmdResult {
    let scorers = config
        .scoring
        .scorers
        .iter()
        .map(|&k| Ok((k, build_scorer(k, config)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let samples = load_samples(config)?;
    let fingerprint = config.fingerprint();
    let mut out = output(config.paths.out.as_deref())?;
    for (kind, scorer) in &scorers {
        for sample in &samples {
            for i in 0..sample.generations().len() {
                let s = scorer.score(sample, i)?;
                let line = ScoreLine {
                    id: &sample.id,
                    generation: i,
                    scorer: kind.as_str(),
                    score: s.value(),
                    log_score: s.log_value(),
                    config_fingerprint: &fingerprint,
                };
                serde_json::to_writer(&mut out, &line).context("writing scores")?;
                writeln!(out)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn aggregate(
    agg: Aggregator,
    sample: &QuestionSample,
    scorer: &dyn Scorer,
    clustering: Option<&Clustering>,
    config: &RunConfig,
) -> crate::Result<UeScore> {
    let include_ml = config.evaluate.include_most_likely;
    match agg {
        Aggregator::Confidence => ue::confidence(sample, scorer),
        Aggregator::Entropy => ue::entropy(sample, scorer, include_ml),
        Aggregator::Se => ue::semantic_entropy(sample, scorer, clustering.expect("clusters computed")),
        Aggregator::Sentsar => ue::sentsar(sample, scorer, &RougeL, config.oracle.sentsar_temperature, include_ml),
    }
}

fn baseline(b: Baseline, sample: &QuestionSample, clustering: Option<&Clustering>, config: &RunConfig) -> crate::Result<UeScore> {
    let include_ml = config.evaluate.include_most_likely;
    let texts = || -> Vec<&str> {
        sample
            .sampled_indices(include_ml)
            .into_iter()
            .map(|i| sample.generations()[i].text.as_str())
            .collect()
    };
    match b {
        Baseline::Lexsim => ue::lexical_similarity(sample, include_ml),
        Baseline::NumSets => Ok(ue::num_semantic_groups(clustering.expect("clusters computed"))),
        Baseline::Degree => Ok(ue::degree_uncertainty(&SimilarityMatrix::from_texts(&texts(), &RougeL)?)),
        Baseline::Eccentricity => {
            let w = SimilarityMatrix::from_texts(&texts(), &RougeL)?;
            let k = config.oracle.num_eigvecs.min(w.size());
            ue::eccentricity_uncertainty(&w, k)
        }
    }
}

/// All report rows: `{aggregator}-{scorer}` for every selected pair, then
/// the selected baselines.
pub fn evaluation_reports(config: &RunConfig, samples: &[QuestionSample]) -> Result<Vec<EvalReport>, CliError> {
    let scorers = config
        .scoring
        .scorers
        .iter()
        .map(|&k| Ok((k, build_scorer(k, config)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let needs_clusters = config.evaluate.aggregators.contains(&Aggregator::Se)
        || config.evaluate.baselines.contains(&Baseline::NumSets);
    let clusterings = if needs_clusters {
        let equiv = build_equivalence(config)?;
        samples
            .iter()
            .map(|s| {
                let idx = s.sampled_indices(config.evaluate.include_most_likely);
                ue::cluster_indices(s, &idx, equiv.as_ref()).map(Some)
            })
            .collect::<crate::Result<Vec<_>>>()?
    } else {
        vec![None; samples.len()]
    };

    let mut reports = Vec::new();
    for (kind, scorer) in &scorers {
        for &agg in &config.evaluate.aggregators {
            let values = samples
                .iter()
                .zip(&clusterings)
                .map(|(s, c)| aggregate(agg, s, scorer.as_ref(), c.as_ref(), config))
                .collect::<crate::Result<Vec<_>>>()?;
            let name = format!("{}-{}", agg.as_str(), kind.as_str());
            reports.push(metrics::evaluate(&name, samples, &values)?);
        }
    }
    for &b in &config.evaluate.baselines {
        let values = samples
            .iter()
            .zip(&clusterings)
            .map(|(s, c)| baseline(b, s, c.as_ref(), config))
            .collect::<crate::Result<Vec<_>>>()?;
        reports.push(metrics::evaluate(b.as_str(), samples, &values)?);
    }
    Ok(reports)
}

#[derive(serde::Serialize)]
struct JsonReport<'a> {
    config_fingerprint: String,
    reports: &'a [EvalReport],
}

pub fn evaluate(config: &RunConfig) -> CmdResult {
    let samples = load_samples(config)?;
    let reports = evaluation_reports(config, &samples)?;
    let mut out = output(config.paths.out.as_deref())?;
    match config.evaluate.format {
        ReportFormat::Csv => {
            writeln!(out, "# config_fingerprint: {}", config.fingerprint())?;
            metrics::write_reports_csv(&mut out, &reports)?;
        }
        ReportFormat::Json => {
            let doc = JsonReport {
                config_fingerprint: config.fingerprint(),
                reports: &reports,
            };
            serde_json::to_writer_pretty(&mut out, &doc).context("writing report")?;
            writeln!(out)?;
        }
    }
    out.flush()?;
    if config.paths.out.is_some() {
        for r in &reports {
            println!(
                "{:<24} auroc {}  prr {}",
                r.method,
                r.auroc.map_or("-".into(), |x| format!("{x:.4}")),
                r.prr.map_or("-".into(), |x| format!("{x:.4}")),
            );
        }
    }
    Ok(())
}

pub fn gradcheck(config: &RunConfig, args: &GradcheckArgs) -> CmdResult {
    let (model, batch) = gradcheck::reference_setup(config.seed)?;
    let report = gradcheck::gradient_check(&model, &batch, args.step, args.tolerance, args.corrupt.as_deref())
        .map_err(|e| match e {
            crate::Error::InvalidInput(m) => usage(m),
            other => other.into(),
        })?;
    for t in &report.tensors {
        println!(
            "{:<20} {:>6}  max_rel_error {:.3e}  max_abs_error {:.3e}",
            t.name, t.entries, t.max_rel_error, t.max_abs_error
        );
    }
    let worst = report.worst().map(|t| (t.name.clone(), t.max_rel_error));
    if report.passed() {
        if let Some((name, err)) = worst {
            println!("PASS  max relative error {err:.3e} ({name}) < {:.0e}", report.tolerance);
        }
        Ok(())
    } else {
        let names: Vec<&str> = report.failures().iter().map(|t| t.name.as_str()).collect();
        println!("FAIL  {}", names.join(", "));
        Err(CliError::Runtime(anyhow::anyhow!("gradient check failed for {}", names.join(", "))))
    }
}
