use std::path::Path;

use dualspace::baselines::{
    fit_linear_baseline, random_baseline, select_ridge, BaselineKind, RidgeSelection, RIDGE_GRID,
};
use dualspace::dataset::Modality;
use dualspace::dataset::{
    load_dataset, save_dataset, save_embeddings, stratified_split, synth_generate, EmbeddingFile,
    SynthConfig,
};
use dualspace::io::write_json;
use dualspace::pipeline::{fit_model, fusion_path};
use dualspace::preprocess::Normalizer;
use dualspace::retrieval::{evaluate, EvalReport, DEFAULT_SCOPES};
use dualspace::trainer::grad_check_default;
use dualspace::{Dataset64, Model64};
use serde_json::{json, Value};

use crate::args::{
    BaselineArgs, EvalArgs, ExportArgs, GradcheckArgs, RidgeArg, Subset, SynthArgs, TrainArgs,
};
use crate::config::resolve;
use crate::error::CliError;

/// Gradient checks at or above this relative error fail the command.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_FILE: &str = "loss_history.csv";
pub const EVAL_FILE: &str = "eval.json";
pub const PRECISION_FILE: &str = "precision_scope.csv";
pub const BASELINE_FILE: &str = "baseline.json";

fn print(v: &Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(v).expect("JSON values always serialize")
    );
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

pub fn synth(a: SynthArgs) -> Result<(), CliError> {
    let cfg = SynthConfig {
        classes: a.classes,
        per_class: a.per_class,
        d_audio: a.d_audio,
        d_visual: a.d_visual,
        noise: a.noise,
        cross_noise: a.cross_noise,
        seed: a.seed,
    };
    cfg.validate()?;
    if !(a.train_frac > 0.0 && a.train_frac < 1.0) {
        return Err(CliError::usage(format!(
            "--train-frac must be in (0, 1), got {}",
            a.train_frac
        )));
    }
    let data: Dataset64 = synth_generate(&cfg)?;
    let split = stratified_split(
        &data.labels,
        data.num_classes,
        a.train_frac,
        a.split_seed.unwrap_or(a.seed),
    )?;
    let (n_train, n_test) = (split.train.len(), split.test.len());
    let data = data.with_split(split)?;
    save_dataset(&a.out, &data)?;
    print(&json!({
        "out": path_str(&a.out),
        "n": data.len(),
        "c": data.num_classes,
        "d_a": data.d_audio(),
        "d_v": data.d_visual(),
        "train": n_train,
        "test": n_test,
    }));
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let run = resolve(&a)?;
    let data: Dataset64 = load_dataset(&run.data)?;
    let (train_set, _) = data.train_test()?;
    run.train
        .validate_for(train_set.len(), train_set.num_classes)?;

    let (model, history) = fit_model(&run.train, &train_set)?;
    let ckpt = run.out.join(CHECKPOINT_FILE);
    let loss = run.out.join(LOSS_FILE);
    model.save(&ckpt)?;
    history.write_csv(&loss)?;
    print(&json!({
        "checkpoint": path_str(&ckpt),
        "fusion": model.fusion.as_ref().map(|_| path_str(&fusion_path(&ckpt))),
        "loss_history": path_str(&loss),
        "ablation": run.train.ablation.as_str(),
        "epochs": history.len(),
        "final_loss": history.epochs.last(),
    }));
    Ok(())
}

fn select(data: &Dataset64, subset: Subset) -> Result<Dataset64, CliError> {
    Ok(match (subset, &data.split) {
        (Subset::All, _) => data.clone(),
        (Subset::Test, None) => {
            log::warn!("dataset has no split; using all {} rows", data.len());
            data.clone()
        }
        (Subset::Test, Some(_)) => data.train_test()?.1,
        (Subset::Train, _) => data.train_test()?.0,
    })
}

fn write_report(report: &EvalReport, out: &Path) -> Result<Value, CliError> {
    let (json_path, csv_path) = (out.join(EVAL_FILE), out.join(PRECISION_FILE));
    report.write(&json_path, &csv_path)?;
    Ok(json!({
        "map_a2v": report.map_a2v,
        "map_v2a": report.map_v2a,
        "map_avg": report.map_avg,
        "n_queries": report.n_queries,
        "report": path_str(&json_path),
        "precision_scope": path_str(&csv_path),
    }))
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let scopes = a.scopes.unwrap_or_else(|| DEFAULT_SCOPES.to_vec());
    let model = Model64::load(&a.checkpoint)?;
    let data: Dataset64 = load_dataset(&a.data)?;
    let report = model.evaluate(&select(&data, a.split)?, &scopes)?;
    print(&write_report(&report, &a.out)?);
    Ok(())
}

pub fn baseline(a: BaselineArgs) -> Result<(), CliError> {
    let scopes = a.scopes.unwrap_or_else(|| DEFAULT_SCOPES.to_vec());
    let data: Dataset64 = load_dataset(&a.data)?;
    let (train_set, test_set) = data.train_test()?;
    let (report, details) = match a.kind {
        BaselineKind::Random => (
            random_baseline(&test_set, a.seed, &scopes)?,
            json!({ "kind": a.kind, "seed": a.seed }),
        ),
        kind => {
            let k_out = a.k_out.unwrap_or(train_set.num_classes);
            let normalizer = (!a.no_normalize)
                .then(|| Normalizer::fit(&train_set))
                .transpose()?;
            let (tr, te) = match &normalizer {
                Some(n) => (n.apply(&train_set)?, n.apply(&test_set)?),
                None => (train_set, test_set),
            };
            let selection: Option<RidgeSelection> = match a.ridge {
                RidgeArg::Auto => Some(select_ridge(kind, &tr, k_out, &RIDGE_GRID, a.seed)?),
                RidgeArg::Fixed(_) => None,
            };
            let ridge = match (a.ridge, &selection) {
                (RidgeArg::Fixed(r), _) => r,
                (RidgeArg::Auto, Some(s)) => s.ridge,
                (RidgeArg::Auto, None) => unreachable!("auto ridge always selects"),
            };
            let model = fit_linear_baseline(kind, &tr, k_out, ridge, a.seed)?;
            let report = evaluate(
                &model.embed(&te.audio, Modality::Audio)?,
                &model.embed(&te.visual, Modality::Visual)?,
                &te.labels,
                te.num_classes,
                &scopes,
            )?;
            let details = json!({
                "kind": kind,
                "seed": a.seed,
                "ridge": ridge,
                "ridge_selection": selection,
                "normalizer": normalizer,
                "model": model,
            });
            (report, details)
        }
    };
    let details_path = a.out.join(BASELINE_FILE);
    write_json(&details_path, &details)?;
    let mut summary = write_report(&report, &a.out)?;
    summary["kind"] = json!(a.kind);
    summary["baseline"] = json!(path_str(&details_path));
    if let Some(r) = details.get("ridge") {
        summary["ridge"] = r.clone();
    }
    print(&summary);
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    if let Some(e) = a.epsilons.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
        return Err(CliError::usage(format!(
            "--epsilon must be finite and > 0, got {e}"
        )));
    }
    let reports = a
        .epsilons
        .iter()
        .map(|&eps| grad_check_default(a.seed, eps))
        .collect::<Result<Vec<_>, _>>()?;
    let first = &reports[0];
    let passed = first.max_relative_error < GRADCHECK_TOLERANCE;
    let results: Vec<Value> = reports
        .iter()
        .map(|r| json!({ "epsilon": r.epsilon, "max_relative_error": r.max_relative_error, "terms": r.terms }))
        .collect();
    print(&json!({
        "seed": a.seed,
        "tolerance": GRADCHECK_TOLERANCE,
        "passed": passed,
        "results": results,
    }));
    if let Some(out) = &a.out {
        write_json(out, &reports)?;
    }
    if passed {
        Ok(())
    } else {
        Err(CliError::numerical(format!(
            "max relative error {:e} at epsilon {:e} is not below {GRADCHECK_TOLERANCE:e}",
            first.max_relative_error, first.epsilon
        )))
    }
}

pub fn export(a: ExportArgs) -> Result<(), CliError> {
    let model = Model64::load(&a.checkpoint)?;
    let data: Dataset64 = load_dataset(&a.data)?;
    let subset = select(&data, a.split)?;
    let embedding = model.embed(subset.features(a.modality), a.modality)?;
    let file = EmbeddingFile {
        modality: a.modality,
        embedding,
        labels: subset.labels,
    };
    save_embeddings(&a.out, &file)?;
    print(&json!({
        "out": path_str(&a.out),
        "modality": a.modality,
        "n": file.embedding.rows(),
        "d": file.embedding.cols(),
    }));
    Ok(())
}
