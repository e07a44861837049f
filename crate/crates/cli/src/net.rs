//! `net cv`, `net train-full` and `net infer`.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use liverfat_core::nn::{decode_checkpoint, encode_checkpoint, make_cv_plan, predict_batch, train, TrainSample};
use liverfat_core::preprocess::{EncodingSpec, SliceImage};
use liverfat_core::study::cross_validate;
use rayon::prelude::*;

use crate::config::Settings;
use crate::files::{self, Manifest, CV_PREDICTIONS_CSV, MODEL_FILE, PREDICTIONS_CSV, TRUTH_CSV};

const PREDICTION_COLUMN: &str = "predicted_ff";

fn load_images(work: &Path, ids: &[String]) -> Result<Vec<SliceImage>> {
    ids.par_iter()
        .map(|id| {
            let path = files::input_pgm(work, id);
            SliceImage::read_pgm(&path, EncodingSpec::default()).with_context(|| format!("reading {}", path.display()))
        })
        .collect()
}

/// Dataset A with reference values as targets.
fn labeled_samples(settings: &Settings) -> Result<Vec<TrainSample>> {
    let split = files::read_splits(&settings.cohort_dir)?;
    if split.a.is_empty() {
        bail!("dataset A is empty");
    }
    let reference = files::read_column(&settings.cohort_dir.join(TRUTH_CSV), "reference_roi_ff")?;
    let images = load_images(&settings.work_dir, &split.a)?;
    split
        .a
        .iter()
        .zip(images)
        .map(|(id, image)| {
            let target = *reference
                .get(id)
                .ok_or_else(|| anyhow!("no reference value for {id}"))?;
            Ok(TrainSample {
                id: id.clone(),
                image,
                target,
            })
        })
        .collect()
}

pub fn cv(settings: &Settings) -> Result<()> {
    let study = &settings.study;
    let samples = labeled_samples(settings)?;
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let plan = make_cv_plan(&ids, study.cv_folds, study.cv_seed)?;
    let folds = cross_validate(&samples, &plan, &study.network, &study.train)?;

    let mut manifest = Manifest::new(&settings.work_dir);
    let mut all = BTreeMap::new();
    for f in &folds {
        let fold: BTreeMap<String, f64> = f.ids.iter().cloned().zip(f.predictions.iter().copied()).collect();
        manifest.put(&format!("cv/fold_{:02}.csv", f.fold), files::series_csv(PREDICTION_COLUMN, &fold))?;
        all.extend(fold);
    }
    manifest.put(CV_PREDICTIONS_CSV, files::series_csv(PREDICTION_COLUMN, &all))?;
    manifest.write("manifest_cv.sha256")?;
    println!("{}-fold cross-validation over {} subjects of A", plan.k, all.len());
    Ok(())
}

pub fn train_full(settings: &Settings) -> Result<()> {
    let samples = labeled_samples(settings)?;
    let trained = train(&samples, &settings.study.network, &settings.study.train)?;
    let mut manifest = Manifest::new(&settings.work_dir);
    manifest.put(MODEL_FILE, encode_checkpoint(&trained.network))?;
    manifest.put("train_log.csv", trained.log_csv())?;
    manifest.write("manifest_train.sha256")?;
    let last = trained.log.last().map_or(f32::NAN, |e| e.loss);
    println!(
        "trained on {} subjects of A for {} iterations; final batch loss {last:.4}",
        samples.len(),
        trained.log.len()
    );
    Ok(())
}

pub fn infer(settings: &Settings, model: Option<&Path>) -> Result<()> {
    let work = &settings.work_dir;
    let model_path = model.map_or_else(|| work.join(MODEL_FILE), Path::to_path_buf);
    let bytes = std::fs::read(&model_path).with_context(|| format!("reading {}", model_path.display()))?;
    let net = decode_checkpoint(&bytes).with_context(|| format!("decoding {}", model_path.display()))?;
    let split = files::read_splits(&settings.cohort_dir)?;
    if split.b.is_empty() {
        bail!("dataset B is empty");
    }
    let images = load_images(work, &split.b)?;
    let predictions = predict_batch(&net, &images)?;
    let values: BTreeMap<String, f64> = split.b.iter().cloned().zip(predictions).collect();
    let mut manifest = Manifest::new(work);
    manifest.put(PREDICTIONS_CSV, files::series_csv(PREDICTION_COLUMN, &values))?;
    manifest.write("manifest_infer.sha256")?;
    println!("predicted {} subjects of B", values.len());
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<BTreeMap<String, f64>> {
    files::read_column(path, PREDICTION_COLUMN)
}
