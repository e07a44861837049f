//! In-memory orchestration of the phantom study: subject preparation,
//! template construction, the atlas batch with calibration, and network
//! cross-validation, full training and inference.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::atlas::{atlas_measure, fit_calibration, AtlasConfig, AtlasMeasurement, AtlasSubject, CalibrationModel, Template};
use crate::error::{Error, Result};
use crate::nn::{make_cv_plan, predict_batch, train, CvPlan, Network, NetworkConfig, TrainConfig, TrainSample};
use crate::phantom::{derive_seed, generate_phantom, reference_roi_measurement, CohortSpec, Phantom, PhantomSpec, RoiConfig};
use crate::preprocess::{compose_input_detailed, CropGeometry, EncodingSpec, LayoutConfig, SliceImage};
use crate::stats::{MetricsReport, PairedMeasurements, NAFLD_THRESHOLD};
use crate::volume::{fuse_stations, StationStack};

/// Seed streams derived from the cohort seed.
const TEMPLATE_STREAM: u64 = 0x7E3A;
const REFERENCE_STREAM: u64 = 0x2EF0;
const SPLIT_STREAM: u64 = 0x5B17;

/// Everything downstream stages need from one subject's signals.
#[derive(Debug, Clone)]
pub struct PreparedSubject {
    pub id: String,
    pub atlas: AtlasSubject,
    pub image: SliceImage,
    pub geometry: CropGeometry,
}

/// Fuse stations, compute fractions and the body mask, and compose the
/// network input.
pub fn prepare_subject(
    id: impl Into<String>,
    water: &StationStack,
    fat: &StationStack,
    layout: &LayoutConfig,
) -> Result<PreparedSubject> {
    let water = fuse_stations(water)?;
    let fat = fuse_stations(fat)?;
    let atlas = AtlasSubject::from_signals(&water, &fat)?;
    let composed = compose_input_detailed(&atlas.fat_frac, &atlas.body_mask, layout, &EncodingSpec::default())?;
    Ok(PreparedSubject {
        id: id.into(),
        atlas,
        image: composed.image,
        geometry: composed.geometry,
    })
}

/// Seed for a subject's simulated reference ROIs.
pub fn reference_seed(spec: &PhantomSpec) -> u64 {
    derive_seed(spec.seed, REFERENCE_STREAM)
}

/// Simulated reference measurement (fraction) for a prepared phantom.
pub fn reference_value(prepared: &PreparedSubject, phantom: &Phantom, spec: &PhantomSpec, roi: &RoiConfig) -> Result<f64> {
    reference_roi_measurement(&prepared.atlas.fat_frac, &phantom.truth.liver_mask, reference_seed(spec), roi)
}

/// Cohort that supplies the template phantoms; disjoint seeds from the
/// study cohort.
pub fn template_cohort(cohort: &CohortSpec, n_templates: usize) -> CohortSpec {
    CohortSpec {
        n_subjects: n_templates,
        seed: derive_seed(cohort.seed, TEMPLATE_STREAM),
        ..cohort.clone()
    }
}

pub fn template_id(idx: usize) -> String {
    format!("template-{idx:02}")
}

/// A template from a phantom, labeled with its truth liver mask.
pub fn template_from_phantom(id: impl Into<String>, phantom: &Phantom) -> Result<Template> {
    let water = fuse_stations(&phantom.water)?;
    let fat = fuse_stations(&phantom.fat)?;
    let subject = AtlasSubject::from_signals(&water, &fat)?;
    Template::new(id, &subject, phantom.truth.liver_mask.clone())
}

pub fn build_templates(cohort: &CohortSpec, n_templates: usize) -> Result<Vec<Template>> {
    template_cohort(cohort, n_templates)
        .subject_specs()?
        .into_par_iter()
        .enumerate()
        .map(|(i, (_, spec))| template_from_phantom(template_id(i), &generate_phantom(&spec)?))
        .collect()
}

/// Labeled set A, unlabeled set B and comparison subset C of B.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StudySplit {
    pub a: Vec<String>,
    pub b: Vec<String>,
    pub c: Vec<String>,
}

impl StudySplit {
    /// Shuffle the sorted ids with `seed`; the first `n_a` form A, the next
    /// `n_b` form B, and C is a seeded subset of B. Each list is returned
    /// sorted.
    pub fn new(ids: &[String], n_a: usize, n_b: usize, n_c: usize, seed: u64) -> Result<Self> {
        if n_a + n_b > ids.len() || n_c > n_b {
            return Err(Error::InvalidParameter(format!(
                "split sizes A={n_a}, B={n_b}, C={n_c} do not fit {} subjects",
                ids.len()
            )));
        }
        let mut pool = ids.to_vec();
        pool.sort();
        if pool.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter("duplicate subject ids".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        pool.shuffle(&mut rng);
        let mut a = pool[..n_a].to_vec();
        let mut b = pool[n_a..n_a + n_b].to_vec();
        let mut c = b.clone();
        c.shuffle(&mut rng);
        c.truncate(n_c);
        a.sort();
        b.sort();
        c.sort();
        Ok(StudySplit { a, b, c })
    }
}

/// Atlas measurements keyed by subject id; failures keep their error.
pub fn atlas_batch<'a>(
    subjects: impl IntoParallelIterator<Item = (&'a str, &'a AtlasSubject)>,
    templates: &[Template],
    cfg: &AtlasConfig,
) -> Vec<(String, Result<AtlasMeasurement>)> {
    let mut out: Vec<(String, Result<AtlasMeasurement>)> = subjects
        .into_par_iter()
        .map(|(id, s)| (id.to_string(), atlas_measure(s, templates, cfg)))
        .collect();
    out.sort_by(|x, y| x.0.cmp(&y.0));
    out
}

/// Held-out predictions (FF points) of one cross-validation fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPredictions {
    pub fold: usize,
    pub ids: Vec<String>,
    pub predictions: Vec<f64>,
}

/// Train on all folds but one and predict the held-out fold, for every fold.
/// Folds run concurrently; each uses the same training seed.
pub fn cross_validate(
    samples: &[TrainSample],
    plan: &CvPlan,
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
) -> Result<Vec<FoldPredictions>> {
    let by_id: BTreeMap<&str, &TrainSample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let lookup = |id: &String| {
        by_id
            .get(id.as_str())
            .copied()
            .ok_or_else(|| Error::InvalidParameter(format!("no sample for subject {id}")))
    };
    (0..plan.k)
        .into_par_iter()
        .map(|fold| {
            let training: Vec<TrainSample> = plan
                .training_ids(fold)
                .iter()
                .map(|id| lookup(id).cloned())
                .collect::<Result<_>>()?;
            let held: Vec<SliceImage> = plan.folds[fold]
                .iter()
                .map(|id| lookup(id).map(|s| s.image.clone()))
                .collect::<Result<_>>()?;
            let trained = train(&training, net_cfg, train_cfg)?;
            Ok(FoldPredictions {
                fold,
                ids: plan.folds[fold].clone(),
                predictions: predict_batch(&trained.network, &held)?,
            })
        })
        .collect()
}

/// Settings for a complete in-memory phantom study.
#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub cohort: CohortSpec,
    pub n_templates: usize,
    pub n_a: usize,
    pub n_b: usize,
    pub n_c: usize,
    pub layout: LayoutConfig,
    pub roi: RoiConfig,
    pub atlas: AtlasConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub cv_folds: usize,
    pub cv_seed: u64,
}

impl StudyConfig {
    /// 200 desk-scale phantoms with noise 0.02: A = 150, B = 50, C = B.
    pub fn desk(seed: u64) -> Self {
        let mut cohort = CohortSpec::new(200, seed);
        cohort.base.noise_sigma = 0.02;
        StudyConfig {
            cohort,
            n_templates: 3,
            n_a: 150,
            n_b: 50,
            n_c: 50,
            layout: LayoutConfig::desk_scale(),
            roi: RoiConfig::default(),
            atlas: AtlasConfig::desk_scale(),
            network: NetworkConfig::desk(),
            train: TrainConfig {
                seed,
                ..TrainConfig::desk()
            },
            cv_folds: 10,
            cv_seed: seed,
        }
    }

    /// The A/B/C split of `ids` drawn from the cohort seed.
    pub fn split(&self, ids: &[String]) -> Result<StudySplit> {
        StudySplit::new(ids, self.n_a, self.n_b, self.n_c, derive_seed(self.cohort.seed, SPLIT_STREAM))
    }

    pub fn validate(&self) -> Result<()> {
        self.cohort.validate()?;
        self.layout.validate()?;
        self.atlas.registration.validate()?;
        self.train.validate()?;
        for d in [self.atlas.erosion_diameter, self.roi.erosion_diameter] {
            if d % 2 == 0 {
                return Err(Error::EvenDiameter(d));
            }
        }
        if self.n_templates == 0 {
            return Err(Error::InvalidParameter("at least one template is required".into()));
        }
        if self.n_a + self.n_b > self.cohort.n_subjects || self.n_c > self.n_b {
            return Err(Error::InvalidParameter(format!(
                "split sizes A={}, B={}, C={} inconsistent with {} subjects",
                self.n_a, self.n_b, self.n_c, self.cohort.n_subjects
            )));
        }
        if self.cv_folds < 2 || self.cv_folds > self.n_a {
            return Err(Error::InvalidParameter(format!(
                "{} folds cannot partition {} labeled subjects",
                self.cv_folds, self.n_a
            )));
        }
        self.network
            .validate(&[1, self.layout.height, self.layout.width])
    }
}

/// Per-subject values in fat fraction points.
#[derive(Debug, Clone)]
pub struct SubjectResult {
    pub id: String,
    pub truth: f64,
    pub reference: f64,
    /// Raw atlas readout; `None` when the measurement failed.
    pub atlas_raw: Option<f64>,
    pub image: SliceImage,
}

#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub subjects: Vec<SubjectResult>,
    pub split: StudySplit,
    pub calibration: CalibrationModel,
    /// Held-out cross-validation predictions on A.
    pub cv_predictions: BTreeMap<String, f64>,
    /// Predictions on B of the network trained on all of A.
    pub inference: BTreeMap<String, f64>,
    pub network: Network,
}

impl StudyOutcome {
    fn subject(&self, id: &str) -> Option<&SubjectResult> {
        self.subjects
            .binary_search_by(|s| s.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.subjects[i])
    }

    pub fn atlas_failures(&self) -> Vec<String> {
        self.subjects
            .iter()
            .filter(|s| s.atlas_raw.is_none())
            .map(|s| s.id.clone())
            .collect()
    }

    pub fn atlas_corrected(&self, id: &str) -> Option<f64> {
        self.subject(id)?.atlas_raw.map(|r| self.calibration.apply(r))
    }

    /// Network value for a subject: held-out CV prediction on A, inference
    /// on B.
    pub fn network_value(&self, id: &str) -> Option<f64> {
        self.cv_predictions
            .get(id)
            .or_else(|| self.inference.get(id))
            .copied()
    }

    /// Pair two per-subject quantities over `ids`, skipping subjects where
    /// either is missing.
    pub fn paired(
        &self,
        ids: &[String],
        a: impl Fn(&Self, &str) -> Option<f64>,
        b: impl Fn(&Self, &str) -> Option<f64>,
    ) -> Result<PairedMeasurements> {
        let mut kept = Vec::new();
        let (mut va, mut vb) = (Vec::new(), Vec::new());
        for id in ids {
            if let (Some(x), Some(y)) = (a(self, id), b(self, id)) {
                kept.push(id.clone());
                va.push(x);
                vb.push(y);
            }
        }
        PairedMeasurements::new(kept, va, vb)
    }

    pub fn truth(&self, id: &str) -> Option<f64> {
        self.subject(id).map(|s| s.truth)
    }

    pub fn reference(&self, id: &str) -> Option<f64> {
        self.subject(id).map(|s| s.reference)
    }

    pub fn report(&self, label: &str, p: &PairedMeasurements) -> Result<MetricsReport> {
        MetricsReport::compute(label, p, NAFLD_THRESHOLD)
    }
}

/// Generate, prepare, measure and model the whole cohort.
pub fn run_phantom_study(cfg: &StudyConfig) -> Result<StudyOutcome> {
    cfg.validate()?;
    let templates = build_templates(&cfg.cohort, cfg.n_templates)?;

    // Volumes are dropped as soon as a subject's atlas readout is done.
    let mut subjects: Vec<SubjectResult> = cfg
        .cohort
        .subject_specs()?
        .into_par_iter()
        .map(|(id, spec)| {
            let phantom = generate_phantom(&spec)?;
            let prepared = prepare_subject(id.clone(), &phantom.water, &phantom.fat, &cfg.layout)?;
            let reference = reference_value(&prepared, &phantom, &spec, &cfg.roi)?;
            let atlas_raw = match atlas_measure(&prepared.atlas, &templates, &cfg.atlas) {
                Ok(m) => Some(m.raw_ff_points()),
                Err(Error::MeasurementFailure { .. }) => None,
                Err(e) => return Err(e),
            };
            Ok(SubjectResult {
                id,
                truth: 100.0 * spec.liver_ff,
                reference: 100.0 * reference,
                atlas_raw,
                image: prepared.image,
            })
        })
        .collect::<Result<_>>()?;
    subjects.sort_by(|x, y| x.id.cmp(&y.id));

    let ids: Vec<String> = subjects.iter().map(|s| s.id.clone()).collect();
    let split = cfg.split(&ids)?;
    let by_id: BTreeMap<&str, &SubjectResult> = subjects.iter().map(|s| (s.id.as_str(), s)).collect();

    let (raw, reference): (Vec<f64>, Vec<f64>) = split
        .a
        .iter()
        .filter_map(|id| {
            let s = by_id[id.as_str()];
            s.atlas_raw.map(|r| (r, s.reference))
        })
        .unzip();
    let calibration = fit_calibration(&raw, &reference)?;

    let samples: Vec<TrainSample> = split
        .a
        .iter()
        .map(|id| {
            let s = by_id[id.as_str()];
            TrainSample {
                id: s.id.clone(),
                image: s.image.clone(),
                target: s.reference,
            }
        })
        .collect();
    let plan = make_cv_plan(&split.a, cfg.cv_folds, cfg.cv_seed)?;
    let folds = cross_validate(&samples, &plan, &cfg.network, &cfg.train)?;
    let cv_predictions = folds
        .iter()
        .flat_map(|f| f.ids.iter().cloned().zip(f.predictions.iter().copied()))
        .collect();

    let full = train(&samples, &cfg.network, &cfg.train)?;
    let b_images: Vec<SliceImage> = split.b.iter().map(|id| by_id[id.as_str()].image.clone()).collect();
    let inference = split
        .b
        .iter()
        .cloned()
        .zip(predict_batch(&full.network, &b_images)?)
        .collect();

    Ok(StudyOutcome {
        subjects,
        split,
        calibration,
        cv_predictions,
        inference,
        network: full.network,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i:03}")).collect()
    }

    #[test]
    fn split_is_disjoint_and_nested() {
        let s = StudySplit::new(&ids(20), 12, 6, 4, 3).unwrap();
        assert_eq!((s.a.len(), s.b.len(), s.c.len()), (12, 6, 4));
        assert!(s.a.iter().all(|x| !s.b.contains(x)));
        assert!(s.c.iter().all(|x| s.b.contains(x)));
        let mut rev = ids(20);
        rev.reverse();
        assert_eq!(StudySplit::new(&rev, 12, 6, 4, 3).unwrap(), s);
        assert!(StudySplit::new(&ids(5), 4, 2, 0, 1).is_err());
        assert!(StudySplit::new(&ids(5), 2, 2, 3, 1).is_err());
    }

    #[test]
    fn desk_config_is_valid() {
        StudyConfig::desk(1).validate().unwrap();
        let bad = StudyConfig {
            n_c: 60,
            ..StudyConfig::desk(1)
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn template_seeds_differ_from_cohort() {
        let cohort = CohortSpec::new(4, 9);
        let t = template_cohort(&cohort, 3);
        let a = cohort.subject_specs().unwrap();
        let b = t.subject_specs().unwrap();
        assert!(b.iter().all(|(_, s)| a.iter().all(|(_, c)| c.seed != s.seed)));
    }
}
