//! Flat `key = value` settings files and their resolution into a
//! [`StudyConfig`].
//!
//! Precedence, lowest first: the desk or paper-scale preset, the settings
//! file, then command-line flags. Split sizes and the fold count default to
//! values derived from `n_subjects` unless set explicitly.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use liverfat_core::atlas::AtlasConfig;
use liverfat_core::nn::TrainConfig;
use liverfat_core::phantom::PhantomSpec;
use liverfat_core::preprocess::LayoutConfig;
use liverfat_core::study::StudyConfig;

/// Bad settings or arguments. Maps to exit status 1.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> Invalid {
    Invalid(msg.into())
}

/// Parsed `key = value` lines. `#` starts a comment; blank lines are skipped.
#[derive(Debug, Default)]
pub struct Entries {
    values: BTreeMap<String, (usize, String)>,
}

impl Entries {
    pub fn parse(text: &str) -> Result<Self, Invalid> {
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| invalid(format!("line {}: expected `key = value`, got {line:?}", idx + 1)))?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(invalid(format!("line {}: empty key", idx + 1)));
            }
            if let Some((first, _)) = values.insert(key.clone(), (idx + 1, value.trim().to_string())) {
                return Err(invalid(format!("line {}: duplicate key {key:?} (first on line {first})", idx + 1)));
            }
        }
        Ok(Entries { values })
    }

    /// Remove and parse `key`.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, Invalid>
    where
        T::Err: fmt::Display,
    {
        match self.values.remove(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|e| invalid(format!("line {line}: {key} = {v:?}: {e}"))),
        }
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T, Invalid>
    where
        T::Err: fmt::Display,
    {
        self.take(key)?.ok_or_else(|| invalid(format!("missing key {key:?}")))
    }

    /// Fail on any key nobody asked for.
    pub fn finish(self) -> Result<(), Invalid> {
        match self.values.into_iter().next() {
            None => Ok(()),
            Some((key, (line, _))) => Err(invalid(format!("line {line}: unknown key {key:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Paper,
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Desk => "desk",
            Scale::Paper => "paper",
        })
    }
}

impl FromStr for Scale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper" => Ok(Scale::Paper),
            other => Err(format!("expected desk or paper, got {other:?}")),
        }
    }
}

/// Command-line values that take precedence over the settings file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paper_scale: bool,
    pub n_subjects: Option<usize>,
    pub cohort_dir: Option<PathBuf>,
    pub work_dir: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub scale: Scale,
    pub seed: u64,
    pub study: StudyConfig,
    pub cohort_dir: PathBuf,
    pub work_dir: PathBuf,
    pub report_dir: PathBuf,
}

fn preset(scale: Scale, seed: u64) -> StudyConfig {
    let mut study = StudyConfig::desk(seed);
    if scale == Scale::Paper {
        study.cohort.base = PhantomSpec {
            noise_sigma: study.cohort.base.noise_sigma,
            ..PhantomSpec::paper_scale()
        };
        study.layout = LayoutConfig::paper_scale();
        study.atlas = AtlasConfig::paper_scale();
        study.train = TrainConfig {
            seed,
            ..TrainConfig::paper()
        };
    }
    study
}

macro_rules! set {
    ($entries:ident, $key:literal => $field:expr) => {
        if let Some(v) = $entries.take($key)? {
            $field = v;
        }
    };
}

impl Settings {
    /// Resolve settings from optional file text and command-line overrides.
    pub fn resolve(text: Option<&str>, ov: &Overrides) -> Result<Self, Invalid> {
        let mut e = Entries::parse(text.unwrap_or(""))?;
        let mut scale = e.take("scale")?.unwrap_or(Scale::Desk);
        if ov.paper_scale {
            scale = Scale::Paper;
        }
        let seed = match ov.seed {
            Some(s) => {
                e.take::<u64>("seed")?;
                s
            }
            None => e.take("seed")?.unwrap_or(1),
        };
        let mut s = preset(scale, seed);

        let c = &mut s.cohort;
        set!(e, "n_subjects" => c.n_subjects);
        set!(e, "ff_low" => c.ff_low);
        set!(e, "ff_high" => c.ff_high);
        set!(e, "body_jitter" => c.body_jitter);
        set!(e, "liver_shift_mm" => c.liver_shift_mm);
        set!(e, "liver_scale_jitter" => c.liver_scale_jitter);
        set!(e, "noise_sigma" => c.base.noise_sigma);
        set!(e, "bias_amplitude" => c.base.bias_amplitude);
        set!(e, "subcutaneous_ff" => c.base.subcutaneous_ff);
        set!(e, "station_count" => c.base.station_count);
        set!(e, "station_overlap" => c.base.station_overlap);
        if let Some(n) = ov.n_subjects {
            c.n_subjects = n;
        }
        let n = c.n_subjects;

        set!(e, "n_templates" => s.n_templates);
        s.n_a = e.take("n_a")?.unwrap_or(3 * n / 4);
        s.n_b = e.take("n_b")?.unwrap_or(n.saturating_sub(s.n_a));
        s.n_c = e.take("n_c")?.unwrap_or(s.n_b);
        s.cv_folds = e.take("cv_folds")?.unwrap_or(s.n_a.min(10));
        set!(e, "cv_seed" => s.cv_seed);

        set!(e, "layout_width" => s.layout.width);
        set!(e, "layout_height" => s.layout.height);
        set!(e, "coronal_window_mm" => s.layout.coronal_window_mm);
        set!(e, "sagittal_window_mm" => s.layout.sagittal_window_mm);

        set!(e, "roi_radius" => s.roi.roi_radius);
        set!(e, "roi_erosion_diameter" => s.roi.erosion_diameter);
        set!(e, "roi_count" => s.roi.roi_count);

        let r = &mut s.atlas.registration;
        set!(e, "pyramid_levels" => r.pyramid_levels);
        set!(e, "search_radius" => r.search_radius);
        set!(e, "displacement_step" => r.displacement_step);
        set!(e, "regularization_weight" => r.regularization_weight);
        set!(e, "sweeps_per_level" => r.sweeps_per_level);
        set!(e, "control_stride" => r.control_stride);
        set!(e, "window_sample_stride" => r.window_sample_stride);
        set!(e, "erosion_diameter" => s.atlas.erosion_diameter);

        set!(e, "network" => s.network);
        let t = &mut s.train;
        set!(e, "train_seed" => t.seed);
        set!(e, "batch_size" => t.batch_size);
        set!(e, "iterations" => t.total_iterations);
        set!(e, "base_lr" => t.base_lr);
        set!(e, "lr_drop_factor" => t.lr_drop_factor);
        set!(e, "lr_drop_window" => t.lr_drop_window);
        set!(e, "translation_range" => t.translation_range);

        let mut dir = |flag: &Option<PathBuf>, key: &str, default: &str| -> Result<PathBuf, Invalid> {
            let from_file: Option<PathBuf> = e.take(key)?;
            Ok(flag.clone().or(from_file).unwrap_or_else(|| PathBuf::from(default)))
        };
        let cohort_dir = dir(&ov.cohort_dir, "cohort_dir", "cohort")?;
        let work_dir = dir(&ov.work_dir, "work_dir", "work")?;
        let report_dir = dir(&ov.report_dir, "report_dir", "report")?;
        e.finish()?;

        let settings = Settings {
            scale,
            seed,
            study: s,
            cohort_dir,
            work_dir,
            report_dir,
        };
        settings.validate()?;
        Ok(settings)
    }

    pub fn validate(&self) -> Result<(), Invalid> {
        self.study.validate().map_err(|e| invalid(e.to_string()))?;
        let dirs = [
            ("cohort", normalize(&self.cohort_dir)),
            ("work", normalize(&self.work_dir)),
            ("report", normalize(&self.report_dir)),
        ];
        for i in 0..dirs.len() {
            for j in i + 1..dirs.len() {
                if dirs[i].1 == dirs[j].1 {
                    return Err(invalid(format!(
                        "{} and {} directories must differ ({})",
                        dirs[i].0,
                        dirs[j].0,
                        dirs[i].1.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Every setting in the file format accepted by [`Settings::resolve`].
    pub fn to_text(&self) -> String {
        let s = &self.study;
        let c = &s.cohort;
        let r = &s.atlas.registration;
        let t = &s.train;
        let mut out = String::new();
        let mut kv = |k: &str, v: &dyn fmt::Display| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("scale", &self.scale);
        kv("seed", &self.seed);
        kv("n_subjects", &c.n_subjects);
        kv("ff_low", &c.ff_low);
        kv("ff_high", &c.ff_high);
        kv("body_jitter", &c.body_jitter);
        kv("liver_shift_mm", &c.liver_shift_mm);
        kv("liver_scale_jitter", &c.liver_scale_jitter);
        kv("noise_sigma", &c.base.noise_sigma);
        kv("bias_amplitude", &c.base.bias_amplitude);
        kv("subcutaneous_ff", &c.base.subcutaneous_ff);
        kv("station_count", &c.base.station_count);
        kv("station_overlap", &c.base.station_overlap);
        kv("n_templates", &s.n_templates);
        kv("n_a", &s.n_a);
        kv("n_b", &s.n_b);
        kv("n_c", &s.n_c);
        kv("cv_folds", &s.cv_folds);
        kv("cv_seed", &s.cv_seed);
        kv("layout_width", &s.layout.width);
        kv("layout_height", &s.layout.height);
        kv("coronal_window_mm", &s.layout.coronal_window_mm);
        kv("sagittal_window_mm", &s.layout.sagittal_window_mm);
        kv("roi_radius", &s.roi.roi_radius);
        kv("roi_erosion_diameter", &s.roi.erosion_diameter);
        kv("roi_count", &s.roi.roi_count);
        kv("pyramid_levels", &r.pyramid_levels);
        kv("search_radius", &r.search_radius);
        kv("displacement_step", &r.displacement_step);
        kv("regularization_weight", &r.regularization_weight);
        kv("sweeps_per_level", &r.sweeps_per_level);
        kv("control_stride", &r.control_stride);
        kv("window_sample_stride", &r.window_sample_stride);
        kv("erosion_diameter", &s.atlas.erosion_diameter);
        kv("network", &s.network);
        kv("train_seed", &t.seed);
        kv("batch_size", &t.batch_size);
        kv("iterations", &t.total_iterations);
        kv("base_lr", &t.base_lr);
        kv("lr_drop_factor", &t.lr_drop_factor);
        kv("lr_drop_window", &t.lr_drop_window);
        kv("translation_range", &t.translation_range);
        kv("cohort_dir", &self.cohort_dir.display());
        kv("work_dir", &self.work_dir.display());
        kv("report_dir", &self.report_dir.display());
        out
    }
}

/// Lexical normalization for comparing directories that may not exist yet.
fn normalize(p: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                if !out.pop() {
                    out.push("..");
                }
            }
            other => out.push(other),
        }
    }
    out
}
