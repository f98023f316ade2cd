//! Tabular datasets, CSV ingestion, standardization and synthetic generators.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Weibull};

use crate::error::{check_finite, check_len, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<Vec<f64>>,
    targets: Vec<f64>,
    feature_names: Vec<String>,
    target_name: String,
    standardization: Option<Standardization>,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, targets: Vec<f64>, feature_names: Vec<String>) -> Result<Self> {
        check_len("dataset targets", features.len(), targets.len())?;
        let d = feature_names.len();
        for row in &features {
            check_len("dataset row", d, row.len())?;
            check_finite("dataset features", row)?;
        }
        check_finite("dataset targets", &targets)?;
        Ok(Dataset {
            features,
            targets,
            feature_names,
            target_name: "y".into(),
            standardization: None,
        })
    }

    pub fn with_target_name(mut self, name: impl Into<String>) -> Self {
        self.target_name = name.into();
        self
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.features.iter().map(Vec::as_slice).zip(self.targets.iter().copied())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            standardization: self.standardization.clone(),
        }
    }

    /// Seeded shuffle split; the first part holds `round(train_fraction * n)` rows.
    pub fn split(&self, train_fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = ((self.len() as f64) * train_fraction).round() as usize;
        let cut = cut.min(self.len());
        (self.subset(&idx[..cut]), self.subset(&idx[cut..]))
    }

    pub fn feature_mean(&self) -> Vec<f64> {
        let n = self.len().max(1) as f64;
        let mut mean = vec![0.0; self.dim()];
        for row in &self.features {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Z-scores every feature with the population standard deviation.
    pub fn standardize(&self) -> Result<Dataset> {
        if self.len() < 2 {
            return Err(Error::Invalid {
                what: "dataset",
                msg: "standardization needs at least two rows".into(),
            });
        }
        let mean = self.feature_mean();
        let n = self.len() as f64;
        let mut std = vec![0.0; self.dim()];
        for row in &self.features {
            for ((s, v), m) in std.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        for (j, s) in std.iter_mut().enumerate() {
            *s = (*s / n).sqrt();
            if !(*s > 0.0) {
                return Err(Error::ConstantFeature(self.feature_names[j].clone()));
            }
        }
        self.standardize_with(Standardization { mean, std })
    }

    /// Applies previously computed statistics (e.g. training-set stats to a test set).
    pub fn standardize_with(&self, stats: Standardization) -> Result<Dataset> {
        check_len("standardization", self.dim(), stats.mean.len())?;
        let features = self.features.iter().map(|r| stats.apply(r)).collect();
        Ok(Dataset {
            features,
            targets: self.targets.clone(),
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            standardization: Some(stats),
        })
    }

    pub fn unstandardize(&self) -> Dataset {
        match &self.standardization {
            None => self.clone(),
            Some(stats) => Dataset {
                features: self.features.iter().map(|r| stats.invert(r)).collect(),
                targets: self.targets.clone(),
                feature_names: self.feature_names.clone(),
                target_name: self.target_name.clone(),
                standardization: None,
            },
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(&self.target_name);
        w.write_record(&header)?;
        for (x, y) in self.rows() {
            let rec: Vec<String> = x.iter().chain(std::iter::once(&y)).map(|v| v.to_string()).collect();
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvLoad {
    pub dataset: Dataset,
    pub dropped_rows: usize,
}

/// Loads a headered CSV. Numeric columns are parsed as floats; a column
/// whose cells are mostly non-numeric is treated as categorical and one-hot
/// encoded as `col=value` columns in lexicographic value order. Rows with a
/// wrong field count or an unparseable numeric cell are dropped and counted.
pub fn load_csv(path: &Path, target_column: &str) -> Result<CsvLoad> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let target_idx = header
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| Error::MissingColumn(target_column.to_string()))?;

    let mut records = Vec::new();
    let mut dropped = 0usize;
    for rec in reader.records() {
        let rec = rec?;
        if rec.len() != header.len() {
            dropped += 1;
            continue;
        }
        records.push(rec.iter().map(str::to_string).collect::<Vec<_>>());
    }

    let is_numeric = |s: &str| s.parse::<f64>().map(|v| v.is_finite()).unwrap_or(false);
    let mut categorical = vec![false; header.len()];
    let mut categories: Vec<Vec<String>> = vec![Vec::new(); header.len()];
    for (j, cat) in categorical.iter_mut().enumerate() {
        if j == target_idx {
            continue;
        }
        let numeric = records.iter().filter(|r| is_numeric(&r[j])).count();
        if 2 * numeric < records.len() {
            *cat = true;
            let set: BTreeSet<&str> = records.iter().map(|r| r[j].as_str()).filter(|s| !s.is_empty()).collect();
            categories[j] = set.into_iter().map(str::to_string).collect();
        }
    }

    let mut names = Vec::new();
    for (j, h) in header.iter().enumerate() {
        if j == target_idx {
            continue;
        }
        if categorical[j] {
            names.extend(categories[j].iter().map(|c| format!("{h}={c}")));
        } else {
            names.push(h.clone());
        }
    }

    let mut features = Vec::new();
    let mut targets = Vec::new();
    'rows: for r in &records {
        let Some(target) = r[target_idx].parse::<f64>().ok().filter(|v| v.is_finite()) else {
            dropped += 1;
            continue;
        };
        let mut row = Vec::with_capacity(names.len());
        for (j, cell) in r.iter().enumerate() {
            if j == target_idx {
                continue;
            }
            if categorical[j] {
                if cell.is_empty() {
                    dropped += 1;
                    continue 'rows;
                }
                row.extend(categories[j].iter().map(|c| if c == cell { 1.0 } else { 0.0 }));
            } else {
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => row.push(v),
                    _ => {
                        dropped += 1;
                        continue 'rows;
                    }
                }
            }
        }
        features.push(row);
        targets.push(target);
    }
    if features.is_empty() {
        return Err(Error::NoUsableRows(path.display().to_string()));
    }
    let dataset = Dataset::new(features, targets, names)?.with_target_name(target_column);
    Ok(CsvLoad {
        dataset,
        dropped_rows: dropped,
    })
}

fn normal_noise(noise_std: f64) -> Result<Option<Normal<f64>>> {
    if noise_std == 0.0 {
        return Ok(None);
    }
    Normal::new(0.0, noise_std).map(Some).map_err(|e| Error::Invalid {
        what: "noise_std",
        msg: e.to_string(),
    })
}

/// Friedman #1 target for the first five coordinates.
pub fn friedman_target(x: &[f64]) -> f64 {
    10.0 * (PI * x[0] * x[1]).sin() + 20.0 * (x[2] - 0.5).powi(2) + 10.0 * x[3] + 5.0 * x[4]
}

/// Friedman #1: ten uniform features, only the first five used.
pub fn gen_friedman(n: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = normal_noise(noise_std)?;
    let mut features = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..10).map(|_| rng.random::<f64>()).collect();
        let eps = noise.map_or(0.0, |d| d.sample(&mut rng));
        targets.push(friedman_target(&x) + eps);
        features.push(x);
    }
    Dataset::new(features, targets, (1..=10).map(|i| format!("x{i}")).collect())
}

/// Ground truth for the range-strategy generator.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeStrategyTruth {
    pub experts: usize,
    /// Regime index of every generated row.
    pub regimes: Vec<usize>,
}

impl RangeStrategyTruth {
    /// The only feature that moves the output inside unit range `m`.
    pub fn driving_feature(&self, m: usize) -> usize {
        m + 1
    }

    pub fn regime_of(x0: f64, experts: usize) -> usize {
        (x0.max(0.0).floor() as usize).min(experts - 1)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["regime", "driving_feature"])?;
        for &r in &self.regimes {
            w.write_record([r.to_string(), self.driving_feature(r).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Noise-free target of the range-strategy generator.
pub fn range_strategy_target(x: &[f64], experts: usize) -> f64 {
    let r = RangeStrategyTruth::regime_of(x[0], experts);
    r as f64 + x[r + 1].clamp(0.0, 1.0)
}

/// Output-range-specific strategies with known ground truth.
///
/// Feature 0 is uniform on `[0, M]` and selects regime `m = floor(x0)`.
/// Features `1..=M` are uniform on `[0, 1]`; inside regime `m` the output is
/// `m + x[m + 1]`, so the unit range `[m, m + 1)` is driven by feature `m + 1`
/// alone.
pub fn gen_range_strategy(n: usize, experts: usize, seed: u64, noise_std: f64) -> Result<(Dataset, RangeStrategyTruth)> {
    if experts < 2 {
        return Err(Error::Invalid {
            what: "range strategy",
            msg: format!("need at least 2 regimes, got {experts}"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = normal_noise(noise_std)?;
    let mut features = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    let mut regimes = Vec::with_capacity(n);
    for _ in 0..n {
        let mut x = Vec::with_capacity(experts + 1);
        x.push(rng.random_range(0.0..experts as f64));
        x.extend((0..experts).map(|_| rng.random::<f64>()));
        let eps = noise.map_or(0.0, |d| d.sample(&mut rng));
        regimes.push(RangeStrategyTruth::regime_of(x[0], experts));
        targets.push(range_strategy_target(&x, experts) + eps);
        features.push(x);
    }
    let mut names = vec!["selector".to_string()];
    names.extend((1..=experts).map(|i| format!("driver{i}")));
    let data = Dataset::new(features, targets, names)?;
    Ok((data, RangeStrategyTruth { experts, regimes }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindSimConfig {
    pub n: usize,
    pub seed: u64,
    /// m/s
    pub rated_speed: f64,
    /// kW
    pub rated_power: f64,
    /// degrees
    pub max_misalignment: f64,
}

impl Default for WindSimConfig {
    fn default() -> Self {
        WindSimConfig {
            n: 5000,
            seed: 0,
            rated_speed: 12.0,
            rated_power: 2000.0,
            max_misalignment: 15.0,
        }
    }
}

pub const WIND_FEATURES: [&str; 4] = ["wind_speed", "air_density", "turbulence_intensity", "yaw_misalignment"];
pub const WIND_YAW_FEATURE: usize = 3;
const CUT_IN_SPEED: f64 = 3.0;
const MAX_SPEED: f64 = 25.0;
const REFERENCE_DENSITY: f64 = 1.225;

/// Power before misalignment losses.
pub fn wind_base_power(speed: f64, density: f64, cfg: &WindSimConfig) -> f64 {
    if speed < CUT_IN_SPEED {
        return 0.0;
    }
    if speed >= cfg.rated_speed {
        return cfg.rated_power;
    }
    let frac = (speed.powi(3) - CUT_IN_SPEED.powi(3)) / (cfg.rated_speed.powi(3) - CUT_IN_SPEED.powi(3));
    (cfg.rated_power * frac * density / REFERENCE_DENSITY).min(cfg.rated_power)
}

/// `cos^3` of the misalignment below rated speed, 1 otherwise.
pub fn yaw_multiplier(misalignment_deg: f64, speed: f64, rated_speed: f64) -> f64 {
    if speed < rated_speed {
        misalignment_deg.to_radians().cos().powi(3)
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindTruth {
    pub base_power: Vec<f64>,
    pub loss: Vec<f64>,
    pub below_rated: Vec<bool>,
}

impl WindTruth {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["base_power", "loss", "below_rated"])?;
        for i in 0..self.loss.len() {
            w.write_record([
                self.base_power[i].to_string(),
                self.loss[i].to_string(),
                (self.below_rated[i] as u8).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Simulated SCADA records with yaw-misalignment losses.
///
/// Wind speed is Weibull(k = 2, lambda = 8) capped at 25 m/s, density is
/// normal around 1.225 kg/m^3, turbulence intensity is uniform and does not
/// affect power. The misalignment is uniform in `[-max, max]` degrees.
pub fn gen_wind_scada(cfg: &WindSimConfig) -> Result<(Dataset, WindTruth)> {
    if !(cfg.rated_speed > CUT_IN_SPEED) || !(cfg.rated_power > 0.0) {
        return Err(Error::Invalid {
            what: "wind config",
            msg: "rated speed must exceed the 3 m/s cut-in and rated power must be positive".into(),
        });
    }
    if !(0.0..=90.0).contains(&cfg.max_misalignment) {
        return Err(Error::Invalid {
            what: "wind config",
            msg: "max_misalignment must lie in [0, 90] degrees".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let speed_dist = Weibull::new(8.0, 2.0).expect("valid weibull");
    let density_dist = Normal::new(REFERENCE_DENSITY, 0.03).expect("valid normal");
    let mut features = Vec::with_capacity(cfg.n);
    let mut targets = Vec::with_capacity(cfg.n);
    let mut truth = WindTruth {
        base_power: Vec::with_capacity(cfg.n),
        loss: Vec::with_capacity(cfg.n),
        below_rated: Vec::with_capacity(cfg.n),
    };
    for _ in 0..cfg.n {
        let speed: f64 = f64::min(speed_dist.sample(&mut rng), MAX_SPEED);
        let density: f64 = density_dist.sample(&mut rng);
        let turbulence: f64 = rng.random_range(0.05..0.25);
        let yaw = if cfg.max_misalignment > 0.0 {
            rng.random_range(-cfg.max_misalignment..=cfg.max_misalignment)
        } else {
            0.0
        };
        let base = wind_base_power(speed, density, cfg);
        let realized = base * yaw_multiplier(yaw, speed, cfg.rated_speed);
        features.push(vec![speed, density, turbulence, yaw]);
        targets.push(realized);
        truth.base_power.push(base);
        truth.loss.push(base - realized);
        truth.below_rated.push(speed < cfg.rated_speed);
    }
    let names = WIND_FEATURES.iter().map(|s| s.to_string()).collect();
    let data = Dataset::new(features, targets, names)?.with_target_name("power");
    Ok((data, truth))
}
