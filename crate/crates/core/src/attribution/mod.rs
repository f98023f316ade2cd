//! Attribution backends and their application to experts and queries.
//!
//! Occlusion (Shapley) and integrated gradients explain any scalar function of
//! the input, so experts and queries are explained through their composed
//! functions `x -> z_m(f(x))`. Relevance propagation needs a computational
//! graph per expert, which the surrogate heads provide.

mod baseline;
mod ig;
mod lrp;
mod shapley;

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

pub use baseline::{resolve_baseline, BaselinePool, BaselineSpec};
pub use ig::integrated_gradients;
pub use lrp::{LrpEpsilon, LrpTarget};
pub use shapley::{shapley_values, ShapleyMode, MAX_EXACT_FEATURES};

pub(crate) use shapley::exact_multi;

use crate::disentangle::SurrogateHeads;
use crate::error::{check_len, Error, Result};
use crate::experts::{ExpertFn, RangeExpertBank};
use crate::nn::MlpModel;
use crate::query::{Query, QueryFn};
use crate::target::Differentiable;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttributionMethod {
    Shapley(ShapleyMode),
    IntegratedGradients { steps: usize },
    Lrp(LrpEpsilon),
}

impl AttributionMethod {
    pub fn kind(&self) -> MethodKind {
        match self {
            AttributionMethod::Shapley(ShapleyMode::Exact) => MethodKind::ShapleyExact,
            AttributionMethod::Shapley(ShapleyMode::Sampled { .. }) => MethodKind::ShapleySampled,
            AttributionMethod::IntegratedGradients { .. } => MethodKind::IntegratedGradients,
            AttributionMethod::Lrp(_) => MethodKind::Lrp,
        }
    }

    pub fn uses_baseline(&self) -> bool {
        !matches!(self, AttributionMethod::Lrp(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodKind {
    ShapleyExact,
    ShapleySampled,
    IntegratedGradients,
    Lrp,
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MethodKind::ShapleyExact => "shapley_exact",
            MethodKind::ShapleySampled => "shapley_sampled",
            MethodKind::IntegratedGradients => "integrated_gradients",
            MethodKind::Lrp => "lrp",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TargetKind {
    ModelOutput,
    Expert(usize),
    Query(String),
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetKind::ModelOutput => f.write_str("model_output"),
            TargetKind::Expert(m) => write!(f, "expert:{m}"),
            TargetKind::Query(d) => write!(f, "query:{d}"),
        }
    }
}

/// Resolved baseline points together with the spec they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Baselines {
    pub spec: BaselineSpec,
    pub points: Vec<Vec<f64>>,
}

impl Baselines {
    pub fn fixed(point: Vec<f64>) -> Self {
        Baselines {
            spec: BaselineSpec::Fixed(point.clone()),
            points: vec![point],
        }
    }

    pub fn resolve(spec: &BaselineSpec, pool: &BaselinePool) -> Result<Self> {
        Ok(Baselines {
            spec: spec.clone(),
            points: pool.resolve(spec)?,
        })
    }

    /// Placeholder for methods that ignore the baseline.
    pub fn none() -> Self {
        Baselines {
            spec: BaselineSpec::Fixed(Vec::new()),
            points: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub values: Vec<f64>,
    pub method: MethodKind,
    pub target: TargetKind,
    pub baseline: Option<BaselineSpec>,
    /// `|sum(values) - (target(x) - mean target(baseline))|`; for LRP the
    /// reference is the explained value itself.
    pub completeness_gap: f64,
    /// Per-baseline explanations when several baselines were averaged.
    pub per_baseline: Vec<Vec<f64>>,
}

impl Explanation {
    pub fn to_record(&self, feature_names: &[String]) -> String {
        let mut out = String::new();
        let baseline = self.baseline.as_ref().map_or_else(|| "none".to_string(), |b| b.to_string());
        let _ = writeln!(
            out,
            "explanation method={} target={} baseline={} completeness_gap={}",
            self.method, self.target, baseline, self.completeness_gap
        );
        out.push_str("feature,value\n");
        for (i, v) in self.values.iter().enumerate() {
            let name = feature_names.get(i).map_or_else(|| format!("x{i}"), Clone::clone);
            let _ = writeln!(out, "{name},{v}");
        }
        out
    }

    /// Elementwise standard deviation over the per-baseline explanations.
    pub fn baseline_spread(&self) -> Option<Vec<f64>> {
        let n = self.per_baseline.len();
        if n < 2 {
            return None;
        }
        Some(
            (0..self.values.len())
                .map(|i| {
                    let mean = self.values[i];
                    let var = self.per_baseline.iter().map(|v| (v[i] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                    var.sqrt()
                })
                .collect(),
        )
    }
}

/// Averages a baseline-dependent attribution over all baseline points.
fn average_over_baselines<F: Differentiable + ?Sized>(
    method: &AttributionMethod,
    f: &F,
    x: &[f64],
    baselines: &Baselines,
    target: TargetKind,
) -> Result<Explanation> {
    if baselines.points.is_empty() {
        return Err(Error::Config(format!("{} needs at least one baseline", method.kind())));
    }
    let d = f.input_dim();
    check_len("sample", d, x.len())?;
    let fx = f.eval(x)?;
    let mut sum = vec![0.0; d];
    let mut per = Vec::with_capacity(baselines.points.len());
    let mut mean_fb = 0.0;
    for b in &baselines.points {
        let v = match method {
            AttributionMethod::Shapley(mode) => shapley_values(f, x, b, *mode)?,
            AttributionMethod::IntegratedGradients { steps } => integrated_gradients(f, x, b, *steps)?,
            AttributionMethod::Lrp(_) => unreachable!("lrp is baseline-free"),
        };
        mean_fb += f.eval(b)?;
        for (s, vi) in sum.iter_mut().zip(&v) {
            *s += vi;
        }
        per.push(v);
    }
    let n = baselines.points.len() as f64;
    mean_fb /= n;
    let values: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let gap = (values.iter().sum::<f64>() - (fx - mean_fb)).abs();
    Ok(Explanation {
        values,
        method: method.kind(),
        target,
        baseline: Some(baselines.spec.clone()),
        completeness_gap: gap,
        per_baseline: if per.len() > 1 { per } else { Vec::new() },
    })
}

fn lrp_explanation(
    eps: LrpEpsilon,
    model: &MlpModel,
    heads: Option<&SurrogateHeads>,
    x: &[f64],
    target: LrpTarget<'_>,
    kind: TargetKind,
) -> Result<Explanation> {
    let (values, explained) = lrp::lrp_values(model, heads, x, target, eps)?;
    let gap = (values.iter().sum::<f64>() - explained).abs();
    Ok(Explanation {
        values,
        method: MethodKind::Lrp,
        target: kind,
        baseline: None,
        completeness_gap: gap,
        per_baseline: Vec::new(),
    })
}

/// Epsilon-rule relevance propagation for the raw output, one expert or a query.
pub fn lrp(
    model: &MlpModel,
    heads: Option<&SurrogateHeads>,
    x: &[f64],
    target: LrpTarget<'_>,
    eps: LrpEpsilon,
) -> Result<Explanation> {
    let kind = match target {
        LrpTarget::ModelOutput => TargetKind::ModelOutput,
        LrpTarget::Expert(m) => TargetKind::Expert(m),
        LrpTarget::Query(q) => TargetKind::Query(q.descriptor().to_string()),
    };
    lrp_explanation(eps, model, heads, x, target, kind)
}

/// Naive explanation of the model output.
pub fn explain_model(
    method: &AttributionMethod,
    model: &MlpModel,
    x: &[f64],
    baselines: &Baselines,
) -> Result<Explanation> {
    match method {
        AttributionMethod::Lrp(eps) => lrp(model, None, x, LrpTarget::ModelOutput, *eps),
        _ => average_over_baselines(method, model, x, baselines, TargetKind::ModelOutput),
    }
}

/// Explains expert `m`, i.e. the input contributions `R_im` through that expert.
pub fn explain_expert(
    method: &AttributionMethod,
    model: &MlpModel,
    bank: &RangeExpertBank,
    heads: Option<&SurrogateHeads>,
    m: usize,
    x: &[f64],
    baselines: &Baselines,
) -> Result<Explanation> {
    match method {
        AttributionMethod::Lrp(eps) => {
            if m >= bank.num_experts() {
                return Err(Error::IndexOutOfRange {
                    index: m,
                    len: bank.num_experts(),
                });
            }
            lrp(model, heads, x, LrpTarget::Expert(m), *eps)
        }
        _ => {
            let f = ExpertFn::new(bank, model, m)?;
            average_over_baselines(method, &f, x, baselines, TargetKind::Expert(m))
        }
    }
}

const EXPERT_TOTAL_ROW: &str = "__expert_total";
const BASELINE_TOTAL_ROW: &str = "__baseline_total";
const COLUMN_GAP_ROW: &str = "__column_gap";

/// Per-feature, per-expert relevances for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMatrix {
    /// `values[i][m]` is the contribution of feature `i` through expert `m`.
    pub values: Vec<Vec<f64>>,
    /// Expert activations at the sample, `z(x)`.
    pub expert_totals: Vec<f64>,
    /// Mean expert activations at the baselines (zeros for LRP).
    pub baseline_totals: Vec<f64>,
    pub column_gaps: Vec<f64>,
    pub method: MethodKind,
    pub baseline: Option<BaselineSpec>,
}

impl AttributionMatrix {
    pub fn features(&self) -> usize {
        self.values.len()
    }

    pub fn experts(&self) -> usize {
        self.expert_totals.len()
    }

    pub fn column(&self, m: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[m]).collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.experts())
            .map(|m| self.values.iter().map(|row| row[m]).sum())
            .collect()
    }

    /// `sum_m w_m * column_m`
    pub fn combine(&self, weights: &[f64]) -> Result<Vec<f64>> {
        check_len("query weights", self.experts(), weights.len())?;
        Ok(self
            .values
            .iter()
            .map(|row| row.iter().zip(weights).map(|(r, w)| r * w).sum())
            .collect())
    }

    pub fn to_csv(&self, feature_names: &[String]) -> String {
        let mut out = String::from("feature");
        for m in 0..self.experts() {
            let _ = write!(out, ",expert_{m}");
        }
        out.push('\n');
        for (i, row) in self.values.iter().enumerate() {
            out.push_str(feature_names.get(i).map_or("?", String::as_str));
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        for (label, row) in [
            (EXPERT_TOTAL_ROW, &self.expert_totals),
            (BASELINE_TOTAL_ROW, &self.baseline_totals),
            (COLUMN_GAP_ROW, &self.column_gaps),
        ] {
            out.push_str(label);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path, feature_names: &[String]) -> Result<()> {
        std::fs::write(path, self.to_csv(feature_names))?;
        Ok(())
    }

    /// Reads a matrix written by [`AttributionMatrix::write_csv`]. Totals and
    /// gaps survive the round trip; the baseline spec does not.
    pub fn read_csv(path: &Path, method: MethodKind) -> Result<(AttributionMatrix, Vec<String>)> {
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        let mut reader = csv::Reader::from_path(path)?;
        let experts = reader.headers()?.len().saturating_sub(1);
        let mut names = Vec::new();
        let mut values = Vec::new();
        let mut totals = vec![f64::NAN; experts];
        let mut base_totals = vec![f64::NAN; experts];
        let mut gaps = vec![f64::NAN; experts];
        for (line, rec) in reader.records().enumerate() {
            let rec = rec?;
            let label = rec.get(0).unwrap_or_default().to_string();
            let row = rec
                .iter()
                .skip(1)
                .map(|t| {
                    t.parse::<f64>().map_err(|_| Error::Parse {
                        path: path.display().to_string(),
                        line: line + 2,
                        msg: format!("cannot parse '{t}'"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            check_len("matrix row", experts, row.len())?;
            match label.as_str() {
                EXPERT_TOTAL_ROW => totals = row,
                BASELINE_TOTAL_ROW => base_totals = row,
                COLUMN_GAP_ROW => gaps = row,
                _ => {
                    names.push(label);
                    values.push(row);
                }
            }
        }
        Ok((
            AttributionMatrix {
                values,
                expert_totals: totals,
                baseline_totals: base_totals,
                column_gaps: gaps,
                method,
                baseline: None,
            },
            names,
        ))
    }
}

/// The explanation basis: one column per expert.
pub fn attribution_basis(
    method: &AttributionMethod,
    model: &MlpModel,
    bank: &RangeExpertBank,
    heads: Option<&SurrogateHeads>,
    x: &[f64],
    baselines: &Baselines,
) -> Result<AttributionMatrix> {
    let n_experts = bank.num_experts();
    let d = model.input_dim();
    let mut values = vec![vec![0.0; n_experts]; d];
    let mut gaps = Vec::with_capacity(n_experts);
    for m in 0..n_experts {
        let e = explain_expert(method, model, bank, heads, m, x, baselines)?;
        for (row, v) in values.iter_mut().zip(&e.values) {
            row[m] = *v;
        }
        gaps.push(e.completeness_gap);
    }
    let expert_totals = bank.encode(model.predict(x)?).z.0;
    let mut baseline_totals = vec![0.0; n_experts];
    if method.uses_baseline() {
        for b in &baselines.points {
            for (t, z) in baseline_totals.iter_mut().zip(bank.encode(model.predict(b)?).z.0) {
                *t += z;
            }
        }
        let n = baselines.points.len().max(1) as f64;
        baseline_totals.iter_mut().for_each(|t| *t /= n);
    }
    Ok(AttributionMatrix {
        values,
        expert_totals,
        baseline_totals,
        column_gaps: gaps,
        method: method.kind(),
        baseline: method.uses_baseline().then(|| baselines.spec.clone()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryMode {
    /// `sum_m w_m E(z_m, x)`
    BasisSum,
    /// `E(sum_m w_m z_m, x)`
    Direct,
}

/// Query explanation answered from a precomputed basis.
pub fn explain_query_from_basis(basis: &AttributionMatrix, query: &Query, _heads: Option<&SurrogateHeads>) -> Result<Explanation> {
    let values = basis.combine(query.weights())?;
    let q = |z: &[f64]| -> f64 { z.iter().zip(query.weights()).map(|(a, b)| a * b).sum() };
    let reference = if basis.method == MethodKind::Lrp {
        f64::NAN
    } else {
        q(&basis.expert_totals) - q(&basis.baseline_totals)
    };
    let gap = if reference.is_nan() {
        // LRP columns are not tied to z(x); report the weighted column gaps.
        basis.column_gaps.iter().zip(query.weights()).map(|(g, w)| g * w.abs()).sum()
    } else {
        (values.iter().sum::<f64>() - reference).abs()
    };
    Ok(Explanation {
        values,
        method: basis.method,
        target: TargetKind::Query(query.descriptor().to_string()),
        baseline: basis.baseline.clone(),
        completeness_gap: gap,
        per_baseline: Vec::new(),
    })
}

#[allow(clippy::too_many_arguments)]
pub fn explain_query(
    method: &AttributionMethod,
    model: &MlpModel,
    bank: &RangeExpertBank,
    heads: Option<&SurrogateHeads>,
    query: &Query,
    x: &[f64],
    baselines: &Baselines,
    mode: QueryMode,
) -> Result<Explanation> {
    check_len("query weights", bank.num_experts(), query.len())?;
    match mode {
        QueryMode::BasisSum => {
            let basis = attribution_basis(method, model, bank, heads, x, baselines)?;
            explain_query_from_basis(&basis, query, heads)
        }
        QueryMode::Direct => match method {
            AttributionMethod::Lrp(eps) => lrp(model, heads, x, LrpTarget::Query(query), *eps),
            _ => {
                let f = QueryFn::new(model, bank, query)?;
                average_over_baselines(
                    method,
                    &f,
                    x,
                    baselines,
                    TargetKind::Query(query.descriptor().to_string()),
                )
            }
        },
    }
}
