//! Occlusion curves and the area-between-curves (ABC) faithfulness score.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attribution::{
    explain_model, explain_query, AttributionMatrix, AttributionMethod, BaselinePool, BaselineSpec, Baselines,
    QueryMode,
};
use crate::data::Dataset;
use crate::disentangle::SurrogateHeads;
use crate::error::{check_len, Error, Result};
use crate::experts::RangeExpertBank;
use crate::nn::MlpModel;
use crate::query::{Query, QueryFn};
use crate::target::ScalarFunction;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Largest attribution first.
    Descending,
    Ascending,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlippingCurve {
    /// Outputs after 0..=d replacements.
    pub outputs: Vec<f64>,
    pub order: Vec<usize>,
    pub direction: Direction,
    pub baseline: Vec<f64>,
}

impl FlippingCurve {
    pub fn fractions(&self) -> Vec<f64> {
        let d = self.order.len().max(1) as f64;
        (0..self.outputs.len()).map(|k| k as f64 / d).collect()
    }

    pub fn to_csv(&self) -> String {
        curve_csv(&self.outputs)
    }
}

/// `fraction_flipped,output` rows for an output sequence.
pub fn curve_csv(outputs: &[f64]) -> String {
    let d = (outputs.len().max(2) - 1) as f64;
    let mut out = String::from("fraction_flipped,output\n");
    for (k, y) in outputs.iter().enumerate() {
        let _ = writeln!(out, "{},{y}", k as f64 / d);
    }
    out
}

/// Feature order by attribution value; ties go to the lower index.
pub fn flip_order(values: &[f64], direction: Direction) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let c = match direction {
            Direction::Descending => values[b].total_cmp(&values[a]),
            Direction::Ascending => values[a].total_cmp(&values[b]),
        };
        c.then(a.cmp(&b))
    });
    order
}

/// Outputs of `f` while replacing the features of `x` by `baseline` in `order`.
pub fn curve_for_order<F: ScalarFunction + ?Sized>(
    f: &F,
    x: &[f64],
    baseline: &[f64],
    order: &[usize],
) -> Result<Vec<f64>> {
    let d = f.input_dim();
    check_len("sample", d, x.len())?;
    check_len("baseline", d, baseline.len())?;
    check_len("flip order", d, order.len())?;
    let mut buf = x.to_vec();
    let mut outputs = Vec::with_capacity(d + 1);
    outputs.push(f.eval(&buf)?);
    for &i in order {
        buf[i] = baseline[i];
        outputs.push(f.eval(&buf)?);
    }
    Ok(outputs)
}

pub fn flipping_curve<F: ScalarFunction + ?Sized>(
    f: &F,
    x: &[f64],
    baseline: &[f64],
    attribution: &[f64],
    direction: Direction,
) -> Result<FlippingCurve> {
    check_len("attribution", f.input_dim(), attribution.len())?;
    let order = flip_order(attribution, direction);
    let outputs = curve_for_order(f, x, baseline, &order)?;
    Ok(FlippingCurve {
        outputs,
        order,
        direction,
        baseline: baseline.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbcResult {
    pub abc: f64,
    pub area_descending: f64,
    pub area_ascending: f64,
    pub normalizer: f64,
}

fn trapezoid(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let h = 1.0 / (values.len() - 1) as f64;
    values.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).sum()
}

/// Area terms between two output sequences and the straight line joining
/// their shared endpoints.
pub fn abc_from_outputs(descending: &[f64], ascending: &[f64]) -> Result<AbcResult> {
    check_len("ascending curve", descending.len(), ascending.len())?;
    if descending.is_empty() {
        return Err(Error::Invalid {
            what: "abc",
            msg: "empty curves".into(),
        });
    }
    let start = descending[0];
    let end = *descending.last().expect("non-empty");
    if ascending[0] != start || *ascending.last().expect("non-empty") != end {
        return Err(Error::Invalid {
            what: "abc",
            msg: "curves do not share endpoints".into(),
        });
    }
    let normalizer = (start - end).abs();
    if normalizer < 1e-12 {
        return Err(Error::DegeneratePair { distance: normalizer });
    }
    let n = descending.len();
    let line = |k: usize| {
        let t = if n > 1 { k as f64 / (n - 1) as f64 } else { 0.0 };
        start + t * (end - start)
    };
    let below: Vec<f64> = descending.iter().enumerate().map(|(k, c)| line(k) - c).collect();
    let above: Vec<f64> = ascending.iter().enumerate().map(|(k, c)| c - line(k)).collect();
    let area_descending = trapezoid(&below);
    let area_ascending = trapezoid(&above);
    Ok(AbcResult {
        abc: (area_descending + area_ascending) / normalizer,
        area_descending,
        area_ascending,
        normalizer,
    })
}

pub fn abc(descending: &FlippingCurve, ascending: &FlippingCurve) -> Result<AbcResult> {
    abc_from_outputs(&descending.outputs, &ascending.outputs)
}

/// ABC of `attribution` for one `(x, baseline)` pair.
pub fn abc_for<F: ScalarFunction + ?Sized>(f: &F, x: &[f64], baseline: &[f64], attribution: &[f64]) -> Result<AbcResult> {
    let desc = flipping_curve(f, x, baseline, attribution, Direction::Descending)?;
    // Ascending order is the reverse of descending for distinct values; tie
    // handling follows the same index rule in both directions.
    let asc = flipping_curve(f, x, baseline, attribution, Direction::Ascending)?;
    abc(&desc, &asc)
}

/// ABC values of random orderings: a uniformly random permutation is used as
/// the descending order and its reverse as the ascending one.
pub fn random_order_abc<F: ScalarFunction + ?Sized>(
    f: &F,
    x: &[f64],
    baseline: &[f64],
    permutations: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..f.input_dim()).collect();
    let mut out = Vec::with_capacity(permutations);
    for _ in 0..permutations {
        order.shuffle(&mut rng);
        let desc = curve_for_order(f, x, baseline, &order)?;
        let rev: Vec<usize> = order.iter().rev().copied().collect();
        let asc = curve_for_order(f, x, baseline, &rev)?;
        out.push(abc_from_outputs(&desc, &asc)?.abc);
    }
    Ok(out)
}

/// Mean and standard error of the mean.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonConfig {
    /// Only samples whose prediction lies in `[lo, hi)` are evaluated.
    pub slice: (f64, f64),
    pub method: AttributionMethod,
    pub query: Query,
    /// Reference for the naive explanation (ignored by LRP).
    pub naive_baseline: BaselineSpec,
    /// Reference for the query explanation (ignored by LRP).
    pub query_baseline: BaselineSpec,
    /// Conditional spec used as the occlusion reference; its seed is offset
    /// per evaluated sample.
    pub eval_baseline: BaselineSpec,
    pub n_samples: usize,
    pub seed: u64,
    pub query_mode: QueryMode,
    pub scored: ScoredOutput,
}

/// Function whose occlusion curves score both explanations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoredOutput {
    Model,
    Query,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairAbc {
    pub index: usize,
    pub naive: f64,
    pub query: f64,
    /// Draws averaged for this sample (degenerate pairs are dropped).
    pub draws: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub pairs: Vec<PairAbc>,
    pub mean_naive: f64,
    pub mean_query: f64,
    pub se_naive: f64,
    pub se_query: f64,
    /// `(mean_query - mean_naive) / |mean_naive|`; `None` without pairs.
    pub relative_improvement: Option<f64>,
    pub skipped_samples: usize,
}

impl ComparisonReport {
    fn empty() -> Self {
        ComparisonReport {
            pairs: Vec::new(),
            mean_naive: f64::NAN,
            mean_query: f64::NAN,
            se_naive: f64::NAN,
            se_query: f64::NAN,
            relative_improvement: None,
            skipped_samples: 0,
        }
    }

    pub fn to_record(&self) -> String {
        let mut out = String::from("index,naive_abc,query_abc,draws\n");
        for p in &self.pairs {
            let _ = writeln!(out, "{},{},{},{}", p.index, p.naive, p.query, p.draws);
        }
        out.push_str("# summary\n");
        let _ = writeln!(out, "# pairs={} skipped={}", self.pairs.len(), self.skipped_samples);
        let _ = writeln!(out, "# mean_naive={} se_naive={}", self.mean_naive, self.se_naive);
        let _ = writeln!(out, "# mean_query={} se_query={}", self.mean_query, self.se_query);
        match self.relative_improvement {
            Some(r) => {
                let _ = writeln!(out, "# relative_improvement={r}");
            }
            None => out.push_str("# relative_improvement=n/a\n"),
        }
        out
    }
}

/// Naive explanation of the model against a query explanation, scored by ABC
/// with conditional occlusion references.
pub fn compare_faithfulness(
    model: &MlpModel,
    bank: &RangeExpertBank,
    heads: Option<&SurrogateHeads>,
    dataset: &Dataset,
    cfg: &ComparisonConfig,
) -> Result<ComparisonReport> {
    if cfg.n_samples == 0 {
        return Ok(ComparisonReport::empty());
    }
    let pool = BaselinePool::new(dataset, model)?;
    let (lo, hi) = cfg.slice;
    let in_slice: Vec<usize> = pool
        .predictions()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= lo && p < hi)
        .map(|(i, _)| i)
        .collect();
    if in_slice.is_empty() {
        return Err(Error::Invalid {
            what: "comparison slice",
            msg: format!("no sample predicts inside [{lo}, {hi})"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut picks = in_slice;
    picks.shuffle(&mut rng);
    picks.truncate(cfg.n_samples);
    picks.sort_unstable();

    let resolve = |spec: &BaselineSpec| {
        if cfg.method.uses_baseline() {
            Baselines::resolve(spec, &pool)
        } else {
            Ok(Baselines::none())
        }
    };
    let naive_baselines = resolve(&cfg.naive_baseline)?;
    let query_baselines = resolve(&cfg.query_baseline)?;

    let mut report = ComparisonReport::empty();
    for (k, &i) in picks.iter().enumerate() {
        let x = &dataset.features()[i];
        let eval_spec = match &cfg.eval_baseline {
            BaselineSpec::Conditional {
                reference,
                delta,
                draws,
                seed,
            } => BaselineSpec::Conditional {
                reference: *reference,
                delta: *delta,
                draws: *draws,
                seed: seed.wrapping_add(k as u64),
            },
            other => other.clone(),
        };
        let references = pool.resolve(&eval_spec)?;
        let naive = explain_model(&cfg.method, model, x, &naive_baselines)?;
        let contextual = explain_query(
            &cfg.method,
            model,
            bank,
            heads,
            &cfg.query,
            x,
            &query_baselines,
            cfg.query_mode,
        )?;
        let mut sum_naive = 0.0;
        let mut sum_query = 0.0;
        let mut used = 0usize;
        for r in &references {
            let qf = QueryFn::new(model, bank, &cfg.query)?;
            let scored: &dyn ScalarFunction = match cfg.scored {
                ScoredOutput::Model => model,
                ScoredOutput::Query => &qf,
            };
            let a = match abc_for(scored, x, r, &naive.values) {
                Ok(a) => a,
                Err(Error::DegeneratePair { .. }) => continue,
                Err(e) => return Err(e),
            };
            let b = abc_for(scored, x, r, &contextual.values)?;
            sum_naive += a.abc;
            sum_query += b.abc;
            used += 1;
        }
        if used == 0 {
            report.skipped_samples += 1;
            continue;
        }
        report.pairs.push(PairAbc {
            index: i,
            naive: sum_naive / used as f64,
            query: sum_query / used as f64,
            draws: used,
        });
    }
    let naive: Vec<f64> = report.pairs.iter().map(|p| p.naive).collect();
    let contextual: Vec<f64> = report.pairs.iter().map(|p| p.query).collect();
    (report.mean_naive, report.se_naive) = mean_and_se(&naive);
    (report.mean_query, report.se_query) = mean_and_se(&contextual);
    if !report.pairs.is_empty() {
        report.relative_improvement = Some((report.mean_query - report.mean_naive) / report.mean_naive.abs());
    }
    Ok(report)
}

/// Flips features to zero in descending order of `naive - sum_{m<k} column_m`.
pub fn subtraction_flipping(
    model: &MlpModel,
    x: &[f64],
    naive: &[f64],
    columns: &AttributionMatrix,
    k: usize,
) -> Result<FlippingCurve> {
    let d = model.input_dim();
    check_len("naive attribution", d, naive.len())?;
    check_len("attribution matrix rows", d, columns.features())?;
    if k > columns.experts() {
        return Err(Error::Invalid {
            what: "subtraction level",
            msg: format!("k = {k} exceeds the {} experts", columns.experts()),
        });
    }
    let ordering: Vec<f64> = naive
        .iter()
        .zip(&columns.values)
        .map(|(n, row)| n - row[..k].iter().sum::<f64>())
        .collect();
    flipping_curve(model, x, &vec![0.0; d], &ordering, Direction::Descending)
}

/// Elementwise mean of equally long curves.
pub fn mean_curve(curves: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = curves.first() else {
        return Ok(Vec::new());
    };
    let mut mean = vec![0.0; first.len()];
    for c in curves {
        check_len("curve", first.len(), c.len())?;
        for (m, v) in mean.iter_mut().zip(c) {
            *m += v;
        }
    }
    let n = curves.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// Longest stretch of the flip axis over which the curve stays within `tol`
/// of `level`, as a fraction of the whole axis.
pub fn plateau_fraction(curve: &[f64], level: f64, tol: f64) -> f64 {
    if curve.len() < 2 {
        return 0.0;
    }
    let d = (curve.len() - 1) as f64;
    let mut best = 0usize;
    let mut start: Option<usize> = None;
    for (k, y) in curve.iter().enumerate() {
        if (y - level).abs() <= tol {
            let s = *start.get_or_insert(k);
            best = best.max(k - s);
        } else {
            start = None;
        }
    }
    best as f64 / d
}

pub struct SvgSeries<'a> {
    pub label: &'a str,
    pub values: &'a [f64],
}

/// Minimal line plot of curves over the fraction-flipped axis.
pub fn curves_svg(title: &str, series: &[SvgSeries<'_>]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 50.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for &v in s.values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let px = |t: f64| PAD + t * (W - 2.0 * PAD);
    let py = |v: f64| H - PAD - (v - lo) / (hi - lo) * (H - 2.0 * PAD);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = writeln!(out, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(out, "<text x=\"{PAD}\" y=\"20\">{}</text>", escape(title));
    let _ = writeln!(
        out,
        "<path d=\"M{PAD} {} H{} M{PAD} {PAD} V{}\" stroke=\"black\" fill=\"none\"/>",
        H - PAD,
        W - PAD,
        H - PAD
    );
    let _ = writeln!(out, "<text x=\"{}\" y=\"{}\">fraction flipped</text>", W / 2.0 - 40.0, H - 15.0);
    let _ = writeln!(out, "<text x=\"5\" y=\"{}\">{lo:.3}</text>", H - PAD);
    let _ = writeln!(out, "<text x=\"5\" y=\"{}\">{hi:.3}</text>", PAD + 4.0);
    for (j, s) in series.iter().enumerate() {
        let color = COLORS[j % COLORS.len()];
        let n = s.values.len().max(2) - 1;
        let points: Vec<String> = s
            .values
            .iter()
            .enumerate()
            .map(|(k, &v)| format!("{:.2},{:.2}", px(k as f64 / n as f64), py(v)))
            .collect();
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" stroke=\"{color}\" fill=\"none\" stroke-width=\"2\"/>",
            points.join(" ")
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>",
            W - PAD - 120.0,
            PAD + 16.0 * j as f64,
            escape(s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}
