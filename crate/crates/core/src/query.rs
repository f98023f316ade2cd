//! Explananda as linear combinations of range experts.

use std::fmt;
use std::str::FromStr;

use crate::error::{check_finite, check_len, Error, Result};
use crate::experts::{ExpertVector, RangeExpertBank};
use crate::nn::MlpModel;
use crate::target::{Differentiable, ScalarFunction};

#[derive(Debug, Clone, PartialEq)]
pub enum QueryDescriptor {
    Step { reference: f64 },
    Sigmoid { center: f64, temperature: f64 },
    Custom { label: String },
}

impl fmt::Display for QueryDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QueryDescriptor::Step { reference } => write!(f, "step:ref={reference}"),
            QueryDescriptor::Sigmoid { center, temperature } => {
                write!(f, "sigmoid:center={center},temp={temperature}")
            }
            QueryDescriptor::Custom { label } => f.write_str(label),
        }
    }
}

/// Where a step reference landed after snapping to a breakpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snap {
    pub requested: f64,
    pub snapped: f64,
    pub breakpoint: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    weights: Vec<f64>,
    descriptor: QueryDescriptor,
    snap: Option<Snap>,
}

impl Query {
    pub fn new(weights: Vec<f64>, descriptor: QueryDescriptor) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Invalid {
                what: "query",
                msg: "no weights".into(),
            });
        }
        check_finite("query weights", &weights)?;
        Ok(Query {
            weights,
            descriptor,
            snap: None,
        })
    }

    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let label = format!(
            "weights:{}",
            weights.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
        );
        Query::new(weights, QueryDescriptor::Custom { label })
    }

    /// One-hot query selecting a single expert.
    pub fn expert(m: usize, experts: usize) -> Result<Self> {
        if m >= experts {
            return Err(Error::IndexOutOfRange { index: m, len: experts });
        }
        let mut w = vec![0.0; experts];
        w[m] = 1.0;
        Query::new(w, QueryDescriptor::Custom { label: format!("expert:{m}") })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn descriptor(&self) -> &QueryDescriptor {
        &self.descriptor
    }

    pub fn snap(&self) -> Option<&Snap> {
        self.snap.as_ref()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Key-value record for result files.
    pub fn to_record(&self) -> String {
        let mut out = format!("query {}", self.descriptor);
        if let Some(s) = &self.snap {
            out.push_str(&format!(
                " snapped_ref={} snap_breakpoint={} snap_distance={}",
                s.snapped, s.breakpoint, s.distance
            ));
        }
        out.push_str(" weights=");
        out.push_str(&self.weights.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
        out
    }
}

/// `q = sum_m w_m z_m`
pub fn evaluate_query(query: &Query, z: &ExpertVector) -> Result<f64> {
    check_len("expert vector", query.len(), z.len())?;
    Ok(query.weights.iter().zip(z.values()).map(|(w, z)| w * z).sum())
}

pub fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Projects `g` onto the expert span: `q` becomes the piecewise-linear
/// interpolant of `g - g(offset)` through every breakpoint.
pub fn query_from_target<G>(bank: &RangeExpertBank, g: G, descriptor: QueryDescriptor) -> Result<Query>
where
    G: Fn(f64) -> f64,
{
    let m_count = bank.num_experts();
    let mut weights = Vec::with_capacity(m_count);
    for m in 0..m_count {
        let lo = bank.offset() + bank.breakpoints()[m];
        let g_lo = g(lo);
        if !g_lo.is_finite() {
            return Err(Error::NonFinite(format!("target at {lo}")));
        }
        let tau = bank.width(m);
        if tau.is_finite() {
            let hi = bank.offset() + bank.upper_edge(m);
            let g_hi = g(hi);
            if !g_hi.is_finite() {
                return Err(Error::NonFinite(format!("target at {hi}")));
            }
            weights.push((g_hi - g_lo) / tau);
        } else {
            weights.push(affine_slope(&g, lo, bank.bounded_width(m))?);
        }
    }
    Query::new(weights, descriptor)
}

/// Slope of `g` on `[lo, inf)`, or an error if `g` is not affine there.
fn affine_slope<G: Fn(f64) -> f64>(g: &G, lo: f64, scale: f64) -> Result<f64> {
    let g0 = g(lo);
    let slope = (g(lo + scale) - g0) / scale;
    if !slope.is_finite() {
        return Err(Error::NonFinite(format!("target slope above {lo}")));
    }
    for k in [0.5, 2.0, 10.0, 1e3] {
        let t = lo + k * scale;
        let predicted = g0 + slope * k * scale;
        let actual = g(t);
        if !actual.is_finite() || (actual - predicted).abs() > 1e-9 * predicted.abs().max(g0.abs()).max(1.0) {
            return Err(Error::NonAffineTop);
        }
    }
    Ok(slope)
}

pub fn sigmoid_query(bank: &RangeExpertBank, center: f64, temperature: f64) -> Result<Query> {
    if !(temperature > 0.0) {
        return Err(Error::Invalid {
            what: "query",
            msg: "sigmoid temperature must be positive".into(),
        });
    }
    query_from_target(
        bank,
        |y| logistic((y - center) / temperature),
        QueryDescriptor::Sigmoid { center, temperature },
    )
}

/// "Why is the output above `reference`?" The reference is snapped to the
/// nearest breakpoint so the query stays exactly inside the expert span.
pub fn step_query(bank: &RangeExpertBank, reference: f64) -> Result<Query> {
    let (lo, hi) = bank.covered_range();
    if !(reference >= lo && reference <= hi) {
        return Err(Error::OutOfCoverage { value: reference, lo, hi });
    }
    let (k, snapped) = bank
        .breakpoints()
        .iter()
        .map(|b| bank.offset() + b)
        .enumerate()
        .min_by(|a, b| (a.1 - reference).abs().total_cmp(&(b.1 - reference).abs()))
        .expect("bank has experts");
    let weights = (0..bank.num_experts()).map(|m| if m >= k { 1.0 } else { 0.0 }).collect();
    let mut q = Query::new(weights, QueryDescriptor::Step { reference })?;
    q.snap = Some(Snap {
        requested: reference,
        snapped,
        breakpoint: k,
        distance: (snapped - reference).abs(),
    });
    Ok(q)
}

/// Parsed form of the CLI query grammar.
#[derive(Debug, Clone, PartialEq)]
pub enum QuerySpec {
    Step { reference: f64 },
    Sigmoid { center: f64, temperature: f64 },
    Weights(Vec<f64>),
}

impl FromStr for QuerySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: String| Error::Invalid { what: "query spec", msg };
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| bad(format!("'{s}': expected step:, sigmoid: or weights:")))?;
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad(format!("cannot parse '{t}' as a number")));
        let field = |pairs: &[(&str, &str)], key: &str| -> Result<f64> {
            let v = pairs
                .iter()
                .find(|(k, _)| k.trim() == key)
                .ok_or_else(|| bad(format!("missing '{key}=' in '{s}'")))?;
            num(v.1)
        };
        match kind {
            "weights" => Ok(QuerySpec::Weights(rest.split(',').map(num).collect::<Result<_>>()?)),
            "step" | "sigmoid" => {
                let pairs = rest
                    .split(',')
                    .map(|p| p.split_once('=').ok_or_else(|| bad(format!("expected key=value, got '{p}'"))))
                    .collect::<Result<Vec<_>>>()?;
                if kind == "step" {
                    Ok(QuerySpec::Step { reference: field(&pairs, "ref")? })
                } else {
                    Ok(QuerySpec::Sigmoid {
                        center: field(&pairs, "center")?,
                        temperature: field(&pairs, "temp")?,
                    })
                }
            }
            other => Err(bad(format!("unknown query kind '{other}'"))),
        }
    }
}

impl QuerySpec {
    pub fn build(&self, bank: &RangeExpertBank) -> Result<Query> {
        match self {
            QuerySpec::Step { reference } => step_query(bank, *reference),
            QuerySpec::Sigmoid { center, temperature } => sigmoid_query(bank, *center, *temperature),
            QuerySpec::Weights(w) => {
                check_len("query weights", bank.num_experts(), w.len())?;
                Query::from_weights(w.clone())
            }
        }
    }
}

/// `x -> sum_m w_m z_m(f(x))`, the direct attribution target of a query.
#[derive(Clone, Copy)]
pub struct QueryFn<'a> {
    model: &'a MlpModel,
    bank: &'a RangeExpertBank,
    query: &'a Query,
}

impl<'a> QueryFn<'a> {
    pub fn new(model: &'a MlpModel, bank: &'a RangeExpertBank, query: &'a Query) -> Result<Self> {
        check_len("query weights", bank.num_experts(), query.len())?;
        Ok(QueryFn { model, bank, query })
    }

    fn value_at_output(&self, y: f64) -> f64 {
        self.query
            .weights()
            .iter()
            .enumerate()
            .map(|(m, w)| w * self.bank.encode_value(y, m))
            .sum()
    }
}

impl ScalarFunction for QueryFn<'_> {
    fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    fn eval(&self, x: &[f64]) -> Result<f64> {
        Ok(self.value_at_output(self.model.predict(x)?))
    }
}

impl Differentiable for QueryFn<'_> {
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let trace = self.model.forward(x)?;
        let scale: f64 = self
            .query
            .weights()
            .iter()
            .enumerate()
            .map(|(m, w)| w * self.bank.clip_derivative(trace.output, m))
            .sum();
        Ok(self.model.backprop_input(&trace, scale))
    }
}
