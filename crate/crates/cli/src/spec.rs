//! Parsers for the string arguments shared by several subcommands.

use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use range_experts::attribution::{AttributionMethod, BaselineSpec, LrpEpsilon, MethodKind, QueryMode, ShapleyMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodName {
    Shapley,
    ShapleySampled,
    Ig,
    Lrp,
}

impl FromStr for MethodName {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "shapley" | "shapley_exact" => MethodName::Shapley,
            "shapley_sampled" => MethodName::ShapleySampled,
            "ig" | "integrated_gradients" => MethodName::Ig,
            "lrp" => MethodName::Lrp,
            other => bail!("unknown method '{other}' (expected shapley, shapley_sampled, ig or lrp)"),
        })
    }
}

impl MethodName {
    pub fn kind(self) -> MethodKind {
        match self {
            MethodName::Shapley => MethodKind::ShapleyExact,
            MethodName::ShapleySampled => MethodKind::ShapleySampled,
            MethodName::Ig => MethodKind::IntegratedGradients,
            MethodName::Lrp => MethodKind::Lrp,
        }
    }
}

/// Method knobs that are not part of the method name.
#[derive(Debug, Clone, clap::Args)]
pub struct MethodArgs {
    /// shapley | shapley_sampled | ig | lrp
    #[arg(long, default_value = "ig")]
    pub method: MethodName,
    /// IG integration steps.
    #[arg(long, default_value_t = 64)]
    pub steps: usize,
    /// Permutations for sampled Shapley.
    #[arg(long, default_value_t = 256)]
    pub permutations: usize,
    /// LRP stabilizer, relative to the mean absolute denominator per layer.
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
}

impl MethodArgs {
    pub fn build(&self, seed: u64) -> AttributionMethod {
        match self.method {
            MethodName::Shapley => AttributionMethod::Shapley(ShapleyMode::Exact),
            MethodName::ShapleySampled => AttributionMethod::Shapley(ShapleyMode::Sampled {
                permutations: self.permutations,
                seed,
            }),
            MethodName::Ig => AttributionMethod::IntegratedGradients { steps: self.steps },
            MethodName::Lrp => AttributionMethod::Lrp(LrpEpsilon::Relative(self.eps)),
        }
    }
}

pub fn parse_kind(s: &str) -> Result<MethodKind> {
    Ok(s.parse::<MethodName>()?.kind())
}

pub fn parse_mode(s: &str) -> Result<QueryMode> {
    match s {
        "basis_sum" => Ok(QueryMode::BasisSum),
        "direct" => Ok(QueryMode::Direct),
        other => bail!("unknown mode '{other}' (expected basis_sum or direct)"),
    }
}

pub fn mode_name(mode: QueryMode) -> &'static str {
    match mode {
        QueryMode::BasisSum => "basis_sum",
        QueryMode::Direct => "direct",
    }
}

/// Baseline argument before the dataset is known.
///
/// `zero`, `mean`, `fixed:<f>,<f>,...` or
/// `conditional:ref=<f>[,delta=<f>][,draws=<n>][,seed=<n>]`. A missing delta
/// defaults to 2.5% of the prediction range, draws to 5 and seed to the
/// command seed.
#[derive(Debug, Clone, PartialEq)]
pub enum BaselineArg {
    Zero,
    Mean,
    Fixed(Vec<f64>),
    Conditional {
        reference: f64,
        delta: Option<f64>,
        draws: Option<usize>,
        seed: Option<u64>,
    },
}

pub const DEFAULT_DELTA_FRACTION: f64 = 0.025;
pub const DEFAULT_DRAWS: usize = 5;

impl FromStr for BaselineArg {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        match kind {
            "zero" => Ok(BaselineArg::Zero),
            "mean" => Ok(BaselineArg::Mean),
            "fixed" => Ok(BaselineArg::Fixed(
                rest.split(',')
                    .map(|t| t.trim().parse::<f64>().with_context(|| format!("bad number '{t}' in '{s}'")))
                    .collect::<Result<_>>()?,
            )),
            "conditional" => {
                let mut reference = None;
                let (mut delta, mut draws, mut seed) = (None, None, None);
                for pair in rest.split(',').filter(|p| !p.is_empty()) {
                    let (k, v) = pair
                        .split_once('=')
                        .ok_or_else(|| anyhow!("expected key=value, got '{pair}'"))?;
                    let v = v.trim();
                    let bad = || format!("bad value '{v}' for '{k}'");
                    match k.trim() {
                        "ref" => reference = Some(v.parse::<f64>().with_context(bad)?),
                        "delta" => delta = Some(v.parse::<f64>().with_context(bad)?),
                        "draws" => draws = Some(v.parse::<usize>().with_context(bad)?),
                        "seed" => seed = Some(v.parse::<u64>().with_context(bad)?),
                        other => bail!("unknown conditional baseline key '{other}'"),
                    }
                }
                Ok(BaselineArg::Conditional {
                    reference: reference.ok_or_else(|| anyhow!("conditional baseline needs ref=<value>"))?,
                    delta,
                    draws,
                    seed,
                })
            }
            other => bail!("unknown baseline '{other}' (expected zero, mean, fixed: or conditional:)"),
        }
    }
}

impl BaselineArg {
    pub fn conditional_at(reference: f64) -> Self {
        BaselineArg::Conditional {
            reference,
            delta: None,
            draws: None,
            seed: None,
        }
    }

    /// `predictions` sets the default conditional window.
    pub fn resolve(&self, dim: usize, predictions: &[f64], seed: u64) -> BaselineSpec {
        match self {
            BaselineArg::Zero => BaselineSpec::Fixed(vec![0.0; dim]),
            BaselineArg::Mean => BaselineSpec::DatasetMean,
            BaselineArg::Fixed(v) => BaselineSpec::Fixed(v.clone()),
            &BaselineArg::Conditional {
                reference,
                delta,
                draws,
                seed: s,
            } => BaselineSpec::Conditional {
                reference,
                delta: delta.unwrap_or_else(|| DEFAULT_DELTA_FRACTION * prediction_span(predictions)),
                draws: draws.unwrap_or(DEFAULT_DRAWS),
                seed: s.unwrap_or(seed),
            },
        }
    }
}

/// Reads back the `Display` form of a resolved spec.
pub fn parse_resolved(s: &str) -> Result<BaselineSpec> {
    match s.parse::<BaselineArg>()? {
        BaselineArg::Mean => Ok(BaselineSpec::DatasetMean),
        BaselineArg::Fixed(v) => Ok(BaselineSpec::Fixed(v)),
        BaselineArg::Conditional {
            reference,
            delta: Some(delta),
            draws: Some(draws),
            seed: Some(seed),
        } => Ok(BaselineSpec::Conditional {
            reference,
            delta,
            draws,
            seed,
        }),
        _ => bail!("'{s}' is not a fully resolved baseline"),
    }
}

pub fn prediction_span(predictions: &[f64]) -> f64 {
    let lo = predictions.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = predictions.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        hi - lo
    } else {
        0.0
    }
}

/// `all`, or comma-separated indices and half-open ranges `a..b`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rows {
    All,
    List(Vec<usize>),
}

impl FromStr for Rows {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(Rows::All);
        }
        let mut out = Vec::new();
        for item in s.split(',') {
            let item = item.trim();
            match item.split_once("..") {
                Some((a, b)) => {
                    let a: usize = a.parse().with_context(|| format!("bad row range '{item}'"))?;
                    let b: usize = b.parse().with_context(|| format!("bad row range '{item}'"))?;
                    if b <= a {
                        bail!("empty row range '{item}'");
                    }
                    out.extend(a..b);
                }
                None => out.push(item.parse().with_context(|| format!("bad row index '{item}'"))?),
            }
        }
        Ok(Rows::List(out))
    }
}

impl Rows {
    pub fn select(&self, n: usize) -> Result<Vec<usize>> {
        match self {
            Rows::All => Ok((0..n).collect()),
            Rows::List(v) => {
                if let Some(&bad) = v.iter().find(|&&i| i >= n) {
                    bail!("row {bad} out of range ({n} rows)");
                }
                Ok(v.clone())
            }
        }
    }
}

/// `<lo>,<hi>`; either side may be `inf` / `-inf`.
pub fn parse_slice(s: &str) -> Result<(f64, f64)> {
    let (a, b) = s.split_once(',').ok_or_else(|| anyhow!("slice must be '<lo>,<hi>'"))?;
    let lo: f64 = a.trim().parse().with_context(|| format!("bad slice bound '{a}'"))?;
    let hi: f64 = b.trim().parse().with_context(|| format!("bad slice bound '{b}'"))?;
    if !(lo < hi) {
        bail!("empty slice [{lo}, {hi})");
    }
    Ok((lo, hi))
}

pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    s.split(',')
        .map(|t| t.trim().parse::<T>().with_context(|| format!("bad list item '{t}'")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_round_trips_through_display() {
        for spec in [
            BaselineSpec::DatasetMean,
            BaselineSpec::Fixed(vec![0.1, -2.0, 1e-17]),
            BaselineSpec::Conditional {
                reference: 1.25,
                delta: 0.0375,
                draws: 5,
                seed: 9,
            },
        ] {
            assert_eq!(parse_resolved(&spec.to_string()).unwrap(), spec);
        }
    }

    #[test]
    fn conditional_defaults() {
        let arg: BaselineArg = "conditional:ref=2".parse().unwrap();
        let spec = arg.resolve(3, &[0.0, 4.0], 11);
        assert_eq!(
            spec,
            BaselineSpec::Conditional {
                reference: 2.0,
                delta: 0.1,
                draws: 5,
                seed: 11
            }
        );
        assert!("conditional:delta=1".parse::<BaselineArg>().is_err());
        assert!("uniform".parse::<BaselineArg>().is_err());
    }

    #[test]
    fn rows() {
        assert_eq!("0,3..5".parse::<Rows>().unwrap().select(10).unwrap(), vec![0, 3, 4]);
        assert_eq!("all".parse::<Rows>().unwrap().select(2).unwrap(), vec![0, 1]);
        assert!("7".parse::<Rows>().unwrap().select(5).is_err());
        assert!("4..4".parse::<Rows>().is_err());
    }

    #[test]
    fn slices() {
        assert_eq!(parse_slice("1.5,inf").unwrap(), (1.5, f64::INFINITY));
        assert!(parse_slice("2,1").is_err());
    }
}
