//! The virtual range-expert layer.
//!
//! A bank splits the shifted output `y - offset` into consecutive segments
//! `[b_m, b_{m+1})`. Expert `m` reports how far the output has filled its
//! segment, `z_m = clip(y - offset - b_m, 0, tau_m)`, so the experts fill up
//! in order (thermometer coding) and `offset + sum(z)` gives back `y`.

use std::path::Path;

use crate::error::{check_len, Error, Result};
use crate::nn::MlpModel;
use crate::target::{Differentiable, ScalarFunction};
use crate::textfmt::{read_file, Lines};

#[derive(Debug, Clone, PartialEq)]
pub struct RangeExpertBank {
    offset: f64,
    breakpoints: Vec<f64>,
    /// End of the covered range, relative to `offset`.
    upper: f64,
    top_unbounded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BankMode {
    Uniform,
    /// Breakpoints relative to the offset, starting at 0.
    Custom(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutOfRange {
    Below,
    Above,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertVector(pub Vec<f64>);

impl ExpertVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub z: ExpertVector,
    pub out_of_range: Option<OutOfRange>,
}

impl RangeExpertBank {
    pub fn new(offset: f64, breakpoints: Vec<f64>, upper: f64, top_unbounded: bool) -> Result<Self> {
        let bad = |msg: String| Err(Error::Invalid { what: "bank", msg });
        if breakpoints.is_empty() {
            return bad("at least one expert is required".into());
        }
        if !offset.is_finite() || !upper.is_finite() || breakpoints.iter().any(|b| !b.is_finite()) {
            return bad("non-finite offset, upper edge or breakpoint".into());
        }
        if breakpoints[0] != 0.0 {
            return bad(format!("first breakpoint must be 0, got {}", breakpoints[0]));
        }
        if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return bad("breakpoints must be strictly ascending".into());
        }
        let last = *breakpoints.last().expect("non-empty");
        if upper <= last {
            return bad(format!("upper edge {upper} must exceed the last breakpoint {last}"));
        }
        Ok(RangeExpertBank {
            offset,
            breakpoints,
            upper,
            top_unbounded,
        })
    }

    /// `b_m = m * tau` for `m < experts`.
    pub fn uniform(offset: f64, tau: f64, experts: usize, top_unbounded: bool) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::Invalid {
                what: "bank",
                msg: "tau must be positive".into(),
            });
        }
        let bps = (0..experts).map(|m| m as f64 * tau).collect();
        RangeExpertBank::new(offset, bps, experts as f64 * tau, top_unbounded)
    }

    pub fn num_experts(&self) -> usize {
        self.breakpoints.len()
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn top_unbounded(&self) -> bool {
        self.top_unbounded
    }

    /// Upper breakpoint of segment `m` relative to the offset; the covered
    /// upper edge for the last segment.
    pub fn upper_edge(&self, m: usize) -> f64 {
        self.breakpoints.get(m + 1).copied().unwrap_or(self.upper)
    }

    /// `tau_m`; infinite for the top expert of an unbounded bank.
    pub fn width(&self, m: usize) -> f64 {
        if self.top_unbounded && m + 1 == self.num_experts() {
            f64::INFINITY
        } else {
            self.upper_edge(m) - self.breakpoints[m]
        }
    }

    /// `tau_m` with the top segment always cut at the covered upper edge.
    pub fn bounded_width(&self, m: usize) -> f64 {
        self.upper_edge(m) - self.breakpoints[m]
    }

    /// Covered output range in absolute units.
    pub fn covered_range(&self) -> (f64, f64) {
        let hi = if self.top_unbounded {
            f64::INFINITY
        } else {
            self.offset + self.upper
        };
        (self.offset, hi)
    }

    /// Expert whose open segment contains `y` (the one that moves with `y`).
    pub fn active_expert(&self, y: f64) -> Option<usize> {
        let r = y - self.offset;
        if r < 0.0 || (!self.top_unbounded && r >= self.upper) {
            return None;
        }
        Some(self.breakpoints.partition_point(|&b| b <= r).saturating_sub(1))
    }

    /// `z_m = clip(y - offset - b_m, 0, tau_m)`; flags outputs outside the
    /// covered range.
    pub fn encode(&self, y: f64) -> Encoded {
        let r = y - self.offset;
        if r < 0.0 {
            return Encoded {
                z: ExpertVector(vec![0.0; self.num_experts()]),
                out_of_range: Some(OutOfRange::Below),
            };
        }
        let z = (0..self.num_experts())
            .map(|m| (r - self.breakpoints[m]).clamp(0.0, self.width(m)))
            .collect();
        let above = !self.top_unbounded && r > self.upper;
        Encoded {
            z: ExpertVector(z),
            out_of_range: above.then_some(OutOfRange::Above),
        }
    }

    pub fn encode_value(&self, y: f64, m: usize) -> f64 {
        (y - self.offset - self.breakpoints[m]).clamp(0.0, self.width(m))
    }

    /// `d z_m / d y`: 1 strictly inside the segment, 0 elsewhere.
    pub fn clip_derivative(&self, y: f64, m: usize) -> f64 {
        let r = y - self.offset - self.breakpoints[m];
        if r > 0.0 && r < self.width(m) {
            1.0
        } else {
            0.0
        }
    }

    /// `offset + sum(z)` after checking the thermometer invariants.
    pub fn decode(&self, z: &ExpertVector) -> Result<f64> {
        check_len("expert vector", self.num_experts(), z.len())?;
        let mut filling = true;
        for (m, &v) in z.values().iter().enumerate() {
            let tau = self.width(m);
            let tol = 1e-12 * tau.min(1e12).max(1.0);
            if !v.is_finite() || v < 0.0 || v > tau + tol {
                return Err(Error::MalformedExpertVector(format!(
                    "z[{m}] = {v} outside [0, {tau}]"
                )));
            }
            if !filling && v > 0.0 {
                return Err(Error::MalformedExpertVector(format!(
                    "z[{m}] = {v} is positive although a lower expert is not saturated"
                )));
            }
            if v < tau - tol {
                filling = false;
            }
        }
        Ok(self.offset + z.values().iter().sum::<f64>())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "bank v1 offset={} top_unbounded={} upper={}\n",
            self.offset, self.top_unbounded as u8, self.upper
        );
        for b in &self.breakpoints {
            out.push_str(&format!("{b}\n"));
        }
        out
    }

    pub fn from_text(source: &str, text: &str) -> Result<Self> {
        let mut lines = Lines::new(source, text);
        let (n, header) = lines.next("header")?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() < 4 || parts[0] != "bank" || parts[1] != "v1" {
            return Err(lines.err(n, "expected 'bank v1 offset=<f> top_unbounded=<0|1> upper=<f>'"));
        }
        let offset: f64 = lines.key_value(n, "offset", parts[2])?;
        let flag: u8 = lines.key_value(n, "top_unbounded", parts[3])?;
        if flag > 1 {
            return Err(lines.err(n, "top_unbounded must be 0 or 1"));
        }
        let upper: Option<f64> = parts.get(4).map(|t| lines.key_value(n, "upper", t)).transpose()?;
        let mut bps = Vec::new();
        while let Some(text) = lines.peek() {
            let (n, _) = lines.next("breakpoint")?;
            bps.push(lines.parse::<f64>(n, "breakpoint", text)?);
        }
        if bps.is_empty() {
            return Err(lines.err(n, "no breakpoints"));
        }
        // Older files without `upper` use the last segment's width again.
        let upper = upper.unwrap_or_else(|| {
            let last = *bps.last().expect("non-empty");
            let prev = if bps.len() > 1 { bps[bps.len() - 2] } else { last - 1.0 };
            last + (last - prev)
        });
        RangeExpertBank::new(offset, bps, upper, flag == 1)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_file(path)?;
        RangeExpertBank::from_text(&path.display().to_string(), &text)
    }
}

/// Fits a bank to the model's predictions on some reference data.
///
/// The offset is the smallest prediction, so every observed output maps to a
/// non-negative shifted value.
pub fn fit_bank(predictions: &[f64], experts: usize, mode: &BankMode, top_unbounded: bool) -> Result<RangeExpertBank> {
    if predictions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if predictions.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("predictions".into()));
    }
    if experts == 0 {
        return Err(Error::Invalid {
            what: "bank",
            msg: "at least one expert is required".into(),
        });
    }
    let min = predictions.iter().copied().fold(f64::INFINITY, f64::min);
    let max = predictions.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max <= min {
        return Err(Error::DegenerateRange { value: min });
    }
    let span = max - min;
    match mode {
        BankMode::Uniform => {
            let tau = span / experts as f64;
            let bps = (0..experts).map(|m| m as f64 * tau).collect();
            RangeExpertBank::new(min, bps, span, top_unbounded)
        }
        BankMode::Custom(bps) => {
            check_len("custom breakpoints", experts, bps.len())?;
            let last = *bps.last().expect("non-empty");
            // An unbounded top segment may start beyond the observed range.
            let upper = if top_unbounded && last >= span {
                last + span / experts as f64
            } else {
                span
            };
            RangeExpertBank::new(min, bps.clone(), upper, top_unbounded)
        }
    }
}

/// `x -> z_m(f(x))`, the attribution target for one expert.
#[derive(Clone, Copy)]
pub struct ExpertFn<'a> {
    model: &'a MlpModel,
    bank: &'a RangeExpertBank,
    m: usize,
}

impl<'a> ExpertFn<'a> {
    pub fn new(bank: &'a RangeExpertBank, model: &'a MlpModel, m: usize) -> Result<Self> {
        if m >= bank.num_experts() {
            return Err(Error::IndexOutOfRange {
                index: m,
                len: bank.num_experts(),
            });
        }
        Ok(ExpertFn { model, bank, m })
    }

    pub fn index(&self) -> usize {
        self.m
    }
}

pub fn expert_fn<'a>(bank: &'a RangeExpertBank, model: &'a MlpModel, m: usize) -> Result<ExpertFn<'a>> {
    ExpertFn::new(bank, model, m)
}

impl ScalarFunction for ExpertFn<'_> {
    fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    fn eval(&self, x: &[f64]) -> Result<f64> {
        Ok(self.bank.encode_value(self.model.predict(x)?, self.m))
    }
}

impl Differentiable for ExpertFn<'_> {
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let trace = self.model.forward(x)?;
        let scale = self.bank.clip_derivative(trace.output, self.m);
        Ok(self.model.backprop_input(&trace, scale))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn third_bank() -> RangeExpertBank {
        RangeExpertBank::uniform(0.0, 1.0 / 3.0, 3, true).unwrap()
    }

    #[test]
    fn fit_uniform_unit_range() {
        let bank = fit_bank(&[0.0, 0.4, 1.0], 3, &BankMode::Uniform, true).unwrap();
        assert_eq!(bank.offset(), 0.0);
        assert_eq!(bank.breakpoints(), &[0.0, 1.0 / 3.0, 2.0 / 3.0]);
    }

    #[test]
    fn fit_uniform_shifted_range() {
        let bank = fit_bank(&[-5.0, 1.0, 7.0], 3, &BankMode::Uniform, true).unwrap();
        assert_eq!(bank.offset(), -5.0);
        assert_eq!(bank.breakpoints(), &[0.0, 4.0, 8.0]);
        assert_eq!(bank.upper(), 12.0);
    }

    #[test]
    fn fit_rejects_constant_predictions() {
        assert!(matches!(
            fit_bank(&[2.0, 2.0], 3, &BankMode::Uniform, true),
            Err(Error::DegenerateRange { .. })
        ));
    }

    #[test]
    fn single_expert_is_shift() {
        let bank = fit_bank(&[1.0, 3.0], 1, &BankMode::Uniform, true).unwrap();
        assert_eq!(bank.encode(10.5).z.0, vec![9.5]);
    }

    #[test]
    fn custom_breakpoints_are_validated() {
        assert!(fit_bank(&[0.0, 1.0], 2, &BankMode::Custom(vec![0.0, 0.3]), false).is_ok());
        assert!(fit_bank(&[0.0, 1.0], 2, &BankMode::Custom(vec![0.1, 0.3]), false).is_err());
        assert!(fit_bank(&[0.0, 1.0], 2, &BankMode::Custom(vec![0.0, 0.0]), false).is_err());
        assert!(fit_bank(&[0.0, 1.0], 3, &BankMode::Custom(vec![0.0, 0.5]), false).is_err());
    }

    #[test]
    fn encode_examples() {
        let bank = third_bank();
        let z = bank.encode(0.8).z.0;
        assert_eq!(z[0], 1.0 / 3.0);
        assert_eq!(z[1], 1.0 / 3.0);
        assert!((z[2] - (0.8 - 2.0 / 3.0)).abs() < 1e-15);
        assert!((z[2] - 0.1333).abs() < 1e-4);
        assert_eq!(bank.encode(0.2).z.0, vec![0.2, 0.0, 0.0]);
        let below = bank.encode(-0.1);
        assert_eq!(below.z.0, vec![0.0; 3]);
        assert_eq!(below.out_of_range, Some(OutOfRange::Below));
    }

    #[test]
    fn bounded_top_saturates_and_flags() {
        let bank = RangeExpertBank::uniform(0.0, 1.0, 2, false).unwrap();
        let e = bank.encode(5.0);
        assert_eq!(e.z.0, vec![1.0, 1.0]);
        assert_eq!(e.out_of_range, Some(OutOfRange::Above));
    }

    #[test]
    fn decode_examples() {
        let bank = third_bank();
        let z = ExpertVector(vec![1.0 / 3.0, 1.0 / 3.0, 0.8 - 2.0 / 3.0]);
        assert!((bank.decode(&z).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(bank.decode(&ExpertVector(vec![0.0; 3])).unwrap(), 0.0);
    }

    #[test]
    fn decode_rejects_broken_thermometer() {
        let bank = third_bank();
        assert!(matches!(
            bank.decode(&ExpertVector(vec![0.1, 0.2, 0.0])),
            Err(Error::MalformedExpertVector(_))
        ));
        assert!(matches!(
            bank.decode(&ExpertVector(vec![0.5, 0.0, 0.0])),
            Err(Error::MalformedExpertVector(_))
        ));
        assert!(matches!(
            bank.decode(&ExpertVector(vec![-0.1, 0.0, 0.0])),
            Err(Error::MalformedExpertVector(_))
        ));
        assert!(bank.decode(&ExpertVector(vec![0.0; 2])).is_err());
    }

    #[test]
    fn expert_fn_composition() {
        let model = MlpModel::linear(&[1.0], 0.0).unwrap();
        let bank = third_bank();
        let f2 = expert_fn(&bank, &model, 2).unwrap();
        assert!((f2.eval(&[0.8]).unwrap() - 0.1333).abs() < 1e-4);
        let f0 = expert_fn(&bank, &model, 0).unwrap();
        assert_eq!(f0.eval(&[-0.5]).unwrap(), 0.0);
        assert!(expert_fn(&bank, &model, 3).is_err());
    }

    #[test]
    fn expert_gradient_in_range_and_saturated() {
        let model = MlpModel::random(3, &[8], 17, vec![]).unwrap();
        let x = [0.3, -0.4, 0.8];
        let y = model.predict(&x).unwrap();
        // bank whose expert 1 contains y, expert 0 is saturated below it
        let bank = RangeExpertBank::new(y - 1.5, vec![0.0, 1.0, 2.0], 3.0, true).unwrap();
        let g1 = expert_fn(&bank, &model, 1).unwrap().gradient(&x).unwrap();
        assert_eq!(g1, model.input_gradient(&x).unwrap());
        let g0 = expert_fn(&bank, &model, 0).unwrap().gradient(&x).unwrap();
        assert!(g0.iter().all(|&v| v == 0.0));
        let g2 = expert_fn(&bank, &model, 2).unwrap().gradient(&x).unwrap();
        assert!(g2.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sum_of_experts_is_model() {
        let model = MlpModel::random(2, &[6], 5, vec![]).unwrap();
        let bank = RangeExpertBank::new(-2.0, vec![0.0, 0.7, 1.1, 2.5], 3.0, true).unwrap();
        for x in [[0.1, 0.2], [1.0, -1.0], [-0.3, 0.9]] {
            let s: f64 = (0..4)
                .map(|m| expert_fn(&bank, &model, m).unwrap().eval(&x).unwrap())
                .sum();
            let y = model.predict(&x).unwrap();
            assert!((s + bank.offset() - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn bank_text_round_trip() {
        let bank = RangeExpertBank::new(-0.25, vec![0.0, 0.1, 0.7], 1.3, false).unwrap();
        assert_eq!(RangeExpertBank::from_text("mem", &bank.to_text()).unwrap(), bank);
        assert!(RangeExpertBank::from_text("mem", "bank v1 offset=0 top_unbounded=2\n0\n").is_err());
        assert!(RangeExpertBank::from_text("mem", "bank v1 offset=0 top_unbounded=1\n0\nx\n").is_err());
    }

    #[test]
    fn active_expert_lookup() {
        let bank = third_bank();
        assert_eq!(bank.active_expert(0.1), Some(0));
        assert_eq!(bank.active_expert(0.5), Some(1));
        assert_eq!(bank.active_expert(5.0), Some(2));
        assert_eq!(bank.active_expert(-1.0), None);
    }

    proptest! {
        #[test]
        fn reconstruction_identity(y in -10.0f64..1e6, offset in -50.0f64..50.0, tau in 0.01f64..10.0, m in 1usize..8) {
            let bank = RangeExpertBank::uniform(offset, tau, m, true).unwrap();
            prop_assume!(y >= offset);
            let enc = bank.encode(y);
            prop_assert!(enc.out_of_range.is_none());
            let back = bank.decode(&enc.z).unwrap();
            prop_assert!((back - y).abs() <= 1e-12 * y.abs().max(1.0));
        }

        #[test]
        fn encode_is_monotone(a in -1.0f64..3.0, b in -1.0f64..3.0) {
            let bank = third_bank();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let zl = bank.encode(lo).z;
            let zh = bank.encode(hi).z;
            for (l, h) in zl.values().iter().zip(zh.values()) {
                prop_assert!(l <= h);
            }
        }

        #[test]
        fn thermometer_property(y in -1.0f64..3.0) {
            let bank = RangeExpertBank::new(0.0, vec![0.0, 0.2, 0.9, 1.4], 2.0, false).unwrap();
            let z = bank.encode(y).z;
            for m in 0..4 {
                prop_assert!(z.0[m] >= 0.0 && z.0[m] <= bank.width(m));
                if z.0[m] > 0.0 {
                    for k in 0..m {
                        prop_assert_eq!(z.0[k], bank.width(k));
                    }
                }
            }
        }
    }
}
