use proptest::prelude::*;
use range_experts::attribution::{
    attribution_basis, explain_query, AttributionMethod, Baselines, QueryMode, ShapleyMode,
};
use range_experts::experts::RangeExpertBank;
use range_experts::nn::{Activation, DenseLayer, MlpModel};
use range_experts::query::Query;

const D: usize = 4;

fn bank_for(model: &MlpModel, points: &[Vec<f64>]) -> RangeExpertBank {
    let preds = model.predict_batch(points).unwrap();
    let lo = preds.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = preds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    RangeExpertBank::uniform(lo - 0.1, ((hi - lo) / 3.0).max(1e-3) + 0.1, 3, true).unwrap()
}

fn q_of(bank: &RangeExpertBank, query: &Query, y: f64) -> f64 {
    bank.encode(y).z.0.iter().zip(query.weights()).map(|(z, w)| z * w).sum()
}

/// Random one-hidden-layer net whose last input is disconnected.
fn dead_input_model(seed: u64) -> MlpModel {
    let base = MlpModel::random(D, &[6], seed, vec![]).unwrap();
    let hidden = &base.layers()[0];
    let rows: Vec<Vec<f64>> = (0..hidden.rows())
        .map(|r| {
            let mut row = hidden.row(r).to_vec();
            row[D - 1] = 0.0;
            row
        })
        .collect();
    let layer = DenseLayer::from_rows(&rows, hidden.bias().to_vec(), Activation::Relu).unwrap();
    MlpModel::new(D, vec![layer, base.layers()[1].clone()], vec![]).unwrap()
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, D)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exact_shapley_conserves_query_difference(
        seed in 0u64..1000,
        x in point(),
        b in point(),
        w in prop::collection::vec(-1.0..1.0f64, 3),
    ) {
        let model = MlpModel::random(D, &[6], seed, vec![]).unwrap();
        let bank = bank_for(&model, &[x.clone(), b.clone()]);
        let query = Query::from_weights(w).unwrap();
        let method = AttributionMethod::Shapley(ShapleyMode::Exact);
        let e = explain_query(&method, &model, &bank, None, &query, &x, &Baselines::fixed(b.clone()), QueryMode::Direct).unwrap();
        let expected = q_of(&bank, &query, model.predict(&x).unwrap()) - q_of(&bank, &query, model.predict(&b).unwrap());
        prop_assert!((e.values.iter().sum::<f64>() - expected).abs() < 1e-9);
    }

    #[test]
    fn basis_sum_equals_direct_for_shapley(
        seed in 0u64..1000,
        x in point(),
        b in point(),
        w in prop::collection::vec(-1.0..1.0f64, 3),
    ) {
        let model = MlpModel::random(D, &[6], seed, vec![]).unwrap();
        let bank = bank_for(&model, &[x.clone(), b.clone()]);
        let query = Query::from_weights(w).unwrap();
        let method = AttributionMethod::Shapley(ShapleyMode::Exact);
        let baselines = Baselines::fixed(b);
        let basis = explain_query(&method, &model, &bank, None, &query, &x, &baselines, QueryMode::BasisSum).unwrap();
        let direct = explain_query(&method, &model, &bank, None, &query, &x, &baselines, QueryMode::Direct).unwrap();
        for (p, q) in basis.values.iter().zip(&direct.values) {
            prop_assert!((p - q).abs() < 1e-9, "{} vs {}", p, q);
        }
    }

    #[test]
    fn disconnected_input_gets_nothing_from_any_expert(
        seed in 0u64..1000,
        x in point(),
        b in point(),
    ) {
        let model = dead_input_model(seed);
        let bank = bank_for(&model, &[x.clone(), b.clone()]);
        let baselines = Baselines::fixed(b);
        for method in [
            AttributionMethod::Shapley(ShapleyMode::Exact),
            AttributionMethod::IntegratedGradients { steps: 32 },
        ] {
            let basis = attribution_basis(&method, &model, &bank, None, &x, &baselines).unwrap();
            prop_assert!(basis.values[D - 1].iter().all(|v| v.abs() < 1e-12));
        }
    }
}
