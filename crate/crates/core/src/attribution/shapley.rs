//! Occlusion games and their Shapley values.
//!
//! The game for input `x` and baseline `b` is `v(S) = f(x_S, b_{-S})`:
//! features in the coalition keep their sample value, all others take the
//! baseline's coordinate.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
use crate::target::ScalarFunction;

pub const MAX_EXACT_FEATURES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapleyMode {
    Exact,
    Sampled { permutations: usize, seed: u64 },
}

fn occlude(x: &[f64], baseline: &[f64], mask: u64, out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = if mask >> i & 1 == 1 { x[i] } else { baseline[i] };
    }
}

/// `1 / (d * C(d-1, s))`, the weight of a coalition of size `s` that
/// excludes the feature being scored.
fn coalition_weights(d: usize) -> Vec<f64> {
    let n = d - 1;
    let mut binom = vec![1u64; n + 1];
    for s in 1..=n {
        binom[s] = binom[s - 1] * (n - s + 1) as u64 / s as u64;
    }
    binom.iter().map(|&c| 1.0 / (d as f64 * c as f64)).collect()
}

/// Exact Shapley values of several games sharing the same coalitions.
///
/// `game(mask)` returns one value per game; the result is indexed
/// `[game][feature]`.
pub(crate) fn exact_multi<F>(d: usize, games: usize, mut game: F) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(u64) -> Result<Vec<f64>>,
{
    if d > MAX_EXACT_FEATURES {
        return Err(Error::TooManyFeatures {
            d,
            max: MAX_EXACT_FEATURES,
        });
    }
    if d == 0 {
        return Ok(vec![Vec::new(); games]);
    }
    let n_masks = 1usize << d;
    let mut table = vec![0.0; n_masks * games];
    for mask in 0..n_masks {
        let v = game(mask as u64)?;
        check_len("game outputs", games, v.len())?;
        table[mask * games..(mask + 1) * games].copy_from_slice(&v);
    }
    let weights = coalition_weights(d);
    let mut phi = vec![vec![0.0; d]; games];
    for mask in 0..n_masks {
        let size = (mask as u64).count_ones() as usize;
        for i in 0..d {
            if mask >> i & 1 == 1 {
                continue;
            }
            let with = mask | 1 << i;
            let w = weights[size];
            for (g, p) in phi.iter_mut().enumerate() {
                p[i] += w * (table[with * games + g] - table[mask * games + g]);
            }
        }
    }
    Ok(phi)
}

/// Shapley values of `f` at `x` against a single baseline.
pub fn shapley_values<F: ScalarFunction + ?Sized>(
    f: &F,
    x: &[f64],
    baseline: &[f64],
    mode: ShapleyMode,
) -> Result<Vec<f64>> {
    let d = f.input_dim();
    check_len("sample", d, x.len())?;
    check_len("baseline", d, baseline.len())?;
    let mut buf = vec![0.0; d];
    match mode {
        ShapleyMode::Exact => {
            let mut phi = exact_multi(d, 1, |mask| {
                occlude(x, baseline, mask, &mut buf);
                Ok(vec![f.eval(&buf)?])
            })?;
            Ok(phi.swap_remove(0))
        }
        ShapleyMode::Sampled { permutations, seed } => {
            if permutations == 0 {
                return Err(Error::Invalid {
                    what: "shapley",
                    msg: "sampled mode needs at least one permutation".into(),
                });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut order: Vec<usize> = (0..d).collect();
            let mut phi = vec![0.0; d];
            let v_empty = f.eval(baseline)?;
            for _ in 0..permutations {
                order.shuffle(&mut rng);
                buf.copy_from_slice(baseline);
                let mut prev = v_empty;
                for &i in &order {
                    buf[i] = x[i];
                    let cur = f.eval(&buf)?;
                    phi[i] += cur - prev;
                    prev = cur;
                }
            }
            phi.iter_mut().for_each(|p| *p /= permutations as f64);
            Ok(phi)
        }
    }
}
