use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Largest discrepancy found by a finite-difference check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// (parameter index, flat coordinate) of the worst coordinate.
    pub worst: (usize, usize),
    pub coordinates_checked: usize,
}

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.leaf(p)).collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).len() != 1 {
        return Err(Error::Contract("checked function must return a scalar".into()));
    }
    Ok(g.scalar(out))
}

fn check<F>(f: F, params: &[Tensor], h: f64, coords: Vec<Vec<usize>>) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::Argument(format!("step h = {h} must be > 0")));
    }
    let mut work: Vec<Tensor> = params
        .iter()
        .map(|p| {
            let mut p = p.clone();
            p.requires_grad = true;
            p
        })
        .collect();

    let mut g = Graph::new();
    let vars: Vec<Var> = work.iter().map(|p| g.leaf(p)).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(&work)
        .map(|(&v, p)| grads.wrt(v).map_or_else(|| vec![0.0; p.len()], <[f64]>::to_vec))
        .collect();
    drop(g);

    let mut result = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        coordinates_checked: 0,
    };
    for (pi, idx) in coords.into_iter().enumerate() {
        for i in idx {
            let orig = work[pi].values()[i];
            work[pi].values_mut()[i] = orig + h;
            let plus = evaluate(&f, &work)?;
            work[pi].values_mut()[i] = orig - h;
            let minus = evaluate(&f, &work)?;
            work[pi].values_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[pi][i];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            result.coordinates_checked += 1;
            if err > result.max_rel_error || err.is_nan() {
                result.max_rel_error = err;
                result.worst = (pi, i);
            }
        }
    }
    Ok(result)
}

/// Compares reverse-mode gradients of the scalar function `f` against
/// central differences at every coordinate of every parameter. The relative
/// error of a coordinate is `|a - n| / max(1, |a|, |n|)`.
pub fn finite_difference_check<F>(f: F, params: &[Tensor], h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let coords = params.iter().map(|p| (0..p.len()).collect()).collect();
    check(f, params, h, coords)
}

/// Like [`finite_difference_check`] but probes at most `per_tensor`
/// seeded-random coordinates of each parameter, for models too large to
/// sweep exhaustively.
pub fn finite_difference_check_sampled<F>(
    f: F,
    params: &[Tensor],
    h: f64,
    per_tensor: usize,
    seed: u64,
) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = params
        .iter()
        .map(|p| {
            if p.len() <= per_tensor {
                (0..p.len()).collect()
            } else {
                let mut v = sample(&mut rng, p.len(), per_tensor).into_vec();
                v.sort_unstable();
                v
            }
        })
        .collect();
    check(f, params, h, coords)
}
