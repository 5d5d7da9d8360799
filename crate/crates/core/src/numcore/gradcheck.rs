//! Central finite-difference check against tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::array::{ParamId, ParamStore};
use super::tape::{Tape, Var};

/// Denominator floor for relative error, so near-zero gradients compare
/// absolutely. Central differences at `eps = 1e-5` over a loss evaluated
/// with ~1e-13 absolute rounding noise are only good to ~1e-8.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
}

#[derive(Debug, Clone, Copy)]
pub enum Coords {
    All,
    /// Up to `n` coordinates per parameter, seeded.
    Sample { per_param: usize, seed: u64 },
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares `backward()` gradients of `f` with `(f(p+eps) − f(p−eps)) / 2eps`.
pub fn finite_diff_check<F>(f: F, store: &ParamStore, eps: f64, coords: Coords) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut work = store.clone();
    work.zero_grad();
    let mut tape = Tape::new();
    let loss = f(&mut tape, &work)?;
    let grads = tape.backward(loss)?;
    grads.accumulate_into(&mut work);
    let analytic: Vec<(ParamId, Vec<f64>)> = work
        .iter()
        .map(|(id, p)| (id, p.array.grad().map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; p.array.len()])))
        .collect();

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let l = f(&mut t, s)?;
        Ok(t.scalar(l))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: 0,
    };
    let mut rng = match coords {
        Coords::Sample { seed, .. } => ChaCha8Rng::seed_from_u64(seed),
        Coords::All => ChaCha8Rng::seed_from_u64(0),
    };
    for (pid, g) in analytic {
        let n = g.len();
        let idxs: Vec<usize> = match coords {
            Coords::All => (0..n).collect(),
            Coords::Sample { per_param, .. } if per_param >= n => (0..n).collect(),
            Coords::Sample { per_param, .. } => sample(&mut rng, n, per_param).into_vec(),
        };
        for i in idxs {
            let orig = work.get(pid).array.values()[i];
            work.get_mut(pid).array.values_mut()[i] = orig + eps;
            let up = eval(&work)?;
            work.get_mut(pid).array.values_mut()[i] = orig - eps;
            let down = eval(&work)?;
            work.get_mut(pid).array.values_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let err = relative_error(g[i], numeric);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst_param.is_none() {
                report.max_rel_error = err;
                report.worst_param = Some(work.get(pid).id.clone());
                report.worst_index = i;
                report.analytic = g[i];
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
