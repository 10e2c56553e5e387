use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{MmenError, Result};

/// Above this many parameter entries only a random 5% subsample is checked.
const FULL_CHECK_LIMIT: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Flat index of the entry with the largest error.
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Entries skipped because a perturbation moved a piecewise op across
    /// its kink.
    pub excluded: usize,
    /// Every checked entry, in flat index order.
    pub entries: Vec<EntryCheck>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntryCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

impl GradCheckReport {
    /// Checked entries whose relative error exceeds `tol`.
    pub fn above(&self, tol: f64) -> impl Iterator<Item = &EntryCheck> {
        self.entries.iter().filter(move |e| e.rel_err > tol)
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Compares taped gradients of `f` against central differences.
pub fn grad_check<F>(f: F, params: &ParamStore, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(MmenError::InvalidParam(format!(
            "finite-difference step must lie in [1e-7, 1e-3], got {eps}"
        )));
    }
    let mut tape = Tape::new();
    let loss = f(params, &mut tape)?;
    let analytic = tape.backward(loss, params)?.flat();
    let base_sig = tape.kink_signature();
    drop(tape);

    let numel = params.numel();
    let indices: Vec<usize> = if numel > FULL_CHECK_LIMIT {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
        let mut idx = sample(&mut rng, numel, numel.div_ceil(20)).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..numel).collect()
    };

    let mut probe = params.clone();
    let mut eval = |k: usize, delta: f64| -> Result<(f64, bool)> {
        let orig = *probe.flat_entry_mut(k).expect("index in range");
        *probe.flat_entry_mut(k).unwrap() = orig + delta;
        let mut tape = Tape::new();
        let out = f(&probe, &mut tape);
        *probe.flat_entry_mut(k).unwrap() = orig;
        let out = out?;
        Ok((tape.scalar_value(out), tape.kink_signature() == base_sig))
    };

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: None,
        checked: 0,
        excluded: 0,
        entries: Vec::new(),
    };
    for k in indices {
        let (plus, same_plus) = eval(k, eps)?;
        let (minus, same_minus) = eval(k, -eps)?;
        if !(same_plus && same_minus) {
            report.excluded += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let err = rel_err(analytic[k], numeric);
        report.checked += 1;
        report.entries.push(EntryCheck {
            index: k,
            analytic: analytic[k],
            numeric,
            rel_err: err,
        });
        if err > report.max_rel_err || report.worst_index.is_none() {
            report.max_rel_err = report.max_rel_err.max(err);
            report.worst_index = Some(k);
        }
    }
    Ok(report)
}
