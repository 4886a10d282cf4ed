//! Central-difference gradient checking against the analytic gradients held
//! in a [`ParamStore`].

use rand::seq::index::sample;

use super::ParamStore;
use crate::seed::rng_for;

/// Outcome of a finite-difference sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<(String, usize, f64, f64)>,
    pub checked: usize,
}

/// `|a − n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Max relative error between the analytic gradients stored in `store` and
/// central differences of `loss_fn`, over `subsample` seeded coordinates
/// (all coordinates when `subsample` covers them). A missing gradient counts
/// as zero.
pub fn finite_diff_check<F>(loss_fn: F, store: &ParamStore, h: f64, subsample: usize, seed: u64) -> f64
where
    F: FnMut(&ParamStore) -> f64,
{
    finite_diff_report(loss_fn, store, h, subsample, seed).max_rel_error
}

pub fn finite_diff_report<F>(
    mut loss_fn: F,
    store: &ParamStore,
    h: f64,
    subsample: usize,
    seed: u64,
) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> f64,
{
    assert!(h > 0.0, "step must be positive");
    let coords: Vec<(String, usize)> = store
        .iter()
        .flat_map(|(name, e)| (0..e.value.len()).map(move |i| (name.to_string(), i)))
        .collect();
    let chosen: Vec<usize> = if subsample >= coords.len() {
        (0..coords.len()).collect()
    } else {
        let mut rng = rng_for(seed, &["finite-diff"]);
        let mut idx = sample(&mut rng, coords.len(), subsample).into_vec();
        idx.sort_unstable();
        idx
    };

    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: chosen.len(),
    };
    for &c in &chosen {
        let (name, i) = &coords[c];
        let analytic = store.grad(name).map_or(0.0, |g| g.values()[*i]);
        let original = store.value(name).values()[*i];
        probe.value_mut(name).values_mut()[*i] = original + h;
        let plus = loss_fn(&probe);
        probe.value_mut(name).values_mut()[*i] = original - h;
        let minus = loss_fn(&probe);
        probe.value_mut(name).values_mut()[*i] = original;
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(analytic, numeric);
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((name.clone(), *i, analytic, numeric));
        }
    }
    report
}
