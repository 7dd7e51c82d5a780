use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::substrate::graph::{Graph, Var};
use crate::substrate::params::ParamStore;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max over checked entries of `|analytic - numeric| / max(1, |analytic|)`.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Entries sampled per parameter; `None` checks every entry.
    pub per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-6,
            per_param: None,
            seed: 0,
        }
    }
}

/// Compares reverse-mode gradients of the scalar built by `loss_fn` against
/// central finite differences over the trainable entries of `store`.
pub fn grad_check<F>(store: &mut ParamStore<f64>, opts: GradCheckOptions, loss_fn: F) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore<f64>, &mut Graph<f64>) -> Result<Var>,
{
    if opts.step <= 0.0 {
        return Err(Error::config("finite-difference step must be positive"));
    }
    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let loss = loss_fn(store, &mut g)?;
        let v = g.value(loss).item();
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("loss = {v}")));
        }
        Ok(v)
    };

    store.zero_grad();
    let mut graph = Graph::new();
    let loss = loss_fn(store, &mut graph)?;
    graph.backward(loss, store)?;
    drop(graph);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    for p in 0..store.len() {
        let slot = &store.slots()[p];
        if !slot.trainable {
            continue;
        }
        let n = slot.value.numel();
        let entries: Vec<usize> = match opts.per_param {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for idx in entries {
            let analytic = store.slots()[p].grad.data()[idx];
            let orig = store.slots()[p].value.data()[idx];
            store.slots_mut()[p].value.data_mut()[idx] = orig + opts.step;
            let up = eval(store);
            store.slots_mut()[p].value.data_mut()[idx] = orig - opts.step;
            let down = eval(store);
            store.slots_mut()[p].value.data_mut()[idx] = orig;
            let numeric = (up? - down?) / (2.0 * opts.step);
            let err = (analytic - numeric).abs() / analytic.abs().max(1.0);
            report.checked += 1;
            if err >= report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((store.slots()[p].name.clone(), idx));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::substrate::{ParamGroup, Tensor};

    #[test]
    fn linear_sum_has_unit_gradient() {
        let mut store = ParamStore::new();
        let id = store
            .insert("x", Tensor::new(vec![3], vec![0.5, -2.0, 7.0]).unwrap(), ParamGroup::Encoder)
            .unwrap();
        let report = grad_check(&mut store, GradCheckOptions::default(), |s, g| {
            let x = g.param(s, id);
            Ok(g.sum(x))
        })
        .unwrap();
        assert!(store.get(id).grad.data().iter().all(|&v| v == 1.0));
        assert!(report.max_rel_error < 1e-9, "{report:?}");
        assert_eq!(report.checked, 3);
    }

    #[test]
    fn non_finite_loss_propagates() {
        let mut store = ParamStore::new();
        let id = store
            .insert("x", Tensor::new(vec![1], vec![f64::INFINITY]).unwrap(), ParamGroup::Encoder)
            .unwrap();
        let res = grad_check(&mut store, GradCheckOptions::default(), |s, g| {
            let x = g.param(s, id);
            Ok(g.sum(x))
        });
        assert!(matches!(res, Err(Error::NonFinite(_))));
    }
}
