//! Central finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::rng::SeededRng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub step: f64,
    pub max_samples: usize,
    pub seed: u64,
    /// Replace elements whose perturbation crosses a kink with the next
    /// sampled element.
    pub skip_kinks: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            max_samples: 256,
            seed: 0,
            skip_kinks: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub param: String,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub entries: Vec<GradCheckEntry>,
    /// Sampled elements dropped because `±step` changed a ReLU sign or a
    /// pooling winner somewhere in the graph.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Builds the loss with `loss_fn`, backpropagates, and compares against
/// finite differences on a seeded subsample of parameter elements.
pub fn grad_check<T, F>(store: &ParamStore<T>, loss_fn: F, cfg: GradCheckConfig) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &ParamStore<T>) -> Result<Var>,
{
    let analytic = analytic_gradients(store, &loss_fn)?;
    finite_difference_check(store, &loss_fn, &analytic, cfg)
}

/// Per-parameter analytic gradients, in store order.
pub fn analytic_gradients<T, F>(store: &ParamStore<T>, loss_fn: &F) -> Result<Vec<Vec<T>>>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &ParamStore<T>) -> Result<Var>,
{
    let mut graph = Graph::new();
    let loss = loss_fn(&mut graph, store)?;
    let grads = graph.backward(loss)?;
    let mut out: Vec<Vec<T>> = store
        .ids()
        .map(|id| vec![T::zero(); store.get(id).len()])
        .collect();
    for &(id, var) in graph.param_vars() {
        if let Some(g) = grads.get(var) {
            out[id.index()]
                .iter_mut()
                .zip(g)
                .for_each(|(o, &v)| *o += v);
        }
    }
    Ok(out)
}

/// Compares the supplied `analytic` gradients against central differences.
/// Exposed separately so a deliberately wrong gradient can be fed in.
pub fn finite_difference_check<T, F>(
    store: &ParamStore<T>,
    loss_fn: &F,
    analytic: &[Vec<T>],
    cfg: GradCheckConfig,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &ParamStore<T>) -> Result<Var>,
{
    let mut flat: Vec<(ParamId, usize)> = store
        .ids()
        .flat_map(|id| (0..store.get(id).len()).map(move |e| (id, e)))
        .collect();
    if flat.len() > cfg.max_samples {
        SeededRng::new(cfg.seed).shuffle(&mut flat);
    }
    let eval = |s: &ParamStore<T>| -> Result<(f64, Vec<usize>)> {
        let mut graph = Graph::new();
        let loss = loss_fn(&mut graph, s)?;
        Ok((graph.value(loss).item().as_f64(), graph.branch_signature()))
    };
    let base = if cfg.skip_kinks { eval(store)?.1 } else { Vec::new() };
    let h = T::lit(cfg.step);
    let mut work = store.clone();
    let mut entries = Vec::with_capacity(cfg.max_samples.min(flat.len()));
    let mut skipped = 0;
    for (id, e) in flat {
        if entries.len() == cfg.max_samples {
            break;
        }
        let orig = work.get(id).data()[e];
        work.get_mut(id).data_mut()[e] = orig + h;
        let (plus, sig_plus) = eval(&work)?;
        work.get_mut(id).data_mut()[e] = orig - h;
        let (minus, sig_minus) = eval(&work)?;
        work.get_mut(id).data_mut()[e] = orig;
        if cfg.skip_kinks && (sig_plus != base || sig_minus != base) {
            skipped += 1;
            continue;
        }
        // Divide by the step actually realised in T.
        let span = (orig + h).as_f64() - (orig - h).as_f64();
        let numeric = (plus - minus) / span;
        let a = analytic[id.index()][e].as_f64();
        let entry = GradCheckEntry {
            param: store.name(id).to_string(),
            element: e,
            analytic: a,
            numeric,
            rel_error: relative_error(a, numeric),
        };
        entries.push(((id, e), entry));
    }
    entries.sort_by_key(|(key, _)| *key);
    let entries: Vec<_> = entries.into_iter().map(|(_, entry)| entry).collect();
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        entries,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    /// `‖x‖²` over scalar parameters `x0..xn`, each squared as `xᵢ·xᵢ`.
    fn squared_norm(g: &mut Graph<f64>, s: &ParamStore<f64>) -> Result<Var> {
        let mut terms = Vec::new();
        for id in s.ids() {
            let x = g.param(s, id);
            terms.push(g.weighted_sum(&[x], &[x])?);
        }
        let ones = vec![1.0; terms.len()];
        g.linear_combination(&terms, &ones)
    }

    fn store() -> ParamStore<f64> {
        let mut s = ParamStore::new();
        for (i, v) in [0.3, -1.2, 2.5, 0.05].into_iter().enumerate() {
            s.insert(format!("x{i}"), Tensor::scalar(v)).unwrap();
        }
        s
    }

    #[test]
    fn quadratic_gradient_is_two_x() {
        let s = store();
        let analytic = analytic_gradients(&s, &squared_norm).unwrap();
        for (id, g) in s.ids().zip(&analytic) {
            assert!((g[0] - 2.0 * s.get(id).item()).abs() < 1e-12);
        }
        let report = grad_check(&s, squared_norm, GradCheckConfig::default()).unwrap();
        assert_eq!(report.entries.len(), 4);
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let s = store();
        let mut analytic = analytic_gradients(&s, &squared_norm).unwrap();
        analytic.iter_mut().flatten().for_each(|g| *g *= 2.0);
        let report =
            finite_difference_check(&s, &squared_norm, &analytic, GradCheckConfig::default()).unwrap();
        assert!(report.max_rel_error > 0.3);
    }

    #[test]
    fn subsampling_is_seeded_and_bounded() {
        let mut s = ParamStore::new();
        s.insert("big", Tensor::full([1, 1, 30, 30], 0.5)).unwrap();
        let f = |g: &mut Graph<f64>, s: &ParamStore<f64>| {
            let x = g.param(s, s.id("big").unwrap());
            let y = g.sigmoid(x);
            let t = Tensor::full([1, 1, 30, 30], 0.25);
            g.standard_ce(y, &t)
        };
        let cfg = GradCheckConfig {
            max_samples: 50,
            seed: 3,
            ..Default::default()
        };
        let a = grad_check(&s, f, cfg).unwrap();
        let b = grad_check(&s, f, cfg).unwrap();
        assert_eq!(a.entries.len(), 50);
        let ea: Vec<_> = a.entries.iter().map(|e| e.element).collect();
        let eb: Vec<_> = b.entries.iter().map(|e| e.element).collect();
        assert_eq!(ea, eb);
        assert!(a.max_rel_error < 1e-3);
    }

    #[test]
    fn kink_crossings_are_skipped() {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::from_vec([1, 1, 1, 2], vec![5e-4, 0.5]).unwrap()).unwrap();
        let f = |g: &mut Graph<f64>, s: &ParamStore<f64>| {
            let x = g.param(s, s.id("x").unwrap());
            let y = g.relu(x);
            g.standard_ce(y, &Tensor::full([1, 1, 1, 2], 1.0))
        };
        let kept = grad_check(&s, f, GradCheckConfig::default()).unwrap();
        assert_eq!(kept.skipped, 1);
        assert_eq!(kept.entries.len(), 1);
        assert_eq!(kept.entries[0].element, 1);
        assert!(kept.max_rel_error < 1e-6);

        let raw = GradCheckConfig { skip_kinks: false, ..Default::default() };
        let all = grad_check(&s, f, raw).unwrap();
        assert_eq!(all.entries.len(), 2);
        assert!(all.max_rel_error > 0.1);
    }
}
