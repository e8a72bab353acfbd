//! Central finite-difference gradient checking.
//!
//! The numeric side only ever calls forward evaluation, so it stays
//! independent of the backward rules it checks.

pub mod reference;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::networks::{RefExec, RemasterModel};
use crate::tensor::{Graph, Mode, ParamId, ParamStore, Tensor5, Var};

use reference::RefTensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    /// Central-difference step.
    pub step: f32,
    /// Elementwise relative tolerance.
    pub rel_tol: f64,
    /// Entries where both gradients are below this magnitude are skipped.
    pub min_grad: f64,
    pub mode: Mode,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-3,
            rel_tol: 1e-3,
            min_grad: 1e-4,
            mode: Mode::Train,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub location: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub compared: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    pub mismatches: Vec<Mismatch>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty() && self.compared > 0
    }

    fn push(&mut self, cfg: &GradCheck, location: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        if analytic.abs().max(numeric.abs()) <= cfg.min_grad {
            self.skipped += 1;
            return;
        }
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
        self.compared += 1;
        self.max_rel_err = self.max_rel_err.max(rel);
        if rel > cfg.rel_tol {
            self.mismatches.push(Mismatch {
                location: location(),
                analytic,
                numeric,
                rel_err: rel,
            });
        }
    }
}

fn loss_value(g: &Graph<'_>, loss: Var) -> f64 {
    g.value(loss).item() as f64
}

/// Checks the gradient of `f` with respect to every element of `inputs`.
/// `f` receives the graph and one leaf per input and returns a scalar.
pub fn check_inputs<F>(cfg: &GradCheck, inputs: &[Tensor5], f: F) -> Result<GradReport>
where
    F: Fn(&mut Graph<'_>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new(cfg.mode);
    let vars = inputs
        .iter()
        .map(|t| g.input(t.clone().with_requires_grad(true)))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Vec<f32>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| {
            grads
                .wrt(*v)
                .map(<[f32]>::to_vec)
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let eval = |perturbed: &[Tensor5]| -> Result<f64> {
        let mut g = Graph::new(cfg.mode);
        let vars = perturbed
            .iter()
            .map(|t| g.input(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let loss = f(&mut g, &vars)?;
        Ok(loss_value(&g, loss))
    };

    let mut report = GradReport::default();
    let mut work: Vec<Tensor5> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.numel() {
            let orig = input.data()[i];
            work[k].data_mut()[i] = orig + cfg.step;
            let plus = eval(&work)?;
            work[k].data_mut()[i] = orig - cfg.step;
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.step as f64);
            report.push(cfg, || format!("input {k}[{i}]"), analytic[k][i] as f64, numeric);
        }
    }
    Ok(report)
}

/// Picks `count` distinct `(param, element)` pairs uniformly over all
/// trainable scalars of `store`.
pub fn sample_param_entries(store: &ParamStore, count: usize, seed: u64) -> Vec<(ParamId, usize)> {
    let ids = store.trainable_ids();
    let sizes: Vec<usize> = ids.iter().map(|&id| store.tensor(id).numel()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks: Vec<usize> = index::sample(&mut rng, total, count.min(total)).into_vec();
    picks.sort_unstable();
    picks
        .into_iter()
        .map(|mut flat| {
            for (id, &n) in ids.iter().zip(&sizes) {
                if flat < n {
                    return (*id, flat);
                }
                flat -= n;
            }
            unreachable!("flat index within total")
        })
        .collect()
}

/// Checks parameter gradients of `f` at the given `(param, element)` entries.
/// `f` builds the forward pass on a graph bound to the store.
pub fn check_params<F>(
    cfg: &GradCheck,
    store: &mut ParamStore,
    entries: &[(ParamId, usize)],
    f: F,
) -> Result<GradReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let grads = {
        let mut g = Graph::with_params(store, cfg.mode);
        let loss = f(&mut g)?;
        g.backward(loss)?
    };
    let mut report = GradReport::default();
    for &(id, i) in entries {
        let analytic = grads.param(id).map_or(0.0, |g| g[i] as f64);
        let orig = store.tensor(id).data()[i];
        let mut eval_at = |v: f32| -> Result<f64> {
            store.tensor_mut(id).data_mut()[i] = v;
            let mut g = Graph::with_params(store, cfg.mode);
            let loss = f(&mut g)?;
            Ok(loss_value(&g, loss))
        };
        let plus = eval_at(orig + cfg.step)?;
        let minus = eval_at(orig - cfg.step)?;
        store.tensor_mut(id).data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * cfg.step as f64);
        let name = store.get(id).name.clone();
        report.push(cfg, || format!("{name}[{i}]"), analytic, numeric);
    }
    Ok(report)
}

/// Outcome of [`check_op`]: the gradient comparison plus the largest
/// forward discrepancy between engine and reference.
#[derive(Clone, Debug)]
pub struct OpReport {
    pub grads: GradReport,
    pub forward_max_abs: f64,
}

/// Checks a primitive against a double-precision reference forward.
///
/// Both sides are reduced to the scalar `sum(y * r)` with a fixed random
/// `r`. The engine supplies analytic input gradients through its backward
/// pass; the reference is differenced numerically in `f64`, which keeps the
/// truncation and rounding error of the central difference far below the
/// tolerance.
pub fn check_op<F, R>(
    cfg: &GradCheck,
    inputs: &[Tensor5],
    engine: F,
    reference: R,
) -> Result<OpReport>
where
    F: Fn(&mut Graph<'_>, &[Var]) -> Result<Var>,
    R: Fn(&[RefTensor]) -> RefTensor,
{
    let mut g = Graph::new(cfg.mode);
    let vars = inputs
        .iter()
        .map(|t| g.input(t.clone().with_requires_grad(true)))
        .collect::<Result<Vec<_>>>()?;
    let y = engine(&mut g, &vars)?;
    let y_dims = g.dims(y);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let r = Tensor5::from_fn(y_dims, |_| rand::Rng::random_range(&mut rng, -1.0f32..1.0));
    let r_var = g.constant(r.clone());
    let prod = g.mul(y, r_var)?;
    let loss = g.sum(prod);
    let engine_y = g.value(y).clone();
    let grads = g.backward(loss)?;

    let mut refs: Vec<RefTensor> = inputs.iter().map(RefTensor::from).collect();
    let ref_y = reference(&refs);
    assert_eq!(ref_y.dims, y_dims, "reference output extents");
    let forward_max_abs = engine_y
        .data()
        .iter()
        .zip(&ref_y.data)
        .map(|(&a, &b)| (a as f64 - b).abs())
        .fold(0.0, f64::max);

    let weights: Vec<f64> = r.data().iter().map(|&v| v as f64).collect();
    let project = |t: &RefTensor| -> f64 { t.data.iter().zip(&weights).map(|(a, b)| a * b).sum() };
    let h = cfg.step as f64;
    let mut report = GradReport::default();
    for (k, (var, input)) in vars.iter().zip(inputs).enumerate() {
        let analytic = grads.wrt(*var);
        for i in 0..input.numel() {
            let orig = refs[k].data[i];
            refs[k].data[i] = orig + h;
            let plus = project(&reference(&refs));
            refs[k].data[i] = orig - h;
            let minus = project(&reference(&refs));
            refs[k].data[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.map_or(0.0, |g| g[i] as f64);
            report.push(cfg, || format!("input {k}[{i}]"), a, numeric);
        }
    }
    Ok(OpReport {
        grads: report,
        forward_max_abs,
    })
}

/// Checks parameter gradients of the whole model at the given entries.
///
/// The scalar is `sum(r_l * luma) + sum(r_c * chroma)` for fixed random
/// `r_l`, `r_c`. Analytic gradients come from the engine; numeric ones from
/// central differences of a double-precision evaluation of the same
/// architecture built from [`reference`] primitives.
pub fn check_model(
    cfg: &GradCheck,
    model: &RemasterModel,
    x: &Tensor5,
    refs: Option<&Tensor5>,
    entries: &[(ParamId, usize)],
) -> Result<OpReport> {
    let mut g = model.graph(cfg.mode);
    let xv = g.input(x.clone())?;
    let rv = refs.map(|r| g.input(r.clone())).transpose()?;
    let (luma, chroma) = model.forward(&mut g, xv, rv)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut weights = |d| Tensor5::from_fn(d, |_| rand::Rng::random_range(&mut rng, -1.0f32..1.0));
    let (wl, wc) = (weights(g.dims(luma)), weights(g.dims(chroma)));
    let engine_out = [g.value(luma).clone(), g.value(chroma).clone()];
    let (a, b) = (g.constant(wl.clone()), g.constant(wc.clone()));
    let (pl, pc) = (g.mul(luma, a)?, g.mul(chroma, b)?);
    let (sl, sc) = (g.sum(pl), g.sum(pc));
    let loss = g.add(sl, sc)?;
    let grads = g.backward(loss)?;

    let evaluate = |e: RefExec<'_>| -> Result<[RefTensor; 2]> {
        let mut e = e;
        let xv = e.input(RefTensor::from(x));
        let rv = refs.map(|r| e.input(RefTensor::from(r)));
        let arch = &model.layout.arch;
        let l = arch.preprocess(&mut e, xv)?;
        let c = arch.colorize(&mut e, l, rv)?;
        Ok([e.value(l).clone(), e.value(c).clone()])
    };
    let project = |out: &[RefTensor; 2]| -> f64 {
        [(&out[0], &wl), (&out[1], &wc)]
            .iter()
            .map(|(t, w)| t.data.iter().zip(w.data()).map(|(a, &b)| a * b as f64).sum::<f64>())
            .sum()
    };

    let base = evaluate(RefExec::new(&model.layout, &model.params, cfg.mode))?;
    let forward_max_abs = engine_out
        .iter()
        .zip(&base)
        .flat_map(|(e, r)| e.data().iter().zip(&r.data).map(|(&a, &b)| (a as f64 - b).abs()))
        .fold(0.0, f64::max);

    let h = cfg.step as f64;
    let mut report = GradReport::default();
    for &(id, i) in entries {
        let orig = model.params.tensor(id).data()[i] as f64;
        let at = |v: f64| -> Result<f64> {
            let e = RefExec::new(&model.layout, &model.params, cfg.mode).with_override(id, i, v);
            Ok(project(&evaluate(e)?))
        };
        let numeric = (at(orig + h)? - at(orig - h)?) / (2.0 * h);
        let analytic = grads.param(id).map_or(0.0, |g| g[i] as f64);
        let name = &model.params.get(id).name;
        report.push(cfg, || format!("{name}[{i}]"), analytic, numeric);
    }
    Ok(OpReport {
        grads: report,
        forward_max_abs,
    })
}
