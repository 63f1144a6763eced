use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Ctx, GemmPrecision, ParamStore, Tape, Tensor};

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// Worst entry: parameter name, offset, analytic, numeric.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err <= tol
    }
}

/// Relative error `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Checks `loss` against central differences with step `h` on up to
/// `n_samples` scalar parameters chosen at random (seeded). The loss is
/// evaluated in eval mode at full double precision.
pub fn check_gradients<F>(store: &ParamStore, n_samples: usize, seed: u64, h: f64, loss: F) -> GradCheckReport
where
    F: for<'t> Fn(&Ctx<'t>) -> Tensor<'t>,
{
    let eval = |s: &ParamStore| {
        let tape = Tape::inference(GemmPrecision::F64);
        let ctx = Ctx::new(&tape, s, false, seed);
        loss(&ctx).item()
    };

    let tape = Tape::new(GemmPrecision::F64);
    let ctx = Ctx::new(&tape, store, false, seed);
    let out = loss(&ctx);
    let mut grads = tape.backward(out);
    let param_grads = ctx.param_grads(&mut grads);
    let flat_grad = |flat: usize| -> f64 {
        let mut rest = flat;
        for (i, (_, p)) in store.iter().enumerate() {
            if rest < p.value.len() {
                return param_grads[i].as_ref().map_or(0.0, |g| g.as_slice().unwrap()[rest]);
            }
            rest -= p.value.len();
        }
        unreachable!()
    };

    let total = store.num_scalars();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FFEE);
    let picks = sample(&mut rng, total, n_samples.min(total));
    let mut report = GradCheckReport { checked: 0, max_rel_err: 0.0, worst: None };
    let mut work = store.clone();
    for flat in picks.iter() {
        let orig = store.get_flat(flat);
        work.set_flat(flat, orig + h);
        let up = eval(&work);
        work.set_flat(flat, orig - h);
        let down = eval(&work);
        work.set_flat(flat, orig);
        let numeric = (up - down) / (2.0 * h);
        let analytic = flat_grad(flat);
        let err = rel_err(analytic, numeric, 1e-6);
        report.checked += 1;
        if err > report.max_rel_err || report.worst.is_none() {
            let (name, off) = store.describe_flat(flat);
            report.max_rel_err = report.max_rel_err.max(err);
            report.worst = Some((name, off, analytic, numeric));
        }
    }
    report
}
