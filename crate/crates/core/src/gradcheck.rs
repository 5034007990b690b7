//! Central finite-difference check of tape gradients.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub worst_index: usize,
    pub checked: usize,
    /// Entries whose plain central difference was re-estimated by extrapolation.
    pub refined: usize,
}

/// Entries whose plain central difference disagrees by more than this are
/// re-estimated with [`ridders`].
pub const REFINE_ABOVE: f64 = 5e-5;

/// Initial step of the extrapolated estimate.
pub const RIDDERS_STEP: f64 = 1e-2;

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Ridders' extrapolation of central differences of `f` at `x`, starting
/// from step `h` and shrinking by 1.4. Returns the estimate and its error
/// estimate.
pub fn ridders(f: impl FnMut(f64) -> Result<f64>, x: f64, h: f64) -> Result<(f64, f64)> {
    ridders_until(f, x, h, 0.0).map(|(d, e, _)| (d, e))
}

/// [`ridders`] that stops once the error estimate is at most `tol`; also
/// returns the number of function evaluations.
pub fn ridders_until(
    mut f: impl FnMut(f64) -> Result<f64>,
    x: f64,
    h: f64,
    tol: f64,
) -> Result<(f64, f64, usize)> {
    const CON: f64 = 1.4;
    const CON2: f64 = CON * CON;
    const NTAB: usize = 10;
    const SAFE: f64 = 2.0;
    let mut a = [[0.0; NTAB]; NTAB];
    let mut hh = h;
    a[0][0] = (f(x + hh)? - f(x - hh)?) / (2.0 * hh);
    let mut err = f64::INFINITY;
    let mut ans = a[0][0];
    let mut evals = 2;
    for i in 1..NTAB {
        evals += 2;
        hh /= CON;
        a[0][i] = (f(x + hh)? - f(x - hh)?) / (2.0 * hh);
        let mut fac = CON2;
        for j in 1..=i {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= CON2;
            let errt = (a[j][i] - a[j - 1][i]).abs().max((a[j][i] - a[j - 1][i - 1]).abs());
            if errt <= err {
                err = errt;
                ans = a[j][i];
            }
        }
        if err <= tol || (a[i][i] - a[i - 1][i - 1]).abs() >= SAFE * err {
            break;
        }
    }
    Ok((ans, err, evals))
}

fn evaluate<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    let loss = f(&mut tape)?;
    Ok(tape.scalar(loss))
}

/// Compares autodiff gradients of the scalar returned by `f` against central
/// differences for every entry of every trainable parameter.
///
/// The error of one entry is `|a - n| / max(|a|, |n|, 1e-8)`; the maximum
/// over all entries is reported. A plain central difference at `eps` is
/// accurate to roughly `ulp(loss) / eps` in absolute terms, which is coarser
/// than the 1e-8 floor allows for near-zero entries. Entries disagreeing by
/// more than [`REFINE_ABOVE`] are re-estimated with [`ridders`]; its result
/// replaces the plain difference only when its own error estimate is below
/// that roundoff bound.
pub fn grad_check<F>(store: &mut ParamStore, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let ids: Vec<ParamId> = store.ids().filter(|&id| store.is_trainable(id)).collect();
    grad_check_params(store, &ids, eps, f)
}

/// Like [`grad_check`] restricted to `ids`.
pub fn grad_check_params<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    eps: f64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::usage(format!("grad_check eps must be in (0, 1e-2], got {eps}")));
    }
    let (grads, noise) = {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape)?;
        let first = tape.scalar(loss);
        let second = evaluate(store, &f)?;
        if first.to_bits() != second.to_bits() {
            return Err(Error::usage(
                "grad_check closure is not deterministic: two forward passes disagree",
            ));
        }
        (tape.backward(loss)?, 4.0 * first.abs().max(1.0) * f64::EPSILON / (2.0 * eps))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        worst_index: 0,
        checked: 0,
        refined: 0,
    };
    for &id in ids {
        let n = store.value(id).len();
        let analytic: Vec<f64> = match grads.get(id) {
            Some(g) => g.to_vec(),
            None => vec![0.0; n],
        };
        for k in 0..n {
            let orig = store.value(id).data()[k];
            store.get_mut(id).value.data_mut()[k] = orig + eps;
            let up = evaluate(store, &f);
            store.get_mut(id).value.data_mut()[k] = orig - eps;
            let down = evaluate(store, &f);
            store.get_mut(id).value.data_mut()[k] = orig;
            let mut numeric = (up? - down?) / (2.0 * eps);
            let a = analytic[k];
            if rel_error(a, numeric) > REFINE_ABOVE {
                let at = |x: f64| {
                    store.get_mut(id).value.data_mut()[k] = x;
                    evaluate(store, &f)
                };
                let r = ridders_until(at, orig, RIDDERS_STEP, noise / 32.0);
                store.get_mut(id).value.data_mut()[k] = orig;
                let (d, err, _) = r?;
                if err < noise {
                    numeric = d;
                }
                report.refined += 1;
            }
            let rel = rel_error(a, numeric);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = Some(store.get(id).name.clone());
                report.worst_index = k;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Init;
    use crate::tensor::Tensor;

    #[test]
    fn linear_model_is_exact() {
        let mut s = ParamStore::new(5);
        let w = s.add("w", &[3, 4], Init::FanIn).unwrap();
        let x = Tensor::vector(vec![0.3, -0.7, 1.1, 0.05]);
        let r = grad_check(&mut s, 1e-5, |t| {
            let wv = t.param(w);
            let xv = t.constant(x.clone());
            let y = t.matvec(wv, xv)?;
            t.sum(y)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.checked, 12);
    }

    #[test]
    fn zero_eps_is_usage_error() {
        let mut s = ParamStore::new(5);
        let w = s.add("w", &[2], Init::FanIn).unwrap();
        let r = grad_check(&mut s, 0.0, |t| {
            let v = t.param(w);
            t.sum(v)
        });
        assert!(matches!(r, Err(Error::Usage(_))));
        assert!(matches!(
            grad_check(&mut s, 0.5, |t| {
                let v = t.param(w);
                t.sum(v)
            }),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn ridders_recovers_smooth_derivatives() {
        let (d, err) = ridders(|x| Ok(x.sin() * 8.0), 0.3, 0.1).unwrap();
        assert!((d - 8.0 * 0.3f64.cos()).abs() < 1e-11, "{d} {err}");
        // a slope far below the central-difference noise of a loss near 8
        let (d, _) = ridders(|x| Ok(8.0 + 3e-9 * x.tanh()), 0.2, 1e-2).unwrap();
        let want = 3e-9 / 0.2f64.cosh().powi(2);
        assert!((d - want).abs() < 1e-13, "{d} {want}");
    }

    #[test]
    fn nondeterministic_closure_detected() {
        use std::cell::Cell;
        let mut s = ParamStore::new(5);
        let w = s.add("w", &[2], Init::FanIn).unwrap();
        let calls = Cell::new(0.0);
        let r = grad_check(&mut s, 1e-5, |t| {
            calls.set(calls.get() + 1.0);
            let v = t.param(w);
            let v = t.affine(v, 1.0, calls.get())?;
            t.sum(v)
        });
        assert!(matches!(r, Err(Error::Usage(_))));
    }
}
