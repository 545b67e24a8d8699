//! Shared oracle for gradient tests: central finite differences over
//! every parameter scalar, independent of the tape's backward pass.

use super::params::{ParamId, ParamStore};

/// Compares accumulated analytic gradients in `ps` against central
/// finite differences of `loss_fn` (h = 1e-5), failing when the relative
/// error exceeds `tol`. Near-zero gradient pairs are compared absolutely.
pub fn finite_difference_check<F>(ps: &mut ParamStore, mut loss_fn: F, tol: f64)
where
    F: FnMut(&ParamStore) -> f64,
{
    let ids: Vec<ParamId> = (0..ps.len()).collect();
    let h = 1e-5;
    for id in ids {
        for k in 0..ps.get(id).len() {
            let orig = ps.get(id).values[k];
            ps.get_mut(id).values[k] = orig + h;
            let up = loss_fn(ps);
            ps.get_mut(id).values[k] = orig - h;
            let down = loss_fn(ps);
            ps.get_mut(id).values[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = ps.get(id).grad[k];
            let denom = an.abs().max(fd.abs());
            if denom < 1e-7 {
                assert!(
                    (an - fd).abs() < 1e-7,
                    "{}[{k}]: analytic {an} vs fd {fd}",
                    ps.get(id).name
                );
            } else {
                assert!(
                    (an - fd).abs() / denom <= tol,
                    "{}[{k}]: analytic {an} vs fd {fd}",
                    ps.get(id).name
                );
            }
        }
    }
}
