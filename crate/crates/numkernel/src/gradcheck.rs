//! Central finite-difference gradient checking. Lives in the library (not
//! test code) because downstream crates verify their losses with it; it only
//! ever drives the public forward API, so it stays independent of the
//! backward implementation it checks.

use crate::optim::zero_grads;
use crate::value::Value;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1.0, f64::max(a.abs(), b.abs()))
}

/// Maximum relative error between analytic gradients and central finite
/// differences over every entry of every parameter. `forward` must rebuild
/// the loss from current parameter data on each call.
pub fn max_grad_error(
    params: &[Value],
    mut forward: impl FnMut() -> Value,
    eps: f64,
) -> f64 {
    zero_grads(params);
    let loss = forward();
    loss.backward().expect("gradcheck loss must be scalar");
    let analytic: Vec<_> = params.iter().map(|p| p.grad().unwrap()).collect();

    let mut worst = 0.0_f64;
    for (p, ga) in params.iter().zip(&analytic) {
        let n = p.data().len();
        for i in 0..n {
            let orig = {
                let d = p.data();
                *d.iter().nth(i).unwrap()
            };
            set_entry(p, i, orig + eps);
            let up = forward().item();
            set_entry(p, i, orig - eps);
            let down = forward().item();
            set_entry(p, i, orig);
            let fd = (up - down) / (2.0 * eps);
            let an = *ga.iter().nth(i).unwrap();
            worst = worst.max(rel_err(an, fd));
        }
    }
    worst
}

/// Assert-style wrapper: errors with the offending parameter, entry and
/// values when any relative error exceeds `tol`.
pub fn check_gradients(
    params: &[Value],
    mut forward: impl FnMut() -> Value,
    eps: f64,
    tol: f64,
) -> Result<(), String> {
    zero_grads(params);
    let loss = forward();
    loss.backward().expect("gradcheck loss must be scalar");
    let analytic: Vec<_> = params.iter().map(|p| p.grad().unwrap()).collect();

    for (p, ga) in params.iter().zip(&analytic) {
        let n = p.data().len();
        for i in 0..n {
            let orig = {
                let d = p.data();
                *d.iter().nth(i).unwrap()
            };
            set_entry(p, i, orig + eps);
            let up = forward().item();
            set_entry(p, i, orig - eps);
            let down = forward().item();
            set_entry(p, i, orig);
            let fd = (up - down) / (2.0 * eps);
            let an = *ga.iter().nth(i).unwrap();
            let e = rel_err(an, fd);
            if e > tol {
                return Err(format!(
                    "gradient mismatch in `{}`[{}]: analytic {an:.10e}, finite-diff {fd:.10e}, rel err {e:.3e}",
                    p.name().unwrap_or("<unnamed>"),
                    i
                ));
            }
        }
    }
    Ok(())
}

fn set_entry(p: &Value, flat_index: usize, v: f64) {
    let mut d = p.data_mut();
    *d.iter_mut().nth(flat_index).unwrap() = v;
}
