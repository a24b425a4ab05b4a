//! Central finite-difference oracle for tape gradients.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::tape::{Tape, Var};

/// Absolute floor added to the relative-error denominator so coordinates whose
/// true gradient is zero are judged on absolute error.
pub const EPS_FLOOR: f64 = 1e-6;

/// Outcome of comparing an analytic gradient with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck<T> {
    pub max_rel_error: T,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub analytic: T,
    pub numeric: T,
}

impl<T: Scalar> GradCheck<T> {
    /// Compares two gradient buffers coordinate by coordinate.
    pub fn compare(analytic: &[T], numeric: &[T]) -> Self {
        let floor = T::of(EPS_FLOOR);
        let mut worst = GradCheck {
            max_rel_error: T::zero(),
            worst_index: 0,
            analytic: analytic.first().copied().unwrap_or_else(T::zero),
            numeric: numeric.first().copied().unwrap_or_else(T::zero),
        };
        for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
            let err = (a - n).abs() / (a.abs() + n.abs() + floor);
            if err > worst.max_rel_error || err.is_nan() {
                worst = GradCheck {
                    max_rel_error: err,
                    worst_index: i,
                    analytic: a,
                    numeric: n,
                };
            }
        }
        worst
    }
}

/// Times the step may shrink tenfold when a kink lies inside it.
pub const KINK_RETRIES: usize = 2;

/// Central-difference gradient of a scalar function of `params`.
///
/// Each coordinate also gets one-sided slopes from the shared value `f(params)`.
/// When they disagree by more than 1e-3 of their magnitude plus a small
/// absolute slack, the step may straddle a nondifferentiable point such as a
/// ReLU kink, and that coordinate is redone with a tenfold smaller step, up to
/// [`KINK_RETRIES`] times. Strong curvature can trigger the same retry, which
/// only costs some rounding noise.
pub fn central_difference<T, F>(mut f: F, params: &Tensor<T>, eps: T) -> Result<Vec<T>>
where
    T: Scalar,
    F: FnMut(&Tensor<T>) -> Result<T>,
{
    if eps <= T::zero() {
        return Err(Error::Oracle(format!("step must be positive, got {eps}")));
    }
    let two = T::of(2.0);
    let ten = T::of(10.0);
    let slack = T::of(1e-7);
    let mut probe = params.clone();
    let center = f(&probe)?;
    if !center.is_finite() {
        return Err(Error::Oracle("non-finite value at the unperturbed point".into()));
    }
    let mut grad = Vec::with_capacity(params.numel());
    for i in 0..params.numel() {
        let orig = probe.data()[i];
        let mut step = eps;
        let mut g = T::zero();
        for attempt in 0..=KINK_RETRIES {
            probe.data_mut()[i] = orig + step;
            let up = f(&probe)?;
            probe.data_mut()[i] = orig - step;
            let down = f(&probe)?;
            probe.data_mut()[i] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::Oracle(format!("non-finite value perturbing coordinate {i}")));
            }
            g = (up - down) / (two * step);
            let forward = (up - center) / step;
            let backward = (center - down) / step;
            let smooth = (forward - backward).abs() <= T::of(1e-3) * (forward.abs() + backward.abs()) + slack;
            if smooth || attempt == KINK_RETRIES {
                break;
            }
            step = step / ten;
        }
        grad.push(g);
    }
    Ok(grad)
}

/// Checks the tape gradient of `build` w.r.t. its single parameter leaf.
///
/// `build` receives a fresh tape and the parameter variable and must return the
/// scalar output. Returns the worst relative error over all coordinates.
pub fn finite_diff_check<T, F>(mut build: F, params: &Tensor<T>, eps: T) -> Result<GradCheck<T>>
where
    T: Scalar,
    F: FnMut(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let p = tape.param(params.clone());
    let out = build(&mut tape, p)?;
    tape.backward(out)?;
    let analytic = tape.grad(p).expect("parameter gradient").into_data();

    let numeric = central_difference(
        |probe| {
            let mut tape = Tape::new();
            let p = tape.param(probe.clone());
            let out = build(&mut tape, p)?;
            Ok(tape.value(out).data()[0])
        },
        params,
        eps,
    )?;
    Ok(GradCheck::compare(&analytic, &numeric))
}
