use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::tape::{Tape, Var};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub op_name: String,
    pub max_rel_error: f64,
    /// Worst relative error per input tensor, in input order.
    pub per_input: Vec<f64>,
    pub coordinates_checked: usize,
    /// Lower bound used for the relative-error denominator.
    pub floor: f64,
}

/// Denominator floor of the per-coordinate relative error.
pub const DEFAULT_FLOOR: f64 = 1e-8;

/// Single-precision rounding in the forward pass, in units of `f32::EPSILON`
/// times the loss magnitude, that [`grad_check_deep`] budgets for.
pub const ROUNDING_ULPS: f64 = 256.0;

/// Scalar function under test: builds its graph on `tape` from `inputs`.
pub trait ScalarFn: Fn(&Tape, &[Var]) -> Result<Var> {}
impl<F: Fn(&Tape, &[Var]) -> Result<Var>> ScalarFn for F {}

/// Compares tape gradients against central differences at every coordinate
/// of every input.
pub fn grad_check(f: impl ScalarFn, inputs: &[Tensor], eps: f32) -> Result<GradCheckReport> {
    grad_check_at(f, inputs, eps, &all_coords(inputs))
}

/// Like [`grad_check`] but only at the listed `(input, flat index)` pairs.
pub fn grad_check_at(
    f: impl ScalarFn,
    inputs: &[Tensor],
    eps: f32,
    coords: &[(usize, usize)],
) -> Result<GradCheckReport> {
    check(&f, inputs, eps, coords, DEFAULT_FLOOR, false)
}

/// Lower bound of the relative-error denominator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Floor {
    Fixed(f64),
    /// `ulps · ε_f32 · max(|f|, 1) / eps`: the forward pass's f32 rounding
    /// noise on a central difference, scaled by `ulps`. Coordinates whose
    /// gradient is below the floor are judged on absolute error.
    Rounding {
        ulps: f64,
    },
}

/// How [`grad_check_with`] differentiates numerically and scales errors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub eps: f32,
    /// Use `(4·D(eps) - D(2·eps)) / 3` instead of the plain central
    /// difference `D(eps)`; truncation error drops to fourth order, so
    /// larger steps are usable on smooth nonlinear functions.
    pub richardson: bool,
    pub floor: Floor,
}

impl GradCheckOptions {
    pub fn central(eps: f32) -> Self {
        Self {
            eps,
            richardson: false,
            floor: Floor::Fixed(DEFAULT_FLOOR),
        }
    }
}

/// [`grad_check`] for deep compositions evaluated in f32.
///
/// Each forward pass carries rounding error of order `ε_f32 · |f|` from every
/// stored intermediate, so the central difference of a coordinate whose true
/// gradient is tiny is dominated by noise of size about
/// `ROUNDING_ULPS · ε_f32 · max(|f|, 1) / eps`. That noise level replaces
/// the `1e-8` denominator floor; coordinates with larger gradients are judged
/// exactly as in [`grad_check`].
pub fn grad_check_deep(f: impl ScalarFn, inputs: &[Tensor], eps: f32) -> Result<GradCheckReport> {
    grad_check_with(
        f,
        inputs,
        GradCheckOptions {
            floor: Floor::Rounding {
                ulps: ROUNDING_ULPS,
            },
            ..GradCheckOptions::central(eps)
        },
    )
}

pub fn grad_check_with(
    f: impl ScalarFn,
    inputs: &[Tensor],
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    let eps = opts.eps;
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Usage(format!(
            "finite-difference step {eps} must be positive"
        )));
    }
    let floor = match opts.floor {
        Floor::Fixed(v) => v,
        Floor::Rounding { ulps } => {
            let tape = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
            let value = tape.scalar_f64(f(&tape, &vars)?)?;
            (ulps * f32::EPSILON as f64 * value.abs().max(1.0) / eps as f64).max(DEFAULT_FLOOR)
        }
    };
    check(&f, inputs, eps, &all_coords(inputs), floor, opts.richardson)
}

fn all_coords(inputs: &[Tensor]) -> Vec<(usize, usize)> {
    inputs
        .iter()
        .enumerate()
        .flat_map(|(p, t)| (0..t.len()).map(move |i| (p, i)))
        .collect()
}

fn check(
    f: &impl ScalarFn,
    inputs: &[Tensor],
    eps: f32,
    coords: &[(usize, usize)],
    floor: f64,
    richardson: bool,
) -> Result<GradCheckReport> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Usage(format!(
            "finite-difference step {eps} must be positive"
        )));
    }
    let analytic = analytic_grads(f, inputs)?;
    let mut per_input = vec![0f64; inputs.len()];
    for &(p, i) in coords {
        let input = inputs
            .get(p)
            .ok_or_else(|| Error::Usage(format!("input {p} out of range")))?;
        if i >= input.len() {
            return Err(Error::Usage(format!(
                "coordinate {i} out of range for input {p}"
            )));
        }
        let base = input.data()[i];
        let central = |h: f32| -> Result<f64> {
            let (hi, lo) = (base + h, base - h);
            let f_hi = eval_with(f, inputs, p, i, hi)?;
            let f_lo = eval_with(f, inputs, p, i, lo)?;
            // Divide by the representable step, not the nominal 2h.
            Ok((f_hi - f_lo) / (hi as f64 - lo as f64))
        };
        let numeric = if richardson {
            (4.0 * central(eps)? - central(2.0 * eps)?) / 3.0
        } else {
            central(eps)?
        };
        let a = analytic[p].data()[i] as f64;
        let denom = a.abs().max(numeric.abs()).max(floor);
        let rel = (a - numeric).abs() / denom;
        per_input[p] = per_input[p].max(rel);
    }
    Ok(GradCheckReport {
        op_name: String::new(),
        max_rel_error: per_input.iter().copied().fold(0.0, f64::max),
        per_input,
        coordinates_checked: coords.len(),
        floor,
    })
}

impl GradCheckReport {
    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.op_name = name.into();
        self
    }
}

fn analytic_grads(f: &impl ScalarFn, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;
    Ok(vars
        .iter()
        .map(|&v| grads.get(v).cloned().expect("param leaf has gradient"))
        .collect())
}

fn eval_with(f: &impl ScalarFn, inputs: &[Tensor], p: usize, i: usize, value: f32) -> Result<f64> {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(q, t)| {
            if q == p {
                let mut t = t.clone();
                t.data_mut()[i] = value;
                tape.constant(t)
            } else {
                tape.constant(t.clone())
            }
        })
        .collect();
    let out = f(&tape, &vars)?;
    tape.scalar_f64(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_function_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::normal(vec![3, 4], 0.0, 1.0, &mut rng).unwrap();
        let r = grad_check(|t, v| t.sum(v[0]), &[x], 1e-3).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
        assert_eq!(r.coordinates_checked, 12);
    }

    #[test]
    fn softmax_first_component() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let x = Tensor::normal(vec![4], 0.0, 1.0, &mut rng).unwrap();
            let r = grad_check(
                |t, v| {
                    let s = t.softmax(v[0], 0)?;
                    t.slice(s, 0, 0, 1)
                },
                &[x],
                1e-2,
            )
            .unwrap();
            assert!(r.max_rel_error < 1e-4, "{r:?}");
        }
    }

    #[test]
    fn detects_wrong_gradient() {
        // scale by a constant the tape doesn't know about: f(x) = sum(x)*x0
        // evaluated with a graph that ignores the x0 factor on one side.
        let x = Tensor::new(vec![2], vec![1.5, -0.5]).unwrap();
        let r = grad_check(
            |t, v| {
                let frozen = t.constant(t.value(v[0])?);
                let p = t.mul(v[0], frozen)?;
                t.sum(p)
            },
            &[x],
            1e-3,
        )
        .unwrap();
        assert!(r.max_rel_error > 0.4, "{r:?}");
    }

    #[test]
    fn deep_check_still_catches_wrong_gradient() {
        let x = Tensor::new(vec![3], vec![0.7, -1.2, 2.0]).unwrap();
        let r = grad_check_deep(
            |t, v| {
                let frozen = t.constant(t.value(v[0])?);
                t.sum(t.mul(v[0], frozen)?)
            },
            &[x],
            1e-2,
        )
        .unwrap();
        assert!(r.floor > DEFAULT_FLOOR);
        assert!(r.max_rel_error > 0.4, "{r:?}");
    }

    #[test]
    fn richardson_is_exact_on_cubics_with_large_steps() {
        let x = Tensor::new(vec![3], vec![0.5, -1.0, 1.5]).unwrap();
        let cube = |t: &Tape, v: &[Var]| t.sum(t.mul(t.mul(v[0], v[0])?, v[0])?);
        let plain = grad_check(cube, std::slice::from_ref(&x), 0.25).unwrap();
        let rich = grad_check_with(
            cube,
            &[x],
            GradCheckOptions {
                richardson: true,
                ..GradCheckOptions::central(0.25)
            },
        )
        .unwrap();
        assert!(plain.max_rel_error > 1e-2, "{plain:?}");
        assert!(rich.max_rel_error < 1e-6, "{rich:?}");
    }

    #[test]
    fn rejects_non_positive_step() {
        let x = Tensor::ones(vec![1]).unwrap();
        assert!(grad_check(|t, v| t.sum(v[0]), &[x], 0.0).is_err());
    }
}
