use super::{DiffError, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Outcome of comparing tape gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest `|tape − fd| / max(|tape|, |fd|, 1e-3)` over checked coordinates.
    pub max_rel_dev: f64,
    /// `(tensor, coordinate)` where the maximum was observed.
    pub worst: (usize, usize),
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

const DENOM_FLOOR: f64 = 1e-3;

fn rel_dev(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(DENOM_FLOOR)
}

/// Checks `f` at a single input tensor.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, step: T, tol: f64) -> Result<GradCheckReport, DiffError>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var, DiffError>,
{
    grad_check_many(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(x),
        step,
        tol,
        None,
    )
}

/// Checks `f` with respect to several input tensors.
///
/// `coords` restricts the finite-difference sweep to `(tensor, coordinate)`
/// pairs; `None` checks everything.
pub fn grad_check_many<T, F>(
    f: F,
    xs: &[Tensor<T>],
    step: T,
    tol: f64,
    coords: Option<&[(usize, usize)]>,
) -> Result<GradCheckReport, DiffError>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var, DiffError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = xs
        .iter()
        .map(|x| {
            let t = Tensor::new(x.shape(), x.values().to_vec()).expect("valid");
            tape.leaf(t.with_grad())
        })
        .collect();
    let loss = f(&mut tape, &vars)?;
    let base = tape.value(loss).item().ok_or_else(|| DiffError::NotScalar(tape.shape(loss).to_vec()))?;
    if !base.is_finite() {
        return Err(DiffError::NonFinite { index: 0 });
    }
    tape.backward(loss)?;
    let analytic: Vec<Vec<T>> = vars.iter().map(|&v| tape.grad(v).unwrap().to_vec()).collect();

    let eval = |shifted: &[Tensor<T>]| -> Result<T, DiffError> {
        let mut t = Tape::new();
        let vs: Vec<Var> = shifted.iter().map(|x| t.constant(x.clone())).collect();
        let out = f(&mut t, &vs)?;
        Ok(t.value(out).item().unwrap())
    };

    let all: Vec<(usize, usize)>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = xs
                .iter()
                .enumerate()
                .flat_map(|(ti, x)| (0..x.numel()).map(move |i| (ti, i)))
                .collect();
            &all
        }
    };

    let mut work: Vec<Tensor<T>> = xs.to_vec();
    let mut max_dev = 0.0f64;
    let mut worst = (0, 0);
    let two = T::one() + T::one();
    for (flat, &(ti, i)) in coords.iter().enumerate() {
        let orig = work[ti].values()[i];
        work[ti].values_mut()[i] = orig + step;
        let plus = eval(&work)?;
        work[ti].values_mut()[i] = orig - step;
        let minus = eval(&work)?;
        work[ti].values_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(DiffError::NonFinite { index: flat });
        }
        let fd = ((plus - minus) / (two * step)).to_f64().unwrap();
        let an = analytic[ti][i].to_f64().unwrap();
        if !an.is_finite() {
            return Err(DiffError::NonFinite { index: flat });
        }
        let dev = rel_dev(an, fd);
        if dev > max_dev {
            max_dev = dev;
            worst = (ti, i);
        }
    }
    Ok(GradCheckReport {
        max_rel_dev: max_dev,
        worst,
        checked: coords.len(),
        tolerance: tol,
        passed: max_dev <= tol,
    })
}
