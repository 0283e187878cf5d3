use std::time::Instant;

use crate::error::{Error, Result};
use crate::levmar::step::{DampedSolve, NormalEquations, QrAugmented, QrCholesky, TwoStepQr};
use crate::levmar::{
    check_len, energy_of, Jacobian, LeastSquaresProblem, LmConfig, LmRecord, LmStatus, LmTrace,
    SolverKind,
};
use crate::matrix::{norm2, norm_inf, DenseMatrix};
use crate::scalar::Scalar;
use crate::structured::QrFactor;

/// Damping beyond this is treated as a failure to make progress.
const LAMBDA_CAP: f64 = 1e32;

/// Inner solves allowed per trust-region `λ` search.
const MAX_LMPAR_SOLVES: usize = 10;

#[derive(Clone, Debug)]
pub struct LmResult<T> {
    pub x: Vec<T>,
    pub trace: LmTrace,
}

/// Runs the driver selected by `config.solver`.
pub fn minimize<T: Scalar, P: LeastSquaresProblem<T> + ?Sized>(
    problem: &P,
    x0: &[T],
    config: &LmConfig,
) -> Result<LmResult<T>> {
    match config.solver {
        SolverKind::MoreQr => more_lm(problem, x0, config),
        kind => multiplicative_lm(problem, x0, config, kind),
    }
}

/// Multiplicative-λ driver with the augmented structured QR step (or the
/// QR/Cholesky hybrid when `config.solver` asks for it).
pub fn backtrack_lm<T: Scalar, P: LeastSquaresProblem<T> + ?Sized>(
    problem: &P,
    x0: &[T],
    config: &LmConfig,
) -> Result<LmResult<T>> {
    let kind = match config.solver {
        SolverKind::QrkitCholesky => SolverKind::QrkitCholesky,
        _ => SolverKind::Qrkit,
    };
    multiplicative_lm(problem, x0, config, kind)
}

/// Multiplicative-λ driver with the normal-equations step.
pub fn cholesky_lm<T: Scalar, P: LeastSquaresProblem<T> + ?Sized>(
    problem: &P,
    x0: &[T],
    config: &LmConfig,
) -> Result<LmResult<T>> {
    multiplicative_lm(problem, x0, config, SolverKind::Cholesky)
}

/// Current iterate with everything derived from it.
struct State<T: Scalar> {
    x: Vec<T>,
    f: Vec<T>,
    energy: T,
    j: Jacobian<T>,
    d: Vec<T>,
    grad_inf: T,
}

impl<T: Scalar> State<T> {
    fn new<P: LeastSquaresProblem<T> + ?Sized>(
        problem: &P,
        x: Vec<T>,
        f: Vec<T>,
        energy: T,
        config: &LmConfig,
    ) -> Result<Self> {
        let j = problem.jacobian(&x)?;
        if j.rows() != f.len() || j.cols() != x.len() {
            return Err(Error::dims("jacobian", (f.len(), x.len()), (j.rows(), j.cols())));
        }
        let d = config.damping.diagonal(&j);
        let grad_inf = norm_inf(&j.tr_mul_vec(&f)?);
        Ok(Self { x, f, energy, j, d, grad_inf })
    }
}

/// Residuals and energy at a trial point; evaluation failures count as an
/// infinite energy so the trial is rejected.
fn trial_energy<T: Scalar, P: LeastSquaresProblem<T> + ?Sized>(
    problem: &P,
    x: &[T],
) -> Option<(Vec<T>, T)> {
    let f = problem.residuals(x).ok()?;
    let e = energy_of(&f).ok()?;
    Some((f, e))
}

fn recoverable(e: &Error) -> bool {
    matches!(
        e.root(),
        Error::Singular { .. } | Error::NotPositiveDefinite { .. } | Error::NonFinite { .. }
    )
}

fn make_solver<'a, T: Scalar>(
    kind: SolverKind,
    s: &'a State<T>,
    block_width: usize,
) -> Result<Box<dyn DampedSolve<T> + 'a>> {
    Ok(match kind {
        SolverKind::Qrkit => Box::new(QrAugmented::new(&s.j, &s.f, &s.d, block_width)?),
        SolverKind::QrkitCholesky => Box::new(QrCholesky::new(&s.j, &s.f, &s.d)?),
        SolverKind::Cholesky => Box::new(NormalEquations::new(&s.j, &s.f, &s.d)?),
        SolverKind::MoreQr => unreachable!("the trust-region driver has its own step"),
    })
}

fn initial_lambda<T: Scalar>(j: &Jacobian<T>, config: &LmConfig) -> f64 {
    if let Some(l) = config.lambda0 {
        return l;
    }
    let max_diag = j
        .column_sq_norms()
        .into_iter()
        .fold(0.0f64, |a, v| a.max(v.as_f64()));
    let l = 1e-3 * max_diag;
    if l > 0.0 && l.is_finite() {
        l
    } else {
        1e-3
    }
}

fn step_small<T: Scalar>(p: &[T], x: &[T], tol: f64) -> bool {
    let pn = norm2(p).as_f64();
    pn <= tol * (norm2(x).as_f64() + tol)
}

fn multiplicative_lm<T: Scalar, P: LeastSquaresProblem<T> + ?Sized>(
    problem: &P,
    x0: &[T],
    config: &LmConfig,
    kind: SolverKind,
) -> Result<LmResult<T>> {
    config.validate()?;
    check_len(problem, x0)?;
    let start = Instant::now();
    let f0 = problem.residuals(x0)?;
    let e0 = energy_of(&f0)?;
    let mut state = State::new(problem, x0.to_vec(), f0, e0, config)?;
    let mut lambda = initial_lambda(&state.j, config);
    let mut records = vec![LmRecord {
        iter: 0,
        energy: e0.as_f64(),
        lambda,
        step_norm: 0.0,
        grad_norm: state.grad_inf.as_f64(),
        accepted: true,
        time_s: start.elapsed().as_secs_f64(),
    }];
    let status = 'outer: loop {
        if state.grad_inf.as_f64() <= config.grad_tol {
            break LmStatus::ConvergedGradient;
        }
        let mut solver = make_solver(kind, &state, config.block_width)?;
        loop {
            let iter = records.len();
            if iter > config.max_iterations {
                break 'outer LmStatus::MaxIterations;
            }
            let step = match solver.solve(T::of(lambda)) {
                Ok(p) if p.iter().all(|v| v.is_finite()) => Some(p),
                Ok(_) => None,
                Err(e) if recoverable(&e) => None,
                Err(e) => return Err(e),
            };
            let Some(p) = step else {
                records.push(LmRecord {
                    iter,
                    energy: state.energy.as_f64(),
                    lambda,
                    step_norm: f64::NAN,
                    grad_norm: state.grad_inf.as_f64(),
                    accepted: false,
                    time_s: start.elapsed().as_secs_f64(),
                });
                lambda *= config.lambda_up;
                if lambda > LAMBDA_CAP {
                    break 'outer LmStatus::Failed;
                }
                continue;
            };
            let x_new: Vec<T> = state.x.iter().zip(&p).map(|(&a, &b)| a + b).collect();
            let trial = trial_energy(problem, &x_new).filter(|(_, e)| *e < state.energy);
            let step_norm = norm2(&p).as_f64();
            let small = step_small(&p, &state.x, config.step_tol);
            match trial {
                Some((f_new, e_new)) => {
                    let decrease = (state.energy - e_new).as_f64();
                    let rel_done = decrease <= config.energy_tol * state.energy.as_f64();
                    let used = lambda;
                    lambda = (lambda * config.lambda_down).max(f64::MIN_POSITIVE);
                    drop(solver);
                    state = State::new(problem, x_new, f_new, e_new, config)?;
                    records.push(LmRecord {
                        iter,
                        energy: e_new.as_f64(),
                        lambda: used,
                        step_norm,
                        grad_norm: state.grad_inf.as_f64(),
                        accepted: true,
                        time_s: start.elapsed().as_secs_f64(),
                    });
                    if state.grad_inf.as_f64() <= config.grad_tol {
                        break 'outer LmStatus::ConvergedGradient;
                    }
                    if small {
                        break 'outer LmStatus::ConvergedStep;
                    }
                    if rel_done {
                        break 'outer LmStatus::ConvergedEnergy;
                    }
                    continue 'outer;
                }
                None => {
                    records.push(LmRecord {
                        iter,
                        energy: state.energy.as_f64(),
                        lambda,
                        step_norm,
                        grad_norm: state.grad_inf.as_f64(),
                        accepted: false,
                        time_s: start.elapsed().as_secs_f64(),
                    });
                    if small {
                        break 'outer LmStatus::ConvergedStep;
                    }
                    lambda *= config.lambda_up;
                    if lambda > LAMBDA_CAP {
                        break 'outer LmStatus::Failed;
                    }
                }
            }
        }
    };
    Ok(LmResult {
        x: state.x,
        trace: LmTrace { records, status },
    })
}

/// Trust-region driver: `J = QR` once per iterate, `λ` from a safeguarded
/// scalar iteration on `‖D p(λ)‖ = Δ`.
pub fn more_lm<T: Scalar, P: LeastSquaresProblem<T> + ?Sized>(
    problem: &P,
    x0: &[T],
    config: &LmConfig,
) -> Result<LmResult<T>> {
    config.validate()?;
    check_len(problem, x0)?;
    let start = Instant::now();
    let f0 = problem.residuals(x0)?;
    let e0 = energy_of(&f0)?;
    let mut state = State::new(problem, x0.to_vec(), f0, e0, config)?;
    let mut delta = match config.initial_radius {
        Some(r) => T::of(r),
        None => {
            let r = scaled_norm(&state.d, &state.x);
            if r > T::zero() {
                r
            } else {
                T::one()
            }
        }
    };
    let mut lambda = T::zero();
    let mut first = true;
    let mut records = vec![LmRecord {
        iter: 0,
        energy: e0.as_f64(),
        lambda: 0.0,
        step_norm: 0.0,
        grad_norm: state.grad_inf.as_f64(),
        accepted: true,
        time_s: start.elapsed().as_secs_f64(),
    }];
    let status = 'outer: loop {
        if state.grad_inf.as_f64() <= config.grad_tol {
            break LmStatus::ConvergedGradient;
        }
        let two_step = TwoStepQr::new(&state.j, &state.f, config.block_width)?;
        loop {
            let iter = records.len();
            if iter > config.max_iterations {
                break 'outer LmStatus::MaxIterations;
            }
            let (p, par) = match lmpar(&two_step, &state.d, delta, lambda) {
                Ok(v) if v.0.iter().all(|x| x.is_finite()) => v,
                Ok(_) => (Vec::new(), lambda),
                Err(e) if recoverable(&e) => (Vec::new(), lambda),
                Err(e) => return Err(e),
            };
            lambda = par;
            if p.is_empty() {
                delta *= T::of(0.25);
                records.push(LmRecord {
                    iter,
                    energy: state.energy.as_f64(),
                    lambda: par.as_f64(),
                    step_norm: f64::NAN,
                    grad_norm: state.grad_inf.as_f64(),
                    accepted: false,
                    time_s: start.elapsed().as_secs_f64(),
                });
                if radius_collapsed(delta, &state, config) {
                    break 'outer LmStatus::Failed;
                }
                continue;
            }
            let pnorm = scaled_norm(&state.d, &p);
            if first {
                delta = delta.min(pnorm);
                first = false;
            }
            let x_new: Vec<T> = state.x.iter().zip(&p).map(|(&a, &b)| a + b).collect();
            let trial = trial_energy(problem, &x_new);
            // Predicted reduction of the linear model: E − ½‖f + Jp‖².
            let jp = state.j.mul_vec(&p)?;
            let model: Vec<T> = state.f.iter().zip(&jp).map(|(&a, &b)| a + b).collect();
            let model_e = energy_of(&model).unwrap_or(T::infinity());
            let pred = state.energy - model_e;
            let (rho, f_new, e_new) = match trial {
                Some((f_new, e_new)) => {
                    let actual = state.energy - e_new;
                    let rho = if pred > T::zero() {
                        actual / pred
                    } else if actual > T::zero() {
                        T::one()
                    } else {
                        -T::one()
                    };
                    (rho, Some(f_new), e_new)
                }
                None => (-T::one(), None, T::infinity()),
            };
            if rho < T::of(0.25) {
                delta *= T::of(0.25);
            } else if rho > T::of(0.75) || par == T::zero() {
                delta = delta.max(T::of(2.0) * pnorm);
            }
            let step_norm = norm2(&p).as_f64();
            let small = step_small(&p, &state.x, config.step_tol);
            if rho > T::of(1e-4) && e_new < state.energy {
                let decrease = (state.energy - e_new).as_f64();
                let rel_done = decrease <= config.energy_tol * state.energy.as_f64();
                state = State::new(problem, x_new, f_new.expect("accepted trial"), e_new, config)?;
                records.push(LmRecord {
                    iter,
                    energy: e_new.as_f64(),
                    lambda: par.as_f64(),
                    step_norm,
                    grad_norm: state.grad_inf.as_f64(),
                    accepted: true,
                    time_s: start.elapsed().as_secs_f64(),
                });
                if state.grad_inf.as_f64() <= config.grad_tol {
                    break 'outer LmStatus::ConvergedGradient;
                }
                if small {
                    break 'outer LmStatus::ConvergedStep;
                }
                if rel_done {
                    break 'outer LmStatus::ConvergedEnergy;
                }
                continue 'outer;
            }
            records.push(LmRecord {
                iter,
                energy: state.energy.as_f64(),
                lambda: par.as_f64(),
                step_norm,
                grad_norm: state.grad_inf.as_f64(),
                accepted: false,
                time_s: start.elapsed().as_secs_f64(),
            });
            if small || radius_collapsed(delta, &state, config) {
                break 'outer LmStatus::ConvergedStep;
            }
        }
    };
    Ok(LmResult {
        x: state.x,
        trace: LmTrace { records, status },
    })
}

fn radius_collapsed<T: Scalar>(delta: T, s: &State<T>, config: &LmConfig) -> bool {
    let tol = config.step_tol;
    delta.as_f64() <= tol * (scaled_norm(&s.d, &s.x).as_f64() + tol)
}

fn scaled_norm<T: Scalar>(d: &[T], v: &[T]) -> T {
    let dv: Vec<T> = d.iter().zip(v).map(|(&a, &b)| a * b).collect();
    norm2(&dv)
}

/// Finds `λ ≥ 0` with `|‖D p(λ)‖ − Δ| ≤ 0.1 Δ` (or `λ = 0` when the
/// Gauss-Newton step already lies inside the region), refining a bracket
/// `[parl, paru]` with Newton steps on `φ(λ) = ‖D p(λ)‖ − Δ`.
fn lmpar<T: Scalar>(ts: &TwoStepQr<T>, d: &[T], delta: T, par0: T) -> Result<(Vec<T>, T)> {
    let dwarf = T::min_positive_value();
    let tenth = T::of(0.1);
    let gn = match ts.gauss_newton() {
        Ok(p) if p.iter().all(|v| v.is_finite()) => Some(p),
        Ok(_) => None,
        Err(e) if matches!(e.root(), Error::Singular { .. }) => None,
        Err(e) => return Err(e),
    };
    let mut parl = T::zero();
    let mut fp = T::infinity();
    let mut gn_dxnorm = T::zero();
    if let Some(p) = &gn {
        gn_dxnorm = scaled_norm(d, p);
        fp = gn_dxnorm - delta;
        if fp <= tenth * delta {
            return Ok((p.clone(), T::zero()));
        }
        // Lower bound from the Newton step at λ = 0.
        let wa: Vec<T> = d.iter().zip(p).map(|(&di, &pi)| di * di * pi / gn_dxnorm).collect();
        if let Ok(y) = ts.solve_rt(&wa) {
            let t = norm2(&y);
            if t > T::zero() && t.is_finite() {
                parl = fp / delta / t / t;
            }
        }
    }
    let grad = ts.rt_qtf();
    let scaled_grad: Vec<T> = grad.iter().zip(d).map(|(&g, &di)| g / di).collect();
    let gnorm = norm2(&scaled_grad);
    let mut paru = gnorm / delta;
    if paru == T::zero() {
        paru = dwarf / delta.min(tenth);
    }
    let mut par = par0.max(parl).min(paru);
    if par == T::zero() {
        par = if gn_dxnorm > T::zero() { gnorm / gn_dxnorm } else { gnorm / delta };
    }
    let mut last = None;
    for k in 1..=MAX_LMPAR_SOLVES {
        if par == T::zero() {
            par = dwarf.max(T::of(0.001) * paru);
        }
        let (p, fac) = ts.damped(par, d)?;
        let dxnorm = scaled_norm(d, &p);
        let prev = fp;
        fp = dxnorm - delta;
        if fp.abs() <= tenth * delta
            || (parl == T::zero() && fp <= prev && prev < T::zero())
            || k == MAX_LMPAR_SOLVES
            || dxnorm == T::zero()
        {
            return Ok((p, par));
        }
        let wa: Vec<T> = d.iter().zip(&p).map(|(&di, &pi)| di * di * pi / dxnorm).collect();
        let mut y = DenseMatrix::column_vector(&wa);
        fac.solve_rt_in_place(&mut y)?;
        let t = norm2(y.as_slice());
        let parc = fp / delta / t / t;
        if fp > T::zero() {
            parl = parl.max(par);
        } else if fp < T::zero() {
            paru = paru.min(par);
        }
        par = parl.max(par + parc);
        last = Some((p, par));
    }
    Ok(last.expect("at least one solve"))
}
