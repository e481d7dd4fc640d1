use std::fmt::Write as _;

use super::{Bound, ParamSet, Tape, Var};
use crate::error::Result;

/// Gradients smaller than this are compared on an absolute scale.
const DENOM_FLOOR: f64 = 1e-5;

/// Worst element found for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub index: usize,
    pub autodiff: f64,
    pub finite_diff: f64,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub h: f64,
    pub tol: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    /// Plain-text table: parameter, element, autodiff, finite difference,
    /// relative error.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# h={:e} tol={:e}", self.h, self.tol);
        let _ = writeln!(out, "param\tindex\tautodiff\tfinite_diff\trel_error");
        for p in &self.params {
            let _ = writeln!(
                out,
                "{}\t{}\t{:.10e}\t{:.10e}\t{:.3e}",
                p.name, p.index, p.autodiff, p.finite_diff, p.max_rel_error
            );
        }
        let _ = writeln!(
            out,
            "# max_rel_error={:.3e} {}",
            self.max_rel_error(),
            if self.pass { "PASS" } else { "FAIL" }
        );
        out
    }
}

pub(crate) fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(DENOM_FLOOR)
}

/// Compares reverse-mode gradients of `f` against central differences
/// `(f(p + h) - f(p - h)) / 2h`, element by element, for every parameter.
pub fn finite_diff_check<Fun>(params: &ParamSet<f64>, h: f64, tol: f64, f: Fun) -> Result<GradCheckReport>
where
    Fun: for<'t> Fn(&'t Tape<f64>, &Bound<'t, f64>) -> Result<Var<'t, f64>>,
{
    let analytic = {
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let loss = f(&tape, &bound)?;
        tape.backward(loss)?;
        let mut ps = params.clone();
        ps.zero_grads();
        ps.accumulate_grads(&bound)?;
        ps
    };

    let eval = |ps: &ParamSet<f64>| -> Result<f64> {
        let tape = Tape::new();
        let bound = ps.bind(&tape);
        Ok(f(&tape, &bound)?.item())
    };

    let mut work = params.clone();
    let mut checks = Vec::new();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let grad = analytic.get(&name).and_then(|t| t.grad()).unwrap_or(&[]).to_vec();
        let mut worst = ParamCheck {
            name: name.clone(),
            index: 0,
            autodiff: 0.0,
            finite_diff: 0.0,
            max_rel_error: 0.0,
        };
        let n = work.get(&name).map_or(0, |t| t.len());
        for i in 0..n {
            let orig = work.get(&name).unwrap().data()[i];
            work.get_mut(&name).unwrap().data_mut()[i] = orig + h;
            let plus = eval(&work)?;
            work.get_mut(&name).unwrap().data_mut()[i] = orig - h;
            let minus = eval(&work)?;
            work.get_mut(&name).unwrap().data_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * h);
            let ad = grad.get(i).copied().unwrap_or(0.0);
            let err = rel_error(ad, fd);
            if err > worst.max_rel_error || i == 0 {
                worst = ParamCheck {
                    name: name.clone(),
                    index: i,
                    autodiff: ad,
                    finite_diff: fd,
                    max_rel_error: err,
                };
            }
        }
        checks.push(worst);
    }
    let max = checks.iter().map(|p| p.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        params: checks,
        h,
        tol,
        pass: max <= tol,
    })
}
