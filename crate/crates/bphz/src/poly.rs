//! The symbolic nonlinearity algebra.
//!
//! Elements are polynomials in the indeterminates `X_o` (one per edge
//! type) whose coefficients are exact rationals times products of formal
//! smooth-function symbols `F^{(j)}(arg)`.  Numeric evaluation is
//! delegated to callbacks, one per function name.

use crate::scaling::MultiIndex;
use crate::trees::EdgeType;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolyError {
    #[error("missing numeric callback for function symbol `{0}`")]
    MissingCallback(String),
}

/// A formal derivative of a named smooth function applied to an argument.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FnApp {
    pub name: String,
    pub order: u32,
    pub arg: PolyExpr,
}

/// One monomial: rational coefficient, function-symbol factors, variables.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Term {
    pub coeff: BigRational,
    pub fns: Vec<FnApp>,
    pub vars: BTreeMap<EdgeType, u32>,
}

impl Term {
    fn key(&self) -> (Vec<FnApp>, Vec<(EdgeType, u32)>) {
        (
            self.fns.clone(),
            self.vars.iter().map(|(k, v)| (k.clone(), *v)).collect(),
        )
    }
}

/// Canonical sum of monomials.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct PolyExpr {
    pub terms: Vec<Term>,
}

impl PartialOrd for PolyExpr {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PolyExpr {
    fn cmp(&self, other: &Self) -> Ordering {
        let a: Vec<_> = self.terms.iter().map(|t| (t.key(), t.coeff.clone())).collect();
        let b: Vec<_> = other.terms.iter().map(|t| (t.key(), t.coeff.clone())).collect();
        a.cmp(&b)
    }
}

impl PolyExpr {
    pub fn zero() -> Self {
        PolyExpr { terms: vec![] }
    }

    pub fn constant(c: BigRational) -> Self {
        if c.is_zero() {
            return Self::zero();
        }
        PolyExpr {
            terms: vec![Term {
                coeff: c,
                fns: vec![],
                vars: BTreeMap::new(),
            }],
        }
    }

    pub fn one() -> Self {
        Self::constant(BigRational::one())
    }

    pub fn int(n: i64) -> Self {
        Self::constant(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn rational(n: i64, d: i64) -> Self {
        Self::constant(BigRational::new(BigInt::from(n), BigInt::from(d)))
    }

    pub fn var(o: EdgeType) -> Self {
        let mut vars = BTreeMap::new();
        vars.insert(o, 1);
        PolyExpr {
            terms: vec![Term {
                coeff: BigRational::one(),
                fns: vec![],
                vars,
            }],
        }
    }

    /// The formal symbol `name^{(order)}(arg)`.
    pub fn fn_symbol(name: &str, order: u32, arg: PolyExpr) -> Self {
        PolyExpr {
            terms: vec![Term {
                coeff: BigRational::one(),
                fns: vec![FnApp {
                    name: name.to_string(),
                    order,
                    arg,
                }],
                vars: BTreeMap::new(),
            }],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    fn normalize(mut terms: Vec<Term>) -> PolyExpr {
        for t in &mut terms {
            t.fns.sort();
        }
        terms.sort_by(|a, b| a.key().cmp(&b.key()));
        let mut out: Vec<Term> = vec![];
        for t in terms {
            if let Some(last) = out.last_mut() {
                if last.key() == t.key() {
                    last.coeff += t.coeff;
                    continue;
                }
            }
            out.push(t);
        }
        out.retain(|t| !t.coeff.is_zero());
        PolyExpr { terms: out }
    }

    pub fn add(&self, other: &PolyExpr) -> PolyExpr {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Self::normalize(terms)
    }

    pub fn sub(&self, other: &PolyExpr) -> PolyExpr {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> PolyExpr {
        PolyExpr {
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    coeff: -&t.coeff,
                    fns: t.fns.clone(),
                    vars: t.vars.clone(),
                })
                .collect(),
        }
    }

    pub fn mul(&self, other: &PolyExpr) -> PolyExpr {
        let mut terms = vec![];
        for a in &self.terms {
            for b in &other.terms {
                let mut vars = a.vars.clone();
                for (o, k) in &b.vars {
                    *vars.entry(o.clone()).or_insert(0) += k;
                }
                let mut fns = a.fns.clone();
                fns.extend(b.fns.iter().cloned());
                terms.push(Term {
                    coeff: &a.coeff * &b.coeff,
                    fns,
                    vars,
                });
            }
        }
        Self::normalize(terms)
    }

    pub fn scale(&self, c: &BigRational) -> PolyExpr {
        self.mul(&PolyExpr::constant(c.clone()))
    }

    /// Partial derivative with respect to the indeterminate `o`.
    pub fn d_var(&self, o: &EdgeType) -> PolyExpr {
        let mut terms = vec![];
        for t in &self.terms {
            // variable factors
            if let Some(&k) = t.vars.get(o) {
                let mut vars = t.vars.clone();
                if k == 1 {
                    vars.remove(o);
                } else {
                    vars.insert(o.clone(), k - 1);
                }
                terms.push(Term {
                    coeff: &t.coeff * BigRational::from_integer(BigInt::from(k)),
                    fns: t.fns.clone(),
                    vars,
                });
            }
            // chain rule through function symbols
            for (i, f) in t.fns.iter().enumerate() {
                let darg = f.arg.d_var(o);
                if darg.is_zero() {
                    continue;
                }
                let mut fns = t.fns.clone();
                fns[i] = FnApp {
                    name: f.name.clone(),
                    order: f.order + 1,
                    arg: f.arg.clone(),
                };
                let base = PolyExpr {
                    terms: vec![Term {
                        coeff: t.coeff.clone(),
                        fns,
                        vars: t.vars.clone(),
                    }],
                };
                terms.extend(base.mul(&darg).terms);
            }
        }
        Self::normalize(terms)
    }

    /// Space-time derivative in direction `i`: the chain rule with
    /// `d_i X_(t,p) = X_(t,p+e_i)`.
    pub fn d_dir(&self, i: usize) -> PolyExpr {
        let mut acc = PolyExpr::zero();
        for o in self.collect_vars() {
            let d = self.d_var(&o);
            if d.is_zero() {
                continue;
            }
            let dims = o.deriv.dims();
            let shifted = EdgeType::new(o.label, o.deriv.add(&MultiIndex::unit(dims, i)));
            acc = acc.add(&d.mul(&PolyExpr::var(shifted)));
        }
        acc
    }

    /// All indeterminates appearing, including inside function arguments.
    pub fn collect_vars(&self) -> Vec<EdgeType> {
        let mut out: Vec<EdgeType> = vec![];
        fn walk(e: &PolyExpr, out: &mut Vec<EdgeType>) {
            for t in &e.terms {
                for o in t.vars.keys() {
                    if !out.contains(o) {
                        out.push(o.clone());
                    }
                }
                for f in &t.fns {
                    walk(&f.arg, out);
                }
            }
        }
        walk(self, &mut out);
        out.sort();
        out
    }

    /// Substitute zero for every noise-type indeterminate.
    pub fn at_zero_noise(&self) -> PolyExpr {
        let mut terms = vec![];
        'term: for t in &self.terms {
            if t.vars.keys().any(|o| o.label.is_noise()) {
                continue 'term;
            }
            let mut fns = vec![];
            for f in &t.fns {
                fns.push(FnApp {
                    name: f.name.clone(),
                    order: f.order,
                    arg: f.arg.at_zero_noise(),
                });
            }
            terms.push(Term {
                coeff: t.coeff.clone(),
                fns,
                vars: t.vars.clone(),
            });
        }
        Self::normalize(terms)
    }

    /// Numeric evaluation.  `point` supplies values for indeterminates
    /// (absent entries are zero); `callbacks` supplies `F^{(j)}`.
    pub fn eval(
        &self,
        point: &HashMap<EdgeType, f64>,
        callbacks: &dyn Fn(&str, u32, f64) -> Option<f64>,
    ) -> Result<f64, PolyError> {
        let mut acc = 0.0;
        for t in &self.terms {
            let mut v = rat_to_f64(&t.coeff);
            for (o, k) in &t.vars {
                let x = point.get(o).copied().unwrap_or(0.0);
                v *= x.powi(*k as i32);
            }
            for f in &t.fns {
                let a = f.arg.eval(point, callbacks)?;
                let fv = callbacks(&f.name, f.order, a)
                    .ok_or_else(|| PolyError::MissingCallback(format!("{}^{}", f.name, f.order)))?;
                v *= fv;
            }
            acc += v;
        }
        Ok(acc)
    }
}

pub fn rat_to_f64(c: &BigRational) -> f64 {
    let nf = c.numer().to_string().parse::<f64>().unwrap_or(f64::NAN);
    let df = c.denom().to_string().parse::<f64>().unwrap_or(f64::NAN);
    nf / df
}

impl fmt::Display for PolyExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            let mut factors: Vec<String> = vec![];
            if !t.coeff.is_one() || (t.fns.is_empty() && t.vars.is_empty()) {
                factors.push(format!("{}", t.coeff));
            }
            for fnap in &t.fns {
                let ord = match fnap.order {
                    0 => String::new(),
                    1 => "'".into(),
                    2 => "''".into(),
                    k => format!("^({k})"),
                };
                factors.push(format!("{}{}({})", fnap.name, ord, fnap.arg));
            }
            for (o, k) in &t.vars {
                let base = format!("X[{}{:?}]", o.label.name(), o.deriv);
                if *k == 1 {
                    factors.push(base);
                } else {
                    factors.push(format!("{base}^{k}"));
                }
            }
            write!(f, "{}", factors.join("*"))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degree::InfDegree;
    use crate::trees::{Label, LabelSort};

    fn kernel_var(idx: u8, p: Vec<u16>) -> EdgeType {
        EdgeType::new(
            Label {
                sort: LabelSort::Kernel,
                index: idx,
                degree: InfDegree::integer(2),
                reg: InfDegree::zero(),
            },
            MultiIndex(p),
        )
    }

    #[test]
    fn polynomial_derivative() {
        // d/dx (2 l x^2) = 4 l x
        let x = kernel_var(0, vec![0, 1]);
        let expr = PolyExpr::int(2).mul(&PolyExpr::var(x.clone())).mul(&PolyExpr::var(x.clone()));
        let d = expr.d_var(&x);
        assert_eq!(d, PolyExpr::int(4).mul(&PolyExpr::var(x)));
    }

    #[test]
    fn chain_rule_through_symbols() {
        let x = kernel_var(1, vec![0, 1]);
        let f = PolyExpr::fn_symbol("F", 0, PolyExpr::var(x.clone()));
        let d = f.d_var(&x);
        assert_eq!(d, PolyExpr::fn_symbol("F", 1, PolyExpr::var(x)));
    }

    #[test]
    fn spacetime_derivatives_commute() {
        let x = kernel_var(0, vec![0, 1]);
        let y = kernel_var(1, vec![0, 1]);
        let e = PolyExpr::fn_symbol("F", 0, PolyExpr::var(x.clone()))
            .mul(&PolyExpr::var(y))
            .add(&PolyExpr::var(x).mul(&PolyExpr::var(kernel_var(0, vec![1, 0]))));
        let d01 = e.d_dir(0).d_dir(1);
        let d10 = e.d_dir(1).d_dir(0);
        assert_eq!(d01, d10);
    }

    #[test]
    fn eval_with_callbacks() {
        let x = kernel_var(1, vec![0, 1]);
        let e = PolyExpr::int(3)
            .mul(&PolyExpr::fn_symbol("G", 1, PolyExpr::var(x.clone())))
            .mul(&PolyExpr::var(x.clone()));
        let mut pt = HashMap::new();
        pt.insert(x, 2.0);
        let v = e
            .eval(&pt, &|name, order, a| {
                (name == "G" && order == 1).then(|| a * a)
            })
            .unwrap();
        assert_eq!(v, 3.0 * 4.0 * 2.0);
    }
}
