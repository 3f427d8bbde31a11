//! Abstract derivatives, the elementary-differential recursion, coherence
//! and renormalised nonlinearities.
//!
//! Each noise label carries a small polynomial algebra of abstract
//! derivative words (truncated at `kstar`); jets pair decorated trees,
//! whose noise edges carry such words, with symbolic coefficients.

use crate::poly::PolyExpr;
use crate::rules::{enumerate_negative, Rule};
use crate::scaling::MultiIndex;
use crate::trees::{Branch, DecoratedTree, DerivWord, EdgeType, Label, TreeError};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::One;
use std::collections::BTreeMap;

// ---------------------------------------------------------------------------
// D_l (x) P elements
// ---------------------------------------------------------------------------

/// Element of the derivative algebra of `label` tensored with the
/// symbolic algebra: a word list with polynomial coefficients.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HatF {
    pub label: Label,
    pub terms: Vec<(DerivWord, PolyExpr)>,
}

fn merge_terms(mut terms: Vec<(DerivWord, PolyExpr)>) -> Vec<(DerivWord, PolyExpr)> {
    terms.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out: Vec<(DerivWord, PolyExpr)> = vec![];
    for (w, p) in terms {
        if let Some(last) = out.last_mut() {
            if last.0 == w {
                last.1 = last.1.add(&p);
                continue;
            }
        }
        out.push((w, p));
    }
    out.retain(|(_, p)| !p.is_zero());
    out
}

impl HatF {
    /// `1_t (x) F_t` for kernel labels, `1_l (x) 1` for noise labels.
    pub fn of(_rule: &Rule, label: Label, nonlinearity: &Nonlinearity) -> HatF {
        let expr = if label.is_kernel() {
            nonlinearity
                .components
                .get(&label.index)
                .cloned()
                .unwrap_or_else(PolyExpr::zero)
        } else {
            PolyExpr::one()
        };
        HatF {
            label,
            terms: vec![(DerivWord::one(), expr)],
        }
    }

    pub fn zero(label: Label) -> HatF {
        HatF {
            label,
            terms: vec![],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Functional derivative `D_o`: acts on the polynomial factor and, for
    /// directions admitted above this noise, also appends a generator.
    pub fn d_o(&self, rule: &Rule, o: &EdgeType) -> HatF {
        let eps = rule.eps_plus_of(&self.label);
        let mut terms = vec![];
        for (w, p) in &self.terms {
            let dp = p.d_var(o);
            if !dp.is_zero() {
                terms.push((w.clone(), dp));
            }
            if eps.contains(o) {
                let w2 = w.mul_gen(o);
                if w2.sup_degree() <= rule.kstar {
                    terms.push((w2, p.clone()));
                }
            }
        }
        HatF {
            label: self.label,
            terms: merge_terms(terms),
        }
    }

    /// Space-time derivative: chain rule on the polynomial factor plus
    /// the word-level contribution from the admitted directions.
    pub fn d_dir(&self, rule: &Rule, i: usize) -> HatF {
        let eps = rule.eps_plus_of(&self.label);
        let dims = rule.dims();
        let mut terms = vec![];
        for (w, p) in &self.terms {
            let dp = p.d_dir(i);
            if !dp.is_zero() {
                terms.push((w.clone(), dp));
            }
            for o in &eps {
                let w2 = w.mul_gen(o);
                if w2.sup_degree() <= rule.kstar {
                    let shifted = EdgeType::new(o.label, o.deriv.add(&MultiIndex::unit(dims, i)));
                    terms.push((w2, p.mul(&PolyExpr::var(shifted))));
                }
            }
        }
        HatF {
            label: self.label,
            terms: merge_terms(terms),
        }
    }

    pub fn d_multi(&self, rule: &Rule, k: &MultiIndex) -> HatF {
        let mut acc = self.clone();
        for (i, &ki) in k.0.iter().enumerate() {
            for _ in 0..ki {
                acc = acc.d_dir(rule, i);
            }
        }
        acc
    }

    pub fn mul_expr(&self, e: &PolyExpr) -> HatF {
        HatF {
            label: self.label,
            terms: merge_terms(
                self.terms
                    .iter()
                    .map(|(w, p)| (w.clone(), p.mul(e)))
                    .collect(),
            ),
        }
    }

    pub fn add(&self, other: &HatF) -> HatF {
        debug_assert_eq!(self.label, other.label);
        let mut t = self.terms.clone();
        t.extend(other.terms.iter().cloned());
        HatF {
            label: self.label,
            terms: merge_terms(t),
        }
    }

    pub fn scale(&self, c: &BigRational) -> HatF {
        HatF {
            label: self.label,
            terms: self
                .terms
                .iter()
                .map(|(w, p)| (w.clone(), p.scale(c)))
                .collect(),
        }
    }
}

fn big(n: u128) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

/// Closed-form multivariate chain rule: the sum over index families
/// `(q_1 < .. < q_r, m_1..m_r)` with `sum |m_i| q_i = k` of monomial
/// prefactors against higher functional derivatives.  Agrees with the
/// iterated space-time derivative.
pub fn faa_di_bruno(rule: &Rule, k: &MultiIndex, hatf: &HatF) -> HatF {
    // directions that can produce nonzero functional derivatives
    let mut support: Vec<EdgeType> = vec![];
    for (_, p) in &hatf.terms {
        for v in p.collect_vars() {
            if !support.contains(&v) {
                support.push(v);
            }
        }
    }
    for e in rule.eps_plus_of(&hatf.label) {
        if !support.contains(&e) {
            support.push(e);
        }
    }
    support.sort();

    // shifts 0 < q <= k in lexicographic order
    let qs: Vec<MultiIndex> = k
        .sub_indices()
        .into_iter()
        .filter(|q| !q.is_zero())
        .collect();

    let mut acc = HatF::zero(hatf.label);
    // families: assign to each q a multiset over `support` (possibly
    // empty), subject to sum |m_q| * q = k
    fn assign(
        qs: &[MultiIndex],
        pos: usize,
        remaining: &MultiIndex,
        current: &mut Vec<(MultiIndex, BTreeMap<EdgeType, u32>)>,
        out: &mut Vec<Vec<(MultiIndex, BTreeMap<EdgeType, u32>)>>,
        support: &[EdgeType],
    ) {
        if remaining.is_zero() {
            out.push(current.clone());
            return;
        }
        if pos == qs.len() {
            return;
        }
        let q = &qs[pos];
        // multiplicity n of q: need n*q <= remaining
        let mut n_max = u16::MAX;
        for (i, &qi) in q.0.iter().enumerate() {
            if qi > 0 {
                n_max = n_max.min(remaining.0[i] / qi);
            }
        }
        for n in 0..=n_max {
            if n == 0 {
                assign(qs, pos + 1, remaining, current, out, support);
                continue;
            }
            // all multisets of size n over support
            let mut multisets: Vec<BTreeMap<EdgeType, u32>> = vec![BTreeMap::new()];
            for _ in 0..n {
                let mut next = vec![];
                for m in &multisets {
                    for o in support {
                        // canonical non-decreasing fill to avoid duplicates
                        if let Some((last, _)) = m.iter().next_back() {
                            if o < last {
                                continue;
                            }
                        }
                        let mut m2 = m.clone();
                        *m2.entry(o.clone()).or_insert(0) += 1;
                        next.push(m2);
                    }
                }
                multisets = next;
            }
            multisets.dedup();
            let scaled = MultiIndex(q.0.iter().map(|&x| x * n).collect());
            if let Some(rem2) = remaining.checked_sub(&scaled) {
                for m in multisets {
                    current.push((q.clone(), m));
                    assign(qs, pos + 1, &rem2, current, out, support);
                    current.pop();
                }
            }
        }
    }

    let mut families = vec![];
    assign(&qs, 0, k, &mut vec![], &mut families, &support);

    for fam in families {
        // prefactor and derivative multiset
        let mut prefactor = PolyExpr::one();
        let mut dhat = hatf.clone();
        let dims = k.dims();
        for (q, m) in &fam {
            let qfact = q.factorial();
            for (o, &mult) in m {
                let shifted = EdgeType::new(o.label, o.deriv.add(q));
                let mut mono = PolyExpr::one();
                for _ in 0..mult {
                    mono = mono.mul(&PolyExpr::var(shifted.clone()));
                }
                let mfact = (1..=mult as u128).product::<u128>();
                prefactor = prefactor
                    .mul(&mono)
                    .scale(&(BigRational::one() / big(mfact) / big(qfact.pow(mult))));
                for _ in 0..mult {
                    dhat = dhat.d_o(rule, o);
                }
            }
        }
        let _ = dims;
        acc = acc.add(&dhat.mul_expr(&prefactor).scale(&big(k.factorial())));
    }
    acc
}

/// Derivative swap: `sum_l binom(k,l) d^{k-l} D_(t,p-l) = D_(t,p) d^k`.
pub fn deriv_swap_holds(rule: &Rule, k: &MultiIndex, o: &EdgeType, hatf: &HatF) -> bool {
    let rhs = hatf.d_multi(rule, k).d_o(rule, o);
    let mut lhs = HatF::zero(hatf.label);
    for l in k.sub_indices() {
        if let Some(p2) = o.deriv.checked_sub(&l) {
            let o2 = EdgeType::new(o.label, p2);
            let km = k.checked_sub(&l).unwrap();
            let term = hatf.d_o(rule, &o2).d_multi(rule, &km);
            lhs = lhs.add(&term.scale(&big(k.binomial(&l))));
        }
    }
    lhs == rhs
}

// ---------------------------------------------------------------------------
// Nonlinearities and jets
// ---------------------------------------------------------------------------

/// Right-hand sides, one symbolic expression per kernel label index.
#[derive(Clone, Debug)]
pub struct Nonlinearity {
    pub components: BTreeMap<u8, PolyExpr>,
}

impl Nonlinearity {
    /// Conformity in the functional sense: derivatives along node types
    /// outside the rule vanish.  Checked on all node types that appear as
    /// variable multisets of the expression.
    pub fn conforms(&self, rule: &Rule) -> bool {
        for (idx, expr) in &self.components {
            let label = match rule
                .labels
                .labels
                .iter()
                .find(|l| l.is_kernel() && l.index == *idx)
            {
                Some(l) => *l,
                None => return false,
            };
            for t in &expr.terms {
                let mut ty: Vec<EdgeType> = vec![];
                for (o, k) in &t.vars {
                    for _ in 0..*k {
                        ty.push(o.clone());
                    }
                }
                // function symbols depend on their argument's variables
                for f in &t.fns {
                    let _ = f;
                }
                ty.sort();
                if !rule.admits(&label, &ty) {
                    return false;
                }
            }
        }
        true
    }
}

/// Linear combination of jets: decorated trees with derivative words on
/// their noise edges, paired with symbolic coefficients.
pub type JetSum = Vec<(DecoratedTree, PolyExpr)>;

pub fn jet_merge(mut js: JetSum) -> JetSum {
    for (t, _) in js.iter_mut() {
        *t = t.canonicalize();
    }
    js.sort_by(|a, b| a.0.cmp(&b.0));
    let mut out: JetSum = vec![];
    for (t, p) in js {
        if let Some(last) = out.last_mut() {
            if last.0 == t {
                last.1 = last.1.add(&p);
                continue;
            }
        }
        out.push((t, p));
    }
    out.retain(|(_, p)| !p.is_zero());
    out
}

pub fn jet_mul(a: &JetSum, b: &JetSum) -> JetSum {
    let mut out = vec![];
    for (t1, p1) in a {
        for (t2, p2) in b {
            out.push((t1.product(t2), p1.mul(p2)));
        }
    }
    jet_merge(out)
}

pub fn jet_scale(a: &JetSum, e: &PolyExpr) -> JetSum {
    jet_merge(a.iter().map(|(t, p)| (t.clone(), p.mul(e))).collect())
}

// ---------------------------------------------------------------------------
// The elementary-differential recursion
// ---------------------------------------------------------------------------

/// `UpsilonBar_o[tau]`: a word for the incoming label, a jet over `tau`,
/// and a coefficient, summed as a list.
pub type BarJet = Vec<(DerivWord, DecoratedTree, PolyExpr)>;

pub struct UpsilonEngine<'a> {
    pub rule: &'a Rule,
    pub nonlinearity: &'a Nonlinearity,
}

impl<'a> UpsilonEngine<'a> {
    pub fn new(rule: &'a Rule, nonlinearity: &'a Nonlinearity) -> Self {
        UpsilonEngine { rule, nonlinearity }
    }

    /// The recursion: differentiate the right-hand side along the root's
    /// edge types, multiply the children's wrapped jets, apply the root
    /// polynomial derivative.
    pub fn upsilon_bar(&self, o: &EdgeType, tree: &DecoratedTree) -> BarJet {
        // vanish unless the wrapped tree conforms
        let wrapped = tree.clone().integrate(o.clone());
        if !self.rule.conforms(&wrapped.strip_words()) {
            return vec![];
        }
        let mut hat = HatF::of(self.rule, o.label, self.nonlinearity);
        for b in &tree.children {
            hat = hat.d_o(self.rule, &b.edge);
        }
        hat = hat.d_multi(self.rule, &tree.m);
        if hat.is_zero() {
            return vec![];
        }
        // product of children's jets
        let mut factors: JetSum = vec![(DecoratedTree::monomial(tree.m.clone()), PolyExpr::one())];
        for b in &tree.children {
            let child = self.upsilon(&b.edge, &b.tree);
            if child.is_empty() {
                return vec![];
            }
            factors = jet_mul(&factors, &child);
        }
        let mut out: BarJet = vec![];
        for (w, p) in &hat.terms {
            for (t, q) in &factors {
                out.push((w.clone(), t.clone(), p.mul(q)));
            }
        }
        out
    }

    /// Wrap: attach the word to the new edge.
    pub fn upsilon(&self, o: &EdgeType, tree: &DecoratedTree) -> JetSum {
        let bar = self.upsilon_bar(o, tree);
        jet_merge(
            bar.into_iter()
                .map(|(w, t, p)| (t.integrate_word(o.clone(), w), p))
                .collect(),
        )
    }

    /// Wrapped jets divided by the symmetry factor.
    pub fn upsilon_bold(&self, o: &EdgeType, tree: &DecoratedTree) -> JetSum {
        let s = big(tree.symmetry_factor());
        jet_scale(
            &self.upsilon(o, tree),
            &PolyExpr::constant(BigRational::one() / &s),
        )
    }

    /// The recursion divided by the symmetry factor.
    pub fn upsilon_bold_bar(&self, o: &EdgeType, tree: &DecoratedTree) -> BarJet {
        let s = big(tree.symmetry_factor());
        self.upsilon_bar(o, tree)
            .into_iter()
            .map(|(w, t, p)| (w, t, p.scale(&(BigRational::one() / &s))))
            .collect()
    }

    /// The counterterm kernel of one negative tree for one component:
    /// pair each jet term's word assignment with its coefficient, with
    /// noise indeterminates evaluated at zero.
    pub fn counterterm_terms(&self, comp: u8, tree: &DecoratedTree) -> BarJet {
        let label = self
            .rule
            .labels
            .labels
            .iter()
            .find(|l| l.is_kernel() && l.index == comp)
            .copied()
            .expect("unknown component");
        let o = EdgeType::plain(label, self.rule.dims());
        self.upsilon_bold_bar(&o, tree)
            .into_iter()
            .map(|(w, t, p)| (w, t, p.at_zero_noise()))
            .filter(|(_, _, p)| !p.is_zero())
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Delta jets: evaluation and translation
// ---------------------------------------------------------------------------

/// The image of a derivative word under evaluation: per noise direction a
/// base point and a derivative order.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaJet {
    pub entries: Vec<(EdgeType, f64, u32)>,
}

/// Evaluate a word at a base point vector.
pub fn eval_word(word: &DerivWord, base: &BTreeMap<EdgeType, f64>) -> DeltaJet {
    DeltaJet {
        entries: word
            .0
            .iter()
            .map(|(o, &k)| (o.clone(), base.get(o).copied().unwrap_or(0.0), k))
            .collect(),
    }
}

impl DeltaJet {
    /// Shift every base point.
    pub fn translate(&self, shift: &BTreeMap<EdgeType, f64>) -> DeltaJet {
        DeltaJet {
            entries: self
                .entries
                .iter()
                .map(|(o, u, k)| (o.clone(), u + shift.get(o).copied().unwrap_or(0.0), *k))
                .collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Coherent jet families
// ---------------------------------------------------------------------------

/// A jet family: one jet sum per kernel component, containing both the
/// polynomial part and the integrated part.
#[derive(Clone, Debug)]
pub struct JetFamily {
    pub components: BTreeMap<u8, JetSum>,
}

/// Abstract derivative on a jet sum.
pub fn jet_deriv(js: &JetSum, i: usize) -> JetSum {
    let mut out: JetSum = vec![];
    for (t, p) in js {
        // polynomial decoration at the root
        if t.m.0[i] > 0 {
            let mut t2 = t.clone();
            t2.m.0[i] -= 1;
            out.push((t2, p.scale(&big(t.m.0[i] as u128))));
        }
        // Leibniz over root edges
        for (j, b) in t.children.iter().enumerate() {
            if b.edge.label.is_kernel() {
                let mut t2 = t.clone();
                let mut d = b.edge.deriv.clone();
                d.0[i] += 1;
                t2.children[j].edge = EdgeType::new(b.edge.label, d);
                out.push((t2, p.clone()));
            }
        }
    }
    jet_merge(out)
}

pub fn jet_deriv_multi(js: &JetSum, k: &MultiIndex) -> JetSum {
    let mut acc = js.clone();
    for (i, &ki) in k.0.iter().enumerate() {
        for _ in 0..ki {
            acc = jet_deriv(&acc, i);
        }
    }
    acc
}

/// Truncation by tree count.
pub fn jet_truncate(js: &JetSum, rule: &Rule, l: u64) -> JetSum {
    js.iter()
        .filter(|(t, _)| t.truncation_param(rule.scaling()) <= l)
        .cloned()
        .collect()
}

pub struct CoherenceEngine<'a> {
    pub rule: &'a Rule,
    pub nonlinearity: &'a Nonlinearity,
    pub l_max: u64,
}

impl<'a> CoherenceEngine<'a> {
    /// The prescribed polynomial part: `sum_p X_(t,p)/p! X^p`.  Monomials
    /// are kept beyond the truncation level because abstract derivatives
    /// shift them downwards.
    pub fn poly_part(&self, comp: u8) -> JetSum {
        let dims = self.rule.dims();
        let s = self.rule.scaling();
        let label = self.kernel(comp);
        let mut out: JetSum = vec![];
        let cap_size = self.l_max + 3;
        let mut cap = vec![(cap_size / 2) as u16];
        cap.extend(std::iter::repeat(cap_size as u16).take(dims - 1));
        for p in MultiIndex(cap).sub_indices() {
            if s.size(&p) as u64 > cap_size {
                continue;
            }
            let sym = PolyExpr::var(EdgeType::new(label, p.clone()));
            let fact = p.factorial();
            out.push((
                DecoratedTree::monomial(p),
                sym.scale(&(BigRational::one() / big(fact))),
            ));
        }
        jet_merge(out)
    }

    fn kernel(&self, comp: u8) -> Label {
        *self
            .rule
            .labels
            .labels
            .iter()
            .find(|l| l.is_kernel() && l.index == comp)
            .expect("unknown kernel component")
    }

    /// `U_(t,p)` as an abstract derivative of the component jet.
    pub fn u_component(&self, family: &JetFamily, o: &EdgeType) -> JetSum {
        let base = family
            .components
            .get(&o.label.index)
            .cloned()
            .unwrap_or_default();
        jet_deriv_multi(&base, &o.deriv)
    }

    /// The non-constant part `u~` of `U_o`.
    pub fn u_tilde(&self, family: &JetFamily, o: &EdgeType) -> JetSum {
        self.u_component(family, o)
            .into_iter()
            .filter(|(t, _)| !t.is_one())
            .collect()
    }

    /// The noise lift: `sum_alpha 1/alpha! I_o[d^alpha (x) u~^alpha]`.
    pub fn hat_xi(&self, family: &JetFamily, o: &EdgeType) -> JetSum {
        // vanishes unless the noise is admitted below some kernel label
        let admitted = self
            .rule
            .labels
            .labels
            .iter()
            .filter(|l| l.is_kernel())
            .any(|l| {
                self.rule
                    .patterns_of(l)
                    .iter()
                    .any(|p| p.matches(std::slice::from_ref(o)))
            });
        if !admitted {
            return vec![];
        }
        let eps = self.rule.eps_plus_of(&o.label);
        let dims = self.rule.dims();
        let mut out: JetSum = vec![];
        // words alpha over eps with sup degree <= kstar
        let mut words: Vec<(DerivWord, JetSum, BigRational)> = vec![(
            DerivWord::one(),
            vec![(DecoratedTree::one(dims), PolyExpr::one())],
            BigRational::one(),
        )];
        let mut frontier = words.clone();
        while !frontier.is_empty() {
            let mut next = vec![];
            for (w, prod, c) in &frontier {
                for dir in &eps {
                    // canonical non-decreasing build-up
                    if let Some((last, _)) = w.0.iter().next_back() {
                        if dir < last {
                            continue;
                        }
                    }
                    let w2 = w.mul_gen(dir);
                    if w2.sup_degree() > self.rule.kstar {
                        continue;
                    }
                    let tilde = self.u_tilde(family, dir);
                    let prod2 = jet_truncate(&jet_mul(prod, &tilde), self.rule, self.l_max);
                    if prod2.is_empty() {
                        continue;
                    }
                    let mult = w2.0.get(dir).copied().unwrap_or(0);
                    let c2 = c / big(mult as u128);
                    next.push((w2, prod2, c2));
                }
            }
            words.extend(next.iter().cloned());
            frontier = next;
        }
        for (w, prod, c) in words {
            for (t, p) in prod {
                out.push((
                    t.integrate_word(o.clone(), w.clone()),
                    p.scale(&c),
                ));
            }
        }
        jet_merge(out)
    }

    /// Taylor lift of the nonlinearity around the polynomial data.
    pub fn f_of_u(&self, family: &JetFamily, comp: u8) -> JetSum {
        let expr = self
            .nonlinearity
            .components
            .get(&comp)
            .cloned()
            .unwrap_or_else(PolyExpr::zero);
        let vars = expr.collect_vars();
        let kernel_vars: Vec<EdgeType> =
            vars.iter().filter(|o| o.label.is_kernel()).cloned().collect();
        let noise_vars: Vec<EdgeType> =
            vars.iter().filter(|o| o.label.is_noise()).cloned().collect();
        // alpha over kernel vars bounded by the truncation level, noises
        // at most once (the builtin nonlinearities are affine in them)
        let mut out: JetSum = vec![];
        let mut stack: Vec<(usize, PolyExpr, JetSum, BigRational)> = vec![(
            0,
            expr.clone(),
            vec![(
                DecoratedTree::one(self.rule.dims()),
                PolyExpr::one(),
            )],
            BigRational::one(),
        )];
        // tilde factors for kernel vars
        while let Some((pos, dexpr, prod, c)) = stack.pop() {
            if pos == kernel_vars.len() {
                // noise factors
                let mut noise_terms: Vec<(PolyExpr, JetSum)> =
                    vec![(dexpr.clone(), prod.clone())];
                for nv in &noise_vars {
                    let mut next = vec![];
                    for (e, pr) in &noise_terms {
                        // order 0
                        next.push((e.clone(), pr.clone()));
                        // order 1
                        let de = e.d_var(nv);
                        if !de.is_zero() {
                            let xi = self.hat_xi(family, nv);
                            if !xi.is_empty() {
                                next.push((
                                    de,
                                    jet_truncate(&jet_mul(pr, &xi), self.rule, self.l_max),
                                ));
                            }
                        }
                    }
                    noise_terms = next;
                }
                for (e, pr) in noise_terms {
                    let coeff = e.at_zero_noise();
                    if coeff.is_zero() {
                        continue;
                    }
                    for (t, p) in &pr {
                        out.push((t.clone(), p.mul(&coeff).scale(&c)));
                    }
                }
                continue;
            }
            let v = &kernel_vars[pos];
            // order 0 in this variable
            stack.push((pos + 1, dexpr.clone(), prod.clone(), c.clone()));
            // higher orders
            let tilde = self.u_tilde(family, v);
            if tilde.is_empty() {
                continue;
            }
            let mut de = dexpr;
            let mut pr = prod;
            let mut fact = c;
            for n in 1..=(self.l_max as u32) {
                de = de.d_var(v);
                if de.is_zero() {
                    break;
                }
                pr = jet_truncate(&jet_mul(&pr, &tilde), self.rule, self.l_max);
                if pr.is_empty() {
                    break;
                }
                fact = fact / big(n as u128);
                stack.push((pos + 1, de.clone(), pr.clone(), fact.clone()));
            }
        }
        jet_merge(out)
    }

    /// Solve the truncated coherence fixed point: the component jets with
    /// prescribed polynomial part whose integrated parts reproduce the
    /// lifted right-hand side.
    pub fn fixed_point(&self) -> JetFamily {
        let comps: Vec<u8> = self
            .nonlinearity
            .components
            .keys()
            .copied()
            .collect();
        let mut family = JetFamily {
            components: comps
                .iter()
                .map(|&c| (c, self.poly_part(c)))
                .collect(),
        };
        for _round in 0..=(self.l_max + 1) {
            let mut next = BTreeMap::new();
            for &c in &comps {
                let rhs = self.f_of_u(&family, c);
                let label = self.kernel(c);
                let mut js = self.poly_part(c);
                // family elements are truncated at l_max after wrapping
                for (t, p) in rhs {
                    let wrapped = t.integrate(EdgeType::plain(label, self.rule.dims()));
                    if wrapped.truncation_param(self.rule.scaling()) <= self.l_max {
                        js.push((wrapped, p));
                    }
                }
                next.insert(c, jet_merge(js));
            }
            let stable = comps
                .iter()
                .all(|c| jets_eq(&family.components[c], &next[c], self.rule, self.l_max));
            family = JetFamily { components: next };
            if stable {
                break;
            }
        }
        family
    }

    /// The integrated part of a component.
    pub fn integrated_part(&self, family: &JetFamily, comp: u8) -> JetSum {
        let mut out: JetSum = vec![];
        for (t, p) in &family.components[&comp] {
            if t.children.len() == 1 && t.m.is_zero() && t.children[0].edge.label.is_kernel() {
                out.push((t.children[0].tree.clone(), p.clone()));
            }
        }
        jet_merge(out)
    }

    /// Right-hand side of the coherence identity: the elementary
    /// differential sum over all trees appearing in the family.
    pub fn coherence_holds(&self, family: &JetFamily) -> bool {
        let engine = UpsilonEngine::new(self.rule, self.nonlinearity);
        if self.l_max == 0 {
            return true;
        }
        let inner = self.l_max - 1;
        for comp in self.nonlinearity.components.keys() {
            let label = self.kernel(*comp);
            let o = EdgeType::plain(label, self.rule.dims());
            let lhs = jet_truncate(&self.integrated_part(family, *comp), self.rule, inner);
            // the elementary differentials of exactly the trees present
            let mut rhs: JetSum = vec![];
            for (t, _) in &lhs {
                let plain = t.strip_words();
                for (w, jt, p) in engine.upsilon_bold_bar(&o, &plain) {
                    debug_assert!(w.is_one(), "kernel words are trivial");
                    rhs.push((jt, p.at_zero_noise()));
                }
            }
            let rhs = jet_truncate(&jet_merge(rhs), self.rule, inner);
            if !jets_eq(&lhs, &rhs, self.rule, inner) {
                return false;
            }
        }
        true
    }
}

pub fn jets_eq(a: &JetSum, b: &JetSum, rule: &Rule, l: u64) -> bool {
    let ta = jet_merge(jet_truncate(a, rule, l));
    let tb = jet_merge(jet_truncate(b, rule, l));
    ta == tb
}

// ---------------------------------------------------------------------------
// Renormalised nonlinearity
// ---------------------------------------------------------------------------

/// One tree's contribution to the renormalised right-hand side of one
/// component: the character value of its profiled jet times the symbolic
/// coefficient.  Returns the delta profile actually used.
pub fn tree_counterterm(
    rule: &Rule,
    nonlinearity: &Nonlinearity,
    comp: u8,
    tree: &DecoratedTree,
) -> (Option<DecoratedTree>, PolyExpr) {
    let engine = UpsilonEngine::new(rule, nonlinearity);
    let terms = engine.counterterm_terms(comp, tree);
    let mut jet: Option<DecoratedTree> = None;
    let mut total = PolyExpr::zero();
    for (w, t, p) in terms {
        debug_assert!(w.is_one());
        match &jet {
            None => jet = Some(t.canonicalize()),
            Some(j) => assert_eq!(
                j,
                &t.canonicalize(),
                "non-unique word assignment on {}",
                tree.to_syntax()
            ),
        }
        total = total.add(&p);
    }
    (jet, total)
}

/// The full renormalised nonlinearity `F + sum_tau g(tau-profile) *
/// coefficient`, with `g` evaluated through the profiled jets.
pub fn renormalise_nonlinearity(
    rule: &Rule,
    nonlinearity: &Nonlinearity,
    g: &dyn Fn(&DecoratedTree) -> f64,
) -> Result<BTreeMap<u8, PolyExpr>, crate::rules::RuleError> {
    let negatives = enumerate_negative(rule)?;
    let mut out: BTreeMap<u8, PolyExpr> = nonlinearity.components.clone();
    for (&comp, expr) in out.iter_mut() {
        let mut acc = expr.clone();
        for tau in &negatives {
            let (jet, coeff) = tree_counterterm(rule, nonlinearity, comp, tau);
            if coeff.is_zero() {
                continue;
            }
            let jet = jet.expect("nonzero counterterm without a jet");
            let gv = g(&jet);
            if gv == 0.0 {
                continue;
            }
            let c = BigRational::from_float(gv).unwrap();
            acc = acc.add(&coeff.scale(&c));
        }
        *expr = acc;
    }
    Ok(out)
}

/// Renormalisation compatibility: acting with the renormalisation map on
/// the elementary-differential expansion equals expanding the
/// renormalised nonlinearity.  Both sides are summed over all trees with
/// truncation parameter at most `tree_cap` and compared on jets up to
/// `tree_cap - support_l`, where `support_l` is the largest truncation
/// parameter in the character's support; deeper jets would receive
/// contributions from trees beyond the cap on the left.
///
/// The character value is kept formal: `g(support-jet) = C`, so the
/// comparison is exact order by order in the counterterm coefficient.
pub fn renorm_compat_check(
    rule: &Rule,
    nonlinearity: &Nonlinearity,
    support: &[(DecoratedTree, &str)],
    tree_cap: u64,
) -> Result<bool, crate::hopf::HopfError> {
    use crate::hopf::neg_coproduct;
    let engine = UpsilonEngine::new(rule, nonlinearity);
    let support: Vec<(DecoratedTree, String)> = support
        .iter()
        .map(|(t, n)| (t.canonicalize(), n.to_string()))
        .collect();
    let support_l = support
        .iter()
        .map(|(t, _)| t.truncation_param(rule.scaling()))
        .max()
        .unwrap_or(0);
    let jet_cap = tree_cap.saturating_sub(support_l);
    // renormalised nonlinearity with formal coefficients
    let mut renorm = nonlinearity.clone();
    for (comp, expr) in renorm.components.iter_mut() {
        let mut acc = expr.clone();
        for (piece, cname) in &support {
            let (jet, coeff) = tree_counterterm(rule, nonlinearity, *comp, &piece.strip_words());
            if coeff.is_zero() {
                continue;
            }
            // the profiled jet must match the supported one
            if jet.as_ref() != Some(piece) {
                continue;
            }
            let c = PolyExpr::fn_symbol(cname, 0, PolyExpr::one());
            acc = acc.add(&coeff.mul(&c));
        }
        *expr = acc;
    }
    let renorm_engine = UpsilonEngine::new(rule, &renorm);

    let bases = crate::rules::enumerate_by_truncation(rule, tree_cap);
    for comp in nonlinearity.components.keys() {
        let label = rule
            .labels
            .labels
            .iter()
            .find(|l| l.is_kernel() && l.index == *comp)
            .copied()
            .unwrap();
        let o = EdgeType::plain(label, rule.dims());
        let mut lhs: JetSum = vec![];
        let mut rhs: JetSum = vec![];
        for tau in &bases {
            // left side: renormalise each jet of the normalized expansion
            for (jet, p) in engine.upsilon_bold(&o, tau) {
                let p0 = p.at_zero_noise();
                if p0.is_zero() {
                    continue;
                }
                for term in neg_coproduct(&jet, rule)? {
                    // evaluate the formal character on the forest
                    let mut factor = PolyExpr::constant(term.coeff.clone());
                    let mut dead = false;
                    for comp_tree in &term.forest.0 {
                        match support.iter().find(|(t, _)| t == comp_tree) {
                            Some((_, cname)) => {
                                factor =
                                    factor.mul(&PolyExpr::fn_symbol(cname, 0, PolyExpr::one()));
                            }
                            None => {
                                dead = true;
                                break;
                            }
                        }
                    }
                    if dead {
                        continue;
                    }
                    lhs.push((term.rest.clone(), p0.mul(&factor)));
                }
            }
            for (jet, p) in renorm_engine.upsilon_bold(&o, tau) {
                let p0 = p.at_zero_noise();
                if !p0.is_zero() {
                    rhs.push((jet, p0));
                }
            }
        }
        // the remainder of a renormalised jet is wrapped, so compare the
        // unwrapped content
        let unwrap = |js: JetSum| -> JetSum {
            js.into_iter()
                .filter_map(|(t, p)| {
                    if t.children.len() == 1 && t.m.is_zero() {
                        Some((t.children[0].tree.clone(), p))
                    } else {
                        None
                    }
                })
                .collect()
        };
        // each counterterm-degree-k cell is complete only up to jets of
        // level `tree_cap - k * piece-size`; filter both sides alike
        let piece_l: BTreeMap<String, u64> = support
            .iter()
            .map(|(t, n)| (n.clone(), t.truncation_param(rule.scaling())))
            .collect();
        let graded = |js: JetSum| -> JetSum {
            js.into_iter()
                .map(|(t, p)| {
                    let lvl = t.truncation_param(rule.scaling());
                    let kept = PolyExpr {
                        terms: p
                            .terms
                            .into_iter()
                            .filter(|term| {
                                let weight: u64 = term
                                    .fns
                                    .iter()
                                    .filter_map(|f| piece_l.get(&f.name))
                                    .sum();
                                lvl + weight <= tree_cap
                            })
                            .collect(),
                    };
                    (t, kept)
                })
                .filter(|(_, p)| !p.is_zero())
                .collect()
        };
        let lhs = graded(unwrap(jet_merge(lhs)));
        let rhs = graded(unwrap(jet_merge(rhs)));
        if !jets_eq(&lhs, &rhs, rule, jet_cap) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Parse helper for tests and the command line: the delta profile of a
/// tree as the profiled jet expected by characters.
pub fn attach_delta_profile(
    rule: &Rule,
    tree: &DecoratedTree,
) -> Result<DecoratedTree, TreeError> {
    fn walk(rule: &Rule, t: &DecoratedTree) -> Result<DecoratedTree, TreeError> {
        let mut children = vec![];
        for b in &t.children {
            let sub = walk(rule, &b.tree)?;
            let word = if b.edge.label.is_noise() {
                let eps = rule.eps_plus_of(&b.edge.label);
                if eps.len() > 1 {
                    return Err(TreeError::AmbiguousProfile(format!(
                        "noise {} admits several directions",
                        b.edge.label.name()
                    )));
                }
                match eps.first() {
                    None => DerivWord::one(),
                    Some(dir) => {
                        let n = b.tree.children.len() as u32 + b.tree.m.len1();
                        if b.tree.m.len1() > 1 {
                            return Err(TreeError::AmbiguousProfile(format!(
                                "decoration above noise {} has size > 1",
                                b.edge.label.name()
                            )));
                        }
                        DerivWord::power(dir.clone(), n)
                    }
                }
            } else {
                DerivWord::one()
            };
            children.push(Branch {
                edge: b.edge.clone(),
                word,
                tree: sub,
            });
        }
        Ok(DecoratedTree {
            m: t.m.clone(),
            children,
        })
    }
    let profiled = walk(rule, &tree.canonicalize())?;
    // cutoff sanity: profiles beyond kstar cannot appear in the structure
    let mut max = 0;
    profiled.for_each_branch(&mut |b| {
        max = max.max(b.word.total());
    });
    assert!(
        max <= rule.kstar,
        "delta profile exceeds the word cutoff: {max} > {}",
        rule.kstar
    );
    Ok(profiled)
}

/// Delta profile per noise edge in canonical traversal order.
pub fn delta_profile(rule: &Rule, tree: &DecoratedTree) -> Result<Vec<u32>, TreeError> {
    let profiled = attach_delta_profile(rule, tree)?;
    let mut out = vec![];
    profiled.for_each_branch(&mut |b| {
        if b.edge.label.is_noise() {
            out.push(b.word.total());
        }
    });
    Ok(out)
}

// ---------------------------------------------------------------------------
// Builtin nonlinearity for the curvature-flow system
// ---------------------------------------------------------------------------

/// Symbol names used by the curvature-flow right-hand sides.
pub const FN_F1: &str = "F1e";
pub const FN_F2: &str = "F2e";
pub const FN_F3: &str = "F3e";
pub const FN_GBAR: &str = "Gbar";

/// The three-component nonlinearity with constants `lambda`, `sigma`,
/// `sigma1` and formal scale-dependent factors; `with_gbar` adds the
/// drift-correcting factor on the first gradient term.
pub fn mcf_nonlinearity(
    rule: &Rule,
    lambda: BigRational,
    sigma: BigRational,
    sigma1: BigRational,
    with_gbar: bool,
) -> Nonlinearity {
    let lab = |n: &str| rule.labels.lookup(n).unwrap();
    let e = |n: &str, p: Vec<u16>| EdgeType::new(lab(n), MultiIndex(p));
    let x11 = PolyExpr::var(e("t1", vec![0, 1]));
    let mut components = BTreeMap::new();
    for i in 0..3u8 {
        let xi0 = PolyExpr::var(e(&format!("t{i}"), vec![0, 1]));
        let xup = PolyExpr::var(e(&format!("t{}", i.div_ceil(2)), vec![0, 1]));
        let xdn = PolyExpr::var(e(&format!("t{}", i / 2), vec![0, 1]));
        let mut f = PolyExpr::zero();
        if i + 1 <= 2 {
            let xi2 = PolyExpr::var(e(&format!("t{}", i + 1), vec![0, 2]));
            f = f.add(&PolyExpr::fn_symbol(FN_F1, 0, x11.clone()).mul(&xi2));
        }
        f = f.add(&xup.mul(&xdn).scale(&lambda));
        f = f.add(&PolyExpr::fn_symbol(FN_F2, 0, x11.clone()).mul(&xi0));
        if with_gbar && i == 0 {
            f = f.add(&PolyExpr::fn_symbol(FN_GBAR, 0, x11.clone()).mul(&xi0));
        }
        f = f.add(&PolyExpr::var(e(&format!("l{i}"), vec![0, 0])).scale(&sigma));
        if i + 1 <= 2 {
            let noise = PolyExpr::var(e(&format!("l{}", i + 1), vec![0, 0]));
            f = f.add(&x11.mul(&x11).mul(&noise).scale(&sigma1));
        }
        if i + 2 <= 2 {
            let noise = PolyExpr::var(e(&format!("l{}", i + 2), vec![0, 0]));
            f = f.add(&PolyExpr::fn_symbol(FN_F3, 0, x11.clone()).mul(&noise));
        }
        components.insert(i, f);
    }
    Nonlinearity { components }
}

/// The KPZ right-hand side `lambda (X')^2 + sigma Xi`.
pub fn kpz_nonlinearity(rule: &Rule, lambda: BigRational, sigma: BigRational) -> Nonlinearity {
    let lab = |n: &str| rule.labels.lookup(n).unwrap();
    let dx = PolyExpr::var(EdgeType::new(lab("t0"), MultiIndex(vec![0, 1])));
    let xi = PolyExpr::var(EdgeType::new(lab("l0"), MultiIndex(vec![0, 0])));
    let f = dx.mul(&dx).scale(&lambda).add(&xi.scale(&sigma));
    Nonlinearity {
        components: [(0u8, f)].into_iter().collect(),
    }
}

pub fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

pub fn rat_f64_approx(x: f64) -> BigRational {
    BigRational::from_float(x).unwrap()
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::builtin_rule;
    use crate::trees::parse_tree;

    fn x_var(rule: &Rule, name: &str, p: Vec<u16>) -> EdgeType {
        EdgeType::new(rule.labels.lookup(name).unwrap(), MultiIndex(p))
    }

    #[test]
    fn d_o_on_noise_unit() {
        let rule = builtin_rule("mcf").unwrap();
        let nl = mcf_nonlinearity(&rule, rat(1, 2), rat(1, 1), rat(0, 1), false);
        let l0 = rule.labels.lookup("l0").unwrap();
        let one = HatF::of(&rule, l0, &nl);
        // admitted direction appends a generator
        let t0 = x_var(&rule, "t0", vec![0, 0]);
        let d = one.d_o(&rule, &t0);
        assert_eq!(d.terms.len(), 1);
        assert_eq!(d.terms[0].0, DerivWord::generator(t0));
        // direction not admitted above noises kills the word
        let dt1 = x_var(&rule, "t1", vec![0, 1]);
        assert!(one.d_o(&rule, &dt1).is_zero());
    }

    #[test]
    fn spacetime_derivative_of_noise_unit() {
        let rule = builtin_rule("mcf").unwrap();
        let nl = mcf_nonlinearity(&rule, rat(1, 2), rat(1, 1), rat(0, 1), false);
        let l0 = rule.labels.lookup("l0").unwrap();
        let one = HatF::of(&rule, l0, &nl);
        let t0 = x_var(&rule, "t0", vec![0, 0]);
        let d1 = one.d_dir(&rule, 1);
        assert_eq!(
            d1.terms,
            vec![(
                DerivWord::generator(t0.clone()),
                PolyExpr::var(x_var(&rule, "t0", vec![0, 1]))
            )]
        );
        // second derivative: d (x) X_(t0,2e1) + d^2 (x) X^2_(t0,e1)
        let d2 = d1.d_dir(&rule, 1);
        let expect = vec![
            (
                DerivWord::generator(t0.clone()),
                PolyExpr::var(x_var(&rule, "t0", vec![0, 2])),
            ),
            (
                DerivWord::power(t0.clone(), 2),
                PolyExpr::var(x_var(&rule, "t0", vec![0, 1]))
                    .mul(&PolyExpr::var(x_var(&rule, "t0", vec![0, 1]))),
            ),
        ];
        assert_eq!(merge_terms(d2.terms.clone()), merge_terms(expect));
    }

    #[test]
    fn faa_di_bruno_matches_iterated_derivatives() {
        let rule = builtin_rule("mcf").unwrap();
        let nl = mcf_nonlinearity(&rule, rat(1, 2), rat(1, 1), rat(1, 3), false);
        for lname in ["l0", "t0", "t1"] {
            let lab = rule.labels.lookup(lname).unwrap();
            let hat = HatF::of(&rule, lab, &nl);
            for k in [vec![0, 1], vec![0, 2], vec![1, 0], vec![0, 3], vec![1, 1]] {
                let k = MultiIndex(k);
                if rule.scaling().size(&k) > 3 {
                    continue;
                }
                let closed = faa_di_bruno(&rule, &k, &hat);
                let iterated = hat.d_multi(&rule, &k);
                assert_eq!(
                    merge_terms(closed.terms.clone()),
                    merge_terms(iterated.terms.clone()),
                    "{lname} at {k:?}"
                );
            }
        }
    }

    #[test]
    fn derivative_swap_identity() {
        let rule = builtin_rule("mcf").unwrap();
        let nl = mcf_nonlinearity(&rule, rat(1, 2), rat(1, 1), rat(1, 3), false);
        let l0 = rule.labels.lookup("l0").unwrap();
        let hat = HatF::of(&rule, l0, &nl);
        for k in [vec![0, 0], vec![0, 1], vec![0, 2], vec![1, 0]] {
            for p in [vec![0, 0], vec![0, 1]] {
                let o = x_var(&rule, "t0", p);
                assert!(deriv_swap_holds(&rule, &MultiIndex(k.clone()), &o, &hat));
            }
        }
    }

    #[test]
    fn upsilon_base_cases() {
        let rule = builtin_rule("kpz").unwrap();
        let nl = kpz_nonlinearity(&rule, rat(1, 2), rat(1, 1));
        let engine = UpsilonEngine::new(&rule, &nl);
        let t0 = EdgeType::plain(rule.labels.lookup("t0").unwrap(), 2);
        // Xi_0: single noise: coefficient sigma on I[Xi]
        let xi = parse_tree("I[l0]{1}", &rule.labels).unwrap();
        let jets = engine.upsilon(&t0, &xi);
        assert_eq!(jets.len(), 1);
        assert_eq!(jets[0].1, PolyExpr::one()); // sigma = 1
        // cherry: coefficient 2 lambda sigma^2 before symmetry division
        let cherry = parse_tree(
            "I[t0;(0,1)]{I[l0]{1}}*I[t0;(0,1)]{I[l0]{1}}",
            &rule.labels,
        )
        .unwrap()
        .canonicalize();
        let bar = engine.upsilon_bar(&t0, &cherry);
        assert_eq!(bar.len(), 1);
        assert_eq!(bar[0].2, PolyExpr::one()); // 2*lambda*sigma^2 = 1
        let bold = engine.upsilon_bold_bar(&t0, &cherry);
        assert_eq!(bold[0].2, PolyExpr::constant(rat(1, 2)));
        // monomials: X^m maps to X^m d^m F
        let xm = parse_tree("X(0,1)", &rule.labels).unwrap();
        let barm = engine.upsilon_bar(&t0, &xm);
        assert!(!barm.is_empty());
    }

    #[test]
    fn upsilon_vanishes_off_rule() {
        let rule = builtin_rule("mcf").unwrap();
        let nl = mcf_nonlinearity(&rule, rat(1, 2), rat(1, 1), rat(1, 3), false);
        let engine = UpsilonEngine::new(&rule, &nl);
        // I_l0 [ I_t1 [1] ] does not conform: wrapping it under t0 vanishes
        let bad = parse_tree("I[l0]{I[t1]{1}}", &rule.labels).unwrap();
        let t0 = EdgeType::plain(rule.labels.lookup("t0").unwrap(), 2);
        assert!(engine.upsilon(&t0, &bad).is_empty());
    }

    #[test]
    fn delta_profiles_of_known_trees() {
        let rule = builtin_rule("mcf").unwrap();
        let xi = parse_tree("I[l0]{1}", &rule.labels).unwrap();
        assert_eq!(delta_profile(&rule, &xi).unwrap(), vec![0]);
        let stacked = parse_tree("I[l0]{I[t0]{I[l0]{1}}}", &rule.labels).unwrap();
        assert_eq!(delta_profile(&rule, &stacked).unwrap(), vec![1, 0]);
        let with_x = parse_tree("I[l0]{X(0,1)}", &rule.labels).unwrap();
        assert_eq!(delta_profile(&rule, &with_x).unwrap(), vec![1]);
    }

    #[test]
    fn coherence_fixed_point_kpz() {
        let rule = builtin_rule("kpz").unwrap();
        let nl = kpz_nonlinearity(&rule, rat(1, 2), rat(1, 1));
        for l in 0..=4u64 {
            let eng = CoherenceEngine {
                rule: &rule,
                nonlinearity: &nl,
                l_max: l,
            };
            let family = eng.fixed_point();
            assert!(eng.coherence_holds(&family), "coherence fails at L={l}");
            if l == 2 {
                // coefficient of I[Xi] inside U_t0 is sigma = 1
                let u0 = &family.components[&0];
                let target = parse_tree("I[t0]{I[l0]{1}}", &rule.labels)
                    .unwrap()
                    .canonicalize();
                let hit = u0
                    .iter()
                    .find(|(t, _)| t.strip_words().canonicalize() == target)
                    .expect("noise jet missing");
                assert_eq!(hit.1, PolyExpr::one());
            }
            if l == 0 {
                let u0 = &family.components[&0];
                assert!(u0.iter().all(|(t, _)| t.children.is_empty()));
            }
        }
    }

    #[test]
    fn coherence_fixed_point_mcf_small() {
        let rule = builtin_rule("mcf").unwrap();
        let nl = mcf_nonlinearity(&rule, rat(1, 2), rat(1, 1), rat(1, 3), false);
        let eng = CoherenceEngine {
            rule: &rule,
            nonlinearity: &nl,
            l_max: 2,
        };
        let family = eng.fixed_point();
        assert!(eng.coherence_holds(&family));
    }

    #[test]
    fn renorm_compatibility_kpz() {
        let rule = builtin_rule("kpz").unwrap();
        let nl = kpz_nonlinearity(&rule, rat(1, 2), rat(1, 1));
        let cherry = parse_tree(
            "I[t0;(0,1)]{I[l0]{1}}*I[t0;(0,1)]{I[l0]{1}}",
            &rule.labels,
        )
        .unwrap();
        let jet = attach_delta_profile(&rule, &cherry).unwrap();
        assert!(renorm_compat_check(&rule, &nl, &[(jet, "Cch")], 5).unwrap());
    }

    #[test]
    fn renorm_compatibility_mcf_small() {
        let rule = builtin_rule("mcf").unwrap();
        let nl = mcf_nonlinearity(&rule, rat(1, 2), rat(1, 1), rat(1, 3), true);
        let stacked = parse_tree("I[l0]{I[t0]{I[l0]{1}}}", &rule.labels).unwrap();
        let jet = attach_delta_profile(&rule, &stacked).unwrap();
        assert!(renorm_compat_check(&rule, &nl, &[(jet, "Chx")], 3).unwrap());
    }

    #[test]
    fn nasty_tree_counterterm_structure() {
        let rule = builtin_rule("mcf").unwrap();
        let nl = mcf_nonlinearity(&rule, rat(1, 2), rat(1, 1), rat(1, 3), true);
        let lab = |n: &str| rule.labels.lookup(n).unwrap();
        let x01 = PolyExpr::var(EdgeType::new(lab("t0"), MultiIndex(vec![0, 1])));
        let x11 = PolyExpr::var(EdgeType::new(lab("t1"), MultiIndex(vec![0, 1])));
        // noise with a kernel-plus-gradient branch on top
        let t1 = parse_tree("I[l0]{I[t0]{I[t0;(0,1)]{I[l0]{1}}}}", &rule.labels).unwrap();
        let (jet, coeff) = tree_counterterm(&rule, &nl, 0, &t1);
        let lambda = rat(1, 2);
        let sigma = rat(1, 1);
        let expect = x01
            .scale(&(rat(2, 1) * &lambda))
            .add(&PolyExpr::fn_symbol(FN_F2, 0, x11.clone()))
            .add(&PolyExpr::fn_symbol(FN_GBAR, 0, x11.clone()))
            .mul(&PolyExpr::constant(&sigma * &sigma));
        assert_eq!(coeff, expect);
        assert_eq!(
            jet.unwrap(),
            attach_delta_profile(&rule, &t1).unwrap()
        );
        // gradient branch over a decorated noise
        let t2 = parse_tree(
            "I[t0;(0,1)]{I[l0]{X(0,1)}}*I[t0;(0,1)]{I[l0]{1}}",
            &rule.labels,
        )
        .unwrap();
        let (_, coeff2) = tree_counterterm(&rule, &nl, 0, &t2);
        let expect2 = x01.scale(&(rat(2, 1) * &lambda * &sigma * &sigma));
        assert_eq!(coeff2, expect2);
        // and it vanishes on the other components
        for comp in [1u8, 2] {
            let (_, c) = tree_counterterm(&rule, &nl, comp, &t2);
            assert!(c.is_zero());
        }
        // cherry and stack produce the classical constants
        let ch = parse_tree(
            "I[t0;(0,1)]{I[l0]{1}}*I[t0;(0,1)]{I[l0]{1}}",
            &rule.labels,
        )
        .unwrap();
        let (_, cch) = tree_counterterm(&rule, &nl, 0, &ch);
        // divided by the symmetry factor 2
        assert_eq!(cch, PolyExpr::constant(&lambda * &sigma * &sigma));
        let hxi = parse_tree("I[l0]{I[t0]{I[l0]{1}}}", &rule.labels).unwrap();
        let (_, chx) = tree_counterterm(&rule, &nl, 0, &hxi);
        assert_eq!(chx, PolyExpr::constant(&sigma * &sigma));
    }

    #[test]
    fn translation_of_delta_jets() {
        let rule = builtin_rule("mcf").unwrap();
        let t0 = EdgeType::plain(rule.labels.lookup("t0").unwrap(), 2);
        let w = DerivWord::power(t0.clone(), 2);
        let mut u = BTreeMap::new();
        u.insert(t0.clone(), 0.3);
        let mut v = BTreeMap::new();
        v.insert(t0.clone(), 1.1);
        let mut uv = BTreeMap::new();
        uv.insert(t0.clone(), 1.4);
        let a = eval_word(&w, &u).translate(&v);
        let b = eval_word(&w, &uv);
        assert_eq!(a.entries.len(), 1);
        assert!((a.entries[0].1 - b.entries[0].1).abs() < 1e-12);
        assert_eq!(a.entries[0].2, b.entries[0].2);
    }
}
