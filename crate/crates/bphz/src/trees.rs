//! Decorated rooted trees.
//!
//! A tree carries an edge type (label + derivative multi-index) on every
//! edge and a polynomial multi-index on every node.  Edges of noise type
//! need not be terminal: the subtree sitting above a noise edge records the
//! dependence of that noise on the solution.  Additionally every edge can
//! carry an abstract-derivative word; plain combinatorial trees have the
//! empty word everywhere and the word only becomes nontrivial on noise
//! edges of jets.

use crate::degree::InfDegree;
use crate::scaling::{MultiIndex, ScalingSpec};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LabelSort {
    Kernel,
    Noise,
}

/// A kernel or noise label with its degree and regularity assignment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Label {
    pub sort: LabelSort,
    pub index: u8,
    pub degree: InfDegree,
    pub reg: InfDegree,
}

impl Label {
    pub fn name(&self) -> String {
        match self.sort {
            LabelSort::Kernel => format!("t{}", self.index),
            LabelSort::Noise => format!("l{}", self.index),
        }
    }

    pub fn is_noise(&self) -> bool {
        self.sort == LabelSort::Noise
    }

    pub fn is_kernel(&self) -> bool {
        self.sort == LabelSort::Kernel
    }
}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Label {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.sort, self.index).cmp(&(other.sort, other.index))
    }
}

/// Edge type: a label plus a derivative multi-index.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EdgeType {
    pub label: Label,
    pub deriv: MultiIndex,
}

impl EdgeType {
    pub fn new(label: Label, deriv: MultiIndex) -> Self {
        EdgeType { label, deriv }
    }

    pub fn plain(label: Label, dims: usize) -> Self {
        EdgeType {
            label,
            deriv: MultiIndex::zero(dims),
        }
    }

    /// `deg(t,p) = deg t - |p|_s`.
    pub fn degree(&self, s: &ScalingSpec) -> InfDegree {
        self.label.degree - InfDegree::integer(s.size(&self.deriv) as i64)
    }

    /// `reg(t,p) = reg t - |p|_s`.
    pub fn reg(&self, s: &ScalingSpec) -> InfDegree {
        self.label.reg - InfDegree::integer(s.size(&self.deriv) as i64)
    }
}

impl PartialOrd for EdgeType {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for EdgeType {
    fn cmp(&self, other: &Self) -> Ordering {
        self.label
            .cmp(&other.label)
            .then_with(|| self.deriv.cmp(&other.deriv))
    }
}

/// Monomial in the abstract derivative generators attached to a noise edge.
///
/// Keys are the directions (elements of `E_+(l)`), values the powers.  The
/// empty word is the unit.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DerivWord(pub BTreeMap<EdgeType, u32>);

impl DerivWord {
    pub fn one() -> Self {
        DerivWord(BTreeMap::new())
    }

    pub fn generator(o: EdgeType) -> Self {
        let mut m = BTreeMap::new();
        m.insert(o, 1);
        DerivWord(m)
    }

    pub fn power(o: EdgeType, k: u32) -> Self {
        let mut m = BTreeMap::new();
        if k > 0 {
            m.insert(o, k);
        }
        DerivWord(m)
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mul(&self, other: &DerivWord) -> DerivWord {
        let mut m = self.0.clone();
        for (o, k) in &other.0 {
            *m.entry(o.clone()).or_insert(0) += k;
        }
        DerivWord(m)
    }

    pub fn mul_gen(&self, o: &EdgeType) -> DerivWord {
        let mut m = self.0.clone();
        *m.entry(o.clone()).or_insert(0) += 1;
        DerivWord(m)
    }

    /// `deg d^a = |a|_inf`; words above the cutoff are the zero element.
    pub fn sup_degree(&self) -> u32 {
        self.0.values().copied().max().unwrap_or(0)
    }

    /// Total power, i.e. the order of the attached distributional derivative.
    pub fn total(&self) -> u32 {
        self.0.values().sum()
    }

    /// `prod a_o!`
    pub fn factorial(&self) -> u128 {
        self.0
            .values()
            .map(|&k| (1..=k as u128).product::<u128>())
            .product()
    }
}

/// One child of a node: the connecting edge, the abstract-derivative word
/// riding on it (trivial except on noise edges of jets) and the subtree.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Branch {
    pub edge: EdgeType,
    pub word: DerivWord,
    pub tree: DecoratedTree,
}

impl PartialOrd for Branch {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Branch {
    fn cmp(&self, other: &Self) -> Ordering {
        self.edge
            .cmp(&other.edge)
            .then_with(|| self.word.cmp(&other.word))
            .then_with(|| self.tree.cmp(&other.tree))
    }
}

/// Rooted decorated tree; `m` is the polynomial decoration of the root.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DecoratedTree {
    pub m: MultiIndex,
    pub children: Vec<Branch>,
}

impl PartialOrd for DecoratedTree {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for DecoratedTree {
    fn cmp(&self, other: &Self) -> Ordering {
        self.m
            .cmp(&other.m)
            .then_with(|| self.children.cmp(&other.children))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("parse error at byte {0}: {1}")]
    Parse(usize, String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("ambiguous delta profile: {0}")]
    AmbiguousProfile(String),
}

impl DecoratedTree {
    /// The single node `X^0`.
    pub fn one(dims: usize) -> Self {
        DecoratedTree {
            m: MultiIndex::zero(dims),
            children: vec![],
        }
    }

    /// The single node `X^m`.
    pub fn monomial(m: MultiIndex) -> Self {
        DecoratedTree {
            m,
            children: vec![],
        }
    }

    /// Wrap in an integration edge: `I_(label,deriv)[self]`.
    pub fn integrate(self, edge: EdgeType) -> Self {
        let dims = self.m.dims();
        DecoratedTree {
            m: MultiIndex::zero(dims),
            children: vec![Branch {
                edge,
                word: DerivWord::one(),
                tree: self,
            }],
        }
    }

    /// Wrap in an integration edge carrying an abstract-derivative word.
    pub fn integrate_word(self, edge: EdgeType, word: DerivWord) -> Self {
        let dims = self.m.dims();
        DecoratedTree {
            m: MultiIndex::zero(dims),
            children: vec![Branch {
                edge,
                word,
                tree: self,
            }],
        }
    }

    /// Tree product: merge at the roots (decorations add, children concat).
    pub fn product(&self, other: &DecoratedTree) -> DecoratedTree {
        let mut children = self.children.clone();
        children.extend(other.children.iter().cloned());
        DecoratedTree {
            m: self.m.add(&other.m),
            children,
        }
    }

    pub fn is_one(&self) -> bool {
        self.m.is_zero() && self.children.is_empty()
    }

    /// Recursively sort sibling subtrees; two trees are equal modulo sibling
    /// reordering iff their canonical forms are identical.
    pub fn canonicalize(&self) -> DecoratedTree {
        let mut children: Vec<Branch> = self
            .children
            .iter()
            .map(|b| Branch {
                edge: b.edge.clone(),
                word: b.word.clone(),
                tree: b.tree.canonicalize(),
            })
            .collect();
        children.sort();
        DecoratedTree {
            m: self.m.clone(),
            children,
        }
    }

    pub fn is_canonical(&self) -> bool {
        self.children.windows(2).all(|w| w[0] <= w[1])
            && self.children.iter().all(|b| b.tree.is_canonical())
    }

    /// Exact degree: decorations plus edge degrees.
    pub fn degree(&self, s: &ScalingSpec) -> InfDegree {
        let mut acc = InfDegree::integer(s.size(&self.m) as i64);
        for b in &self.children {
            acc = acc + b.edge.degree(s) + b.tree.degree(s);
        }
        acc
    }

    /// Degree with the infinitesimal corrections dropped.
    pub fn homogeneity(&self, s: &ScalingSpec) -> num_rational::Rational64 {
        self.degree(s).rational_part()
    }

    /// Number of edges (of any sort).
    pub fn edge_count(&self) -> usize {
        self.children
            .iter()
            .map(|b| 1 + b.tree.edge_count())
            .sum()
    }

    pub fn noise_edge_count(&self) -> usize {
        self.children
            .iter()
            .map(|b| usize::from(b.edge.label.is_noise()) + b.tree.noise_edge_count())
            .sum()
    }

    /// Truncation parameter: kernel-type edges plus total decoration size.
    pub fn truncation_param(&self, s: &ScalingSpec) -> u64 {
        let mut acc = s.size(&self.m) as u64;
        for b in &self.children {
            if b.edge.label.is_kernel() {
                acc += 1;
            }
            acc += b.tree.truncation_param(s);
        }
        acc
    }

    /// Symmetry factor `S(tau) = m! * prod_i S(tau_i)^{b_i} b_i!` where the
    /// product runs over distinct (edge, word, subtree) factors at the root.
    pub fn symmetry_factor(&self) -> u128 {
        let canon = self.canonicalize();
        canon.symmetry_factor_canonical()
    }

    fn symmetry_factor_canonical(&self) -> u128 {
        let mut acc = self.m.factorial();
        let mut i = 0;
        while i < self.children.len() {
            let mut j = i;
            while j < self.children.len() && self.children[j] == self.children[i] {
                j += 1;
            }
            let mult = (j - i) as u128;
            let sub = self.children[i].tree.symmetry_factor_canonical();
            acc *= (1..=mult).product::<u128>();
            acc *= sub.pow(mult as u32);
            i = j;
        }
        acc
    }

    /// True iff the root carries exactly one edge and it is of kernel type.
    /// Trees whose trunk is a noise edge do not count as planted.
    pub fn is_planted(&self) -> bool {
        self.children.len() == 1 && self.children[0].edge.label.is_kernel()
    }

    /// Move every subtree sitting atop a noise edge down to that edge's
    /// root.  Idempotent; preserves degree and homogeneity.
    pub fn down_map(&self) -> DecoratedTree {
        let dims = self.m.dims();
        let mut out = DecoratedTree {
            m: self.m.clone(),
            children: vec![],
        };
        for b in &self.children {
            let sub = b.tree.down_map();
            if b.edge.label.is_noise() {
                // bare noise edge stays; its former content multiplies here
                out.children.push(Branch {
                    edge: b.edge.clone(),
                    word: b.word.clone(),
                    tree: DecoratedTree::one(dims),
                });
                out.m = out.m.add(&sub.m);
                out.children.extend(sub.children);
            } else {
                out.children.push(Branch {
                    edge: b.edge.clone(),
                    word: b.word.clone(),
                    tree: sub,
                });
            }
        }
        out
    }

    /// Strip all abstract-derivative words.
    pub fn strip_words(&self) -> DecoratedTree {
        DecoratedTree {
            m: self.m.clone(),
            children: self
                .children
                .iter()
                .map(|b| Branch {
                    edge: b.edge.clone(),
                    word: DerivWord::one(),
                    tree: b.tree.strip_words(),
                })
                .collect(),
        }
    }

    /// Visit all branches (depth first, parents before children).
    pub fn for_each_branch<'a>(&'a self, f: &mut impl FnMut(&'a Branch)) {
        for b in &self.children {
            f(b);
            b.tree.for_each_branch(f);
        }
    }

    /// Canonical textual form.
    pub fn to_syntax(&self) -> String {
        let canon = self.canonicalize();
        canon.syntax_raw()
    }

    fn syntax_raw(&self) -> String {
        let mut parts: Vec<String> = vec![];
        if !self.m.is_zero() {
            parts.push(format!("X{}", self.m));
        }
        for b in &self.children {
            let mut head = b.edge.label.name();
            if !b.edge.deriv.is_zero() {
                head.push(';');
                head.push_str(&format!("{}", b.edge.deriv));
            }
            if !b.word.is_one() {
                // words only arise on single-generator noises in practice
                head.push_str(&format!(";d{}", b.word.total()));
            }
            parts.push(format!("I[{}]{{{}}}", head, b.tree.syntax_raw()));
        }
        if parts.is_empty() {
            "1".to_string()
        } else {
            parts.join("*")
        }
    }
}

/// Resolves textual label names against a set of declared labels.
#[derive(Clone, Debug)]
pub struct LabelSet {
    pub labels: Vec<Label>,
    pub scaling: ScalingSpec,
}

impl LabelSet {
    pub fn lookup(&self, name: &str) -> Option<Label> {
        self.labels.iter().copied().find(|l| l.name() == name)
    }

    pub fn noise_labels(&self) -> Vec<Label> {
        self.labels.iter().copied().filter(Label::is_noise).collect()
    }

    pub fn kernel_labels(&self) -> Vec<Label> {
        self.labels.iter().copied().filter(Label::is_kernel).collect()
    }
}

/// Parse the textual tree syntax, e.g. `X(0,1)*I[t0;(0,1)]{I[l0]{1}}`.
pub fn parse_tree(input: &str, labels: &LabelSet) -> Result<DecoratedTree, TreeError> {
    let mut p = Parser {
        bytes: input.as_bytes(),
        pos: 0,
        labels,
    };
    let t = p.tree()?;
    p.skip_ws();
    if p.pos != p.bytes.len() {
        return Err(TreeError::Parse(p.pos, "trailing input".into()));
    }
    Ok(t)
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    labels: &'a LabelSet,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), TreeError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(TreeError::Parse(
                self.pos,
                format!("expected `{}`", c as char),
            ))
        }
    }

    fn tree(&mut self) -> Result<DecoratedTree, TreeError> {
        let dims = self.labels.scaling.dims();
        if self.peek() == Some(b'1') {
            self.pos += 1;
            return Ok(DecoratedTree::one(dims));
        }
        let mut acc = DecoratedTree::one(dims);
        loop {
            let factor = self.factor()?;
            acc = acc.product(&factor);
            if self.peek() == Some(b'*') {
                self.pos += 1;
            } else {
                break;
            }
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<DecoratedTree, TreeError> {
        match self.peek() {
            Some(b'X') => {
                self.pos += 1;
                let m = self.multi_index()?;
                Ok(DecoratedTree::monomial(m))
            }
            Some(b'I') => {
                self.pos += 1;
                self.expect(b'[')?;
                let name = self.ident()?;
                let label = self
                    .labels
                    .lookup(&name)
                    .ok_or(TreeError::UnknownLabel(name))?;
                let mut deriv = MultiIndex::zero(self.labels.scaling.dims());
                let mut word = DerivWord::one();
                while self.peek() == Some(b';') {
                    self.pos += 1;
                    if self.peek() == Some(b'd') {
                        self.pos += 1;
                        let k = self.number()? as u32;
                        // single-generator convention: the word direction is
                        // resolved later against the rule; store under a
                        // plain kernel-0 placeholder if no labels match.
                        let gen_label = self
                            .labels
                            .kernel_labels()
                            .first()
                            .copied()
                            .unwrap_or(label);
                        word = DerivWord::power(
                            EdgeType::plain(gen_label, self.labels.scaling.dims()),
                            k,
                        );
                    } else {
                        deriv = self.multi_index()?;
                    }
                }
                self.expect(b']')?;
                self.expect(b'{')?;
                let sub = self.tree()?;
                self.expect(b'}')?;
                Ok(sub.integrate_word(EdgeType::new(label, deriv), word))
            }
            _ => Err(TreeError::Parse(
                self.pos,
                "expected factor `X(..)` or `I[..]{..}`".into(),
            )),
        }
    }

    fn ident(&mut self) -> Result<String, TreeError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len()
            && (self.bytes[self.pos].is_ascii_alphanumeric())
        {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(TreeError::Parse(self.pos, "expected identifier".into()));
        }
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn number(&mut self) -> Result<u16, TreeError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(TreeError::Parse(self.pos, "expected number".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| TreeError::Parse(start, "bad number".into()))
    }

    fn multi_index(&mut self) -> Result<MultiIndex, TreeError> {
        self.expect(b'(')?;
        let mut v = vec![self.number()?];
        while self.peek() == Some(b',') {
            self.pos += 1;
            v.push(self.number()?);
        }
        self.expect(b')')?;
        if v.len() != self.labels.scaling.dims() {
            return Err(TreeError::Parse(
                self.pos,
                format!(
                    "multi-index has {} components, expected {}",
                    v.len(),
                    self.labels.scaling.dims()
                ),
            ));
        }
        Ok(MultiIndex(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degree::InfDegree;

    fn toy_labels() -> LabelSet {
        let s = ScalingSpec::new(1);
        let l0 = Label {
            sort: LabelSort::Noise,
            index: 0,
            degree: InfDegree::rational(-3, 2) + InfDegree::kstar(-1),
            reg: InfDegree::rational(-3, 2) + InfDegree::kstar(-1) + InfDegree::kappa(-1),
        };
        let t0 = Label {
            sort: LabelSort::Kernel,
            index: 0,
            degree: InfDegree::integer(2),
            reg: l0.reg + InfDegree::integer(2),
        };
        LabelSet {
            labels: vec![l0, t0],
            scaling: s,
        }
    }

    fn xi0(ls: &LabelSet) -> DecoratedTree {
        let l0 = ls.lookup("l0").unwrap();
        DecoratedTree::one(2).integrate(EdgeType::plain(l0, 2))
    }

    #[test]
    fn canonical_form_ignores_sibling_order() {
        let ls = toy_labels();
        let t0 = ls.lookup("t0").unwrap();
        let a = xi0(&ls).integrate(EdgeType::new(t0, MultiIndex(vec![0, 1])));
        let b = DecoratedTree::one(2).integrate(EdgeType::plain(t0, 2));
        let ab = a.product(&b);
        let ba = b.product(&a);
        assert_eq!(ab.canonicalize(), ba.canonicalize());
        assert_eq!(ab.to_syntax(), ba.to_syntax());
    }

    #[test]
    fn degree_and_homogeneity() {
        let ls = toy_labels();
        let s = ls.scaling;
        let xi = xi0(&ls);
        let d = xi.degree(&s);
        assert_eq!(d, InfDegree::rational(-3, 2) + InfDegree::kstar(-1));
        assert_eq!(xi.homogeneity(&s), num_rational::Rational64::new(-3, 2));
        // X^{(1,0)} has degree 2
        let x = DecoratedTree::monomial(MultiIndex(vec![1, 0]));
        assert_eq!(x.degree(&s), InfDegree::integer(2));
    }

    #[test]
    fn symmetry_factors() {
        let ls = toy_labels();
        let t0 = ls.lookup("t0").unwrap();
        let xi = xi0(&ls);
        assert_eq!(xi.symmetry_factor(), 1);
        let hp = xi.integrate(EdgeType::new(t0, MultiIndex(vec![0, 1])));
        let cherry = hp.product(&hp);
        assert_eq!(cherry.symmetry_factor(), 2);
        let x2 = DecoratedTree::monomial(MultiIndex(vec![2, 0]));
        assert_eq!(x2.symmetry_factor(), 2);
    }

    #[test]
    fn planted_detection() {
        let ls = toy_labels();
        let t0 = ls.lookup("t0").unwrap();
        let xi = xi0(&ls);
        assert!(!xi.is_planted()); // noise trunk
        let h = xi.clone().integrate(EdgeType::plain(t0, 2));
        assert!(h.is_planted());
        let prod = xi.product(&xi);
        assert!(!prod.is_planted());
    }

    #[test]
    fn down_map_flattens_and_preserves_degree() {
        let ls = toy_labels();
        let s = ls.scaling;
        let l0 = ls.lookup("l0").unwrap();
        let t0 = ls.lookup("t0").unwrap();
        // noise with a kernel branch on top
        let h = xi0(&ls).integrate(EdgeType::plain(t0, 2));
        let tall = h.clone().integrate(EdgeType::plain(l0, 2));
        let flat = tall.down_map();
        let expect = xi0(&ls).product(&h).canonicalize();
        assert_eq!(flat.canonicalize(), expect);
        assert_eq!(flat.degree(&s), tall.degree(&s));
        assert_eq!(flat.down_map().canonicalize(), flat.canonicalize());
        // nothing atop the noise: identity
        let xi = xi0(&ls);
        assert_eq!(xi.down_map(), xi);
    }

    #[test]
    fn syntax_round_trip() {
        let ls = toy_labels();
        for src in [
            "I[l0]{1}",
            "I[l0;(0,0)]{1}",
            "X(0,1)*I[t0;(0,1)]{I[l0]{1}}",
            "I[t0;(0,1)]{I[l0]{1}}*I[t0;(0,1)]{I[l0]{1}}",
        ] {
            let t = parse_tree(src, &ls).unwrap();
            let printed = t.to_syntax();
            let t2 = parse_tree(&printed, &ls).unwrap();
            assert_eq!(t.canonicalize(), t2.canonicalize());
            assert_eq!(printed, t2.to_syntax());
        }
    }
}
