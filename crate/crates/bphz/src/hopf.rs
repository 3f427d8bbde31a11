//! Negative extraction–contraction coproduct, twisted antipode, characters
//! and renormalisation maps, on the reduced structure.
//!
//! The coproduct extracts disjoint families of unplanted negative-degree
//! subtrees, splits polynomial node decorations binomially between the
//! extracted piece and the contracted node, and transfers derivative
//! decorations onto cut edges.  Transfer terms that would push an extracted
//! piece to nonnegative degree are dropped: they multiply positive-degree
//! remainders and never reach the counit.

use crate::degree::InfDegree;
use crate::rules::{enumerate_trees, Rule};
use crate::scaling::MultiIndex;
use crate::trees::{Branch, DecoratedTree, EdgeType};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::One;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HopfError {
    #[error("contraction leaves the rule: {0}")]
    RuleMismatch(String),
}

/// Commutative product of canonical trees; the empty forest is the unit.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Forest(pub Vec<DecoratedTree>);

impl Forest {
    pub fn empty() -> Self {
        Forest(vec![])
    }

    pub fn single(t: &DecoratedTree) -> Self {
        Forest::empty().push(t)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mul(&self, other: &Forest) -> Forest {
        let mut v = self.0.clone();
        v.extend(other.0.iter().cloned());
        v.sort();
        Forest(v)
    }

    /// Multiply a tree in; the bare node `X^0` acts as the unit.
    pub fn push(&self, t: &DecoratedTree) -> Forest {
        if t.is_one() {
            return self.clone();
        }
        let mut v = self.0.clone();
        v.push(t.canonicalize());
        v.sort();
        Forest(v)
    }
}

/// One term of the negative coproduct.
#[derive(Clone, Debug)]
pub struct CoTerm {
    pub forest: Forest,
    pub rest: DecoratedTree,
    pub coeff: BigRational,
}

fn big(n: u128) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

// ---------------------------------------------------------------------------
// Arena representation
// ---------------------------------------------------------------------------

struct Arena {
    decorations: Vec<MultiIndex>,
    parents: Vec<usize>,
    types: Vec<EdgeType>,
    words: Vec<crate::trees::DerivWord>,
    children_of: Vec<Vec<usize>>, // node -> outgoing edge ids
    edge_child: Vec<usize>,       // edge -> child node id
}

impl Arena {
    fn build(tree: &DecoratedTree) -> Arena {
        let mut a = Arena {
            decorations: vec![],
            parents: vec![],
            types: vec![],
            words: vec![],
            children_of: vec![],
            edge_child: vec![],
        };
        a.add(tree);
        a
    }

    fn add(&mut self, t: &DecoratedTree) -> usize {
        let id = self.decorations.len();
        self.decorations.push(t.m.clone());
        self.children_of.push(vec![]);
        for b in &t.children {
            let eid = self.types.len();
            self.parents.push(id);
            self.types.push(b.edge.clone());
            self.words.push(b.word.clone());
            self.edge_child.push(usize::MAX); // fixed below
            self.children_of[id].push(eid);
            let c = self.add(&b.tree);
            self.edge_child[eid] = c;
        }
        id
    }

    fn n_edges(&self) -> usize {
        self.types.len()
    }

    fn n_nodes(&self) -> usize {
        self.decorations.len()
    }
}

// ---------------------------------------------------------------------------
// Negative coproduct
// ---------------------------------------------------------------------------

/// Negative extraction–contraction coproduct.  The `(empty, tree, 1)` term
/// is always present; `(tree, node, ..)` terms appear whenever the tree
/// itself is negative and unplanted.
pub fn neg_coproduct(tree: &DecoratedTree, rule: &Rule) -> Result<Vec<CoTerm>, HopfError> {
    let s = *rule.scaling();
    let dims = rule.dims();
    let arena = Arena::build(tree);
    let ne = arena.n_edges();
    assert!(ne <= 24, "tree too large for subforest enumeration");
    let mut out: Vec<CoTerm> = vec![];

    'mask: for mask in 0u64..(1u64 << ne) {
        let keep = |i: usize| mask & (1 << i) != 0;
        // components of the kept-edge subgraph (edges listed parent-first)
        let mut comp: Vec<Option<usize>> = vec![None; arena.n_nodes()];
        let mut ncomp = 0usize;
        for i in 0..ne {
            if !keep(i) {
                continue;
            }
            let (p, c) = (arena.parents[i], arena.edge_child[i]);
            match comp[p] {
                Some(k) => comp[c] = Some(k),
                None => {
                    comp[p] = Some(ncomp);
                    comp[c] = Some(ncomp);
                    ncomp += 1;
                }
            }
        }
        // component roots: nodes in a component whose parent edge is unkept
        let mut comp_root: Vec<usize> = vec![usize::MAX; ncomp];
        for v in 0..arena.n_nodes() {
            if let Some(k) = comp[v] {
                let parent_kept = (0..ne).any(|i| keep(i) && arena.edge_child[i] == v);
                if !parent_kept {
                    comp_root[k] = v;
                }
            }
        }
        // standalone-unplanted check for every component
        for (k, &root) in comp_root.iter().enumerate() {
            debug_assert!(comp[root] == Some(k));
            let kept_root_edges: Vec<usize> = arena.children_of[root]
                .iter()
                .copied()
                .filter(|&i| keep(i))
                .collect();
            if kept_root_edges.len() == 1 && arena.types[kept_root_edges[0]].label.is_kernel() {
                continue 'mask;
            }
        }
        // base degree of each component from edges alone
        let mut comp_deg = vec![InfDegree::zero(); ncomp];
        for i in 0..ne {
            if keep(i) {
                let k = comp[arena.parents[i]].unwrap();
                comp_deg[k] = comp_deg[k] + arena.types[i].degree(&s);
            }
        }
        if mask != 0 && !comp_deg.iter().all(InfDegree::is_negative) {
            // decorations and transfers only add degree
            continue;
        }
        let in_comp: Vec<bool> = comp.iter().map(Option::is_some).collect();
        let cut: Vec<usize> = (0..ne)
            .filter(|&i| !keep(i) && in_comp[arena.parents[i]])
            .collect();
        let decorated: Vec<usize> = (0..arena.n_nodes())
            .filter(|&v| in_comp[v] && !arena.decorations[v].is_zero())
            .collect();

        // enumerate kept decorations
        let mut splits: Vec<(Vec<MultiIndex>, BigRational)> = vec![(vec![], BigRational::one())];
        for &v in &decorated {
            let mut next = vec![];
            for (ks, c) in &splits {
                for sub in arena.decorations[v].sub_indices() {
                    let bin = arena.decorations[v].binomial(&sub);
                    let mut ks2 = ks.clone();
                    ks2.push(sub);
                    next.push((ks2, c * big(bin)));
                }
            }
            splits = next;
        }

        for (kept, cbin) in &splits {
            let mut deg = comp_deg.clone();
            for (j, &v) in decorated.iter().enumerate() {
                let k = comp[v].unwrap();
                deg[k] = deg[k] + InfDegree::integer(s.size(&kept[j]) as i64);
            }
            if mask != 0 && !deg.iter().all(InfDegree::is_negative) {
                continue;
            }
            // enumerate derivative transfers onto cut edges, bounded by the
            // parent component's remaining (strictly negative) degree
            let mut transfers: Vec<(Vec<MultiIndex>, BigRational, Vec<InfDegree>)> =
                vec![(vec![], BigRational::one(), deg.clone())];
            for &ei in &cut {
                let k = comp[arena.parents[ei]].unwrap();
                let mut next = vec![];
                for (es, c, degs) in &transfers {
                    for cand in transfer_candidates(dims, &s, degs[k]) {
                        let mut degs2 = degs.clone();
                        degs2[k] = degs2[k] + InfDegree::integer(s.size(&cand) as i64);
                        let fact = cand.factorial();
                        let mut es2 = es.clone();
                        es2.push(cand);
                        next.push((es2, c / big(fact), degs2));
                    }
                }
                transfers = next;
            }

            for (eps, ceps, _) in &transfers {
                let keepmask: Vec<bool> = (0..ne).map(keep).collect();
                let mut forest = Forest::empty();
                for &root in &comp_root {
                    let t = extract_component(
                        &arena, root, &keepmask, &decorated, kept, &cut, eps, dims,
                    );
                    forest = forest.push(&t);
                }
                let rest = contract_rest(
                    &arena, &keepmask, &comp, &comp_root, &decorated, kept, &cut, eps, dims, 0,
                );
                if !rule.conforms_closure(&rest.strip_words()) {
                    return Err(HopfError::RuleMismatch(format!(
                        "extracting [{}] from {} (rest: {})",
                        forest
                            .0
                            .iter()
                            .map(DecoratedTree::to_syntax)
                            .collect::<Vec<_>>()
                            .join(" . "),
                        tree.to_syntax(),
                        rest.to_syntax()
                    )));
                }
                out.push(CoTerm {
                    forest,
                    rest,
                    coeff: cbin * ceps,
                });
            }
        }
    }
    Ok(out)
}

/// Multi-indices a cut edge may receive, keeping the donor component's
/// degree (currently `have`) strictly negative.
fn transfer_candidates(
    dims: usize,
    s: &crate::scaling::ScalingSpec,
    have: InfDegree,
) -> Vec<MultiIndex> {
    let mut out = vec![MultiIndex::zero(dims)];
    let mut frontier = vec![MultiIndex::zero(dims)];
    while let Some(m) = frontier.pop() {
        for i in 0..dims {
            let mut m2 = m.clone();
            m2.0[i] += 1;
            if (have + InfDegree::integer(s.size(&m2) as i64)).is_negative()
                && !out.contains(&m2)
            {
                out.push(m2.clone());
                frontier.push(m2);
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn extract_component(
    arena: &Arena,
    root: usize,
    keep: &[bool],
    decorated: &[usize],
    kept: &[MultiIndex],
    cut: &[usize],
    eps: &[MultiIndex],
    dims: usize,
) -> DecoratedTree {
    let mut m = if let Some(j) = decorated.iter().position(|&w| w == root) {
        kept[j].clone()
    } else {
        MultiIndex::zero(dims)
    };
    for (j, &ei) in cut.iter().enumerate() {
        if arena.parents[ei] == root {
            m = m.add(&eps[j]);
        }
    }
    let mut children = vec![];
    for &ei in &arena.children_of[root] {
        if keep[ei] {
            let sub =
                extract_component(arena, arena.edge_child[ei], keep, decorated, kept, cut, eps, dims);
            children.push(Branch {
                edge: arena.types[ei].clone(),
                word: arena.words[ei].clone(),
                tree: sub,
            });
        }
    }
    DecoratedTree { m, children }
}

/// Build the contracted remainder starting from original node `v`.
#[allow(clippy::too_many_arguments)]
fn contract_rest(
    arena: &Arena,
    keep: &[bool],
    comp: &[Option<usize>],
    comp_root: &[usize],
    decorated: &[usize],
    kept: &[MultiIndex],
    cut: &[usize],
    eps: &[MultiIndex],
    dims: usize,
    v: usize,
) -> DecoratedTree {
    match comp[v] {
        None => {
            let mut children = vec![];
            for &ei in &arena.children_of[v] {
                debug_assert!(!keep[ei]);
                let sub = contract_rest(
                    arena,
                    keep,
                    comp,
                    comp_root,
                    decorated,
                    kept,
                    cut,
                    eps,
                    dims,
                    arena.edge_child[ei],
                );
                children.push(Branch {
                    edge: arena.types[ei].clone(),
                    word: arena.words[ei].clone(),
                    tree: sub,
                });
            }
            DecoratedTree {
                m: arena.decorations[v].clone(),
                children,
            }
        }
        Some(k) => {
            debug_assert_eq!(comp_root[k], v, "contract_rest entered a non-root component node");
            // leftover decoration: sum over component nodes of (m - kept)
            let mut m = MultiIndex::zero(dims);
            let mut nodes = vec![v];
            let mut i = 0;
            while i < nodes.len() {
                let w = nodes[i];
                i += 1;
                let leftover = if let Some(j) = decorated.iter().position(|&u| u == w) {
                    arena.decorations[w].checked_sub(&kept[j]).unwrap()
                } else {
                    MultiIndex::zero(dims)
                };
                m = m.add(&leftover);
                for &ei in &arena.children_of[w] {
                    if keep[ei] {
                        nodes.push(arena.edge_child[ei]);
                    }
                }
            }
            // children: cut edges leaving any node of this component
            let mut children = vec![];
            for w in &nodes {
                for &ei in &arena.children_of[*w] {
                    if keep[ei] {
                        continue;
                    }
                    let j = cut.iter().position(|&c| c == ei).unwrap();
                    let sub = contract_rest(
                        arena,
                        keep,
                        comp,
                        comp_root,
                        decorated,
                        kept,
                        cut,
                        eps,
                        dims,
                        arena.edge_child[ei],
                    );
                    children.push(Branch {
                        edge: EdgeType::new(
                            arena.types[ei].label,
                            arena.types[ei].deriv.add(&eps[j]),
                        ),
                        word: arena.words[ei].clone(),
                        tree: sub,
                    });
                }
            }
            DecoratedTree { m, children }
        }
    }
}

// ---------------------------------------------------------------------------
// Twisted antipode
// ---------------------------------------------------------------------------

/// Linear combination of forests.
pub type ForestSum = Vec<(Forest, BigRational)>;

fn forest_sum_merge(terms: ForestSum) -> ForestSum {
    let mut map: HashMap<Forest, BigRational> = HashMap::new();
    for (f, c) in terms {
        *map.entry(f).or_insert_with(num_traits::Zero::zero) += c;
    }
    map.into_iter()
        .filter(|(_, c)| !num_traits::Zero::is_zero(c))
        .collect()
}

/// Negative twisted antipode on negative unplanted trees, extended
/// multiplicatively to forests.  Defined by the recursion that makes the
/// convolution against the coproduct vanish on such trees.
pub struct Antipode<'a> {
    rule: &'a Rule,
    cache: HashMap<DecoratedTree, ForestSum>,
}

impl<'a> Antipode<'a> {
    pub fn new(rule: &'a Rule) -> Self {
        Antipode {
            rule,
            cache: HashMap::new(),
        }
    }

    /// Antipode of a single negative unplanted tree.
    pub fn tree(&mut self, tree: &DecoratedTree) -> Result<ForestSum, HopfError> {
        let key = tree.canonicalize();
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit.clone());
        }
        let s = self.rule.scaling();
        debug_assert!(key.degree(s).is_negative() && !key.is_planted());
        let mut acc: ForestSum = vec![(Forest::single(&key), -BigRational::one())];
        for term in neg_coproduct(&key, self.rule)? {
            // skip the counit term (empty extraction) and the full
            // extraction with zero leftover
            if term.forest.is_empty() {
                continue;
            }
            if term.rest.is_one() && term.forest == Forest::single(&key) {
                continue;
            }
            // remainders that are pure polynomials X^k (k != 0) never
            // reach the counit under any character of interest
            if term.rest.children.is_empty() && !term.rest.m.is_zero() {
                continue;
            }
            let left = self.forest(&term.forest)?;
            for (f, c) in left {
                acc.push((f.push(&term.rest), -&c * &term.coeff));
            }
        }
        let acc = forest_sum_merge(acc);
        self.cache.insert(key, acc.clone());
        Ok(acc)
    }

    /// Multiplicative extension to forests.
    pub fn forest(&mut self, forest: &Forest) -> Result<ForestSum, HopfError> {
        let mut acc: ForestSum = vec![(Forest::empty(), BigRational::one())];
        for t in &forest.0 {
            let at = self.tree(t)?;
            let mut next = vec![];
            for (f1, c1) in &acc {
                for (f2, c2) in &at {
                    next.push((f1.mul(f2), c1 * c2));
                }
            }
            acc = forest_sum_merge(next);
        }
        Ok(acc)
    }
}

// ---------------------------------------------------------------------------
// Characters and renormalisation maps
// ---------------------------------------------------------------------------

/// A multiplicative functional on forests, determined by its values on
/// trees.  `eval_tree` receives arbitrary conforming trees (together with
/// any derivative words they carry); the empty forest maps to 1.
pub struct Character<'a> {
    pub eval_tree: Box<dyn Fn(&DecoratedTree) -> f64 + 'a>,
}

impl<'a> Character<'a> {
    pub fn new(f: impl Fn(&DecoratedTree) -> f64 + 'a) -> Self {
        Character {
            eval_tree: Box::new(f),
        }
    }

    pub fn tree(&self, t: &DecoratedTree) -> f64 {
        if t.is_one() {
            return 1.0;
        }
        if t.children.is_empty() {
            // pure polynomial: recentred evaluation at the origin
            return 0.0;
        }
        (self.eval_tree)(t)
    }

    pub fn forest(&self, f: &Forest) -> f64 {
        f.0.iter().map(|t| self.tree(t)).product()
    }

    pub fn forest_sum(&self, fs: &ForestSum) -> f64 {
        fs.iter()
            .map(|(f, c)| rat_f64(c) * self.forest(f))
            .sum()
    }
}

pub fn rat_f64(c: &BigRational) -> f64 {
    let n = c.numer();
    let d = c.denom();
    let nf = n.to_string().parse::<f64>().unwrap_or(f64::NAN);
    let df = d.to_string().parse::<f64>().unwrap_or(f64::NAN);
    nf / df
}

/// The BPHZ character: antipode followed by the expectation oracle,
/// multiplicative over connected components.
pub fn bphz_character<'a>(
    rule: &'a Rule,
    oracle: impl Fn(&DecoratedTree) -> f64 + 'a,
) -> impl Fn(&DecoratedTree) -> Result<f64, HopfError> + 'a {
    move |tree: &DecoratedTree| {
        let mut anti = Antipode::new(rule);
        let terms = anti.tree(tree)?;
        let g = Character::new(&oracle);
        Ok(g.forest_sum(&terms))
    }
}

/// `(g (x) id)` applied to the coproduct of a tree: the renormalisation
/// map acting on a single tree, returning weighted remainder trees.
pub fn renorm_tree(
    g: &Character,
    tree: &DecoratedTree,
    rule: &Rule,
) -> Result<Vec<(DecoratedTree, f64)>, HopfError> {
    let mut out: HashMap<DecoratedTree, f64> = HashMap::new();
    for term in neg_coproduct(tree, rule)? {
        let w = rat_f64(&term.coeff) * g.forest(&term.forest);
        if w != 0.0 {
            *out.entry(term.rest.canonicalize()).or_insert(0.0) += w;
        }
    }
    Ok(out.into_iter().collect())
}

/// Finite completeness certificate: every contraction of a negative
/// unplanted subforest inside any tree below the bound stays inside the
/// rule.  `neg_coproduct` checks exactly this while enumerating.
pub fn check_complete_upto(rule: &Rule, bound: InfDegree) -> Result<bool, crate::rules::RuleError> {
    let trees = enumerate_trees(rule, bound, false)?;
    for t in &trees {
        if neg_coproduct(t, rule).is_err() {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::{builtin_rule, enumerate_negative};
    use crate::trees::parse_tree;

    #[test]
    fn coproduct_of_bare_noise() {
        let rule = builtin_rule("mcf").unwrap();
        let xi = parse_tree("I[l0]{1}", &rule.labels).unwrap();
        let terms = neg_coproduct(&xi, &rule).unwrap();
        // (empty, Xi, 1) and (Xi, node, 1)
        assert_eq!(terms.len(), 2);
        assert!(terms
            .iter()
            .any(|t| t.forest.is_empty() && t.rest == xi && t.coeff == BigRational::one()));
        assert!(terms
            .iter()
            .any(|t| t.forest == Forest::single(&xi) && t.rest.is_one()));
    }

    #[test]
    fn coproduct_of_pure_polynomial() {
        let rule = builtin_rule("mcf").unwrap();
        let x = parse_tree("X(0,1)", &rule.labels).unwrap();
        let terms = neg_coproduct(&x, &rule).unwrap();
        assert_eq!(terms.len(), 1);
        assert!(terms[0].forest.is_empty());
    }

    #[test]
    fn cherry_extraction_inside_host() {
        let rule = builtin_rule("mcf").unwrap();
        // host containing the cherry as a proper subtree
        let host = parse_tree(
            "I[l0]{I[t0]{I[t0;(0,1)]{I[l0]{1}}*I[t0;(0,1)]{I[l0]{1}}}}",
            &rule.labels,
        )
        .unwrap();
        let cherry = parse_tree(
            "I[t0;(0,1)]{I[l0]{1}}*I[t0;(0,1)]{I[l0]{1}}",
            &rule.labels,
        )
        .unwrap()
        .canonicalize();
        let terms = neg_coproduct(&host, &rule).unwrap();
        let hit = terms
            .iter()
            .filter(|t| t.forest == Forest::single(&cherry))
            .count();
        assert!(hit >= 1);
    }

    #[test]
    fn antipode_of_primitive_tree_is_minus_itself() {
        let rule = builtin_rule("mcf").unwrap();
        let xi = parse_tree("I[l0]{1}", &rule.labels).unwrap();
        let mut anti = Antipode::new(&rule);
        let terms = anti.tree(&xi).unwrap();
        assert_eq!(terms.len(), 1);
        assert_eq!(terms[0].0, Forest::single(&xi));
        assert_eq!(terms[0].1, -BigRational::one());
    }

    /// The defining identity: convolving the antipode against the
    /// coproduct kills every negative unplanted tree, for an arbitrary
    /// multiplicative functional.
    #[test]
    fn convolution_identity_on_negative_sets() {
        for name in ["kpz", "qew1", "mcf"] {
            let rule = builtin_rule(name).unwrap();
            let trees = enumerate_negative(&rule).unwrap();
            // pseudo-random but deterministic tree values
            let g = Character::new(|t: &DecoratedTree| {
                use std::collections::hash_map::DefaultHasher;
                use std::hash::{Hash, Hasher};
                let mut h = DefaultHasher::new();
                t.canonicalize().to_syntax().hash(&mut h);
                ((h.finish() % 1000) as f64 - 500.0) / 250.0
            });
            let mut anti = Antipode::new(&rule);
            for tau in &trees {
                let mut total = 0.0;
                for term in neg_coproduct(tau, &rule).unwrap() {
                    let left = anti.forest(&term.forest).unwrap();
                    let gv = g.forest_sum(&left);
                    total += rat_f64(&term.coeff) * gv * g.tree(&term.rest);
                }
                assert!(
                    total.abs() < 1e-9,
                    "{name}: convolution not zero on {} (got {total})",
                    tau.to_syntax()
                );
            }
        }
    }

    /// Co-associativity of the coproduct on small trees.
    #[test]
    fn coassociativity_small_trees() {
        let rule = builtin_rule("mcf").unwrap();
        let trees = enumerate_negative(&rule).unwrap();
        let g = Character::new(|t: &DecoratedTree| {
            use std::collections::hash_map::DefaultHasher;
            use std::hash::{Hash, Hasher};
            let mut h = DefaultHasher::new();
            t.canonicalize().to_syntax().hash(&mut h);
            ((h.finish() % 89) as f64 - 44.0) / 19.0
        });
        let h = Character::new(|t: &DecoratedTree| {
            use std::collections::hash_map::DefaultHasher;
            use std::hash::{Hash, Hasher};
            let mut hs = DefaultHasher::new();
            ("other", t.canonicalize().to_syntax()).hash(&mut hs);
            ((hs.finish() % 97) as f64 - 48.0) / 23.0
        });
        // The Hopf-algebra coproduct on the negative part projects right
        // legs back onto negative unplanted trees (or the unit).
        let s = *rule.scaling();
        let copr_neg = |tau: &DecoratedTree| -> Vec<CoTerm> {
            neg_coproduct(tau, &rule)
                .unwrap()
                .into_iter()
                .filter(|t| {
                    t.rest.is_one()
                        || (t.rest.degree(&s).is_negative() && !t.rest.is_planted())
                })
                .collect()
        };
        // (g (x) h (x) id) applied both ways agrees on every tree
        for tau in trees.iter().filter(|t| t.edge_count() <= 6) {
            // (id (x) Delta) Delta with g, h on the first two slots
            let mut lhs: HashMap<DecoratedTree, f64> = HashMap::new();
            for t1 in copr_neg(tau) {
                let gv = rat_f64(&t1.coeff) * g.forest(&t1.forest);
                if gv == 0.0 {
                    continue;
                }
                for t2 in copr_neg(&t1.rest) {
                    let hv = rat_f64(&t2.coeff) * h.forest(&t2.forest);
                    *lhs.entry(t2.rest.canonicalize()).or_insert(0.0) += gv * hv;
                }
            }
            // (Delta (x) id) Delta with Delta extended multiplicatively
            // over the extracted forest
            let mut rhs: HashMap<DecoratedTree, f64> = HashMap::new();
            for t1 in copr_neg(tau) {
                let mut val = rat_f64(&t1.coeff);
                for comp in &t1.forest.0 {
                    let mut acc = 0.0;
                    for t2 in copr_neg(comp) {
                        acc += rat_f64(&t2.coeff)
                            * g.forest(&t2.forest)
                            * h.tree(&t2.rest);
                    }
                    val *= acc;
                }
                *rhs.entry(t1.rest.canonicalize()).or_insert(0.0) += val;
            }
            for (k, v) in &lhs {
                let w = rhs.get(k).copied().unwrap_or(0.0);
                assert!(
                    (v - w).abs() < 1e-9,
                    "coassociativity fails on {} at {}: {v} vs {w}",
                    tau.to_syntax(),
                    k.to_syntax()
                );
            }
            for (k, w) in &rhs {
                let v = lhs.get(k).copied().unwrap_or(0.0);
                assert!(
                    (v - w).abs() < 1e-9,
                    "coassociativity fails on {} at {}: {v} vs {w}",
                    tau.to_syntax(),
                    k.to_syntax()
                );
            }
        }
    }

    /// Flattening commutes with coproduct and antipode: evaluating the
    /// antipode of a tree with a functional that factors through the
    /// flattening map agrees with the antipode of the flattened tree
    /// computed in the flat grammar.
    #[test]
    fn down_map_commutation() {
        let rule = builtin_rule("mcf").unwrap();
        let flat_rule = crate::rules::down_rule(&rule);
        let trees = enumerate_negative(&rule).unwrap();
        let flat_value = |t: &DecoratedTree| {
            use std::collections::hash_map::DefaultHasher;
            use std::hash::{Hash, Hasher};
            let mut h = DefaultHasher::new();
            t.down_map().canonicalize().to_syntax().hash(&mut h);
            ((h.finish() % 101) as f64 - 50.0) / 29.0
        };
        let g = Character::new(flat_value);
        let mut anti = Antipode::new(&rule);
        let mut anti_flat = Antipode::new(&flat_rule);
        let mut nontrivial = 0;
        for tau in &trees {
            let flat = tau.down_map().canonicalize();
            if &flat != tau {
                nontrivial += 1;
            }
            assert!(
                flat_rule.conforms(&flat),
                "flattened {} does not conform to the flat grammar",
                tau.to_syntax()
            );
            let v1 = g.forest_sum(&anti.tree(tau).unwrap());
            let v2 = g.forest_sum(&anti_flat.tree(&flat).unwrap());
            assert!(
                (v1 - v2).abs() < 1e-9,
                "antipode does not commute with flattening on {}: {v1} vs {v2}",
                tau.to_syntax()
            );
            // coproduct side: both contractions agree after evaluation
            let h = Character::new(|t: &DecoratedTree| flat_value(t) * 0.5 - 1.25);
            let mut lhs = 0.0;
            for term in neg_coproduct(tau, &rule).unwrap() {
                lhs += rat_f64(&term.coeff)
                    * g.forest(&term.forest)
                    * h.tree(&term.rest.down_map());
            }
            let mut rhs = 0.0;
            for term in neg_coproduct(&flat, &flat_rule).unwrap() {
                rhs += rat_f64(&term.coeff) * g.forest(&term.forest) * h.tree(&term.rest);
            }
            assert!(
                (lhs - rhs).abs() < 1e-9,
                "coproduct does not commute with flattening on {}: {lhs} vs {rhs}",
                tau.to_syntax()
            );
        }
        assert!(nontrivial > 20, "flattening test exercised too few trees");
    }

    #[test]
    fn completeness_certificates() {
        for name in ["kpz", "qew1", "mcf"] {
            let rule = builtin_rule(name).unwrap();
            assert!(
                check_complete_upto(&rule, InfDegree::zero()).unwrap(),
                "{name} fails the completeness certificate"
            );
        }
    }
}
