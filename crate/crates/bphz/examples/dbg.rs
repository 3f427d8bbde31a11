use bphz::coherence::*;
use bphz::hopf::neg_coproduct;
use bphz::poly::PolyExpr;
use bphz::rules::*;
use bphz::trees::*;

fn main() {
    let rule = builtin_rule("kpz").unwrap();
    let nl = kpz_nonlinearity(&rule, rat(1, 2), rat(1, 1));
    let cherry = parse_tree("I[t0;(0,1)]{I[l0]{1}}*I[t0;(0,1)]{I[l0]{1}}", &rule.labels).unwrap();
    let jet = attach_delta_profile(&rule, &cherry).unwrap();
    let support = [(jet.clone(), "Cch")];

    // replicate check with diagnostics at small cap
    let engine = UpsilonEngine::new(&rule, &nl);
    let mut renorm = nl.clone();
    for (comp, expr) in renorm.components.iter_mut() {
        let (j, coeff) = tree_counterterm(&rule, &nl, *comp, &cherry);
        println!("comp {comp} counterterm {} jet-match {}", coeff, j.as_ref() == Some(&jet.canonicalize()));
        let c = PolyExpr::fn_symbol("Cch", 0, PolyExpr::one());
        *expr = expr.add(&coeff.mul(&c));
    }
    let renorm_engine = UpsilonEngine::new(&rule, &renorm);
    let o = EdgeType::plain(rule.labels.lookup("t0").unwrap(), 2);
    let bases = enumerate_by_truncation(&rule, 4);
    let mut lhs: JetSum = vec![];
    let mut rhs: JetSum = vec![];
    for tau in &bases {
        for (jt, p) in engine.upsilon_bold(&o, tau) {
            let p0 = p.at_zero_noise();
            if p0.is_zero() { continue; }
            for term in neg_coproduct(&jt, &rule).unwrap() {
                let mut factor = PolyExpr::constant(term.coeff.clone());
                let mut dead = false;
                for ct in &term.forest.0 {
                    if ct == &jet.canonicalize() {
                        factor = factor.mul(&PolyExpr::fn_symbol("Cch", 0, PolyExpr::one()));
                    } else { dead = true; break; }
                }
                if dead { continue; }
                lhs.push((term.rest.clone(), p0.mul(&factor)));
            }
        }
        for (jt, p) in renorm_engine.upsilon_bold(&o, tau) {
            let p0 = p.at_zero_noise();
            if !p0.is_zero() { rhs.push((jt, p0)); }
        }
    }
    let lhs = jet_merge(lhs);
    let rhs = jet_merge(rhs);
    let cap = 2u64;
    let l = jet_truncate(&lhs, &rule, cap+1);
    let r = jet_truncate(&rhs, &rule, cap+1);
    for (t, p) in &l {
        let q = r.iter().find(|(s, _)| s == t).map(|x| x.1.clone()).unwrap_or_else(PolyExpr::zero);
        if *p != q { println!("LHS!=RHS {}\n   l: {}\n   r: {}", t.to_syntax(), p, q); }
    }
    for (t, q) in &r {
        if !l.iter().any(|(s, _)| s == t) { println!("only-RHS {} : {}", t.to_syntax(), q); }
    }
}
