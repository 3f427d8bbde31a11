use bphz::rules::{builtin_rule, enumerate_negative};
use bphz::trees::{DecoratedTree, EdgeType};

fn node_type(t: &DecoratedTree) -> Vec<EdgeType> {
    let mut v: Vec<EdgeType> = t.children.iter().map(|b| b.edge.clone()).collect();
    v.sort();
    v
}

fn main() {
    let rule = builtin_rule("mcf").unwrap();
    let s = *rule.scaling();
    let all = enumerate_negative(&rule).unwrap();
    println!("faithful: {}", all.len());

    // insertable under each kernel label
    for tname in ["t0", "t1", "t2"] {
        let lab = rule.labels.lookup(tname).unwrap();
        let ins: Vec<&DecoratedTree> = all
            .iter()
            .filter(|t| rule.admits(&lab, &node_type(t)))
            .collect();
        println!("-- insertable under {tname}: {}", ins.len());
        if ins.len() <= 12 {
            for t in ins {
                println!("     {}   |tau|={}", t.to_syntax(), t.homogeneity(&s));
            }
        }
    }

    // feature marginals
    let mut n_l2 = 0;
    let mut n_t2edge = 0;
    let mut n_x = 0;
    let mut n_multibranch = 0;
    let mut n_nested_noise_branch = 0;
    let mut n_branch = 0;
    for t in &all {
        let (mut l2, mut t2e, mut x, mut mb, mut nested, mut br) =
            (false, false, !t.m.is_zero(), false, false, false);
        t.for_each_branch(&mut |b| {
            if b.edge.label.is_noise() && b.edge.label.index == 2 {
                l2 = true;
            }
            if b.edge.label.is_kernel() && b.edge.label.index == 2 {
                t2e = true;
            }
            if !b.tree.m.is_zero() {
                x = true;
            }
            if b.edge.label.is_noise() {
                let k = b.tree.children.len();
                if k >= 1 {
                    br = true;
                }
                if k >= 2 {
                    mb = true;
                }
                if k >= 1 {
                    // does the branch content contain another noise with branches?
                    b.tree.for_each_branch(&mut |c| {
                        if c.edge.label.is_noise() && !c.tree.children.is_empty() {
                            nested = true;
                        }
                    });
                }
            }
        });
        n_l2 += l2 as usize;
        n_t2edge += t2e as usize;
        n_x += x as usize;
        n_multibranch += mb as usize;
        n_nested_noise_branch += nested as usize;
        n_branch += br as usize;
    }
    println!("with l2 noise: {n_l2}");
    println!("with t2 kernel edge: {n_t2edge}");
    println!("with any X: {n_x}");
    println!("with noise branch: {n_branch}");
    println!("with multi-branch noise: {n_multibranch}");
    println!("with nested noise branches: {n_nested_noise_branch}");
}
