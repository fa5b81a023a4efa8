use std::collections::BTreeSet;

use workbench_core::algebra::{all_tuples, CylindricAlgebra, ExtElement, SetAlgebra};
use workbench_core::syntax::{FiniteTransformation, Mode};

type Naive = BTreeSet<Vec<usize>>;

fn naive(e: &ExtElement, base: usize, n: usize) -> Naive {
    all_tuples(base, n).filter(|s| e.contains_prefix(s)).collect()
}

fn all_maps(n: usize) -> Vec<FiniteTransformation> {
    all_tuples(n, n)
        .map(|img| FiniteTransformation::from_prefix(&img))
        .collect()
}

#[test]
fn operations_match_full_assignment_sets() {
    for (base, n) in [(1, 2), (2, 2), (2, 3), (3, 2)] {
        let alg = SetAlgebra::finite(base, n, Mode::WithEquality);
        let points: Vec<Vec<usize>> = all_tuples(base, n).collect();
        let elems = alg.elements().unwrap();
        let maps = all_maps(n);
        for x in &elems {
            let nx = naive(x, base, n);
            let comp: Naive = points.iter().filter(|s| !nx.contains(*s)).cloned().collect();
            assert_eq!(naive(&alg.complement(x).unwrap(), base, n), comp);
            for i in 0..n {
                let cyl: Naive = points
                    .iter()
                    .filter(|s| {
                        (0..base).any(|v| {
                            let mut u = (*s).clone();
                            u[i] = v;
                            nx.contains(&u)
                        })
                    })
                    .cloned()
                    .collect();
                assert_eq!(naive(&alg.cylindrify(i, x).unwrap(), base, n), cyl);
            }
            for tau in &maps {
                let sub: Naive = points
                    .iter()
                    .filter(|s| {
                        let u: Vec<usize> = (0..n).map(|k| s[tau.apply(k)]).collect();
                        nx.contains(&u)
                    })
                    .cloned()
                    .collect();
                assert_eq!(naive(&alg.substitute(tau, x).unwrap(), base, n), sub, "{tau} on {x:?}");
            }
            // dimension set against its definition
            let delta: BTreeSet<usize> = (0..n).filter(|&i| alg.cylindrify(i, x).unwrap() != *x).collect();
            assert_eq!(alg.dimension_set(x).unwrap(), delta);
        }
        for x in elems.iter().step_by(7) {
            for y in &elems {
                let (nx, ny) = (naive(x, base, n), naive(y, base, n));
                let meet: Naive = nx.intersection(&ny).cloned().collect();
                let join: Naive = nx.union(&ny).cloned().collect();
                assert_eq!(naive(&alg.meet(x, y).unwrap(), base, n), meet);
                assert_eq!(naive(&alg.join(x, y).unwrap(), base, n), join);
                assert_eq!(alg.leq(x, y).unwrap(), nx.is_subset(&ny));
            }
        }
        for i in 0..n {
            for j in 0..n {
                let d: Naive = points.iter().filter(|s| s[i] == s[j]).cloned().collect();
                assert_eq!(naive(&alg.diagonal(i, j).unwrap(), base, n), d);
            }
        }
    }
}

#[test]
fn representation_is_canonical() {
    let alg = SetAlgebra::finite(2, 3, Mode::WithEquality);
    let mut seen = BTreeSet::new();
    for x in alg.elements().unwrap() {
        assert!(seen.insert(naive(&x, 2, 3)), "two elements share an extension");
    }
}
