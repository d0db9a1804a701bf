use super::Monomial;

/// All monomials of total degree at most `degree` in `variables`, listed in
/// graded-lex order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MonomialBasis {
    variables: Vec<usize>,
    degree: u32,
    entries: Vec<Monomial>,
}

impl MonomialBasis {
    /// Basis over the first `nvars` variables of the universe.
    pub fn new(nvars: usize, degree: u32) -> Self {
        assert!(nvars >= 1, "basis needs at least one variable");
        Self::over(&(0..nvars).collect::<Vec<_>>(), degree)
    }

    /// Basis over an explicit subset of universe variables.
    pub fn over(variables: &[usize], degree: u32) -> Self {
        let mut entries = Vec::new();
        let mut exps = vec![0u32; variables.len()];
        enumerate(variables, degree, 0, &mut exps, &mut entries);
        entries.sort();
        Self {
            variables: variables.to_vec(),
            degree,
            entries,
        }
    }

    pub fn variables(&self) -> &[usize] {
        &self.variables
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn entries(&self) -> &[Monomial] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, m: &Monomial) -> Option<usize> {
        self.entries.binary_search(m).ok()
    }
}

fn enumerate(
    vars: &[usize],
    budget: u32,
    pos: usize,
    exps: &mut Vec<u32>,
    out: &mut Vec<Monomial>,
) {
    if pos == vars.len() {
        out.push(Monomial::from_pairs(
            vars.iter().zip(exps.iter()).map(|(&v, &e)| (v, e)),
        ));
        return;
    }
    for e in 0..=budget {
        exps[pos] = e;
        enumerate(vars, budget - e, pos + 1, exps, out);
    }
    exps[pos] = 0;
}

/// `binomial(n, k)` for small arguments.
pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn univariate_quadratic() {
        let b = MonomialBasis::new(1, 2);
        let exps: Vec<Vec<u32>> = b.entries().iter().map(|m| m.to_exponents(1)).collect();
        assert_eq!(exps, vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn sizes_match_binomials() {
        assert_eq!(MonomialBasis::new(2, 2).len(), 6);
        // brute-force count of exponent tuples (a,b,c) with a+b+c <= 4
        let mut count = 0;
        for a in 0..=4 {
            for b in 0..=4 {
                for c in 0..=4 {
                    if a + b + c <= 4 {
                        count += 1;
                    }
                }
            }
        }
        assert_eq!(MonomialBasis::new(3, 4).len(), count);
        assert_eq!(count, 35);
        assert_eq!(binomial(6, 2), 15);
        assert_eq!(binomial(6, 3), 20);
    }

    #[test]
    fn strictly_increasing() {
        let b = MonomialBasis::new(3, 5);
        for w in b.entries().windows(2) {
            assert!(w[0] < w[1]);
        }
        assert_eq!(b.len() as u64, binomial(8, 5));
    }
}
