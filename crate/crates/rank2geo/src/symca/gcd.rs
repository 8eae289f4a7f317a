//! Multivariate polynomial GCD via primitive subresultant remainder sequences.

use num::{BigInt, BigRational, Integer, One, Signed, Zero};

use super::poly::{Mono, Poly};

/// GCD over the rationals, normalized to integer primitive form with a
/// positive leading coefficient. Returns 1 for coprime inputs. Rational
/// scalar factors are quotient-group trivial, so they are not tracked.
pub fn poly_gcd(a: &Poly, b: &Poly) -> Poly {
    debug_assert_eq!(a.nvars, b.nvars);
    if a.is_zero() {
        return normalize(b);
    }
    if b.is_zero() {
        return normalize(a);
    }
    let (ai, _) = a.to_integer_scaled();
    let (bi, _) = b.to_integer_scaled();

    // strip monomial + integer content first
    let ma = ai.monomial_content();
    let mb = bi.monomial_content();
    let mg = ma.gcd(&mb);
    let ca = ai.integer_content();
    let cb = bi.integer_content();

    let ar = strip(&ai, &ma, &ca);
    let br = strip(&bi, &mb, &cb);

    let core = if ar.is_constant() || br.is_constant() || certified_coprime(&ar, &br) {
        Poly::one(a.nvars)
    } else if ar.num_terms() <= br.num_terms() && br.div_exact(&ar).is_some() {
        ar.clone()
    } else if br.num_terms() <= ar.num_terms() && ar.div_exact(&br).is_some() {
        br.clone()
    } else if let Some(g) = gcd_heuristic(&ar, &br) {
        g
    } else {
        gcd_int(&ar, &br)
    };
    let g = core.mul(&Poly::monomial(a.nvars, mg, BigRational::one()));
    normalize(&g)
}

/// Cheap coprimality certificate. Any common factor only involves variables
/// shared by both inputs, so it suffices to bound the gcd degree in each
/// shared variable. Specializing the remaining variables at integer points
/// can only raise the univariate gcd degree as long as both leading
/// coefficients survive; a univariate gcd of degree zero therefore certifies
/// degree zero for that variable. If every shared variable certifies, the
/// primitive gcd is 1 and the subresultant sequence can be skipped.
fn certified_coprime(a: &Poly, b: &Poly) -> bool {
    (0..a.nvars)
        .filter(|&v| a.uses_var(v) && b.uses_var(v))
        .all(|v| coprime_in_var(a, b, v))
}

const SPECIALIZE_VALUES: [i64; 10] = [2, -1, 3, -2, 1, 5, -3, 4, 7, -5];

fn coprime_in_var(a: &Poly, b: &Poly, v: usize) -> bool {
    let da = a.degree_in(v) as usize;
    let db = b.degree_in(v) as usize;
    for attempt in 0..4usize {
        let ua = specialize_univariate(a, v, attempt);
        let ub = specialize_univariate(b, v, attempt);
        if ua.len() != da + 1 || ub.len() != db + 1 {
            // a leading coefficient vanished at this point; try another
            continue;
        }
        if univariate_gcd_degree(ua, ub) == 0 {
            return true;
        }
        return false;
    }
    false
}

/// Evaluate every variable except `v` at small integers, returning the
/// coefficient vector of the resulting univariate polynomial in `v`
/// (index = degree, trailing zeros trimmed).
fn specialize_univariate(p: &Poly, v: usize, attempt: usize) -> Vec<BigRational> {
    let d = p.degree_in(v) as usize;
    let mut out = vec![BigRational::from(BigInt::from(0)); d + 1];
    for (m, c) in &p.terms {
        let mut factor = BigInt::one();
        for (w, &e) in m.0.iter().enumerate() {
            if w == v || e == 0 {
                continue;
            }
            let val = BigInt::from(SPECIALIZE_VALUES[(w + attempt) % SPECIALIZE_VALUES.len()]);
            for _ in 0..e {
                factor *= &val;
            }
        }
        out[m.0[v] as usize] += c * BigRational::from(factor);
    }
    while out.last().map(|c| c == &BigRational::from(BigInt::from(0))).unwrap_or(false) {
        out.pop();
    }
    out
}

/// Degree of the gcd of two univariate polynomials given as coefficient
/// vectors (empty = zero polynomial).
fn univariate_gcd_degree(mut a: Vec<BigRational>, mut b: Vec<BigRational>) -> usize {
    let zero = BigRational::from(BigInt::from(0));
    loop {
        if b.is_empty() {
            return a.len().saturating_sub(1);
        }
        if a.len() < b.len() {
            std::mem::swap(&mut a, &mut b);
            continue;
        }
        // remainder of a by b
        let lead = b.last().unwrap().clone();
        while a.len() >= b.len() {
            let q = a.last().unwrap() / &lead;
            let shift = a.len() - b.len();
            for (i, bc) in b.iter().enumerate() {
                let t = &q * bc;
                a[shift + i] -= t;
            }
            while a.last().map(|c| c == &zero).unwrap_or(false) {
                a.pop();
            }
            if a.is_empty() {
                break;
            }
        }
        std::mem::swap(&mut a, &mut b);
    }
}

fn strip(p: &Poly, m: &Mono, c: &BigInt) -> Poly {
    let mono = Poly::monomial(p.nvars, m.clone(), BigRational::from(c.clone()));
    p.div_exact(&mono).expect("content division is exact")
}

/// Make integer, primitive, positive leading coefficient.
fn normalize(p: &Poly) -> Poly {
    normalize_owned(p.clone())
}

fn normalize_owned(p: Poly) -> Poly {
    if p.is_zero() {
        return p;
    }
    let (pi, _) = p.to_integer_scaled();
    let c = pi.integer_content();
    let mut q = pi
        .div_exact(&Poly::constant(pi.nvars, BigRational::from(c)))
        .expect("content division is exact");
    if q.leading().map(|(_, c)| c.is_negative()).unwrap_or(false) {
        q = q.neg();
    }
    q
}

/// GCD of integer-coefficient, content-free polynomials, neither constant.
/// Heuristic gcd by integer evaluation. One variable is evaluated at a
/// large integer, the gcd of the images is computed recursively, and the
/// polynomial gcd is read back from the base-xi digits of the image gcd.
/// The candidate is certified by exact division, so a `Some` answer is
/// always correct; `None` means the heuristic gave up (unlucky evaluation
/// points or coefficient growth past the bit budget) and the subresultant
/// sequence should be used instead. Inputs must be integer polynomials.
fn gcd_heuristic(a: &Poly, b: &Poly) -> Option<Poly> {
    let ai = IntPoly::from_poly(a);
    let bi = IntPoly::from_poly(b);
    let g = gcd_heu_core(&ai, &bi, 0)?;
    let g = g.primitive();
    if ai.div_exact(&g).is_some() && bi.div_exact(&g).is_some() {
        Some(g.to_poly())
    } else {
        None
    }
}

const HEU_BIT_BUDGET: u64 = 600_000;

fn gcd_heu_core(a: &IntPoly, b: &IntPoly, depth: usize) -> Option<IntPoly> {
    let nvars = a.nvars;
    if depth > nvars {
        return None;
    }
    let var = (0..nvars)
        .filter(|&v| a.uses_var(v) && b.uses_var(v))
        .min_by_key(|&v| a.degree_in(v).min(b.degree_in(v)));
    let Some(var) = var else {
        // constants or disjoint variable sets: any common factor is an integer
        return Some(IntPoly::constant(nvars, a.content().gcd(&b.content())));
    };
    let bound = a.degree_in(var).min(b.degree_in(var)) as usize;

    let mut xi: BigInt = BigInt::from(2) * a.height().min(b.height()) + BigInt::from(29);
    for _ in 0..6 {
        if xi.bits() * (a.degree_in(var).max(b.degree_in(var)) as u64 + 1) > HEU_BIT_BUDGET {
            return None;
        }
        let av = a.eval_var(var, &xi);
        let bv = b.eval_var(var, &xi);
        if !av.is_zero() && !bv.is_zero() {
            if let Some(gamma) = gcd_heu_core(&av, &bv, depth + 1) {
                if let Some(g) = reconstruct(&gamma, var, &xi, bound) {
                    let g = g.primitive();
                    if a.div_exact(&g).is_some() && b.div_exact(&g).is_some() {
                        return Some(g);
                    }
                }
            }
        }
        xi = xi * BigInt::from(73794_u32) / BigInt::from(27011_u32);
    }
    None
}

/// Base-xi digit expansion of `gamma` into powers of `var`, with digits in
/// the symmetric range (-xi/2, xi/2].
fn reconstruct(gamma: &IntPoly, var: usize, xi: &BigInt, bound: usize) -> Option<IntPoly> {
    let nvars = gamma.nvars;
    let half = xi / BigInt::from(2);
    let mut rest = gamma.clone();
    let mut g = IntPoly::zero(nvars);
    let mut power = 0usize;
    while !rest.is_zero() {
        if power > bound {
            return None;
        }
        let mut next = IntPoly::zero(nvars);
        for (m, c) in &rest.terms {
            let mut r = c.mod_floor(xi);
            if r > half {
                r -= xi;
            }
            let q = (c - &r) / xi;
            if !q.is_zero() {
                next.terms.insert(m.clone(), q);
            }
            if !r.is_zero() {
                let mut mv = m.clone();
                mv.0[var] = power as u16;
                g.terms.insert(mv, r);
            }
        }
        rest = next;
        power += 1;
    }
    if g.is_zero() {
        None
    } else {
        Some(g)
    }
}

/// Integer-coefficient polynomial used inside the heuristic gcd, so that the
/// giant evaluation images never touch rational-number normalization.
#[derive(Debug, Clone)]
struct IntPoly {
    nvars: usize,
    terms: std::collections::BTreeMap<Mono, BigInt>,
}

impl IntPoly {
    fn zero(nvars: usize) -> Self {
        IntPoly { nvars, terms: Default::default() }
    }

    fn constant(nvars: usize, c: BigInt) -> Self {
        let mut p = IntPoly::zero(nvars);
        if !c.is_zero() {
            p.terms.insert(Mono::one(nvars), c);
        }
        p
    }

    fn from_poly(p: &Poly) -> Self {
        let mut r = IntPoly::zero(p.nvars);
        for (m, c) in &p.terms {
            debug_assert!(c.denom().is_one());
            r.terms.insert(m.clone(), c.numer().clone());
        }
        r
    }

    fn to_poly(&self) -> Poly {
        let mut r = Poly::zero(self.nvars);
        for (m, c) in &self.terms {
            r.terms.insert(m.clone(), BigRational::from(c.clone()));
        }
        r
    }

    fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    fn uses_var(&self, v: usize) -> bool {
        self.terms.keys().any(|m| m.0[v] > 0)
    }

    fn degree_in(&self, v: usize) -> u16 {
        self.terms.keys().map(|m| m.0[v]).max().unwrap_or(0)
    }

    fn content(&self) -> BigInt {
        let mut g = BigInt::zero();
        for c in self.terms.values() {
            g = g.gcd(c);
            if g.is_one() {
                break;
            }
        }
        g
    }

    fn height(&self) -> BigInt {
        self.terms.values().map(|c| c.abs()).max().unwrap_or_else(BigInt::zero)
    }

    fn primitive(&self) -> IntPoly {
        let c = self.content();
        if c.is_zero() || c.is_one() {
            return self.clone();
        }
        let mut r = IntPoly::zero(self.nvars);
        for (m, v) in &self.terms {
            r.terms.insert(m.clone(), v / &c);
        }
        r
    }

    /// Substitute an integer for one variable. Powers of `xi` are cached by
    /// exponent, and all arithmetic stays in `BigInt`.
    fn eval_var(&self, var: usize, xi: &BigInt) -> IntPoly {
        let deg = self.degree_in(var) as usize;
        let mut powers = Vec::with_capacity(deg + 1);
        powers.push(BigInt::one());
        for i in 1..=deg {
            let next = &powers[i - 1] * xi;
            powers.push(next);
        }
        let mut r = IntPoly::zero(self.nvars);
        for (m, c) in &self.terms {
            let e = m.0[var] as usize;
            let mut m2 = m.clone();
            m2.0[var] = 0;
            let add = c * &powers[e];
            r.terms
                .entry(m2)
                .and_modify(|acc| *acc += &add)
                .or_insert(add);
        }
        r.terms.retain(|_, c| !c.is_zero());
        r
    }

    fn leading(&self) -> Option<(&Mono, &BigInt)> {
        self.terms.iter().next_back()
    }

    fn div_exact(&self, divisor: &IntPoly) -> Option<IntPoly> {
        let (dm, dc) = divisor.leading()?;
        let dm = dm.clone();
        let dc = dc.clone();
        let mut rem = self.clone();
        let mut quot = IntPoly::zero(self.nvars);
        while let Some((rm, rc)) = rem.leading() {
            if !dm.divides(rm) {
                return None;
            }
            let (qc, r) = rc.div_rem(&dc);
            if !r.is_zero() {
                return None;
            }
            let qm = rm.div(&dm);
            // rem -= divisor * qm * qc
            for (m, c) in &divisor.terms {
                let mm = m.mul(&qm);
                let sub = c * &qc;
                match rem.terms.entry(mm) {
                    std::collections::btree_map::Entry::Occupied(mut e) => {
                        *e.get_mut() -= &sub;
                        if e.get().is_zero() {
                            e.remove();
                        }
                    }
                    std::collections::btree_map::Entry::Vacant(e) => {
                        e.insert(-sub);
                    }
                }
            }
            quot.terms.insert(qm, qc);
        }
        Some(quot)
    }
}

fn gcd_int(a: &Poly, b: &Poly) -> Poly {
    // main variable: shared variable with smallest min-degree, which keeps
    // the remainder chain short; if none shared, gcd of content-free polys
    // in disjoint variables is 1 unless degenerate.
    let nvars = a.nvars;
    let shared = (0..nvars)
        .filter(|&v| a.uses_var(v) && b.uses_var(v))
        .min_by_key(|&v| a.degree_in(v).min(b.degree_in(v)));
    let var = match shared {
        Some(v) => v,
        None => return Poly::one(nvars),
    };

    let (ca, pa) = content_pp(a, var);
    let (cb, pb) = content_pp(b, var);
    let cg = poly_gcd(&ca, &cb);

    let prs = subresultant_prs(&pa, &pb, var);
    let g = if prs.degree_in(var) == 0 {
        Poly::one(nvars)
    } else {
        let (_, pp) = content_pp(&prs, var);
        pp
    };
    normalize(&g.mul(&cg))
}

/// Content (gcd of coefficients w.r.t. `var`) and primitive part.
fn content_pp(p: &Poly, var: usize) -> (Poly, Poly) {
    let coeffs = coefficients_in(p, var);
    let mut c = Poly::zero(p.nvars);
    for q in coeffs.iter().flatten() {
        c = poly_gcd(&c, q);
        if c.is_constant() && !c.is_zero() {
            break;
        }
    }
    if c.is_zero() {
        return (Poly::zero(p.nvars), Poly::zero(p.nvars));
    }
    let pp = p.div_exact(&c).expect("content divides");
    (c, pp)
}

/// Coefficients of `p` as a univariate polynomial in `var`, index = degree.
fn coefficients_in(p: &Poly, var: usize) -> Vec<Option<Poly>> {
    let d = p.degree_in(var) as usize;
    let mut out: Vec<Option<Poly>> = vec![None; d + 1];
    for (m, c) in &p.terms {
        let e = m.0[var] as usize;
        let mut m2 = m.clone();
        m2.0[var] = 0;
        let slot = out[e].get_or_insert_with(|| Poly::zero(p.nvars));
        *slot = slot.add(&Poly::monomial(p.nvars, m2, c.clone()));
    }
    out
}

fn leading_coeff_in(p: &Poly, var: usize) -> Poly {
    let d = p.degree_in(var);
    let mut r = Poly::zero(p.nvars);
    for (m, c) in &p.terms {
        if m.0[var] == d {
            let mut m2 = m.clone();
            m2.0[var] = 0;
            r = r.add(&Poly::monomial(p.nvars, m2, c.clone()));
        }
    }
    r
}

/// Pseudo-remainder of `a` by `b` w.r.t. `var`: lc(b)^(da-db+1) * a mod b.
fn pseudo_rem(a: &Poly, b: &Poly, var: usize) -> Poly {
    let da = a.degree_in(var);
    let db = b.degree_in(var);
    let lcb = leading_coeff_in(b, var);
    let mut r = a.clone();
    let mut mults = 0u32;
    loop {
        let dr = r.degree_in(var);
        if r.is_zero() || dr < db {
            break;
        }
        let lcr = leading_coeff_in(&r, var);
        let shift = Poly::monomial(r.nvars, Mono::var(r.nvars, var), BigRational::one()).pow((dr - db) as u32);
        // r <- lcb * r - lcr * x^(dr-db) * b
        r = lcb.mul(&r).sub(&lcr.mul(&shift).mul(b));
        mults += 1;
    }
    // The subresultant recurrences need lc(b)^(da-db+1) * a mod b exactly;
    // pad with the powers skipped when a reduction dropped the degree by
    // more than one.
    let needed = (da - db + 1) as u32;
    if mults < needed {
        r = r.mul(&lcb.pow(needed - mults));
    }
    r
}

/// Last nonzero element of the subresultant PRS of primitive a, b.
fn subresultant_prs(a: &Poly, b: &Poly, var: usize) -> Poly {
    let nvars = a.nvars;
    let (mut r0, mut r1) = if a.degree_in(var) >= b.degree_in(var) {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    };
    let mut g = Poly::one(nvars);
    let mut h = Poly::one(nvars);
    loop {
        let delta = r0.degree_in(var) - r1.degree_in(var);
        let rem = pseudo_rem(&r0, &r1, var);
        if rem.is_zero() {
            return r1;
        }
        let divisor = g.mul(&h.pow(delta as u32));
        let r2 = rem.div_exact(&divisor).expect("subresultant division is exact");
        g = leading_coeff_in(&r1, var);
        h = if delta == 0 {
            h
        } else {
            let num = g.pow(delta as u32);
            if delta > 1 {
                num.div_exact(&h.pow((delta - 1) as u32)).expect("h update division is exact")
            } else {
                num
            }
        };
        r0 = r1;
        r1 = r2;
        if r1.degree_in(var) == 0 {
            return r1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symca::rat_int;

    fn vars2() -> (Poly, Poly) {
        (Poly::var(2, 0), Poly::var(2, 1))
    }

    #[test]
    fn gcd_univariate() {
        let (x, _) = vars2();
        let one = Poly::one(2);
        // (x+1)^2 and (x+1)(x-1)
        let a = x.add(&one).pow(2);
        let b = x.add(&one).mul(&x.sub(&one));
        let g = poly_gcd(&a, &b);
        assert_eq!(g, x.add(&one));
    }

    #[test]
    fn gcd_multivariate() {
        let (x, y) = vars2();
        let f = x.mul(&y).add(&Poly::one(2)); // xy + 1
        let a = f.mul(&x.pow(2));
        let b = f.mul(&y).mul(&x);
        let g = poly_gcd(&a, &b);
        assert_eq!(g, f.mul(&x));
    }

    #[test]
    fn gcd_coprime() {
        let (x, y) = vars2();
        let g = poly_gcd(&x.add(&y), &x.sub(&y));
        assert_eq!(g, Poly::one(2));
    }

    #[test]
    fn gcd_is_primitive() {
        let (x, _) = vars2();
        let a = x.scale(&rat_int(6));
        let b = x.scale(&rat_int(4)).mul(&x);
        let g = poly_gcd(&a, &b);
        assert_eq!(g, x);
        // negative leading coefficients flip
        let g = poly_gcd(&x.neg(), &x.neg().mul(&x));
        assert_eq!(g, x);
    }
}
