//! Arithmetic in the polynomial ring GF(2)[x].
//!
//! A [`Poly`] stores its coefficients as a little-endian bit vector: bit `i`
//! is the coefficient of `x^i`. Addition is XOR, multiplication is carry-less.
//! The routing layer uses this ring as a residue number system: every switch
//! owns an irreducible modulus and a route label is the CRT combination of the
//! per-switch residues.

use std::fmt;
use std::ops::{Add, Mul};

use thiserror::Error;

const LIMB_BITS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolyError {
    #[error("division by the zero polynomial")]
    DivisionByZero,
    #[error("gcd of two zero polynomials is undefined")]
    GcdOfZeros,
    #[error("{0} has no inverse: common factor {1} with the modulus")]
    NotInvertible(Poly, Poly),
    #[error("moduli {0} and {1} are not coprime (common factor {2})")]
    NotCoprime(Poly, Poly, Poly),
    #[error("residue #{index} ({residue}) does not have lower degree than its modulus ({modulus})")]
    ResidueTooLarge {
        index: usize,
        residue: Poly,
        modulus: Poly,
    },
    #[error("irreducibility is undefined for constant polynomial {0}")]
    ConstantPolynomial(Poly),
    #[error("requested {requested} irreducible polynomials of degree {degree}, only {available} exist")]
    InsufficientIrreducibles {
        degree: usize,
        requested: usize,
        available: usize,
    },
    #[error("invalid binary polynomial literal {0:?}")]
    Parse(String),
}

/// A polynomial over GF(2).
///
/// The limb vector never has trailing zero limbs, so derived equality and
/// hashing are canonical.
#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Poly {
    limbs: Vec<u64>,
}

impl Poly {
    pub fn zero() -> Self {
        Poly { limbs: Vec::new() }
    }

    pub fn one() -> Self {
        Poly::from_u64(1)
    }

    /// `x^n`.
    pub fn monomial(n: usize) -> Self {
        let mut p = Poly::zero();
        p.set_bit(n, true);
        p
    }

    pub fn from_u64(bits: u64) -> Self {
        Poly::from_limbs(vec![bits])
    }

    pub fn from_u128(bits: u128) -> Self {
        Poly::from_limbs(vec![bits as u64, (bits >> 64) as u64])
    }

    pub fn from_limbs(mut limbs: Vec<u64>) -> Self {
        while limbs.last() == Some(&0) {
            limbs.pop();
        }
        Poly { limbs }
    }

    /// Parses an MSB-first binary literal such as `"1011"` (x^3 + x + 1).
    /// Underscores are ignored, leading zeros are allowed.
    pub fn parse_binary(s: &str) -> Result<Self, PolyError> {
        let digits: Vec<u8> = s.bytes().filter(|&b| b != b'_').collect();
        if digits.is_empty() {
            return Err(PolyError::Parse(s.to_string()));
        }
        let mut p = Poly::zero();
        for (i, &b) in digits.iter().rev().enumerate() {
            match b {
                b'0' => {}
                b'1' => p.set_bit(i, true),
                _ => return Err(PolyError::Parse(s.to_string())),
            }
        }
        Ok(p)
    }

    /// Big-endian byte image, left padded to `width` bytes. Returns `None`
    /// when the polynomial needs more than `8 * width` bits.
    pub fn to_be_bytes(&self, width: usize) -> Option<Vec<u8>> {
        if self.bit_len() > width * 8 {
            return None;
        }
        let mut out = vec![0u8; width];
        for i in self.ones() {
            out[width - 1 - i / 8] |= 1 << (i % 8);
        }
        Some(out)
    }

    pub fn from_be_bytes(bytes: &[u8]) -> Self {
        let mut p = Poly::zero();
        for (k, &b) in bytes.iter().rev().enumerate() {
            for j in 0..8 {
                if b & (1 << j) != 0 {
                    p.set_bit(8 * k + j, true);
                }
            }
        }
        p
    }

    pub fn is_zero(&self) -> bool {
        self.limbs.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self.limbs == [1]
    }

    /// Degree of the polynomial, `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        let top = *self.limbs.last()?;
        Some((self.limbs.len() - 1) * LIMB_BITS + (LIMB_BITS - 1 - top.leading_zeros() as usize))
    }

    /// Number of significant bits (degree + 1, or 0 for zero).
    pub fn bit_len(&self) -> usize {
        self.degree().map_or(0, |d| d + 1)
    }

    pub fn bit(&self, i: usize) -> bool {
        self.limbs
            .get(i / LIMB_BITS)
            .is_some_and(|l| l >> (i % LIMB_BITS) & 1 == 1)
    }

    pub fn set_bit(&mut self, i: usize, value: bool) {
        let limb = i / LIMB_BITS;
        if value {
            if self.limbs.len() <= limb {
                self.limbs.resize(limb + 1, 0);
            }
            self.limbs[limb] |= 1 << (i % LIMB_BITS);
        } else if limb < self.limbs.len() {
            self.limbs[limb] &= !(1 << (i % LIMB_BITS));
            self.normalize();
        }
    }

    /// Indices of the nonzero coefficients, ascending.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.limbs.iter().enumerate().flat_map(|(k, &limb)| {
            let mut rest = limb;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let tz = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(k * LIMB_BITS + tz)
            })
        })
    }

    /// The value as a machine word when it fits.
    pub fn to_u64(&self) -> Option<u64> {
        match self.limbs.len() {
            0 => Some(0),
            1 => Some(self.limbs[0]),
            _ => None,
        }
    }

    /// MSB-first binary rendering, `"0"` for the zero polynomial.
    pub fn to_binary_string(&self) -> String {
        match self.degree() {
            None => "0".to_string(),
            Some(d) => (0..=d)
                .rev()
                .map(|i| if self.bit(i) { '1' } else { '0' })
                .collect(),
        }
    }

    /// MSB-first binary rendering left padded with zeros to `width` digits.
    pub fn to_padded_binary(&self, width: usize) -> String {
        let s = if self.is_zero() {
            String::new()
        } else {
            self.to_binary_string()
        };
        format!("{s:0>width$}")
    }

    fn normalize(&mut self) {
        while self.limbs.last() == Some(&0) {
            self.limbs.pop();
        }
    }

    fn xor_shifted(&mut self, other: &Poly, shift: usize) {
        let limb_shift = shift / LIMB_BITS;
        let bit_shift = shift % LIMB_BITS;
        let needed = other.limbs.len() + limb_shift + 1;
        if self.limbs.len() < needed {
            self.limbs.resize(needed, 0);
        }
        for (k, &limb) in other.limbs.iter().enumerate() {
            self.limbs[k + limb_shift] ^= limb << bit_shift;
            if bit_shift != 0 {
                self.limbs[k + limb_shift + 1] ^= limb >> (LIMB_BITS - bit_shift);
            }
        }
        self.normalize();
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let (long, short) = if self.limbs.len() >= other.limbs.len() {
            (self, other)
        } else {
            (other, self)
        };
        let mut limbs = long.limbs.clone();
        for (l, s) in limbs.iter_mut().zip(&short.limbs) {
            *l ^= s;
        }
        Poly::from_limbs(limbs)
    }

    /// Carry-less product.
    pub fn mul(&self, other: &Poly) -> Poly {
        let mut acc = Poly::zero();
        if self.is_zero() || other.is_zero() {
            return acc;
        }
        acc.limbs = vec![0; self.limbs.len() + other.limbs.len()];
        for (i, &a) in self.limbs.iter().enumerate() {
            if a == 0 {
                continue;
            }
            for (j, &b) in other.limbs.iter().enumerate() {
                let (lo, hi) = clmul64(a, b);
                acc.limbs[i + j] ^= lo;
                acc.limbs[i + j + 1] ^= hi;
            }
        }
        acc.normalize();
        acc
    }

    /// Euclidean division: returns `(q, r)` with `self = q * m + r` and
    /// `deg r < deg m`.
    pub fn divmod(&self, m: &Poly) -> Result<(Poly, Poly), PolyError> {
        let dm = m.degree().ok_or(PolyError::DivisionByZero)?;
        let mut q = Poly::zero();
        let mut r = self.clone();
        while let Some(dr) = r.degree() {
            if dr < dm {
                break;
            }
            let shift = dr - dm;
            q.set_bit(shift, true);
            r.xor_shifted(m, shift);
        }
        Ok((q, r))
    }

    pub fn rem(&self, m: &Poly) -> Result<Poly, PolyError> {
        self.divmod(m).map(|(_, r)| r)
    }
}

/// 64x64 -> 128 carry-less multiply, returned as (low, high).
fn clmul64(a: u64, b: u64) -> (u64, u64) {
    let mut lo = 0u64;
    let mut hi = 0u64;
    let mut bits = b;
    while bits != 0 {
        let i = bits.trailing_zeros();
        bits &= bits - 1;
        lo ^= a << i;
        if i != 0 {
            hi ^= a >> (64 - i);
        }
    }
    (lo, hi)
}

impl Add for &Poly {
    type Output = Poly;
    fn add(self, rhs: &Poly) -> Poly {
        Poly::add(self, rhs)
    }
}

impl Mul for &Poly {
    type Output = Poly;
    fn mul(self, rhs: &Poly) -> Poly {
        Poly::mul(self, rhs)
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_binary_string())
    }
}

impl fmt::Debug for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Poly({})", self.to_binary_string())
    }
}

pub fn gcd(a: &Poly, b: &Poly) -> Result<Poly, PolyError> {
    if a.is_zero() && b.is_zero() {
        return Err(PolyError::GcdOfZeros);
    }
    let (mut x, mut y) = (a.clone(), b.clone());
    while !y.is_zero() {
        let r = x.rem(&y)?;
        x = y;
        y = r;
    }
    Ok(x)
}

/// Extended Euclid: `(g, u, v)` with `u*a + v*b = g = gcd(a, b)`.
pub fn egcd(a: &Poly, b: &Poly) -> Result<(Poly, Poly, Poly), PolyError> {
    if a.is_zero() && b.is_zero() {
        return Err(PolyError::GcdOfZeros);
    }
    let (mut r0, mut r1) = (a.clone(), b.clone());
    let (mut u0, mut u1) = (Poly::one(), Poly::zero());
    let (mut v0, mut v1) = (Poly::zero(), Poly::one());
    while !r1.is_zero() {
        let (q, r) = r0.divmod(&r1)?;
        let u2 = u0.add(&q.mul(&u1));
        let v2 = v0.add(&q.mul(&v1));
        r0 = std::mem::replace(&mut r1, r);
        u0 = std::mem::replace(&mut u1, u2);
        v0 = std::mem::replace(&mut v1, v2);
    }
    Ok((r0, u0, v0))
}

/// Inverse of `a` modulo `m`.
pub fn inv_mod(a: &Poly, m: &Poly) -> Result<Poly, PolyError> {
    if m.is_zero() {
        return Err(PolyError::DivisionByZero);
    }
    let reduced = a.rem(m)?;
    if reduced.is_zero() {
        return Err(PolyError::NotInvertible(a.clone(), m.clone()));
    }
    let (g, u, _) = egcd(&reduced, m)?;
    if !g.is_one() {
        return Err(PolyError::NotInvertible(a.clone(), g));
    }
    u.rem(m)
}

/// Trial division by every polynomial of degree 1..=deg/2.
pub fn is_irreducible(p: &Poly) -> Result<bool, PolyError> {
    let d = match p.degree() {
        Some(d) if d >= 1 => d,
        _ => return Err(PolyError::ConstantPolynomial(p.clone())),
    };
    if d == 1 {
        return Ok(true);
    }
    // a zero constant term means x divides p
    if !p.bit(0) {
        return Ok(false);
    }
    for div_deg in 1..=d / 2 {
        let lo = 1u64 << div_deg;
        let hi = 1u64 << (div_deg + 1);
        // divisors with a zero constant term cannot divide p (x does not)
        for bits in (lo | 1..hi).step_by(2) {
            if p.rem(&Poly::from_u64(bits))?.is_zero() {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// The first `count` irreducible polynomials of exactly `degree`, in
/// ascending numeric order.
pub fn enumerate_irreducibles(degree: usize, count: usize) -> Result<Vec<Poly>, PolyError> {
    if degree == 0 {
        return Err(PolyError::ConstantPolynomial(Poly::one()));
    }
    let mut found = Vec::with_capacity(count);
    if count == 0 {
        return Ok(found);
    }
    let mut candidate = Poly::monomial(degree);
    while candidate.degree() == Some(degree) {
        if is_irreducible(&candidate)? {
            found.push(candidate.clone());
            if found.len() == count {
                return Ok(found);
            }
        }
        increment(&mut candidate);
    }
    Err(PolyError::InsufficientIrreducibles {
        degree,
        requested: count,
        available: found.len(),
    })
}

fn increment(p: &mut Poly) {
    for limb in p.limbs.iter_mut() {
        let (v, carry) = limb.overflowing_add(1);
        *limb = v;
        if !carry {
            return;
        }
    }
    p.limbs.push(1);
}

/// Chinese remainder combination over GF(2)[x]: the unique `R` with
/// `deg R < sum(deg m_i)` and `R mod m_i = r_i` for every pair.
pub fn crt_combine(system: &[(Poly, Poly)]) -> Result<Poly, PolyError> {
    for (index, (m, r)) in system.iter().enumerate() {
        let dm = m.degree().ok_or(PolyError::DivisionByZero)?;
        if r.degree().is_some_and(|dr| dr >= dm) {
            return Err(PolyError::ResidueTooLarge {
                index,
                residue: r.clone(),
                modulus: m.clone(),
            });
        }
    }
    for (i, (mi, _)) in system.iter().enumerate() {
        for (mj, _) in &system[i + 1..] {
            let g = gcd(mi, mj)?;
            if !g.is_one() {
                return Err(PolyError::NotCoprime(mi.clone(), mj.clone(), g));
            }
        }
    }
    let modulus = system.iter().fold(Poly::one(), |acc, (m, _)| acc.mul(m));
    let mut result = Poly::zero();
    for (m, r) in system {
        if r.is_zero() {
            continue;
        }
        let (cofactor, _) = modulus.divmod(m)?;
        let inv = inv_mod(&cofactor.rem(m)?, m)?;
        let coeff = r.mul(&inv).rem(m)?;
        result = result.add(&coeff.mul(&cofactor));
    }
    result.rem(&modulus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(s: &str) -> Poly {
        Poly::parse_binary(s).unwrap()
    }

    fn random_poly(rng: &mut ChaCha8Rng, max_bits: usize) -> Poly {
        let bits = rng.random_range(0..=max_bits);
        let mut out = Poly::zero();
        for i in 0..bits {
            if rng.random_bool(0.5) {
                out.set_bit(i, true);
            }
        }
        out
    }

    // bit-level reference implementations, independent of the limb code
    fn ref_add(a: &Poly, b: &Poly) -> Poly {
        let mut out = Poly::zero();
        for i in 0..a.bit_len().max(b.bit_len()) {
            out.set_bit(i, a.bit(i) != b.bit(i));
        }
        out
    }

    fn ref_mul(a: &Poly, b: &Poly) -> Poly {
        let mut out = Poly::zero();
        for i in a.ones() {
            for j in b.ones() {
                let cur = out.bit(i + j);
                out.set_bit(i + j, !cur);
            }
        }
        out
    }

    #[test]
    fn add_examples() {
        assert_eq!(p("1011").add(&p("1101")), p("0110"));
        assert_eq!(p("1011").add(&Poly::zero()), p("1011"));
        assert!(p("1011").add(&p("1011")).is_zero());
    }

    #[test]
    fn add_and_mul_match_bit_references() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let a = random_poly(&mut rng, 200);
            let b = random_poly(&mut rng, 200);
            assert_eq!(a.add(&b), ref_add(&a, &b));
            assert_eq!(a.mul(&b), ref_mul(&a, &b));
        }
    }

    #[test]
    fn mul_examples() {
        assert_eq!(p("11").mul(&p("11")), p("101"));
        assert_eq!(p("110101").mul(&Poly::one()), p("110101"));
        assert!(p("111").mul(&Poly::zero()).is_zero());
    }

    #[test]
    fn degree_of_zero_is_none() {
        assert_eq!(Poly::zero().degree(), None);
        assert_eq!(Poly::one().degree(), Some(0));
        assert_eq!(Poly::monomial(130).degree(), Some(130));
    }

    #[test]
    fn canonical_equality_ignores_padding() {
        assert_eq!(Poly::from_limbs(vec![5, 0, 0]), Poly::from_u64(5));
        let mut q = Poly::monomial(100);
        q.set_bit(100, false);
        assert_eq!(q, Poly::zero());
    }

    #[test]
    fn divmod_examples() {
        let m = p("100011011");
        assert_eq!(m.divmod(&m).unwrap(), (Poly::one(), Poly::zero()));
        // (x^5 + x) / x^2 = x^3 rem x
        assert_eq!(p("100010").divmod(&p("100")).unwrap(), (p("1000"), p("10")));
        // (x^5 + x^3 + x) / x^2 = x^3 + x rem x
        assert_eq!(p("101010").divmod(&p("100")).unwrap(), (p("1010"), p("10")));
        assert_eq!(p("1").divmod(&Poly::zero()), Err(PolyError::DivisionByZero));
    }

    #[test]
    fn divmod_recombines() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let a = random_poly(&mut rng, 300);
            let m = random_poly(&mut rng, 90);
            if m.is_zero() {
                continue;
            }
            let (q, r) = a.divmod(&m).unwrap();
            assert_eq!(ref_add(&ref_mul(&q, &m), &r), a);
            assert!(r.degree().is_none_or(|dr| dr < m.degree().unwrap()));
        }
    }

    #[test]
    fn gcd_examples() {
        assert_eq!(gcd(&p("1101"), &p("1101")).unwrap(), p("1101"));
        assert_eq!(gcd(&p("111"), &p("1011")).unwrap(), Poly::one());
        // (x+1)(x^2+x+1) and (x+1)x
        assert_eq!(gcd(&p("1001"), &p("110")).unwrap(), p("11"));
        assert_eq!(gcd(&Poly::zero(), &Poly::zero()), Err(PolyError::GcdOfZeros));
    }

    #[test]
    fn egcd_identity_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let a = random_poly(&mut rng, 120);
            let b = random_poly(&mut rng, 120);
            if a.is_zero() && b.is_zero() {
                continue;
            }
            let (g, u, v) = egcd(&a, &b).unwrap();
            assert_eq!(ref_add(&ref_mul(&u, &a), &ref_mul(&v, &b)), g);
            assert_eq!(g, gcd(&a, &b).unwrap());
        }
    }

    #[test]
    fn inv_mod_examples() {
        let m = p("111");
        assert_eq!(inv_mod(&Poly::one(), &m).unwrap(), Poly::one());
        assert_eq!(inv_mod(&p("10"), &m).unwrap(), p("11"));
        // x+1 divides x^2+1: error names the factor
        match inv_mod(&p("11"), &p("101")) {
            Err(PolyError::NotInvertible(_, f)) => assert_eq!(f, p("11")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inv_mod_products_are_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut checked = 0;
        while checked < 500 {
            let m = random_poly(&mut rng, 64);
            let a = random_poly(&mut rng, 80);
            if m.degree().unwrap_or(0) < 1 || a.is_zero() || !gcd(&a, &m).unwrap().is_one() {
                continue;
            }
            let inv = inv_mod(&a, &m).unwrap();
            assert!(a.mul(&inv).rem(&m).unwrap().is_one());
            checked += 1;
        }
    }

    // factorization by exhaustion: p is reducible iff it is a product of two
    // polynomials of positive degree
    fn reducible_by_products(max_degree: usize) -> std::collections::BTreeSet<u64> {
        let mut out = std::collections::BTreeSet::new();
        for a in 2u64..(1 << max_degree) {
            for b in 2u64..(1 << max_degree) {
                let prod = ref_mul(&Poly::from_u64(a), &Poly::from_u64(b));
                if prod.bit_len() <= max_degree + 1 {
                    out.insert(prod.to_u64().unwrap());
                }
            }
        }
        out
    }

    #[test]
    fn irreducibility_matches_exhaustive_factorization() {
        let reducible = reducible_by_products(10);
        for bits in 2u64..(1 << 11) {
            let poly = Poly::from_u64(bits);
            assert_eq!(
                is_irreducible(&poly).unwrap(),
                !reducible.contains(&bits),
                "{poly}"
            );
        }
        assert!(is_irreducible(&p("111")).unwrap());
        assert!(!is_irreducible(&p("110")).unwrap());
        assert!(is_irreducible(&Poly::one()).is_err());
        assert!(is_irreducible(&Poly::zero()).is_err());
    }

    #[test]
    fn enumerate_examples() {
        assert_eq!(enumerate_irreducibles(2, 1).unwrap(), vec![p("111")]);
        assert_eq!(enumerate_irreducibles(3, 2).unwrap(), vec![p("1011"), p("1101")]);
        assert_eq!(
            enumerate_irreducibles(2, 2),
            Err(PolyError::InsufficientIrreducibles {
                degree: 2,
                requested: 2,
                available: 1
            })
        );
    }

    // necklace count (1/n) * sum_{d | n} mu(d) 2^(n/d)
    fn necklace_count(n: usize) -> usize {
        fn mobius(mut k: usize) -> i64 {
            let mut result = 1;
            let mut f = 2;
            while f * f <= k {
                if k.is_multiple_of(f) {
                    k /= f;
                    if k.is_multiple_of(f) {
                        return 0;
                    }
                    result = -result;
                }
                f += 1;
            }
            if k > 1 {
                result = -result;
            }
            result
        }
        let sum: i64 = (1..=n)
            .filter(|d| n.is_multiple_of(*d))
            .map(|d| mobius(d) * (1i64 << (n / d)))
            .sum();
        (sum / n as i64) as usize
    }

    #[test]
    fn irreducible_counts_follow_necklace_formula() {
        for degree in 1..=10 {
            let expected = necklace_count(degree);
            let exhaustive = (1u64 << degree..1u64 << (degree + 1))
                .filter(|&b| is_irreducible(&Poly::from_u64(b)).unwrap())
                .count();
            assert_eq!(exhaustive, expected, "degree {degree}");
            assert_eq!(enumerate_irreducibles(degree, expected).unwrap().len(), expected);
            assert!(enumerate_irreducibles(degree, expected + 1).is_err());
        }
    }

    #[test]
    fn distinct_irreducibles_are_coprime() {
        let all: Vec<Poly> = (1..=8)
            .flat_map(|d| enumerate_irreducibles(d, necklace_count(d)).unwrap())
            .collect();
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                assert!(gcd(a, b).unwrap().is_one());
            }
        }
    }

    #[test]
    fn crt_single_pair_is_identity() {
        assert_eq!(crt_combine(&[(p("1011"), p("110"))]).unwrap(), p("110"));
    }

    #[test]
    fn crt_matches_brute_force() {
        let m1 = p("111");
        let m2 = p("1011");
        let (r1, r2) = (p("10"), p("100"));
        let hits: Vec<u64> = (0u64..32)
            .filter(|&c| {
                let c = Poly::from_u64(c);
                c.rem(&m1).unwrap() == r1 && c.rem(&m2).unwrap() == r2
            })
            .collect();
        assert_eq!(hits.len(), 1);
        let got = crt_combine(&[(m1, r1), (m2, r2)]).unwrap();
        assert_eq!(got, Poly::from_u64(hits[0]));
    }

    #[test]
    fn crt_round_trips_random_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pool: Vec<Poly> = (2..=9)
            .flat_map(|d| enumerate_irreducibles(d, 4.min(necklace_count(d))).unwrap())
            .collect();
        for _ in 0..100 {
            let k = rng.random_range(1..=6);
            let mut idx: Vec<usize> = (0..pool.len()).collect();
            for i in 0..k {
                let j = rng.random_range(i..idx.len());
                idx.swap(i, j);
            }
            let system: Vec<(Poly, Poly)> = idx[..k]
                .iter()
                .map(|&i| {
                    let m = pool[i].clone();
                    let d = m.degree().unwrap();
                    (m, random_poly(&mut rng, d))
                })
                .collect();
            let r = crt_combine(&system).unwrap();
            let total: usize = system.iter().map(|(m, _)| m.degree().unwrap()).sum();
            assert!(r.bit_len() <= total);
            for (m, res) in &system {
                assert_eq!(&r.rem(m).unwrap(), res);
            }
        }
    }

    #[test]
    fn crt_errors() {
        assert!(matches!(
            crt_combine(&[(p("110"), p("1")), (p("11"), p("0"))]),
            Err(PolyError::NotCoprime(..))
        ));
        assert!(matches!(
            crt_combine(&[(p("111"), p("111"))]),
            Err(PolyError::ResidueTooLarge { index: 0, .. })
        ));
    }

    #[test]
    fn binary_rendering() {
        assert_eq!(p("0001011").to_string(), "1011");
        assert_eq!(Poly::zero().to_string(), "0");
        assert_eq!(p("110").to_padded_binary(5), "00110");
        assert_eq!(Poly::zero().to_padded_binary(3), "000");
        assert!(Poly::parse_binary("10a").is_err());
    }

    #[test]
    fn byte_image_round_trip() {
        let r = p("10101100101100");
        let bytes = r.to_be_bytes(32).unwrap();
        assert_eq!(&bytes[30..], &[0b0010_1011, 0b0010_1100]);
        assert_eq!(Poly::from_be_bytes(&bytes), r);
        assert!(Poly::monomial(256).to_be_bytes(32).is_none());
    }

    proptest! {
        #[test]
        fn add_is_commutative_associative(a in any::<u128>(), b in any::<u128>(), c in any::<u128>()) {
            let (a, b, c) = (Poly::from_u128(a), Poly::from_u128(b), Poly::from_u128(c));
            prop_assert_eq!(a.add(&b), b.add(&a));
            prop_assert_eq!(a.add(&b).add(&c), a.add(&b.add(&c)));
            prop_assert!(a.add(&a).is_zero());
        }

        #[test]
        fn mul_degree_adds(a in 1u128.., b in 1u128..) {
            let (a, b) = (Poly::from_u128(a), Poly::from_u128(b));
            prop_assert_eq!(a.mul(&b).degree(), Some(a.degree().unwrap() + b.degree().unwrap()));
        }
    }
}
