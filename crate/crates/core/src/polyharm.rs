//! Exact algebra of polynomials in `n` variables stored by multi-index.
//!
//! Polynomials are kept as sparse maps from multi-indices to coefficients. Sphere
//! and ball averages of monomials have closed forms, so every inner product here is
//! exact up to floating-point rounding; no quadrature is involved.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type MultiIndex = Vec<u32>;

/// Default relative threshold on Gram eigenvalues when counting invariant directions.
pub const DEFAULT_KERNEL_TOL: f64 = 1e-8;

/// Default cap on the degree of comparison polynomials.
pub const DEFAULT_DEGREE_CAP: u32 = 8;

/// Sparse polynomial `Σ c_β x^β`. Zero coefficients are never stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiIndexPoly {
    dim: usize,
    terms: BTreeMap<MultiIndex, f64>,
}

impl MultiIndexPoly {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::monomial(dim, vec![0; dim], c)
    }

    pub fn monomial(dim: usize, exps: MultiIndex, c: f64) -> Self {
        assert_eq!(exps.len(), dim, "multi-index length must equal dimension");
        let mut p = Self::zero(dim);
        if c != 0.0 {
            p.terms.insert(exps, c);
        }
        p
    }

    /// The coordinate function `x_i` (0-based `i`).
    pub fn variable(dim: usize, i: usize) -> Self {
        let mut e = vec![0; dim];
        e[i] = 1;
        Self::monomial(dim, e, 1.0)
    }

    /// Linear form `Σ w_i x_i`.
    pub fn linear(w: &[f64]) -> Self {
        let mut p = Self::zero(w.len());
        for (i, &wi) in w.iter().enumerate() {
            p.add_term(unit_index(w.len(), i), wi);
        }
        p
    }

    pub fn from_terms<I: IntoIterator<Item = (MultiIndex, f64)>>(dim: usize, terms: I) -> Self {
        let mut p = Self::zero(dim);
        for (e, c) in terms {
            assert_eq!(e.len(), dim, "multi-index length must equal dimension");
            p.add_term(e, c);
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.terms.iter().map(|(e, &c)| (e, c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coeff(&self, exps: &[u32]) -> f64 {
        self.terms.get(exps).copied().unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    fn add_term(&mut self, exps: MultiIndex, c: f64) {
        if c == 0.0 {
            return;
        }
        let v = self.terms.get(&exps).copied().unwrap_or(0.0) + c;
        if v == 0.0 {
            self.terms.remove(&exps);
        } else {
            self.terms.insert(exps, v);
        }
    }

    /// Total degree, `None` for the zero polynomial.
    pub fn degree(&self) -> Option<u32> {
        self.terms.keys().map(|e| e.iter().sum::<u32>()).max()
    }

    /// Degree if every stored term has the same total degree.
    pub fn homogeneous_degree(&self) -> Option<u32> {
        let mut degs = self.terms.keys().map(|e| e.iter().sum::<u32>());
        let first = degs.next()?;
        degs.all(|d| d == first).then_some(first)
    }

    pub fn homogeneous_part(&self, d: u32) -> Self {
        Self {
            dim: self.dim,
            terms: self
                .terms
                .iter()
                .filter(|(e, _)| e.iter().sum::<u32>() == d)
                .map(|(e, &c)| (e.clone(), c))
                .collect(),
        }
    }

    /// Largest absolute coefficient.
    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Drops coefficients with `|c| <= tol`.
    pub fn pruned(&self, tol: f64) -> Self {
        Self {
            dim: self.dim,
            terms: self
                .terms
                .iter()
                .filter(|(_, c)| c.abs() > tol)
                .map(|(e, &c)| (e.clone(), c))
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        if s == 0.0 {
            return Self::zero(self.dim);
        }
        Self {
            dim: self.dim,
            terms: self.terms.iter().map(|(e, &c)| (e.clone(), c * s)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut out = self.clone();
        for (e, &c) in &other.terms {
            out.add_term(e.clone(), c);
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut acc: BTreeMap<MultiIndex, f64> = BTreeMap::new();
        for (a, &ca) in &self.terms {
            for (b, &cb) in &other.terms {
                let e: MultiIndex = a.iter().zip(b).map(|(x, y)| x + y).collect();
                *acc.entry(e).or_insert(0.0) += ca * cb;
            }
        }
        acc.retain(|_, c| *c != 0.0);
        Self {
            dim: self.dim,
            terms: acc,
        }
    }

    pub fn pow(&self, k: u32) -> Self {
        let mut out = Self::constant(self.dim, 1.0);
        for _ in 0..k {
            out = out.mul(self);
        }
        out
    }

    /// Partial derivative in variable `i`.
    pub fn derivative(&self, i: usize) -> Self {
        let mut out = Self::zero(self.dim);
        for (e, &c) in &self.terms {
            if e[i] == 0 {
                continue;
            }
            let mut f = e.clone();
            f[i] -= 1;
            out.add_term(f, c * e[i] as f64);
        }
        out
    }

    pub fn gradient(&self) -> Vec<Self> {
        (0..self.dim).map(|i| self.derivative(i)).collect()
    }

    /// Directional derivative `Σ v_i ∂_i P`.
    pub fn directional(&self, v: &[f64]) -> Self {
        let mut out = Self::zero(self.dim);
        for (i, &vi) in v.iter().enumerate() {
            if vi != 0.0 {
                out = out.add(&self.derivative(i).scale(vi));
            }
        }
        out
    }

    /// Coefficient-level Laplacian.
    pub fn laplacian(&self) -> Self {
        let mut out = Self::zero(self.dim);
        for (e, &c) in &self.terms {
            for i in 0..self.dim {
                if e[i] >= 2 {
                    let mut f = e.clone();
                    f[i] -= 2;
                    out.add_term(f, c * (e[i] * (e[i] - 1)) as f64);
                }
            }
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        self.terms
            .iter()
            .map(|(e, &c)| c * e.iter().zip(x).map(|(&k, &xi)| xi.powi(k as i32)).product::<f64>())
            .sum()
    }

    /// `Q(y) = P(A y)` where `A` is `dim × m`; the result lives in `m` variables.
    pub fn compose_linear(&self, a: &DMatrix<f64>) -> Self {
        assert_eq!(a.nrows(), self.dim);
        let m = a.ncols();
        let forms: Vec<Self> = (0..self.dim)
            .map(|i| Self::linear(&a.row(i).iter().copied().collect::<Vec<_>>()))
            .collect();
        let max_exp = self.terms.keys().flat_map(|e| e.iter().copied()).max().unwrap_or(0);
        let powers: Vec<Vec<Self>> = forms
            .iter()
            .map(|f| {
                let mut v = vec![Self::constant(m, 1.0)];
                for k in 1..=max_exp as usize {
                    let next = v[k - 1].mul(f);
                    v.push(next);
                }
                v
            })
            .collect();
        let mut out = Self::zero(m);
        for (e, &c) in &self.terms {
            let mut t = Self::constant(m, c);
            for (i, &k) in e.iter().enumerate() {
                if k > 0 {
                    t = t.mul(&powers[i][k as usize]);
                }
            }
            out = out.add(&t);
        }
        out
    }

    /// `Q(y) = P(y + v)`.
    pub fn translate(&self, v: &[f64]) -> Self {
        assert_eq!(v.len(), self.dim);
        let n = self.dim;
        let shifted: Vec<Self> = (0..n)
            .map(|i| Self::variable(n, i).add(&Self::constant(n, v[i])))
            .collect();
        let mut out = Self::zero(n);
        for (e, &c) in &self.terms {
            let mut t = Self::constant(n, c);
            for (i, &k) in e.iter().enumerate() {
                if k > 0 {
                    t = t.mul(&shifted[i].pow(k));
                }
            }
            out = out.add(&t);
        }
        out
    }

    /// `Q(y) = P(β y)`.
    pub fn dilate(&self, beta: f64) -> Self {
        Self {
            dim: self.dim,
            terms: self
                .terms
                .iter()
                .map(|(e, &c)| (e.clone(), c * beta.powi(e.iter().sum::<u32>() as i32)))
                .filter(|(_, c)| *c != 0.0)
                .collect(),
        }
    }

    /// Text form: one term per line, `c * x1^a1 x2^a2 ...` with every variable listed.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (e, &c) in &self.terms {
            s.push_str(&format!("{c} *"));
            for (i, k) in e.iter().enumerate() {
                s.push_str(&format!(" x{}^{}", i + 1, k));
            }
            s.push('\n');
        }
        s
    }

    /// Parses the text form. Variables missing from a term have exponent 0; a bare
    /// factor `x3` means exponent 1; a line holding only a number is a constant.
    /// Lines may also be separated by `;`.
    pub fn from_text(dim: usize, text: &str) -> Result<Self> {
        let mut p = Self::zero(dim);
        for (lineno, raw) in text.split(['\n', ';']).enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (coef_str, rest) = match line.split_once('*') {
                Some((a, b)) => (a.trim(), b.trim()),
                None => (line, ""),
            };
            let c: f64 = coef_str
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad coefficient {coef_str:?}", lineno + 1)))?;
            let mut e = vec![0u32; dim];
            for factor in rest.split_whitespace() {
                if factor == "1" {
                    continue;
                }
                let body = factor
                    .strip_prefix('x')
                    .ok_or_else(|| Error::Parse(format!("line {}: bad factor {factor:?}", lineno + 1)))?;
                let (idx, exp) = match body.split_once('^') {
                    Some((i, k)) => (i, k),
                    None => (body, "1"),
                };
                let idx: usize = idx
                    .parse()
                    .map_err(|_| Error::Parse(format!("line {}: bad variable {factor:?}", lineno + 1)))?;
                let exp: u32 = exp
                    .parse()
                    .map_err(|_| Error::Parse(format!("line {}: bad exponent {factor:?}", lineno + 1)))?;
                if idx == 0 || idx > dim {
                    return Err(Error::Parse(format!(
                        "line {}: variable x{idx} outside dimension {dim}",
                        lineno + 1
                    )));
                }
                e[idx - 1] += exp;
            }
            p.add_term(e, c);
        }
        Ok(p)
    }

    /// Infers the dimension from the largest variable index, with a floor of `min_dim`.
    pub fn parse_infer(text: &str, min_dim: usize) -> Result<Self> {
        let mut dim = min_dim;
        for tok in text.split(|c: char| c.is_whitespace() || c == ';') {
            if let Some(body) = tok.strip_prefix('x') {
                let idx = body.split('^').next().unwrap_or("");
                if let Ok(i) = idx.parse::<usize>() {
                    dim = dim.max(i);
                }
            }
        }
        Self::from_text(dim, text)
    }
}

impl fmt::Display for MultiIndexPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(e, c)| {
                let mono: Vec<String> = e
                    .iter()
                    .enumerate()
                    .filter(|(_, &k)| k > 0)
                    .map(|(i, &k)| if k == 1 { format!("x{}", i + 1) } else { format!("x{}^{}", i + 1, k) })
                    .collect();
                if mono.is_empty() {
                    format!("{c}")
                } else {
                    format!("{c}*{}", mono.join("*"))
                }
            })
            .collect();
        write!(f, "{}", parts.join(" + "))
    }
}

fn unit_index(dim: usize, i: usize) -> MultiIndex {
    let mut e = vec![0; dim];
    e[i] = 1;
    e
}

/// Average of `x^β` over the unit sphere in `ℝⁿ`.
///
/// Zero unless every exponent is even; otherwise `Π(β_i−1)!! / Π_{m<|β|/2}(n+2m)`.
pub fn sphere_moment(exps: &[u32]) -> f64 {
    if exps.iter().any(|k| k % 2 == 1) {
        return 0.0;
    }
    let n = exps.len() as f64;
    let mut num = 1.0;
    for &k in exps {
        let mut j = k as i64 - 1;
        while j > 1 {
            num *= j as f64;
            j -= 2;
        }
    }
    let half: u32 = exps.iter().sum::<u32>() / 2;
    let mut den = 1.0;
    for m in 0..half {
        den *= n + 2.0 * m as f64;
    }
    num / den
}

/// Average of `x^β` over the unit ball.
pub fn ball_moment(exps: &[u32]) -> f64 {
    let n = exps.len() as f64;
    let deg: u32 = exps.iter().sum();
    n / (n + deg as f64) * sphere_moment(exps)
}

/// Average of `P·Q` over `∂B₁(0)`.
pub fn sphere_inner(p: &MultiIndexPoly, q: &MultiIndexPoly) -> f64 {
    assert_eq!(p.dim, q.dim, "sphere_inner needs equal dimensions");
    let mut s = 0.0;
    let mut e = vec![0u32; p.dim];
    for (a, &ca) in &p.terms {
        for (b, &cb) in &q.terms {
            for i in 0..p.dim {
                e[i] = a[i] + b[i];
            }
            s += ca * cb * sphere_moment(&e);
        }
    }
    s
}

/// Average of `P·Q` over `B₁(0)`.
pub fn ball_inner(p: &MultiIndexPoly, q: &MultiIndexPoly) -> f64 {
    assert_eq!(p.dim, q.dim);
    let mut s = 0.0;
    let mut e = vec![0u32; p.dim];
    for (a, &ca) in &p.terms {
        for (b, &cb) in &q.terms {
            for i in 0..p.dim {
                e[i] = a[i] + b[i];
            }
            s += ca * cb * ball_moment(&e);
        }
    }
    s
}

pub fn sphere_norm(p: &MultiIndexPoly) -> f64 {
    sphere_inner(p, p).max(0.0).sqrt()
}

/// Homogeneous harmonic polynomial of a fixed degree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonicHomogeneous {
    poly: MultiIndexPoly,
    degree: u32,
}

impl HarmonicHomogeneous {
    /// Validates homogeneity and harmonicity (Laplacian coefficients ≤ 1e−12 relative).
    pub fn new(poly: MultiIndexPoly) -> Result<Self> {
        let degree = if poly.is_zero() {
            0
        } else {
            poly.homogeneous_degree()
                .ok_or_else(|| Error::InvalidArgument("polynomial is not homogeneous".into()))?
        };
        let lap = poly.laplacian();
        let scale = poly.max_abs_coeff().max(1.0);
        if lap.max_abs_coeff() > 1e-12 * scale * (degree.max(1) as f64).powi(2) {
            return Err(Error::InvalidArgument(format!(
                "polynomial is not harmonic (|Δp| coefficient {:e})",
                lap.max_abs_coeff()
            )));
        }
        Ok(Self { poly, degree })
    }

    pub fn poly(&self) -> &MultiIndexPoly {
        &self.poly
    }

    pub fn into_poly(self) -> MultiIndexPoly {
        self.poly
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.poly.dim
    }

    /// Rescales to unit sphere average `⨏ P² = 1`.
    pub fn normalized(&self) -> Result<Self> {
        let nrm = sphere_norm(&self.poly);
        if nrm == 0.0 {
            return Err(Error::Degenerate("cannot normalize the zero polynomial".into()));
        }
        Ok(Self {
            poly: self.poly.scale(1.0 / nrm),
            degree: self.degree,
        })
    }
}

/// Orthonormal subset of `ℝⁿ` spanning a subspace `V`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetrySubspace {
    pub ambient: usize,
    pub basis: Vec<Vec<f64>>,
}

impl SymmetrySubspace {
    pub fn trivial(ambient: usize) -> Self {
        Self {
            ambient,
            basis: Vec::new(),
        }
    }

    /// Orthonormalizes the given spanning vectors (modified Gram–Schmidt, rank-revealing).
    pub fn span(ambient: usize, vectors: &[Vec<f64>]) -> Self {
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for v in vectors {
            let mut w = v.clone();
            for _ in 0..2 {
                for b in &basis {
                    let d: f64 = w.iter().zip(b).map(|(x, y)| x * y).sum();
                    for (wi, bi) in w.iter_mut().zip(b) {
                        *wi -= d * bi;
                    }
                }
            }
            let nrm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            let scale = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nrm > 1e-10 * scale.max(1e-300) {
                basis.push(w.iter().map(|x| x / nrm).collect());
            }
        }
        Self { ambient, basis }
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// `n × k` matrix whose columns are the basis vectors.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.ambient, self.basis.len(), |i, j| self.basis[j][i])
    }

    /// Orthonormal basis of the orthogonal complement.
    pub fn complement(&self) -> Self {
        let mut vectors = self.basis.clone();
        for i in 0..self.ambient {
            let mut e = vec![0.0; self.ambient];
            e[i] = 1.0;
            vectors.push(e);
        }
        let full = Self::span(self.ambient, &vectors);
        Self {
            ambient: self.ambient,
            basis: full.basis[self.basis.len()..].to_vec(),
        }
    }

    /// Euclidean distance from `x` to the subspace.
    pub fn distance(&self, x: &[f64]) -> f64 {
        let mut r = x.to_vec();
        for b in &self.basis {
            let d: f64 = r.iter().zip(b).map(|(p, q)| p * q).sum();
            for (ri, bi) in r.iter_mut().zip(b) {
                *ri -= d * bi;
            }
        }
        r.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Number of monomials of degree `d` in `n` variables.
pub fn monomial_count(n: usize, d: u32) -> usize {
    binomial(n as u64 + d as u64 - 1, d as u64) as usize
}

/// Dimension of the space of degree-`d` homogeneous harmonic polynomials in `ℝⁿ`.
pub fn harmonic_dimension(n: usize, d: u32) -> usize {
    if n == 1 {
        return usize::from(d <= 1);
    }
    match d {
        0 => 1,
        1 => n,
        _ => monomial_count(n, d) - monomial_count(n, d - 2),
    }
}

fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u64 = 1;
    for i in 0..k {
        r = r * (n - i) / (i + 1);
    }
    r
}

/// All multi-indices of total degree `d` in `n` variables, lexicographically descending.
pub fn monomials(n: usize, d: u32) -> Vec<MultiIndex> {
    fn rec(n: usize, d: u32, prefix: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
        if prefix.len() == n - 1 {
            prefix.push(d);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in (0..=d).rev() {
            prefix.push(k);
            rec(n, d - k, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    rec(n, d, &mut Vec::with_capacity(n), &mut out);
    out
}

/// Orthonormal basis (sphere-average inner product) of the degree-`d` harmonic
/// homogeneous polynomials in `ℝⁿ`.
///
/// Starting polynomials come from the expansion `h = Σ_k x_n^k h_k(x')` with
/// `h_{k+2} = −Δ'h_k / ((k+1)(k+2))`, seeded by monomials in `x'` for `h_0` or
/// `h_1`; every seed spans the Laplacian kernel exactly. Two passes of modified
/// Gram–Schmidt then orthonormalize them.
pub fn harmonic_basis(n: usize, d: u32) -> Result<Vec<HarmonicHomogeneous>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("harmonic_basis needs n ≥ 2, got {n}")));
    }
    let mut seeds: Vec<MultiIndexPoly> = Vec::new();
    for m in monomials(n - 1, d) {
        seeds.push(harmonic_extension(n, d, &m, 0));
    }
    if d >= 1 {
        for m in monomials(n - 1, d - 1) {
            seeds.push(harmonic_extension(n, d, &m, 1));
        }
    }
    let mut basis: Vec<MultiIndexPoly> = Vec::with_capacity(seeds.len());
    for s in seeds {
        let mut w = s;
        for _ in 0..2 {
            for b in &basis {
                let c = sphere_inner(&w, b);
                w = w.sub(&b.scale(c));
            }
        }
        let nrm = sphere_norm(&w);
        debug_assert!(nrm > 1e-10, "harmonic seeds are independent");
        basis.push(w.scale(1.0 / nrm).pruned(1e-15));
    }
    debug_assert_eq!(basis.len(), harmonic_dimension(n, d));
    basis
        .into_iter()
        .map(|p| {
            // Gram–Schmidt combinations stay in the kernel up to rounding
            Ok(HarmonicHomogeneous { poly: p, degree: d })
        })
        .collect()
}

/// Random unit-norm degree-`d` harmonic: Gaussian coefficients in the orthonormal basis.
pub fn random_harmonic<R: rand::Rng + ?Sized>(n: usize, d: u32, rng: &mut R) -> Result<HarmonicHomogeneous> {
    let basis = harmonic_basis(n, d)?;
    loop {
        let mut p = MultiIndexPoly::zero(n);
        for b in &basis {
            let g: f64 = rng.sample(rand_distr::StandardNormal);
            p = p.add(&b.poly.scale(g));
        }
        if sphere_norm(&p) > 1e-6 {
            return HarmonicHomogeneous { poly: p, degree: d }.normalized();
        }
    }
}

/// `Σ_{d ∈ degrees} w_d P_d` with `P_d` from [`random_harmonic`] and weights uniform in `[1/2, 1]`.
pub fn random_harmonic_sum<R: rand::Rng + ?Sized>(n: usize, degrees: &[u32], rng: &mut R) -> Result<MultiIndexPoly> {
    let mut p = MultiIndexPoly::zero(n);
    for &d in degrees {
        let w: f64 = rng.random_range(0.5..=1.0);
        p = p.add(&random_harmonic(n, d, rng)?.into_poly().scale(w));
    }
    Ok(p)
}

/// Sum `Σ_k x_n^k h_k` seeded with a single `x'`-monomial at `h_start` (start ∈ {0,1}).
fn harmonic_extension(n: usize, d: u32, mono: &[u32], start: u32) -> MultiIndexPoly {
    let m = n - 1;
    let mut hk = MultiIndexPoly::monomial(m, mono.to_vec(), 1.0);
    let mut k = start;
    let mut out = MultiIndexPoly::zero(n);
    loop {
        for (e, c) in hk.terms() {
            let mut full = e.clone();
            full.push(k);
            out.add_term(full, c);
        }
        if k + 2 > d {
            break;
        }
        let next = hk.laplacian().scale(-1.0 / (((k + 1) * (k + 2)) as f64));
        if next.is_zero() {
            break;
        }
        hk = next;
        k += 2;
    }
    out
}

/// Dimension of the largest subspace along which `P` is invariant.
///
/// `V` is the kernel of the Gram matrix `G_ij = ⨏ ∂_iP ∂_jP`; an eigenvalue counts
/// as zero when it is below `tol` times the largest one.
pub fn invariance_dimension(p: &MultiIndexPoly, tol: f64) -> Result<(usize, SymmetrySubspace)> {
    if p.is_zero() {
        return Err(Error::Degenerate("invariance_dimension of the zero polynomial".into()));
    }
    let n = p.dim;
    let grad = p.gradient();
    let g = DMatrix::from_fn(n, n, |i, j| sphere_inner(&grad[i], &grad[j]));
    let eig = SymmetricEigen::new(g);
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        // constant polynomial: invariant in every direction
        let basis = (0..n).map(|i| unit_basis(n, i)).collect();
        return Ok((n, SymmetrySubspace { ambient: n, basis }));
    }
    let mut kernel: Vec<(f64, Vec<f64>)> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &v)| v.abs() <= tol * max)
        .map(|(j, &v)| (v, eig.eigenvectors.column(j).iter().copied().collect()))
        .collect();
    kernel.sort_by(|a, b| a.0.total_cmp(&b.0));
    let vectors: Vec<Vec<f64>> = kernel.into_iter().map(|(_, v)| v).collect();
    let v = SymmetrySubspace::span(n, &vectors);
    Ok((v.dim(), v))
}

fn unit_basis(n: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[i] = 1.0;
    e
}

/// Result of the splitting identity check at a second homogeneity center.
#[derive(Clone, Debug, Serialize)]
pub struct SplittingCheck {
    /// `P(x + ·)` is a homogeneous polynomial (premise of the identity).
    pub homogeneous_at_x: bool,
    /// Sphere-L² norm of `⟨x, ∇P⟩`; zero when `P` is invariant along `x`.
    pub directional_norm: f64,
}

/// Checks the identity behind precise cone-splitting: a polynomial homogeneous at
/// both `0` and `x` has `⟨x, ∇P⟩ ≡ 0`.
pub fn verify_precise_cone_splitting(p: &HarmonicHomogeneous, x: &[f64]) -> Result<SplittingCheck> {
    if x.len() != p.dim() {
        return Err(Error::InvalidArgument("point dimension mismatch".into()));
    }
    if x.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidArgument("second center must be nonzero".into()));
    }
    let shifted = p.poly.translate(x);
    let scale = shifted.max_abs_coeff().max(1e-300);
    let homogeneous_at_x = shifted.pruned(1e-10 * scale).homogeneous_degree().is_some();
    let dirv = p.poly.directional(x);
    Ok(SplittingCheck {
        homogeneous_at_x,
        directional_norm: sphere_norm(&dirv),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn poly(n: usize, s: &str) -> MultiIndexPoly {
        MultiIndexPoly::from_text(n, s).unwrap()
    }

    #[test]
    fn basis_counts() {
        assert_eq!(harmonic_basis(2, 3).unwrap().len(), 2);
        assert_eq!(harmonic_basis(3, 2).unwrap().len(), 5);
        let b = harmonic_basis(3, 0).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].poly().homogeneous_degree(), Some(0));
        for n in 2..=4 {
            for d in 0..=6 {
                assert_eq!(harmonic_basis(n, d).unwrap().len(), harmonic_dimension(n, d));
            }
        }
        assert_eq!(harmonic_dimension(3, 4), 9);
        assert!(harmonic_basis(1, 2).is_err());
    }

    #[test]
    fn basis_is_harmonic_and_orthonormal() {
        for n in 2..=4 {
            for d in 0..=7 {
                let b = harmonic_basis(n, d).unwrap();
                for (i, p) in b.iter().enumerate() {
                    let scale = p.poly().max_abs_coeff() * (d as f64).powi(2);
                    assert!(p.poly().laplacian().max_abs_coeff() <= 1e-12 * scale.max(1.0), "n={n} d={d}");
                    assert_eq!(p.poly().homogeneous_degree(), Some(d));
                    for (j, q) in b.iter().enumerate() {
                        let g = sphere_inner(p.poly(), q.poly());
                        let want = if i == j { 1.0 } else { 0.0 };
                        assert_abs_diff_eq!(g, want, epsilon = 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn planar_cubic_basis_spans_re_im() {
        let b = harmonic_basis(2, 3).unwrap();
        let re = poly(2, "1 * x1^3; -3 * x1 x2^2");
        let im = poly(2, "3 * x1^2 x2; -1 * x2^3");
        for target in [re, im] {
            let nrm2 = sphere_inner(&target, &target);
            let proj: f64 = b.iter().map(|e| sphere_inner(&target, e.poly()).powi(2)).sum();
            assert_abs_diff_eq!(proj, nrm2, epsilon = 1e-12);
        }
    }

    #[test]
    fn laplacian_examples() {
        assert!(poly(2, "1 * x1^2; -1 * x2^2").laplacian().is_zero());
        assert_eq!(poly(2, "1 * x1^2").laplacian(), MultiIndexPoly::constant(2, 2.0));
        assert!(poly(3, "1 * x1 x2 x3").laplacian().is_zero());
    }

    #[test]
    fn sphere_inner_examples() {
        for n in 2..=5 {
            let x1 = MultiIndexPoly::variable(n, 0);
            assert_abs_diff_eq!(sphere_inner(&x1, &x1), 1.0 / n as f64, epsilon = 1e-15);
            let x2 = MultiIndexPoly::variable(n, 1);
            assert_eq!(sphere_inner(&x1, &x2), 0.0);
        }
        let p = poly(3, "1 * x1 x2");
        assert_abs_diff_eq!(sphere_inner(&p, &p), 1.0 / 15.0, epsilon = 1e-15);
    }

    #[test]
    fn random_corpus_is_harmonic() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for (n, d) in [(2, 1), (2, 5), (3, 3), (3, 6)] {
            let h = random_harmonic(n, d, &mut rng).unwrap();
            assert_eq!(h.poly().homogeneous_degree(), Some(d));
            assert_abs_diff_eq!(sphere_norm(h.poly()), 1.0, epsilon = 1e-12);
            assert!(h.poly().laplacian().max_abs_coeff() < 1e-10);
        }
        let s = random_harmonic_sum(3, &[1, 2, 4], &mut rng).unwrap();
        assert_eq!(s.degree(), Some(4));
        assert!(s.homogeneous_degree().is_none());
    }

    #[test]
    fn sphere_moment_matches_monte_carlo() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let samples = 400_000;
        let mut acc = 0.0;
        for _ in 0..samples {
            // uniform point on S² from normalized Gaussian triples
            let g: Vec<f64> = (0..3)
                .map(|_| {
                    let u1: f64 = rng.random::<f64>().max(1e-300);
                    let u2: f64 = rng.random();
                    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                })
                .collect();
            let r = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            acc += (g[0] / r).powi(2) * (g[1] / r).powi(2);
        }
        let mc = acc / samples as f64;
        assert!((mc - 1.0 / 15.0).abs() < 1e-3, "mc = {mc}");
        assert_abs_diff_eq!(sphere_moment(&[2, 2, 0]), 1.0 / 15.0, epsilon = 1e-15);
    }

    #[test]
    fn invariance_examples() {
        let (k, v) = invariance_dimension(&poly(3, "1 * x1"), DEFAULT_KERNEL_TOL).unwrap();
        assert_eq!(k, 2);
        assert!(v.distance(&[0.0, 1.0, 0.0]) < 1e-12);
        assert!(v.distance(&[0.0, 0.0, 1.0]) < 1e-12);
        let (k, v) = invariance_dimension(&poly(3, "1 * x1 x2"), DEFAULT_KERNEL_TOL).unwrap();
        assert_eq!(k, 1);
        assert!(v.distance(&[0.0, 0.0, 1.0]) < 1e-12);
        let (k, _) = invariance_dimension(&poly(2, "1 * x1^3; -3 * x1 x2^2"), DEFAULT_KERNEL_TOL).unwrap();
        assert_eq!(k, 0);
        assert!(invariance_dimension(&MultiIndexPoly::zero(2), 1e-8).is_err());
    }

    #[test]
    fn degree_one_iff_codimension_one() {
        for n in 2..=4 {
            for d in 1..=4 {
                for p in harmonic_basis(n, d).unwrap() {
                    let (k, _) = invariance_dimension(p.poly(), DEFAULT_KERNEL_TOL).unwrap();
                    assert_eq!(k == n - 1, d == 1, "n={n} d={d} k={k}");
                }
            }
        }
    }

    #[test]
    fn cone_splitting_identity() {
        let p = HarmonicHomogeneous::new(poly(3, "1 * x2^2; -1 * x3^2")).unwrap();
        let c = verify_precise_cone_splitting(&p, &[1.0, 0.0, 0.0]).unwrap();
        assert!(c.homogeneous_at_x);
        assert!(c.directional_norm < 1e-15);

        let p = HarmonicHomogeneous::new(poly(2, "1 * x1 x2")).unwrap();
        let c = verify_precise_cone_splitting(&p, &[1.0, 0.0]).unwrap();
        assert!(!c.homogeneous_at_x);
        assert_abs_diff_eq!(c.directional_norm, (0.5f64).sqrt(), epsilon = 1e-14);

        let p = HarmonicHomogeneous::new(poly(3, "1 * x1^2; -1 * x2^2")).unwrap();
        let c = verify_precise_cone_splitting(&p, &[0.0, 0.0, 1.0]).unwrap();
        assert!(c.homogeneous_at_x && c.directional_norm == 0.0);
        assert!(verify_precise_cone_splitting(&p, &[0.0; 3]).is_err());
    }

    #[test]
    fn text_format_round_trip() {
        let p = poly(3, "2.5 * x1^2 x3; -1e-3 * x2^4; 7");
        let q = MultiIndexPoly::from_text(3, &p.to_text()).unwrap();
        assert_eq!(p, q);
        assert!(p.to_text().contains("2.5 * x1^2 x2^0 x3^1"));
        assert!(MultiIndexPoly::from_text(2, "1 * x3").is_err());
        assert!(MultiIndexPoly::from_text(2, "abc * x1").is_err());
        assert_eq!(MultiIndexPoly::parse_infer("1 * x4^2", 2).unwrap().dim(), 4);
    }

    #[test]
    fn compose_and_translate() {
        let p = poly(2, "1 * x1^2; -1 * x2^2");
        // rotation by 45° maps x1² − x2² to ±2 y1 y2
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let rot = DMatrix::from_row_slice(2, 2, &[c, -c, c, c]);
        let q = p.compose_linear(&rot).pruned(1e-14);
        assert_abs_diff_eq!(q.coeff(&[1, 1]), -2.0, epsilon = 1e-14);
        assert_eq!(q.num_terms(), 1);
        let t = p.translate(&[1.0, 0.0]);
        assert_abs_diff_eq!(t.eval(&[0.0, 0.0]), 1.0, epsilon = 0.0);
        assert_abs_diff_eq!(t.coeff(&[1, 0]), 2.0, epsilon = 0.0);
        assert_abs_diff_eq!(p.dilate(2.0).coeff(&[2, 0]), 4.0, epsilon = 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn rotation3(a: f64, b: f64, c: f64) -> DMatrix<f64> {
            let rz = |t: f64| DMatrix::from_row_slice(3, 3, &[t.cos(), -t.sin(), 0.0, t.sin(), t.cos(), 0.0, 0.0, 0.0, 1.0]);
            let rx = |t: f64| DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, t.cos(), -t.sin(), 0.0, t.sin(), t.cos()]);
            rz(a) * rx(b) * rz(c)
        }

        proptest! {
            #[test]
            fn euler_identity(d in 0u32..7, idx in 0usize..64, y in proptest::collection::vec(-1.0f64..1.0, 3)) {
                let basis = harmonic_basis(3, d).unwrap();
                let p = &basis[idx % basis.len()];
                let grad = p.poly().gradient();
                let lhs: f64 = grad.iter().zip(&y).map(|(g, yi)| g.eval(&y) * yi).sum();
                prop_assert!((lhs - d as f64 * p.poly().eval(&y)).abs() <= 1e-10);
            }

            #[test]
            fn invariance_dimension_is_rotation_invariant(
                which in 0usize..3, a in 0.0f64..6.28, b in 0.0f64..3.14, c in 0.0f64..6.28
            ) {
                let p = [poly(3, "1 * x1"), poly(3, "1 * x1 x2"), poly(3, "1 * x1 x2 x3")][which].clone();
                let (k0, _) = invariance_dimension(&p, DEFAULT_KERNEL_TOL).unwrap();
                let q = p.compose_linear(&rotation3(a, b, c));
                let (k1, _) = invariance_dimension(&q, DEFAULT_KERNEL_TOL).unwrap();
                prop_assert_eq!(k0, k1);
            }

            #[test]
            fn sphere_inner_bilinear_symmetric(
                c1 in proptest::collection::vec(-2.0f64..2.0, 5),
                c2 in proptest::collection::vec(-2.0f64..2.0, 5),
                s in -3.0f64..3.0,
            ) {
                let b = harmonic_basis(3, 2).unwrap();
                let mk = |c: &[f64]| b.iter().zip(c).fold(MultiIndexPoly::zero(3), |acc, (e, &ci)| acc.add(&e.poly().scale(ci)));
                let (p, q) = (mk(&c1), mk(&c2));
                prop_assert!((sphere_inner(&p, &q) - sphere_inner(&q, &p)).abs() < 1e-12);
                let lhs = sphere_inner(&p.scale(s).add(&q), &q);
                let rhs = s * sphere_inner(&p, &q) + sphere_inner(&q, &q);
                prop_assert!((lhs - rhs).abs() < 1e-10);
                let direct: f64 = c1.iter().zip(&c2).map(|(a, b)| a * b).sum();
                prop_assert!((sphere_inner(&p, &q) - direct).abs() < 1e-10);
            }
        }
    }
}
