//! Coupling matrices: generators, text I/O and the sign split `g = g⁺ − g⁻`.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::PathBuf;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{pair_index, CounterRng, Domain};

/// Symmetric interaction matrix with zero diagonal.
///
/// Stored densely, with the nonzero upper-triangle entries kept alongside as an
/// edge list for sparse consumers (Gray-code updates, the constructive sampler).
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    n: usize,
    entries: Vec<f64>,
    edges: Vec<(usize, usize, f64)>,
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl CouplingMatrix {
    pub fn zeros(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("number of spins must be positive".into()));
        }
        Ok(Self::from_parts(n, vec![0.0; n * n]))
    }

    /// Builds from a row-major `n × n` array, checking symmetry, the zero
    /// diagonal and finiteness.
    pub fn from_dense(n: usize, entries: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("number of spins must be positive".into()));
        }
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: entries.len(),
            });
        }
        for i in 0..n {
            if entries[i * n + i] != 0.0 {
                return Err(Error::Validation(format!(
                    "diagonal entry ({i},{i}) is {} but must be zero",
                    entries[i * n + i]
                )));
            }
            for j in 0..n {
                let v = entries[i * n + j];
                if !v.is_finite() {
                    return Err(Error::Validation(format!("entry ({i},{j}) is not finite")));
                }
                if v != entries[j * n + i] {
                    return Err(Error::Validation(format!(
                        "matrix is not symmetric at ({i},{j}): {v} vs {}",
                        entries[j * n + i]
                    )));
                }
            }
        }
        Ok(Self::from_parts(n, entries))
    }

    /// Builds from unordered pairs. Listing a pair twice is allowed only with the
    /// same value.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut entries = vec![0.0; n * n];
        let mut seen = vec![false; n * n];
        if n == 0 {
            return Err(Error::InvalidArgument("number of spins must be positive".into()));
        }
        for (i, j, v) in edges {
            Self::check_edge(n, i, j, v)?;
            if i == j {
                continue;
            }
            let (a, b) = if i < j { (i, j) } else { (j, i) };
            if seen[a * n + b] && entries[a * n + b] != v {
                return Err(Error::Validation(format!(
                    "conflicting values for pair ({a},{b}): {} and {v}",
                    entries[a * n + b]
                )));
            }
            seen[a * n + b] = true;
            entries[a * n + b] = v;
            entries[b * n + a] = v;
        }
        Ok(Self::from_parts(n, entries))
    }

    fn check_edge(n: usize, i: usize, j: usize, v: f64) -> Result<()> {
        if i >= n || j >= n {
            return Err(Error::Validation(format!(
                "pair ({i},{j}) out of range for n = {n}"
            )));
        }
        if !v.is_finite() {
            return Err(Error::Validation(format!("value for pair ({i},{j}) is not finite")));
        }
        if i == j && v != 0.0 {
            return Err(Error::Validation(format!(
                "diagonal entry ({i},{i}) is {v} but must be zero"
            )));
        }
        Ok(())
    }

    fn from_parts(n: usize, entries: Vec<f64>) -> Self {
        let mut edges = Vec::new();
        let mut neighbors = vec![Vec::new(); n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = entries[i * n + j];
                if v != 0.0 {
                    edges.push((i, j, v));
                    neighbors[i].push((j, v));
                    neighbors[j].push((i, v));
                }
            }
        }
        for row in &mut neighbors {
            row.sort_by_key(|&(k, _)| k);
        }
        CouplingMatrix {
            n,
            entries,
            edges,
            neighbors,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    /// Row-major dense entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    /// Nonzero couplings `(i, j, g_ij)` with `i < j`, sorted by `(i, j)`.
    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Nonzero couplings of site `i`, sorted by neighbor index.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    /// `Σ_{i,j} |g_ij|` over the full double sum.
    pub fn abs_sum(&self) -> f64 {
        let compensated = self.n > 1024;
        crate::stats::ordered_sum(self.entries.iter().map(|v| v.abs()), compensated)
    }
}

/// Entrywise nonnegative parts with `plus − minus = g` and `plus + minus = |g|`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignSplit {
    n: usize,
    plus: Vec<f64>,
    minus: Vec<f64>,
}

impl SignSplit {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn plus(&self, i: usize, j: usize) -> f64 {
        self.plus[i * self.n + j]
    }

    #[inline]
    pub fn minus(&self, i: usize, j: usize) -> f64 {
        self.minus[i * self.n + j]
    }

    pub fn plus_entries(&self) -> &[f64] {
        &self.plus
    }

    pub fn minus_entries(&self) -> &[f64] {
        &self.minus
    }
}

pub fn sign_split(g: &CouplingMatrix) -> SignSplit {
    let plus = g.entries.iter().map(|&v| v.max(0.0)).collect();
    let minus = g.entries.iter().map(|&v| (-v).max(0.0)).collect();
    SignSplit { n: g.n, plus, minus }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Free,
    Periodic,
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Boundary::Free => f.write_str("free"),
            Boundary::Periodic => f.write_str("periodic"),
        }
    }
}

/// SK disorder: independent centered Gaussians of variance `1/n` on every pair.
///
/// Entry `(i, j)` is drawn from its own counter stream, so the matrix does not
/// depend on generation order or thread count.
pub fn generate_sk(n: usize, seed: u64) -> Result<CouplingMatrix> {
    if n == 0 {
        return Err(Error::InvalidArgument("SK model needs n >= 1".into()));
    }
    let rng = CounterRng::new(seed, Domain::SkCouplings);
    let scale = (n as f64).sqrt().recip();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            (0..j)
                .map(|i| {
                    let z: f64 = rng.stream(pair_index(i, j)).sample(StandardNormal);
                    z * scale
                })
                .collect()
        })
        .collect();
    let mut entries = vec![0.0; n * n];
    for (j, row) in rows.iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            entries[i * n + j] = v;
            entries[j * n + i] = v;
        }
    }
    Ok(CouplingMatrix::from_parts(n, entries))
}

/// Row-major site index, last dimension fastest.
fn lattice_strides(dims: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; dims.len()];
    for a in (0..dims.len().saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * dims[a + 1];
    }
    strides
}

fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() {
        return Err(Error::InvalidArgument("lattice dimensions must be nonempty".into()));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidArgument("lattice side lengths must be positive".into()));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidArgument("lattice too large".into()))
}

/// Nearest-neighbor bonds `(site, direction, neighbor)` of a hypercubic lattice.
///
/// A periodic side of length 2 would wrap onto the bond that already exists, and
/// a side of length 1 onto the site itself; neither wrap is added.
fn lattice_bonds(dims: &[usize], boundary: Boundary) -> Vec<(usize, usize, usize)> {
    let strides = lattice_strides(dims);
    let sites: usize = dims.iter().product();
    let mut bonds = Vec::new();
    for site in 0..sites {
        for (a, (&len, &stride)) in dims.iter().zip(&strides).enumerate() {
            let x = (site / stride) % len;
            if x + 1 < len {
                bonds.push((site, a, site + stride));
            } else if boundary == Boundary::Periodic && len > 2 {
                bonds.push((site, a, site - x * stride));
            }
        }
    }
    bonds
}

/// Edwards–Anderson disorder: independent standard Gaussians on the
/// nearest-neighbor bonds of a hypercubic lattice.
pub fn generate_ea(dims: &[usize], boundary: Boundary, seed: u64) -> Result<CouplingMatrix> {
    let n = check_dims(dims)?;
    let rng = CounterRng::new(seed, Domain::EaCouplings);
    let d = dims.len() as u64;
    let edges = lattice_bonds(dims, boundary).into_iter().map(|(site, a, nb)| {
        let z: f64 = rng.stream(site as u64 * d + a as u64).sample(StandardNormal);
        (site, nb, z)
    });
    CouplingMatrix::from_edges(n, edges)
}

/// Number of nearest neighbors each site lacks on a free-boundary lattice.
///
/// Fixing the spins outside the box to `τ` with bond strength `J` acts on site
/// `i` as the external field `β J τ · missing[i]`.
pub fn lattice_missing_neighbors(dims: &[usize]) -> Result<Vec<usize>> {
    let n = check_dims(dims)?;
    let mut degree = vec![0usize; n];
    for (site, _, nb) in lattice_bonds(dims, Boundary::Free) {
        degree[site] += 1;
        degree[nb] += 1;
    }
    let full = 2 * dims.len();
    Ok(degree.into_iter().map(|k| full - k).collect())
}

/// Hopfield couplings `g_ij = (1/n) Σ_μ ξ_i^μ ξ_j^μ` from uniform ±1 patterns,
/// with the diagonal forced to zero.
pub fn generate_hopfield(n: usize, patterns: usize, seed: u64) -> Result<CouplingMatrix> {
    if n == 0 || patterns == 0 {
        return Err(Error::InvalidArgument(
            "Hopfield model needs n >= 1 and at least one pattern".into(),
        ));
    }
    let rng = CounterRng::new(seed, Domain::HopfieldPatterns);
    let xi: Vec<Vec<f64>> = (0..patterns)
        .map(|mu| {
            let mut r = rng.stream(mu as u64);
            (0..n).map(|_| if r.random::<bool>() { 1.0 } else { -1.0 }).collect()
        })
        .collect();
    Ok(hopfield_from_patterns(&xi))
}

/// Hopfield couplings from explicit ±1 patterns (all of the same length).
pub fn hopfield_from_patterns(patterns: &[Vec<f64>]) -> CouplingMatrix {
    let n = patterns.first().map_or(0, Vec::len);
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let overlap: f64 = patterns.iter().map(|p| p[i] * p[j]).sum();
            let v = overlap / n as f64;
            entries[i * n + j] = v;
            entries[j * n + i] = v;
        }
    }
    CouplingMatrix::from_parts(n, entries)
}

/// Everything needed to rebuild a coupling matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Sk { n: usize, seed: u64 },
    EaLattice { dims: Vec<usize>, boundary: Boundary, seed: u64 },
    Hopfield { n: usize, patterns: usize, seed: u64 },
    File { path: PathBuf },
}

impl ModelSpec {
    pub fn build(&self) -> Result<CouplingMatrix> {
        match self {
            ModelSpec::Sk { n, seed } => generate_sk(*n, *seed),
            ModelSpec::EaLattice { dims, boundary, seed } => generate_ea(dims, *boundary, *seed),
            ModelSpec::Hopfield { n, patterns, seed } => generate_hopfield(*n, *patterns, *seed),
            ModelSpec::File { path } => {
                let file = std::fs::File::open(path)?;
                load_couplings(std::io::BufReader::new(file))
            }
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ModelSpec::Sk { .. } => "sk",
            ModelSpec::EaLattice { .. } => "ea_lattice",
            ModelSpec::Hopfield { .. } => "hopfield",
            ModelSpec::File { .. } => "file",
        }
    }
}

/// Splits a line into its content before any `#` comment, trimmed.
pub(crate) fn strip_comment(line: &str) -> &str {
    line.split('#').next().unwrap_or("").trim()
}

pub(crate) fn parse_index(token: &str, line: usize) -> Result<usize> {
    token.parse().map_err(|_| Error::Parse {
        line,
        message: format!("expected a nonnegative integer index, found {token:?}"),
    })
}

pub(crate) fn parse_value(token: &str, line: usize) -> Result<f64> {
    let v: f64 = token.parse().map_err(|_| Error::Parse {
        line,
        message: format!("expected a real value, found {token:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("value {token:?} is not finite"),
        });
    }
    Ok(v)
}

/// Reads the header line holding the number of spins and returns it along with
/// the remaining numbered, comment-stripped, nonempty lines.
pub(crate) fn read_records<R: BufRead>(source: R) -> Result<(usize, Vec<(usize, String)>)> {
    let mut n = None;
    let mut records = Vec::new();
    for (k, line) in source.lines().enumerate() {
        let line = line?;
        let content = strip_comment(&line);
        if content.is_empty() {
            continue;
        }
        if n.is_none() {
            let size: usize = content.parse().map_err(|_| Error::Parse {
                line: k + 1,
                message: format!("expected the number of spins, found {content:?}"),
            })?;
            if size == 0 {
                return Err(Error::Validation("number of spins must be positive".into()));
            }
            n = Some(size);
        } else {
            records.push((k + 1, content.to_string()));
        }
    }
    let n = n.ok_or_else(|| Error::Parse {
        line: 0,
        message: "missing header with the number of spins".into(),
    })?;
    Ok((n, records))
}

/// Reads the text coupling format: a header line with `n`, then `i j value`
/// lines; `#` starts a comment and unlisted pairs are zero.
pub fn load_couplings<R: BufRead>(source: R) -> Result<CouplingMatrix> {
    let (n, records) = read_records(source)?;
    let mut edges = Vec::with_capacity(records.len());
    for (line, content) in &records {
        let tokens: Vec<&str> = content.split_whitespace().collect();
        if tokens.len() != 3 {
            return Err(Error::Parse {
                line: *line,
                message: format!("expected \"i j value\", found {} fields", tokens.len()),
            });
        }
        let i = parse_index(tokens[0], *line)?;
        let j = parse_index(tokens[1], *line)?;
        let v = parse_value(tokens[2], *line)?;
        edges.push((i, j, v));
    }
    CouplingMatrix::from_edges(n, edges)
}

/// Writes the text coupling format with entries sorted by `(i, j)`.
///
/// Values use the shortest representation that parses back to the same bits.
pub fn write_couplings<W: Write>(g: &CouplingMatrix, mut out: W) -> Result<()> {
    writeln!(out, "{}", g.n())?;
    for &(i, j, v) in g.edges() {
        writeln!(out, "{i} {j} {v:e}")?;
    }
    Ok(())
}
