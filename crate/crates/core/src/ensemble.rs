//! Quasi-regular and spatially-coupled sparse spreading ensembles.
//!
//! A quasi-regular matrix has exactly `r` nonzeros per row and column weights
//! `c = floor(rN/K)` or `c + 1`. The coupled matrix is an `L x L` band-circulant
//! array of such blocks: block `(l, l')` is present iff `(l - l') mod L` lies in
//! `0..=W`, and each present block has row weight `r/(W+1)`.
//!
//! Matrix text format (one record per line):
//!
//! ```text
//! K N r L W
//! # n_init <N_init | inf>      (optional, default N; inf = known initial symbols)
//! # sigma_n_sq <value>         (optional, default 1)
//! <row> <col> <sign>           (global row, global column, +1/-1)
//! ```
//!
//! Global rows stack positions `l = 0..L` with `N_l` rows each; global column
//! `l' * K + k`. The binary form starts with the magic `SCSM`, a little-endian
//! `u32` version, then `u64` fields `K N r L W n_init` (`u64::MAX` for inf),
//! the `f64` noise variance, a `u64` entry count and `(u32 row, u32 col, i8 sign)`
//! records.

use std::io::{BufRead, Read, Write};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::{Error, Result};

/// Scalar parameters of an SC-SCDMA instance.
///
/// `n_init = None` encodes `beta_init = 0`: the initialization positions use
/// `N` chips and their symbols are known to the receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemConfig {
    pub k: usize,
    pub n: usize,
    pub n_init: Option<usize>,
    pub r: usize,
    pub l: usize,
    pub w: usize,
    pub sigma_n_sq: f64,
}

impl SystemConfig {
    /// Builds a config from loads, rounding `N = K/beta` to the nearest integer.
    pub fn from_loads(
        k: usize,
        beta: f64,
        beta_init: f64,
        r: usize,
        l: usize,
        w: usize,
        sigma_n_sq: f64,
    ) -> Result<Self> {
        if !(beta > 0.0) || !(beta_init >= 0.0) {
            return Err(Error::InvalidConfig(format!("loads must satisfy beta > 0, beta_init >= 0 (got {beta}, {beta_init})")));
        }
        let n = (k as f64 / beta).round() as usize;
        let n_init = if beta_init == 0.0 { None } else { Some((k as f64 / beta_init).round() as usize) };
        let cfg = SystemConfig { k, n, n_init, r, l, w, sigma_n_sq };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.k == 0 || self.n == 0 || self.r == 0 || self.l == 0 {
            return bad(format!("K, N, r, L must be positive: {self:?}"));
        }
        if self.n_init == Some(0) {
            return bad("N_init must be positive".into());
        }
        if self.w >= self.l {
            return bad(format!("coupling width W = {} must be below L = {}", self.w, self.l));
        }
        if self.r % (self.w + 1) != 0 {
            return bad(format!("r = {} must be a multiple of W + 1 = {}", self.r, self.w + 1));
        }
        if !(self.sigma_n_sq >= 0.0) || !self.sigma_n_sq.is_finite() {
            return bad(format!("noise variance must be finite and nonnegative, got {}", self.sigma_n_sq));
        }
        Ok(())
    }

    pub fn beta(&self) -> f64 {
        self.k as f64 / self.n as f64
    }

    /// `K/N_init`, zero for the known-symbol initialization.
    pub fn beta_init(&self) -> f64 {
        self.n_init.map_or(0.0, |m| self.k as f64 / m as f64)
    }

    /// Load `beta_l` of function position `l`.
    pub fn beta_at(&self, l: usize) -> f64 {
        if l < self.w {
            self.beta_init()
        } else {
            self.beta()
        }
    }

    /// Row count `N_l` of function position `l`.
    pub fn rows_at(&self, l: usize) -> usize {
        if l < self.w {
            self.n_init.unwrap_or(self.n)
        } else {
            self.n
        }
    }

    /// Whether the symbols at position `l'` are known to the receiver.
    pub fn is_known_position(&self, l_prime: usize) -> bool {
        self.n_init.is_none() && l_prime < self.w
    }

    pub fn total_rows(&self) -> usize {
        (0..self.l).map(|l| self.rows_at(l)).sum()
    }

    pub fn total_symbols(&self) -> usize {
        self.k * self.l
    }

    pub fn block_row_weight(&self) -> usize {
        self.r / (self.w + 1)
    }
}

/// Average system load `KL / (N_init W + N (L - W))`; `N_init = inf` contributes
/// an infinite chip count, so the result is 0 whenever `W > 0`.
pub fn average_load(config: &SystemConfig) -> f64 {
    let kl = (config.k * config.l) as f64;
    match config.n_init {
        None if config.w > 0 => 0.0,
        _ => {
            let n_init = config.n_init.unwrap_or(config.n) as f64;
            kl / (n_init * config.w as f64 + config.n as f64 * (config.l - config.w) as f64)
        }
    }
}

/// Sparse ±1 matrix with exact row weight and quasi-regular column weights.
/// Entries are sorted by `(row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSpreadingMatrix {
    pub rows: usize,
    pub cols: usize,
    pub row_weight: usize,
    pub entries: Vec<(u32, u32, i8)>,
    /// `1/sqrt(c_bar)` with `c_bar = r N / K`.
    pub norm_scale: f64,
}

impl SparseSpreadingMatrix {
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn column_weights(&self) -> Vec<usize> {
        let mut w = vec![0; self.cols];
        for &(_, c, _) in &self.entries {
            w[c as usize] += 1;
        }
        w
    }

    pub fn row_weights(&self) -> Vec<usize> {
        let mut w = vec![0; self.rows];
        for &(r, _, _) in &self.entries {
            w[r as usize] += 1;
        }
        w
    }

    /// Average column weight `r N / K`.
    pub fn average_column_weight(&self) -> f64 {
        (self.row_weight * self.rows) as f64 / self.cols as f64
    }
}

const MAX_SWAP_ATTEMPTS: usize = 100;
const MAX_RESHUFFLES: usize = 10_000;

/// Samples an `r`-quasi-regular `N x K` matrix with a seeded generator.
pub fn sample_quasi_regular(k: usize, n: usize, r: usize, rng_seed: u64) -> Result<SparseSpreadingMatrix> {
    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    sample_quasi_regular_with(k, n, r, &mut rng)
}

/// Samples an `r`-quasi-regular matrix drawing from `rng`.
///
/// Heavy columns are a uniform random subset; the support comes from stub
/// matching with double edges repaired by random stub swaps (up to 100 per
/// conflict) and a full reshuffle when repair fails.
pub fn sample_quasi_regular_with<R: Rng + ?Sized>(
    k: usize,
    n: usize,
    r: usize,
    rng: &mut R,
) -> Result<SparseSpreadingMatrix> {
    if k == 0 || n == 0 || r == 0 {
        return Err(Error::InvalidConfig(format!("K, N, r must be positive (got {k}, {n}, {r})")));
    }
    if r * n < k {
        return Err(Error::InvalidConfig(format!("rN = {} is below K = {k}; some columns would be empty", r * n)));
    }
    if r > k {
        return Err(Error::InvalidConfig(format!("row weight r = {r} exceeds the column count K = {k}")));
    }
    let stubs = r * n;
    let c = stubs / k;
    let heavy = stubs - c * k;
    let mut col_weights = vec![c; k];
    for i in index::sample(rng, k, heavy) {
        col_weights[i] += 1;
    }
    let mut cols: Vec<u32> = Vec::with_capacity(stubs);
    for (j, &wt) in col_weights.iter().enumerate() {
        cols.extend(std::iter::repeat_n(j as u32, wt));
    }

    'reshuffle: for _ in 0..MAX_RESHUFFLES {
        cols.shuffle(rng);
        for row in 0..n {
            for a in 0..r {
                let pos = row * r + a;
                if !has_duplicate(&cols[row * r..row * r + r], a) {
                    continue;
                }
                let mut fixed = false;
                for _ in 0..MAX_SWAP_ATTEMPTS {
                    let other = rng.random_range(0..stubs);
                    let other_row = other / r;
                    if other_row == row {
                        continue;
                    }
                    let (x, y) = (cols[pos], cols[other]);
                    let row_ok = !cols[row * r..row * r + r].contains(&y);
                    let other_ok = !cols[other_row * r..other_row * r + r].contains(&x);
                    if row_ok && other_ok {
                        cols.swap(pos, other);
                        fixed = true;
                        break;
                    }
                }
                if !fixed {
                    continue 'reshuffle;
                }
            }
        }
        let mut entries: Vec<(u32, u32, i8)> = cols
            .iter()
            .enumerate()
            .map(|(i, &col)| ((i / r) as u32, col, if rng.random::<bool>() { 1 } else { -1 }))
            .collect();
        entries.sort_unstable_by_key(|e| (e.0, e.1));
        let c_bar = stubs as f64 / k as f64;
        return Ok(SparseSpreadingMatrix { rows: n, cols: k, row_weight: r, entries, norm_scale: 1.0 / c_bar.sqrt() });
    }
    Err(Error::NotConverged(format!("stub matching failed for K={k}, N={n}, r={r}")))
}

fn has_duplicate(row: &[u32], a: usize) -> bool {
    row[..a].contains(&row[a])
}

/// Band-circulant coupled matrix. `blocks[l * L + l']` holds block `(l, l')`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledSpreadingMatrix {
    pub config: SystemConfig,
    pub blocks: Vec<Option<SparseSpreadingMatrix>>,
    /// `1/sqrt(W+1)`.
    pub coupling_gain: f64,
}

impl CoupledSpreadingMatrix {
    pub fn block(&self, l: usize, l_prime: usize) -> Option<&SparseSpreadingMatrix> {
        self.blocks[l * self.config.l + l_prime].as_ref()
    }

    /// First global row of each function position, plus the total at the end.
    pub fn row_offsets(&self) -> Vec<usize> {
        row_offsets(&self.config)
    }

    /// Row weights of the full stacked matrix.
    pub fn full_row_weights(&self) -> Vec<usize> {
        let offsets = self.row_offsets();
        let mut weights = vec![0; *offsets.last().unwrap()];
        for l in 0..self.config.l {
            for l_prime in 0..self.config.l {
                if let Some(b) = self.block(l, l_prime) {
                    for &(row, _, _) in &b.entries {
                        weights[offsets[l] + row as usize] += 1;
                    }
                }
            }
        }
        weights
    }

    /// Entries as `(global row, global col, signed gain)` triples.
    pub fn global_entries(&self) -> Vec<(usize, usize, f64)> {
        let cfg = &self.config;
        let offsets = self.row_offsets();
        let mut out = Vec::new();
        for l in 0..cfg.l {
            for l_prime in 0..cfg.l {
                if let Some(b) = self.block(l, l_prime) {
                    let gain = b.norm_scale * self.coupling_gain;
                    for &(row, col, sign) in &b.entries {
                        out.push((offsets[l] + row as usize, l_prime * cfg.k + col as usize, sign as f64 * gain));
                    }
                }
            }
        }
        out.sort_unstable_by_key(|e| (e.0, e.1));
        out
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        let c = &self.config;
        writeln!(out, "{} {} {} {} {}", c.k, c.n, c.r, c.l, c.w)?;
        match c.n_init {
            Some(m) => writeln!(out, "# n_init {m}")?,
            None => writeln!(out, "# n_init inf")?,
        }
        writeln!(out, "# sigma_n_sq {:?}", c.sigma_n_sq)?;
        for (row, col, sign) in self.signed_entries() {
            writeln!(out, "{row} {col} {sign}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = loop {
            match lines.next() {
                Some(line) => {
                    let line = line?;
                    if !line.trim().is_empty() {
                        break line;
                    }
                }
                None => return Err(Error::Parse("missing header line".into())),
            }
        };
        let h: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad header field {t:?}"))))
            .collect::<Result<_>>()?;
        if h.len() != 5 {
            return Err(Error::Parse(format!("header needs 5 fields, got {}", h.len())));
        }
        let mut config = SystemConfig { k: h[0], n: h[1], n_init: Some(h[1]), r: h[2], l: h[3], w: h[4], sigma_n_sq: 1.0 };
        let mut triples = Vec::new();
        for line in lines {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if let Some(rest) = t.strip_prefix('#') {
                let mut it = rest.split_whitespace();
                match (it.next(), it.next()) {
                    (Some("n_init"), Some("inf")) => config.n_init = None,
                    (Some("n_init"), Some(v)) => {
                        config.n_init = Some(v.parse().map_err(|_| Error::Parse(format!("bad n_init {v:?}")))?)
                    }
                    (Some("sigma_n_sq"), Some(v)) => {
                        config.sigma_n_sq = v.parse().map_err(|_| Error::Parse(format!("bad sigma_n_sq {v:?}")))?
                    }
                    _ => {}
                }
                continue;
            }
            let f: Vec<&str> = t.split_whitespace().collect();
            if f.len() != 3 {
                return Err(Error::Parse(format!("expected 'row col sign', got {t:?}")));
            }
            let row: usize = f[0].parse().map_err(|_| Error::Parse(format!("bad row in {t:?}")))?;
            let col: usize = f[1].parse().map_err(|_| Error::Parse(format!("bad col in {t:?}")))?;
            let sign: i8 = f[2].parse().map_err(|_| Error::Parse(format!("bad sign in {t:?}")))?;
            triples.push((row, col, sign));
        }
        Self::from_signed_entries(config, &triples)
    }

    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        let c = &self.config;
        out.write_all(b"SCSM")?;
        out.write_all(&1u32.to_le_bytes())?;
        for v in [c.k, c.n, c.r, c.l, c.w] {
            out.write_all(&(v as u64).to_le_bytes())?;
        }
        out.write_all(&c.n_init.map_or(u64::MAX, |m| m as u64).to_le_bytes())?;
        out.write_all(&c.sigma_n_sq.to_le_bytes())?;
        let entries = self.signed_entries();
        out.write_all(&(entries.len() as u64).to_le_bytes())?;
        for (row, col, sign) in entries {
            out.write_all(&(row as u32).to_le_bytes())?;
            out.write_all(&(col as u32).to_le_bytes())?;
            out.write_all(&sign.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != b"SCSM" {
            return Err(Error::Parse("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        input.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != 1 {
            return Err(Error::Parse(format!("unsupported version {version}")));
        }
        let mut b8 = [0u8; 8];
        let mut next_u64 = |input: &mut R| -> Result<u64> {
            input.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8))
        };
        let mut f = [0usize; 5];
        for v in f.iter_mut() {
            *v = next_u64(&mut input)? as usize;
        }
        let n_init = next_u64(&mut input)?;
        let sigma_n_sq = f64::from_bits(next_u64(&mut input)?);
        let count = next_u64(&mut input)? as usize;
        let config = SystemConfig {
            k: f[0],
            n: f[1],
            n_init: if n_init == u64::MAX { None } else { Some(n_init as usize) },
            r: f[2],
            l: f[3],
            w: f[4],
            sigma_n_sq,
        };
        let mut triples = Vec::with_capacity(count.min(1 << 26));
        let mut rec = [0u8; 9];
        for _ in 0..count {
            input.read_exact(&mut rec)?;
            let row = u32::from_le_bytes(rec[0..4].try_into().unwrap()) as usize;
            let col = u32::from_le_bytes(rec[4..8].try_into().unwrap()) as usize;
            triples.push((row, col, rec[8] as i8));
        }
        Self::from_signed_entries(config, &triples)
    }

    fn signed_entries(&self) -> Vec<(usize, usize, i8)> {
        let cfg = &self.config;
        let offsets = self.row_offsets();
        let mut out = Vec::new();
        for l in 0..cfg.l {
            for l_prime in 0..cfg.l {
                if let Some(b) = self.block(l, l_prime) {
                    for &(row, col, sign) in &b.entries {
                        out.push((offsets[l] + row as usize, l_prime * cfg.k + col as usize, sign));
                    }
                }
            }
        }
        out.sort_unstable_by_key(|e| (e.0, e.1));
        out
    }

    /// Rebuilds a coupled matrix from global `(row, col, sign)` triples,
    /// checking the band structure.
    pub fn from_signed_entries(config: SystemConfig, triples: &[(usize, usize, i8)]) -> Result<Self> {
        config.validate()?;
        let offsets = row_offsets(&config);
        let total_rows = *offsets.last().unwrap();
        let (big_l, k) = (config.l, config.k);
        let mut per_block: Vec<Vec<(u32, u32, i8)>> = vec![Vec::new(); big_l * big_l];
        for &(row, col, sign) in triples {
            if row >= total_rows || col >= k * big_l {
                return Err(Error::Parse(format!("entry ({row}, {col}) out of range")));
            }
            if sign != 1 && sign != -1 {
                return Err(Error::Parse(format!("sign must be +1 or -1, got {sign}")));
            }
            let l = offsets.partition_point(|&o| o <= row) - 1;
            let l_prime = col / k;
            if !in_band(l, l_prime, &config) {
                return Err(Error::Parse(format!("entry ({row}, {col}) lies outside the coupling band")));
            }
            per_block[l * big_l + l_prime].push(((row - offsets[l]) as u32, (col % k) as u32, sign));
        }
        let rb = config.block_row_weight();
        let mut blocks = Vec::with_capacity(big_l * big_l);
        for (idx, mut entries) in per_block.into_iter().enumerate() {
            let (l, l_prime) = (idx / big_l, idx % big_l);
            if !in_band(l, l_prime, &config) {
                blocks.push(None);
                continue;
            }
            entries.sort_unstable_by_key(|e| (e.0, e.1));
            let rows = config.rows_at(l);
            let c_bar = (rb * rows) as f64 / k as f64;
            blocks.push(Some(SparseSpreadingMatrix { rows, cols: k, row_weight: rb, entries, norm_scale: 1.0 / c_bar.sqrt() }));
        }
        Ok(CoupledSpreadingMatrix { config, blocks, coupling_gain: 1.0 / ((config.w + 1) as f64).sqrt() })
    }
}

fn row_offsets(config: &SystemConfig) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(config.l + 1);
    let mut acc = 0;
    offsets.push(0);
    for l in 0..config.l {
        acc += config.rows_at(l);
        offsets.push(acc);
    }
    offsets
}

/// Remainder `(x)_m` in `0..m` for possibly negative `x`.
pub fn circular(x: isize, m: usize) -> usize {
    x.rem_euclid(m as isize) as usize
}

fn in_band(l: usize, l_prime: usize, config: &SystemConfig) -> bool {
    circular(l as isize - l_prime as isize, config.l) <= config.w
}

/// Samples a coupled matrix. Blocks are drawn from one generator in the
/// order `l = 0..L`, `w = 0..=W` with `l' = (l - w) mod L`.
pub fn sample_coupled(config: &SystemConfig, rng_seed: u64) -> Result<CoupledSpreadingMatrix> {
    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    sample_coupled_with(config, &mut rng)
}

pub fn sample_coupled_with<R: Rng + ?Sized>(config: &SystemConfig, rng: &mut R) -> Result<CoupledSpreadingMatrix> {
    config.validate()?;
    let big_l = config.l;
    let rb = config.block_row_weight();
    let mut blocks = vec![None; big_l * big_l];
    for l in 0..big_l {
        for w in 0..=config.w {
            let l_prime = circular(l as isize - w as isize, big_l);
            blocks[l * big_l + l_prime] = Some(sample_quasi_regular_with(config.k, config.rows_at(l), rb, rng)?);
        }
    }
    Ok(CoupledSpreadingMatrix { config: *config, blocks, coupling_gain: 1.0 / ((config.w + 1) as f64).sqrt() })
}

/// Bipartite factor graph. Variable `l' * K + k`; function nodes are global
/// rows. Edges are grouped by function node in row order.
#[derive(Debug, Clone)]
pub struct FactorGraph {
    pub config: SystemConfig,
    pub edge_var: Vec<u32>,
    pub edge_fn: Vec<u32>,
    /// Signed gain `s / sqrt((W+1) c_bar_l)`.
    pub edge_gain: Vec<f64>,
    /// CSR offsets into the edge arrays per function node.
    pub fn_offsets: Vec<usize>,
    /// CSR offsets into `var_edge_list` per variable.
    pub var_offsets: Vec<usize>,
    pub var_edge_list: Vec<u32>,
    /// Function position `l` of each function node.
    pub fn_position: Vec<u32>,
}

impl FactorGraph {
    pub fn num_vars(&self) -> usize {
        self.var_offsets.len() - 1
    }

    pub fn num_fns(&self) -> usize {
        self.fn_offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.edge_var.len()
    }

    pub fn fn_edges(&self, f: usize) -> std::ops::Range<usize> {
        self.fn_offsets[f]..self.fn_offsets[f + 1]
    }

    pub fn var_edges(&self, v: usize) -> &[u32] {
        &self.var_edge_list[self.var_offsets[v]..self.var_offsets[v + 1]]
    }

    /// Position `l'` of variable `v`.
    pub fn var_position(&self, v: usize) -> usize {
        v / self.config.k
    }

    /// Recovers the matrix the graph was built from.
    pub fn to_matrix(&self) -> Result<CoupledSpreadingMatrix> {
        let triples: Vec<(usize, usize, i8)> = (0..self.num_edges())
            .map(|e| (self.edge_fn[e] as usize, self.edge_var[e] as usize, if self.edge_gain[e] > 0.0 { 1 } else { -1 }))
            .collect();
        CoupledSpreadingMatrix::from_signed_entries(self.config, &triples)
    }
}

pub fn to_factor_graph(matrix: &CoupledSpreadingMatrix) -> FactorGraph {
    let cfg = matrix.config;
    let entries = matrix.global_entries();
    let offsets = matrix.row_offsets();
    let num_fns = *offsets.last().unwrap();
    let num_vars = cfg.k * cfg.l;
    let mut edge_var = Vec::with_capacity(entries.len());
    let mut edge_fn = Vec::with_capacity(entries.len());
    let mut edge_gain = Vec::with_capacity(entries.len());
    let mut fn_offsets = vec![0usize; num_fns + 1];
    for &(row, col, gain) in &entries {
        edge_fn.push(row as u32);
        edge_var.push(col as u32);
        edge_gain.push(gain);
        fn_offsets[row + 1] += 1;
    }
    for f in 0..num_fns {
        fn_offsets[f + 1] += fn_offsets[f];
    }
    let mut var_offsets = vec![0usize; num_vars + 1];
    for &v in &edge_var {
        var_offsets[v as usize + 1] += 1;
    }
    for v in 0..num_vars {
        var_offsets[v + 1] += var_offsets[v];
    }
    let mut fill = var_offsets.clone();
    let mut var_edge_list = vec![0u32; edge_var.len()];
    for (e, &v) in edge_var.iter().enumerate() {
        var_edge_list[fill[v as usize]] = e as u32;
        fill[v as usize] += 1;
    }
    let mut fn_position = vec![0u32; num_fns];
    for l in 0..cfg.l {
        for p in fn_position.iter_mut().take(offsets[l + 1]).skip(offsets[l]) {
            *p = l as u32;
        }
    }
    FactorGraph { config: cfg, edge_var, edge_fn, edge_gain, fn_offsets, var_offsets, var_edge_list, fn_position }
}

/// Single-position graph of a quasi-regular matrix (`L = 1`, `W = 0`).
pub fn quasi_regular_graph(matrix: &SparseSpreadingMatrix, sigma_n_sq: f64) -> FactorGraph {
    let config = SystemConfig {
        k: matrix.cols,
        n: matrix.rows,
        n_init: Some(matrix.rows),
        r: matrix.row_weight,
        l: 1,
        w: 0,
        sigma_n_sq,
    };
    let coupled = CoupledSpreadingMatrix { config, blocks: vec![Some(matrix.clone())], coupling_gain: 1.0 };
    to_factor_graph(&coupled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};

    fn audit(m: &SparseSpreadingMatrix) {
        let (k, n, r) = (m.cols, m.rows, m.row_weight);
        assert!(m.row_weights().iter().all(|&w| w == r));
        let c = r * n / k;
        let cw = m.column_weights();
        assert!(cw.iter().all(|&w| w == c || w == c + 1));
        assert_eq!(cw.iter().filter(|&&w| w == c + 1).count(), r * n - c * k);
        let mut seen = std::collections::HashSet::new();
        for &(row, col, sign) in &m.entries {
            assert!(seen.insert((row, col)), "double edge");
            assert!(sign == 1 || sign == -1);
        }
    }

    #[test]
    fn small_quasi_regular_example() {
        let m = sample_quasi_regular(8, 6, 2, 0).unwrap();
        assert_eq!(m.nnz(), 12);
        let cw = m.column_weights();
        assert_eq!(cw.iter().filter(|&&w| w == 2).count(), 4);
        assert_eq!(cw.iter().filter(|&&w| w == 1).count(), 4);
        audit(&m);
        let g = quasi_regular_graph(&m, 0.1);
        assert_eq!((g.num_vars(), g.num_fns(), g.num_edges()), (8, 6, 12));
    }

    #[test]
    fn regular_special_case() {
        let m = sample_quasi_regular(10, 10, 3, 4).unwrap();
        assert!(m.column_weights().iter().all(|&w| w == 3));
        let m = sample_quasi_regular(100, 50, 8, 1).unwrap();
        let cw = m.column_weights();
        assert_eq!(cw.iter().filter(|&&w| w == 4).count(), 100);
    }

    #[test]
    fn rejects_underfull_column_budget() {
        assert!(matches!(sample_quasi_regular(10, 3, 3, 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn degree_audit_on_random_configs() {
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        for t in 0..100 {
            let k: usize = rng.random_range(2..120);
            let r = rng.random_range(1..=(k / 2).clamp(1, 12));
            let n_min = k.div_ceil(r);
            let n = rng.random_range(n_min..n_min + 80);
            audit(&sample_quasi_regular(k, n, r, t).unwrap());
        }
    }

    #[test]
    fn sign_balance() {
        let mut sum = 0i64;
        let mut count = 0usize;
        let mut seed = 0;
        while count < 100_000 {
            let m = sample_quasi_regular(500, 250, 8, seed).unwrap();
            sum += m.entries.iter().map(|e| e.2 as i64).sum::<i64>();
            count += m.nnz();
            seed += 1;
        }
        let mean = sum as f64 / count as f64;
        assert!(mean.abs() < 4.0 / (count as f64).sqrt());
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = SystemConfig { k: 16, n: 8, n_init: Some(16), r: 4, l: 4, w: 1, sigma_n_sq: 0.1 };
        assert_eq!(sample_coupled(&cfg, 3).unwrap(), sample_coupled(&cfg, 3).unwrap());
        assert_ne!(sample_coupled(&cfg, 3).unwrap(), sample_coupled(&cfg, 4).unwrap());
    }

    #[test]
    fn coupled_block_structure() {
        let cfg = SystemConfig { k: 6, n: 6, n_init: Some(6), r: 3, l: 9, w: 2, sigma_n_sq: 0.1 };
        let m = sample_coupled(&cfg, 1).unwrap();
        for l in 0..9 {
            for lp in 0..9 {
                let d = (l as isize - lp as isize).rem_euclid(9) as usize;
                match m.block(l, lp) {
                    Some(b) => {
                        assert!(d <= 2);
                        assert!(b.row_weights().iter().all(|&w| w == 1));
                    }
                    None => assert!(d > 2),
                }
            }
        }
        assert_eq!(circular(-1, 9), 8);
    }

    #[test]
    fn uncoupled_is_block_diagonal() {
        let cfg = SystemConfig { k: 20, n: 10, n_init: Some(10), r: 4, l: 3, w: 0, sigma_n_sq: 0.1 };
        let m = sample_coupled(&cfg, 2).unwrap();
        for l in 0..3 {
            for lp in 0..3 {
                assert_eq!(m.block(l, lp).is_some(), l == lp);
            }
            audit(m.block(l, l).unwrap());
        }
    }

    #[test]
    fn full_row_weight_audit() {
        let cfg = SystemConfig { k: 16, n: 8, n_init: Some(16), r: 4, l: 4, w: 1, sigma_n_sq: 0.1 };
        let m = sample_coupled(&cfg, 7).unwrap();
        let w = m.full_row_weights();
        // N_init rows at position 0, N rows at positions 1..3.
        assert_eq!(w.len(), 16 + 3 * 8);
        assert!(w.iter().all(|&x| x == 4));
    }

    #[test]
    fn rejects_incompatible_row_weight() {
        let cfg = SystemConfig { k: 16, n: 8, n_init: Some(8), r: 3, l: 4, w: 1, sigma_n_sq: 0.1 };
        assert!(matches!(sample_coupled(&cfg, 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn average_load_formula() {
        let cfg = SystemConfig::from_loads(2048, 2.0, 1.4, 32, 16, 1, 0.1).unwrap();
        let direct = 1.0 / ((1.0 / 1.4) * (1.0 / 16.0) + 0.5 * (15.0 / 16.0));
        // N = 1024 exactly; N_init rounds 1462.857 to 1463.
        let exact = (2048.0 * 16.0) / (1463.0 * 1.0 + 1024.0 * 15.0);
        assert!((average_load(&cfg) - exact).abs() < 1e-12);
        assert!((average_load(&cfg) - direct).abs() < 1e-3);
        let same = SystemConfig { n_init: Some(cfg.n), ..cfg };
        assert!((average_load(&same) - same.beta()).abs() < 1e-12);
        let wide = SystemConfig { l: 4096, ..cfg };
        assert!((average_load(&wide) - wide.beta()).abs() < 1e-3);
    }

    #[test]
    fn factor_graph_single_edge() {
        let cfg = SystemConfig { k: 1, n: 1, n_init: Some(1), r: 1, l: 1, w: 0, sigma_n_sq: 0.1 };
        let m = CoupledSpreadingMatrix::from_signed_entries(cfg, &[(0, 0, -1)]).unwrap();
        let g = to_factor_graph(&m);
        assert_eq!((g.num_vars(), g.num_fns(), g.num_edges()), (1, 1, 1));
        assert_eq!(g.edge_gain[0], -1.0);
    }

    #[test]
    fn factor_graph_counts_and_round_trip() {
        let cfg = SystemConfig { k: 30, n: 15, n_init: Some(20), r: 6, l: 5, w: 2, sigma_n_sq: 0.1 };
        let m = sample_coupled(&cfg, 5).unwrap();
        let g = to_factor_graph(&m);
        let sum_rows: usize = (0..cfg.l).map(|l| cfg.rows_at(l)).sum();
        assert_eq!(g.num_edges(), cfg.r * sum_rows);
        for f in 0..g.num_fns() {
            assert_eq!(g.fn_edges(f).len(), cfg.r);
        }
        for v in 0..g.num_vars() {
            for &e in g.var_edges(v) {
                assert_eq!(g.edge_var[e as usize] as usize, v);
            }
        }
        // Squared gains on each function node sum to beta_l.
        for f in 0..g.num_fns() {
            let p: f64 = g.fn_edges(f).map(|e| g.edge_gain[e].powi(2)).sum();
            let l = g.fn_position[f] as usize;
            let rows = cfg.rows_at(l) as f64;
            assert!((p - cfg.k as f64 / rows).abs() < 1e-12);
        }
        assert_eq!(g.to_matrix().unwrap(), m);
    }

    #[test]
    fn text_and_binary_round_trip() {
        let cfg = SystemConfig { k: 12, n: 8, n_init: None, r: 4, l: 4, w: 1, sigma_n_sq: 0.123 };
        let m = sample_coupled(&cfg, 9).unwrap();
        let mut text = Vec::new();
        m.write_text(&mut text).unwrap();
        assert_eq!(CoupledSpreadingMatrix::read_text(&text[..]).unwrap(), m);
        let mut bin = Vec::new();
        m.write_binary(&mut bin).unwrap();
        assert_eq!(CoupledSpreadingMatrix::read_binary(&bin[..]).unwrap(), m);
        assert!(CoupledSpreadingMatrix::read_binary(&b"XXXX"[..]).is_err());
    }

    #[test]
    fn text_without_extension_lines() {
        let text = "2 2 1 1 0\n0 0 1\n1 1 -1\n";
        let m = CoupledSpreadingMatrix::read_text(text.as_bytes()).unwrap();
        assert_eq!(m.config.n_init, Some(2));
        assert_eq!(m.block(0, 0).unwrap().entries, vec![(0, 0, 1), (1, 1, -1)]);
    }

    proptest! {
        #[test]
        fn coupled_row_weight_is_exact(k in 2usize..40, extra in 0usize..20, w in 0usize..3, l_extra in 1usize..4, seed in 0u64..1000) {
            let l = w + l_extra;
            let rb = 2usize.min(k);
            let r = rb * (w + 1);
            let n = k.div_ceil(rb) + extra;
            let cfg = SystemConfig { k, n, n_init: Some(n + 3), r, l, w, sigma_n_sq: 0.1 };
            let m = sample_coupled(&cfg, seed).unwrap();
            prop_assert!(m.full_row_weights().iter().all(|&x| x == r));
            for l in 0..l {
                for lp in 0..l {
                    if let Some(b) = m.block(l, lp) { audit(b); }
                }
            }
        }
    }
}
