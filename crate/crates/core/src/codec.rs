//! A small LDPC toolkit: alist I/O, systematic GF(2) encoding, normalized
//! min-sum decoding, and the uncoded block-error check.
//!
//! LLRs follow the detector convention: positive means bit 1.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.75;
pub const DEFAULT_MAX_ITER: usize = 50;

/// Sparse parity-check matrix with row and column adjacency (0-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParityCheckMatrix {
    rows: usize,
    cols: usize,
    row_adj: Vec<Vec<usize>>,
    col_adj: Vec<Vec<usize>>,
}

impl ParityCheckMatrix {
    /// Builds from the column lists of every row.
    pub fn from_rows(cols: usize, row_adj: Vec<Vec<usize>>) -> Result<Self> {
        let rows = row_adj.len();
        if rows == 0 || cols <= rows {
            return Err(Error::InvalidArgument(format!("need 0 < rows < cols, got {rows}x{cols}")));
        }
        let mut col_adj = vec![Vec::new(); cols];
        for (r, adj) in row_adj.iter().enumerate() {
            if adj.is_empty() {
                return Err(Error::InvalidArgument(format!("row {r} is empty")));
            }
            for (i, &c) in adj.iter().enumerate() {
                if c >= cols {
                    return Err(Error::InvalidArgument(format!("row {r} names column {c} of {cols}")));
                }
                if adj[..i].contains(&c) {
                    return Err(Error::InvalidArgument(format!("row {r} lists column {c} twice")));
                }
                col_adj[c].push(r);
            }
        }
        if let Some(c) = col_adj.iter().position(Vec::is_empty) {
            return Err(Error::InvalidArgument(format!("column {c} is empty")));
        }
        Ok(ParityCheckMatrix {
            rows,
            cols,
            row_adj,
            col_adj,
        })
    }

    pub fn from_dense(dense: &[Vec<u8>]) -> Result<Self> {
        let cols = dense.first().map_or(0, Vec::len);
        if dense.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged dense matrix".into()));
        }
        let rows = dense
            .iter()
            .map(|r| r.iter().enumerate().filter(|(_, &b)| b & 1 == 1).map(|(c, _)| c).collect())
            .collect();
        Self::from_rows(cols, rows)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[usize] {
        &self.row_adj[r]
    }

    pub fn col(&self, c: usize) -> &[usize] {
        &self.col_adj[c]
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        let mut d = vec![vec![0u8; self.cols]; self.rows];
        for (r, adj) in self.row_adj.iter().enumerate() {
            for &c in adj {
                d[r][c] = 1;
            }
        }
        d
    }

    pub fn syndrome_is_zero(&self, bits: &[u8]) -> bool {
        self.row_adj
            .iter()
            .all(|adj| adj.iter().fold(0u8, |acc, &c| acc ^ (bits[c] & 1)) == 0)
    }

    pub fn load_alist(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_alist(&text, path)
    }

    /// Parses the alist text format. Errors carry the 1-based line number.
    pub fn parse_alist(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let mut next = |what: &str| -> Result<(usize, Vec<usize>)> {
            let (no, line) = lines
                .next()
                .ok_or_else(|| Error::parse(path, 0, format!("unexpected end of file reading {what}")))?;
            let nums = line
                .split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|_| Error::parse(path, no, format!("bad integer '{t}' in {what}"))))
                .collect::<Result<Vec<_>>>()?;
            Ok((no, nums))
        };
        let expect_len = |no: usize, v: &[usize], n: usize, what: &str| -> Result<()> {
            if v.len() == n {
                Ok(())
            } else {
                Err(Error::parse(path, no, format!("{what}: expected {n} entries, found {}", v.len())))
            }
        };

        let (no, dims) = next("dimensions")?;
        expect_len(no, &dims, 2, "dimensions")?;
        let (n, m) = (dims[0], dims[1]);
        let (no, maxdeg) = next("maximum degrees")?;
        expect_len(no, &maxdeg, 2, "maximum degrees")?;
        let (no, col_deg) = next("column degrees")?;
        expect_len(no, &col_deg, n, "column degrees")?;
        if col_deg.iter().any(|&d| d > maxdeg[0]) {
            return Err(Error::parse(path, no, "column degree above the declared maximum"));
        }
        let (no, row_deg) = next("row degrees")?;
        expect_len(no, &row_deg, m, "row degrees")?;
        if row_deg.iter().any(|&d| d > maxdeg[1]) {
            return Err(Error::parse(path, no, "row degree above the declared maximum"));
        }

        let read_lists = |count: usize,
                          bound: usize,
                          degs: &[usize],
                          what: &str,
                          next: &mut dyn FnMut(&str) -> Result<(usize, Vec<usize>)>|
         -> Result<Vec<(usize, Vec<usize>)>> {
            (0..count)
                .map(|i| {
                    let (no, raw) = next(what)?;
                    let list: Vec<usize> = raw.iter().copied().filter(|&v| v != 0).collect();
                    if list.len() != degs[i] {
                        return Err(Error::parse(
                            path,
                            no,
                            format!("{what} {}: degree mismatch ({} listed, {} declared)", i + 1, list.len(), degs[i]),
                        ));
                    }
                    if let Some(&bad) = list.iter().find(|&&v| v > bound) {
                        return Err(Error::parse(path, no, format!("{what} {}: index {bad} out of range", i + 1)));
                    }
                    Ok((no, list.into_iter().map(|v| v - 1).collect()))
                })
                .collect()
        };
        let cols = read_lists(n, m, &col_deg, "column", &mut next)?;
        let rows = read_lists(m, n, &row_deg, "row", &mut next)?;

        // both halves must describe the same matrix
        for (c, (no, list)) in cols.iter().enumerate() {
            for &r in list {
                if !rows[r].1.contains(&c) {
                    return Err(Error::parse(path, *no, format!("column {} lists row {} but not vice versa", c + 1, r + 1)));
                }
            }
        }
        let row_adj: Vec<Vec<usize>> = rows.into_iter().map(|(_, l)| l).collect();
        let nnz_rows: usize = row_adj.iter().map(Vec::len).sum();
        let nnz_cols: usize = cols.iter().map(|(_, l)| l.len()).sum();
        if nnz_rows != nnz_cols {
            return Err(Error::parse(path, 0, "row and column lists disagree"));
        }
        Self::from_rows(n, row_adj).map_err(|e| Error::parse(path, 0, e.to_string()))
    }

    /// alist text with zero padding up to the maximum degree.
    pub fn to_alist(&self) -> String {
        let max_col = self.col_adj.iter().map(Vec::len).max().unwrap_or(0);
        let max_row = self.row_adj.iter().map(Vec::len).max().unwrap_or(0);
        let join = |v: &mut dyn Iterator<Item = usize>| v.map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.cols, self.rows);
        let _ = writeln!(s, "{max_col} {max_row}");
        let _ = writeln!(s, "{}", join(&mut self.col_adj.iter().map(Vec::len)));
        let _ = writeln!(s, "{}", join(&mut self.row_adj.iter().map(Vec::len)));
        for (lists, width) in [(&self.col_adj, max_col), (&self.row_adj, max_row)] {
            for l in lists {
                let padded = l.iter().map(|&v| v + 1).chain(std::iter::repeat(0)).take(width);
                let _ = writeln!(s, "{}", join(&mut padded.into_iter()));
            }
        }
        s
    }

    pub fn write_alist(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_alist()).map_err(|e| Error::io(path, e))
    }
}

/// Systematic encoder from the reduced row-echelon form of `H`.
#[derive(Debug, Clone)]
pub struct Encoder {
    n: usize,
    /// Non-pivot columns, in increasing order; they carry the information bits.
    info: Vec<usize>,
    /// For each pivot column, the information positions (indices into `info`)
    /// whose sum gives its parity bit.
    parity: Vec<(usize, Vec<usize>)>,
}

impl Encoder {
    pub fn new(h: &ParityCheckMatrix) -> Result<Self> {
        let (m, n) = (h.rows(), h.cols());
        let words = n.div_ceil(64);
        let mut rows: Vec<Vec<u64>> = (0..m)
            .map(|r| {
                let mut bits = vec![0u64; words];
                for &c in h.row(r) {
                    bits[c / 64] |= 1 << (c % 64);
                }
                bits
            })
            .collect();
        let get = |row: &[u64], c: usize| (row[c / 64] >> (c % 64)) & 1 == 1;
        let mut pivots = Vec::with_capacity(m);
        let mut rank = 0;
        for c in 0..n {
            if rank == m {
                break;
            }
            let Some(p) = (rank..m).find(|&r| get(&rows[r], c)) else {
                continue;
            };
            rows.swap(rank, p);
            let pivot_row = rows[rank].clone();
            for (r, row) in rows.iter_mut().enumerate() {
                if r != rank && get(row, c) {
                    row.iter_mut().zip(&pivot_row).for_each(|(a, b)| *a ^= b);
                }
            }
            pivots.push(c);
            rank += 1;
        }
        if rank < m {
            return Err(Error::RankDeficient { rank, rows: m });
        }
        let info: Vec<usize> = (0..n).filter(|c| !pivots.contains(c)).collect();
        let parity = pivots
            .iter()
            .zip(&rows)
            .map(|(&p, row)| {
                let deps = info.iter().enumerate().filter(|(_, &c)| get(row, c)).map(|(k, _)| k).collect();
                (p, deps)
            })
            .collect();
        Ok(Encoder { n, info, parity })
    }

    /// Information length `k = n − m`.
    pub fn k(&self) -> usize {
        self.info.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn info_positions(&self) -> &[usize] {
        &self.info
    }

    pub fn encode(&self, info: &[u8]) -> Result<Vec<u8>> {
        if info.len() != self.k() {
            return Err(Error::InvalidArgument(format!("expected {} information bits, got {}", self.k(), info.len())));
        }
        let mut c = vec![0u8; self.n];
        for (&pos, &b) in self.info.iter().zip(info) {
            c[pos] = b & 1;
        }
        for (p, deps) in &self.parity {
            c[*p] = deps.iter().fold(0, |acc, &k| acc ^ (info[k] & 1));
        }
        Ok(c)
    }

    pub fn extract_info(&self, codeword: &[u8]) -> Vec<u8> {
        self.info.iter().map(|&p| codeword[p]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub bits: Vec<u8>,
    /// Zero syndrome reached with every posterior decided (non-zero).
    pub converged: bool,
    pub iterations: usize,
}

/// Flooding normalized min-sum; stops at the first iteration whose hard
/// decisions satisfy every check.
pub fn decode_min_sum(h: &ParityCheckMatrix, llrs: &[f64], max_iter: usize, alpha: f64) -> Result<Decoded> {
    if llrs.len() != h.cols() {
        return Err(Error::InvalidArgument(format!("expected {} LLRs, got {}", h.cols(), llrs.len())));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must be in (0, 1], got {alpha}")));
    }
    // work in the "positive means 0" domain of the usual min-sum formulation
    let prior: Vec<f64> = llrs.iter().map(|&l| -l).collect();
    // edge-indexed messages, edges grouped by row
    let edge_start: Vec<usize> = std::iter::once(0)
        .chain(h.row_adj.iter().scan(0, |acc, r| {
            *acc += r.len();
            Some(*acc)
        }))
        .collect();
    let edges = *edge_start.last().unwrap_or(&0);
    let mut c2v = vec![0.0; edges];
    let mut v2c = vec![0.0; edges];
    let mut post = prior.clone();
    let mut bits = vec![0u8; h.cols()];

    for it in 1..=max_iter {
        for (r, adj) in h.row_adj.iter().enumerate() {
            let e0 = edge_start[r];
            for (i, &c) in adj.iter().enumerate() {
                v2c[e0 + i] = post[c] - c2v[e0 + i];
            }
            let (mut min1, mut min2, mut arg, mut sign) = (f64::INFINITY, f64::INFINITY, 0, 1.0);
            for i in 0..adj.len() {
                let v = v2c[e0 + i];
                let a = v.abs();
                if v < 0.0 {
                    sign = -sign;
                }
                if a < min1 {
                    min2 = min1;
                    min1 = a;
                    arg = i;
                } else if a < min2 {
                    min2 = a;
                }
            }
            for i in 0..adj.len() {
                let v = v2c[e0 + i];
                let mag = if i == arg { min2 } else { min1 };
                let s = if v < 0.0 { -sign } else { sign };
                c2v[e0 + i] = alpha * s * if mag.is_finite() { mag } else { 0.0 };
            }
        }
        post.copy_from_slice(&prior);
        for (r, adj) in h.row_adj.iter().enumerate() {
            for (i, &c) in adj.iter().enumerate() {
                post[c] += c2v[edge_start[r] + i];
            }
        }
        let mut decided = true;
        for (b, &p) in bits.iter_mut().zip(&post) {
            *b = u8::from(p < 0.0);
            decided &= p != 0.0;
        }
        if decided && h.syndrome_is_zero(&bits) {
            return Ok(Decoded {
                bits,
                converged: true,
                iterations: it,
            });
        }
    }
    Ok(Decoded {
        bits,
        converged: false,
        iterations: max_iter,
    })
}

/// Decoder outcome judged against the transmitted information bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockDecision {
    pub bits: Vec<u8>,
    pub converged: bool,
    pub iterations: usize,
    pub block_error: bool,
}

impl BlockDecision {
    pub fn assess(decoded: Decoded, encoder: &Encoder, true_info: &[u8]) -> Self {
        let block_error = encoder.extract_info(&decoded.bits) != true_info;
        BlockDecision {
            bits: decoded.bits,
            converged: decoded.converged,
            iterations: decoded.iterations,
            block_error,
        }
    }
}

/// True iff any hard decision differs from the transmitted bit.
pub fn uncoded_block_error(hard_bits: &[u8], true_bits: &[u8]) -> Result<bool> {
    if hard_bits.len() != true_bits.len() {
        return Err(Error::InvalidArgument(format!(
            "block lengths differ: {} vs {}",
            hard_bits.len(),
            true_bits.len()
        )));
    }
    Ok(hard_bits.iter().zip(true_bits).any(|(a, b)| a != b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const HAMMING: &str = "7 3\n3 4\n1 1 2 1 2 2 3\n4 4 4\n1 0 0\n2 0 0\n1 2 0\n3 0 0\n1 3 0\n2 3 0\n1 2 3\n1 3 5 7\n2 3 6 7\n4 5 6 7\n";

    fn hamming() -> ParityCheckMatrix {
        ParityCheckMatrix::parse_alist(HAMMING, Path::new("hamming.alist")).unwrap()
    }

    #[test]
    fn hamming_alist_parses_and_round_trips() {
        let h = hamming();
        assert_eq!((h.rows(), h.cols()), (3, 7));
        assert_eq!(
            h.to_dense(),
            vec![
                vec![1, 0, 1, 0, 1, 0, 1],
                vec![0, 1, 1, 0, 0, 1, 1],
                vec![0, 0, 0, 1, 1, 1, 1]
            ]
        );
        assert_eq!(h.to_alist(), HAMMING);
    }

    #[test]
    fn alist_errors() {
        let p = Path::new("x");
        let degree = HAMMING.replace("1 1 2 1 2 2 3", "1 1 2 1 2 2 2");
        match ParityCheckMatrix::parse_alist(&degree, p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 11),
            other => panic!("{other:?}"),
        }
        assert!(ParityCheckMatrix::parse_alist("7 3\n3 4\n", p).is_err());
        assert!(ParityCheckMatrix::parse_alist(&HAMMING.replace("4 5 6 7", "4 5 6 x"), p).is_err());
        // column and row halves disagreeing
        assert!(ParityCheckMatrix::parse_alist(&HAMMING.replace("1 3 5 7", "1 3 6 7"), p).is_err());
    }

    #[test]
    fn hamming_codebook_has_distance_three() {
        let h = hamming();
        let enc = Encoder::new(&h).unwrap();
        assert_eq!(enc.k(), 4);
        let mut words = Vec::new();
        for v in 0..16u8 {
            let info: Vec<u8> = (0..4).map(|i| (v >> i) & 1).collect();
            let c = enc.encode(&info).unwrap();
            assert!(h.syndrome_is_zero(&c));
            assert_eq!(enc.extract_info(&c), info);
            words.push(c);
        }
        // exhaustive oracle: all 128 words, keep those with zero syndrome
        let all: Vec<Vec<u8>> = (0..128u8)
            .map(|v| (0..7).map(|i| (v >> i) & 1).collect())
            .filter(|w: &Vec<u8>| h.syndrome_is_zero(w))
            .collect();
        assert_eq!(all.len(), 16);
        for w in &all {
            assert!(words.contains(w));
        }
        let dmin = all.iter().filter(|w| w.iter().any(|&b| b == 1)).map(|w| w.iter().filter(|&&b| b == 1).count()).min();
        assert_eq!(dmin, Some(3));
        assert_eq!(enc.encode(&[0; 4]).unwrap(), vec![0; 7]);
    }

    #[test]
    fn rank_deficient_is_rejected() {
        let h = ParityCheckMatrix::from_dense(&[vec![1, 1, 0, 1], vec![1, 1, 0, 1], vec![0, 1, 1, 0]]).unwrap();
        assert!(matches!(Encoder::new(&h), Err(Error::RankDeficient { rank: 2, rows: 3 })));
    }

    #[test]
    fn random_code_encodes_to_zero_syndrome() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (m, n) = (30, 60);
        let dense: Vec<Vec<u8>> = (0..m).map(|_| (0..n).map(|_| u8::from(rng.gen_bool(0.1))).collect()).collect();
        let mut dense = dense;
        for (r, row) in dense.iter_mut().enumerate() {
            row[r] = 1;
            row[m + r] = 1;
        }
        let h = ParityCheckMatrix::from_dense(&dense).unwrap();
        let enc = Encoder::new(&h).unwrap();
        for _ in 0..200 {
            let info: Vec<u8> = (0..enc.k()).map(|_| rng.gen_range(0..2)).collect();
            assert!(h.syndrome_is_zero(&enc.encode(&info).unwrap()));
        }
    }

    fn llrs_of(c: &[u8], mag: f64) -> Vec<f64> {
        c.iter().map(|&b| if b == 1 { mag } else { -mag }).collect()
    }

    #[test]
    fn decoder_cases() {
        let h = hamming();
        let enc = Encoder::new(&h).unwrap();
        let c = enc.encode(&[1, 0, 1, 1]).unwrap();
        let d = decode_min_sum(&h, &llrs_of(&c, 300.0), 50, 0.75).unwrap();
        assert!(d.converged);
        assert_eq!(d.iterations, 1);
        assert_eq!(d.bits, c);

        // one weak wrong-sign bit
        let mut l = llrs_of(&c, 10.0);
        l[4] = -l[4] * 0.1;
        let d = decode_min_sum(&h, &l, 50, 0.75).unwrap();
        assert!(d.converged);
        assert_eq!(d.bits, c);
        let b = BlockDecision::assess(d, &enc, &[1, 0, 1, 1]);
        assert!(!b.block_error);

        let d = decode_min_sum(&h, &[0.0; 7], 50, 0.75).unwrap();
        assert!(!d.converged);
        assert_eq!(d.iterations, 50);

        assert!(decode_min_sum(&h, &[0.0; 6], 50, 0.75).is_err());
        assert!(decode_min_sum(&h, &[0.0; 7], 50, 0.0).is_err());
    }

    #[test]
    fn uncoded_block_error_cases() {
        assert!(!uncoded_block_error(&[1, 0, 1], &[1, 0, 1]).unwrap());
        assert!(uncoded_block_error(&[1, 0, 1], &[1, 1, 1]).unwrap());
        assert!(!uncoded_block_error(&[], &[]).unwrap());
        assert!(uncoded_block_error(&[1], &[1, 0]).is_err());
    }
}
