//! Bit-packed vectors and matrices over GF(2).

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitVec {
    len: usize,
    words: Vec<u64>,
}

impl BitVec {
    pub fn zeros(len: usize) -> Self {
        BitVec { len, words: vec![0; len.div_ceil(64)] }
    }

    pub fn from_bits(bits: &[u8]) -> Self {
        let mut v = BitVec::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b & 1 == 1 {
                v.set(i, true);
            }
        }
        v
    }

    pub fn from_indices(len: usize, idx: &[usize]) -> Self {
        let mut v = BitVec::zeros(len);
        for &i in idx {
            v.set(i, true);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, on: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let m = 1u64 << (i % 64);
        if on {
            self.words[i / 64] |= m;
        } else {
            self.words[i / 64] &= !m;
        }
    }

    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len);
        self.words[i / 64] ^= 1u64 << (i % 64);
    }

    pub fn xor_assign(&mut self, o: &BitVec) {
        assert_eq!(self.len, o.len);
        for (a, b) in self.words.iter_mut().zip(&o.words) {
            *a ^= b;
        }
    }

    /// Inner product over GF(2).
    pub fn dot(&self, o: &BitVec) -> bool {
        assert_eq!(self.len, o.len);
        self.words.iter().zip(&o.words).fold(0u32, |acc, (a, b)| acc ^ (a & b).count_ones()) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn ones(&self) -> Vec<usize> {
        (0..self.len).filter(|&i| self.get(i)).collect()
    }

    pub fn to_bits(&self) -> Vec<u8> {
        (0..self.len).map(|i| self.get(i) as u8).collect()
    }

    /// True when the unused high bits of the last word are clear.
    pub fn padding_clear(&self) -> bool {
        match self.len % 64 {
            0 => true,
            r => self.words.last().is_none_or(|w| w >> r == 0),
        }
    }

    /// Hex text, bits read left to right, four per digit (first bit is the
    /// high bit of the first digit). The final digit is zero padded.
    pub fn to_hex(&self) -> String {
        let mut s = String::with_capacity(self.len.div_ceil(4));
        for c in 0..self.len.div_ceil(4) {
            let mut d = 0u32;
            for j in 0..4 {
                let i = 4 * c + j;
                if i < self.len && self.get(i) {
                    d |= 8 >> j;
                }
            }
            s.push(char::from_digit(d, 16).unwrap());
        }
        s
    }

    pub fn from_hex(s: &str, len: usize) -> Result<Self> {
        let s = s.trim();
        if s.len() != len.div_ceil(4) {
            return Err(Error::Parse(format!("hex length {} does not fit {len} bits", s.len())));
        }
        let mut v = BitVec::zeros(len);
        for (c, ch) in s.chars().enumerate() {
            let d = ch.to_digit(16).ok_or_else(|| Error::Parse(format!("bad hex digit {ch:?}")))?;
            for j in 0..4 {
                let i = 4 * c + j;
                if d & (8 >> j) != 0 {
                    if i >= len {
                        return Err(Error::Parse("nonzero padding in hex".into()));
                    }
                    v.set(i, true);
                }
            }
        }
        Ok(v)
    }
}

impl fmt::Debug for BitVec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len {
            write!(f, "{}", self.get(i) as u8)?;
        }
        Ok(())
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    data: Vec<BitVec>,
}

/// Reduced row echelon form with the pivot column of each nonzero row.
#[derive(Clone, Debug)]
pub struct Echelon {
    pub rows: Vec<BitVec>,
    pub pivots: Vec<usize>,
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        BitMatrix { rows, cols, data: vec![BitVec::zeros(cols); rows] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = BitMatrix::zeros(n, n);
        for i in 0..n {
            m.data[i].set(i, true);
        }
        m
    }

    pub fn from_rows(cols: usize, rows: Vec<BitVec>) -> Result<Self> {
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Parse("rows of unequal length".into()));
        }
        Ok(BitMatrix { rows: rows.len(), cols, data: rows })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &BitVec {
        &self.data[i]
    }

    pub fn row_data(&self) -> &[BitVec] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i].get(j)
    }

    pub fn set(&mut self, i: usize, j: usize, on: bool) {
        self.data[i].set(j, on)
    }

    pub fn mul_vec(&self, x: &BitVec) -> BitVec {
        let mut out = BitVec::zeros(self.rows);
        for (i, r) in self.data.iter().enumerate() {
            if r.dot(x) {
                out.set(i, true);
            }
        }
        out
    }

    pub fn transpose(&self) -> BitMatrix {
        let mut t = BitMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in self.data[i].ones() {
                t.data[j].set(i, true);
            }
        }
        t
    }

    /// Gauss–Jordan elimination. Columns are scanned left to right and the
    /// pivot row for a column is the lowest-index remaining row with a one.
    pub fn echelon(&self) -> Echelon {
        let mut rows = self.data.clone();
        let mut pivots = Vec::new();
        let mut r = 0;
        for c in 0..self.cols {
            if r == rows.len() {
                break;
            }
            let Some(p) = (r..rows.len()).find(|&i| rows[i].get(c)) else {
                continue;
            };
            rows.swap(r, p);
            let pivot_row = rows[r].clone();
            for (i, row) in rows.iter_mut().enumerate() {
                if i != r && row.get(c) {
                    row.xor_assign(&pivot_row);
                }
            }
            pivots.push(c);
            r += 1;
        }
        rows.truncate(r);
        Echelon { rows, pivots }
    }

    pub fn rank(&self) -> usize {
        self.echelon().pivots.len()
    }

    /// Rank together with a basis of `{x : m x = 0}`, one vector per free
    /// column in increasing column order.
    pub fn rank_and_nullspace(&self) -> (usize, Vec<BitVec>) {
        let e = self.echelon();
        let mut is_pivot = vec![false; self.cols];
        for &p in &e.pivots {
            is_pivot[p] = true;
        }
        let mut basis = Vec::new();
        for f in (0..self.cols).filter(|&c| !is_pivot[c]) {
            let mut v = BitVec::zeros(self.cols);
            v.set(f, true);
            for (row, &p) in e.rows.iter().zip(&e.pivots) {
                if row.get(f) {
                    v.set(p, true);
                }
            }
            basis.push(v);
        }
        (e.pivots.len(), basis)
    }

    /// Text form: header `rows cols`, then one hex row per line.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.rows, self.cols);
        for r in &self.data {
            s.push_str(&r.to_hex());
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty matrix file".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad header {header:?}"))))
            .collect::<Result<_>>()?;
        let [rows, cols] = dims[..] else {
            return Err(Error::Parse(format!("bad header {header:?}")));
        };
        let data = lines.map(|l| BitVec::from_hex(l, cols)).collect::<Result<Vec<_>>>()?;
        if data.len() != rows {
            return Err(Error::Parse(format!("expected {rows} rows, found {}", data.len())));
        }
        BitMatrix::from_rows(cols, data)
    }
}

/// Coordinates on which the span of `basis` restricts bijectively onto
/// `{0,1}^k`: the pivot columns of the reduced form, lowest index first.
pub fn systematic_subset(basis: &[BitVec]) -> Result<Vec<usize>> {
    let Some(first) = basis.first() else {
        return Ok(Vec::new());
    };
    let m = BitMatrix::from_rows(first.len(), basis.to_vec())?;
    let e = m.echelon();
    if e.pivots.len() < basis.len() {
        return Err(Error::Check(format!(
            "basis vectors are dependent (rank {} < {})",
            e.pivots.len(),
            basis.len()
        )));
    }
    Ok(e.pivots)
}

/// Dimension of the span of a list of vectors.
pub fn span_dim(vs: &[BitVec]) -> usize {
    match vs.first() {
        None => 0,
        Some(f) => BitMatrix::from_rows(f.len(), vs.to_vec()).map(|m| m.rank()).unwrap_or(0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_full_rank() {
        let (r, ns) = BitMatrix::identity(3).rank_and_nullspace();
        assert_eq!(r, 3);
        assert!(ns.is_empty());
    }

    #[test]
    fn single_parity_check() {
        let m = BitMatrix::from_rows(4, vec![BitVec::from_bits(&[1, 1, 1, 1])]).unwrap();
        let (r, ns) = m.rank_and_nullspace();
        assert_eq!(r, 1);
        assert_eq!(ns.len(), 3);
        for v in &ns {
            assert!(m.mul_vec(v).is_zero());
        }
    }

    #[test]
    fn systematic_standard_basis() {
        let basis: Vec<_> = (0..3).map(|i| BitVec::from_indices(6, &[i])).collect();
        assert_eq!(systematic_subset(&basis).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn systematic_tie_break_is_lowest_index() {
        let basis = vec![BitVec::from_bits(&[1, 1, 0])];
        assert_eq!(systematic_subset(&basis).unwrap(), vec![0]);
    }

    #[test]
    fn systematic_rejects_dependent() {
        let v = BitVec::from_bits(&[1, 0, 1]);
        assert!(systematic_subset(&[v.clone(), v]).is_err());
    }

    #[test]
    fn hex_roundtrip_and_padding() {
        let v = BitVec::from_bits(&[1, 0, 0, 1, 1]);
        assert_eq!(v.to_hex(), "98");
        assert_eq!(BitVec::from_hex("98", 5).unwrap(), v);
        assert!(BitVec::from_hex("9c", 5).is_err());
        let mut w = BitVec::zeros(70);
        w.set(69, true);
        assert!(w.padding_clear());
    }

    #[test]
    fn text_roundtrip() {
        let m = BitMatrix::from_rows(5, vec![BitVec::from_bits(&[1, 0, 1, 1, 0]), BitVec::from_bits(&[0, 1, 1, 0, 1])]).unwrap();
        let t = m.to_text();
        assert!(t.starts_with("2 5\n"));
        assert_eq!(BitMatrix::from_text(&t).unwrap(), m);
    }
}
