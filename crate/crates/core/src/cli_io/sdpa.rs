//! Reader and writer for the SDPA sparse interchange format (.dat-s).
//!
//! Layout: optional comment lines (starting with `"` or `*`), then
//! `m`, `nblocks`, the block sizes (negative sizes denote diagonal blocks),
//! one line with the m right-hand-side values, and entry lines
//! `matno blkno i j value` with 1-based upper-triangle indices; `matno 0`
//! holds the cost matrix. The instance read is
//! `min <C, X> s.t. A_k . X = b_k, X in cone`.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};

use crate::apps::{ConeBlock, SDPInstance};
use crate::error::{Error, Result};
use crate::opcore::symm::SQRT2;

const MAX_BLOCK: i64 = 10_000;
const MAX_NBLOCKS: usize = 10_000;
const MAX_CONSTRAINTS: usize = 100_000;
const MAX_PACKED_DIM: usize = 1_000_000;

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn tokens(line: &str) -> Vec<&str> {
    line.split(|c: char| c.is_whitespace() || matches!(c, ',' | '(' | ')' | '{' | '}'))
        .filter(|t| !t.is_empty())
        .collect()
}

fn is_comment(line: &str) -> bool {
    let t = line.trim_start();
    t.is_empty() || t.starts_with('"') || t.starts_with('*')
}

fn f64_next(x: f64, dir: i64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    let bits = x.to_bits() as i64;
    let stepped = if (x > 0.0) == (dir > 0) { bits + 1 } else { bits - 1 };
    f64::from_bits(stepped as u64)
}

/// Offset of a (1-based) within-block upper-triangle entry in the packed
/// coordinates, along with the applied scaling.
fn packed_index(blocks: &[ConeBlock], blk: usize, i: usize, j: usize) -> (usize, f64) {
    let mut off = 0;
    for b in blocks.iter().take(blk) {
        off += b.packed_dim();
    }
    match blocks[blk] {
        ConeBlock::Psd(_) => {
            // svec order: column-major upper triangle, off-diagonals scaled
            let (i0, j0) = (i - 1, j - 1);
            (off + j0 * (j0 + 1) / 2 + i0, if i == j { 1.0 } else { SQRT2 })
        }
        ConeBlock::Diag(_) => (off + i - 1, 1.0),
    }
}

/// Parses SDPA sparse text into an instance.
pub fn parse_sdpa(text: &str) -> Result<SDPInstance> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !is_comment(l));

    let (mline, mtok) = lines
        .next()
        .ok_or_else(|| perr(0, "missing constraint count"))?;
    let toks = tokens(mtok);
    if toks.len() != 1 {
        return Err(perr(mline, "expected a single constraint count"));
    }
    let m: usize = toks[0]
        .parse::<i64>()
        .ok()
        .filter(|&v| v >= 0 && (v as usize) <= MAX_CONSTRAINTS)
        .ok_or_else(|| perr(mline, "invalid constraint count"))? as usize;

    let (bline, btok) = lines.next().ok_or_else(|| perr(mline, "missing block count"))?;
    let toks = tokens(btok);
    if toks.len() != 1 {
        return Err(perr(bline, "expected a single block count"));
    }
    let nblocks: usize = toks[0]
        .parse::<i64>()
        .ok()
        .filter(|&v| v >= 1 && (v as usize) <= MAX_NBLOCKS)
        .ok_or_else(|| perr(bline, "invalid block count"))? as usize;

    let (sline, stok) = lines.next().ok_or_else(|| perr(bline, "missing block sizes"))?;
    let toks = tokens(stok);
    if toks.len() != nblocks {
        return Err(perr(
            sline,
            format!("expected {nblocks} block sizes, found {}", toks.len()),
        ));
    }
    let mut blocks = Vec::with_capacity(nblocks);
    let mut packed = 0usize;
    for t in &toks {
        let v: i64 = t
            .parse()
            .map_err(|_| perr(sline, format!("invalid block size `{t}`")))?;
        if v == 0 || v.abs() > MAX_BLOCK {
            return Err(perr(sline, format!("block size {v} out of range")));
        }
        let blk = if v > 0 {
            ConeBlock::Psd(v as usize)
        } else {
            ConeBlock::Diag((-v) as usize)
        };
        packed += blk.packed_dim();
        if packed > MAX_PACKED_DIM {
            return Err(perr(sline, "total packed dimension exceeds the cap"));
        }
        blocks.push(blk);
    }

    let (rline, rtok) = lines
        .next()
        .ok_or_else(|| perr(sline, "missing right-hand-side row"))?;
    let toks = tokens(rtok);
    if toks.len() != m {
        return Err(perr(
            rline,
            format!("expected {m} right-hand-side values, found {}", toks.len()),
        ));
    }
    let mut b = DVector::zeros(m);
    for (k, t) in toks.iter().enumerate() {
        b[k] = t
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| perr(rline, format!("invalid value `{t}`")))?;
    }

    let mut c = DVector::zeros(packed);
    let mut a = DMatrix::zeros(m, packed);
    let mut seen: HashSet<(usize, usize, usize, usize)> = HashSet::new();
    for (lno, line) in lines {
        let toks = tokens(line);
        if toks.len() != 5 {
            return Err(perr(lno, "entry lines need 5 fields: matno blkno i j value"));
        }
        let matno: usize = toks[0]
            .parse::<i64>()
            .ok()
            .filter(|&v| v >= 0 && (v as usize) <= m)
            .ok_or_else(|| perr(lno, "matrix index out of range"))? as usize;
        let blkno: usize = toks[1]
            .parse::<i64>()
            .ok()
            .filter(|&v| v >= 1 && (v as usize) <= nblocks)
            .ok_or_else(|| perr(lno, "block index out of range"))?
            as usize;
        let order = match blocks[blkno - 1] {
            ConeBlock::Psd(n) => n,
            ConeBlock::Diag(d) => d,
        };
        let i: usize = toks[2]
            .parse::<i64>()
            .ok()
            .filter(|&v| v >= 1 && (v as usize) <= order)
            .ok_or_else(|| perr(lno, "row index out of range"))? as usize;
        let j: usize = toks[3]
            .parse::<i64>()
            .ok()
            .filter(|&v| v >= 1 && (v as usize) <= order)
            .ok_or_else(|| perr(lno, "column index out of range"))? as usize;
        if i > j {
            return Err(perr(lno, "lower-triangle entries are not allowed"));
        }
        if matches!(blocks[blkno - 1], ConeBlock::Diag(_)) && i != j {
            return Err(perr(lno, "off-diagonal entry in a diagonal block"));
        }
        let value: f64 = toks[4]
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| perr(lno, format!("invalid value `{}`", toks[4])))?;
        if !seen.insert((matno, blkno, i, j)) {
            return Err(perr(lno, "duplicate entry"));
        }
        let (idx, scale) = packed_index(&blocks, blkno - 1, i, j);
        if matno == 0 {
            c[idx] = scale * value;
        } else {
            a[(matno - 1, idx)] = scale * value;
        }
    }
    Ok(SDPInstance { blocks, a, b, c })
}

pub fn parse_sdpa_file(path: &std::path::Path) -> Result<SDPInstance> {
    let text = std::fs::read_to_string(path)?;
    parse_sdpa(&text)
}

/// Canonical serialization: header, right-hand side, then the nonzero
/// entries of C and the constraint rows in (matno, blkno, i, j) order.
pub fn write_sdpa(inst: &SDPInstance) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let m = inst.num_constraints();
    writeln!(out, "{m}").unwrap();
    writeln!(out, "{}", inst.blocks.len()).unwrap();
    let sizes: Vec<String> = inst
        .blocks
        .iter()
        .map(|b| match b {
            ConeBlock::Psd(n) => format!("{n}"),
            ConeBlock::Diag(d) => format!("-{d}"),
        })
        .collect();
    writeln!(out, "{}", sizes.join(" ")).unwrap();
    let bvals: Vec<String> = inst.b.iter().map(|v| format!("{v}")).collect();
    writeln!(out, "{}", bvals.join(" ")).unwrap();

    // Pick the emitted entry so that rescaling on re-parse reproduces the
    // stored packed value bit for bit whenever possible (the quotient can be
    // one ulp off from the preimage of the scaling).
    let unscale = |packed: f64, scale: f64| -> f64 {
        if scale == 1.0 {
            return packed;
        }
        let v0 = packed / scale;
        for cand in [v0, f64_next(v0, 1), f64_next(v0, -1)] {
            if cand * scale == packed {
                return cand;
            }
        }
        v0
    };
    let emit = |out: &mut String, matno: usize, coeffs: &dyn Fn(usize) -> f64| {
        let mut off = 0;
        for (bi, blk) in inst.blocks.iter().enumerate() {
            match blk {
                ConeBlock::Psd(n) => {
                    for j in 1..=*n {
                        for i in 1..=j {
                            let (idx, scale) = packed_index(&inst.blocks, bi, i, j);
                            if coeffs(idx) != 0.0 {
                                let v = unscale(coeffs(idx), scale);
                                writeln!(out, "{matno} {} {i} {j} {v}", bi + 1).unwrap();
                            }
                        }
                    }
                }
                ConeBlock::Diag(d) => {
                    for i in 1..=*d {
                        let v = coeffs(off + i - 1);
                        if v != 0.0 {
                            writeln!(out, "{matno} {} {i} {i} {v}", bi + 1).unwrap();
                        }
                    }
                }
            }
            off += blk.packed_dim();
        }
    };
    emit(&mut out, 0, &|idx| inst.c[idx]);
    for k in 0..m {
        emit(&mut out, k + 1, &|idx| inst.a[(k, idx)]);
    }
    out
}
