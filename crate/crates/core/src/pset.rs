//! Plain-text persistence for [`RiccatiSet`] and [`RegionRiccatiMap`].
//!
//! Riccati set file (`.pset`):
//!
//! ```text
//! adpmpc-riccati-set 1
//! dim 4
//! horizon 5
//! subsystems 6
//! epsilon 0.001
//! fingerprint 3f2a9c0d11b2e4f7
//! level 4 6 6 pruned
//! level 3 36 21 pruned
//! parent -
//! matrices 2
//! 1.0 0.0 ... (dim × dim values, row-major)
//! ...
//! ```
//!
//! Numbers use Rust's shortest round-trip formatting, so reading a file back
//! reproduces every matrix bit for bit. Region map files (`.regions`) store
//! the half-spaces of each cell plus index lists into the parent set:
//!
//! ```text
//! adpmpc-riccati-regions 1
//! dim 3
//! fingerprint 3f2a9c0d11b2e4f7
//! domain 0 4 7
//! region 6
//! h 1 0 0 0.05
//! ...
//! indices 0 4
//! ```

use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use crate::error::{AdpError, Result};
use crate::polytope::Polytope;
use crate::synthesis::{validate_matrices, LevelStats, RegionRiccatiMap, RiccatiSet};

const SET_MAGIC: &str = "adpmpc-riccati-set";
const REGION_MAGIC: &str = "adpmpc-riccati-regions";
const VERSION: u32 = 1;

pub fn write_riccati_set<W: Write>(set: &RiccatiSet, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{SET_MAGIC} {VERSION}")?;
    writeln!(w, "dim {}", set.dim())?;
    writeln!(w, "horizon {}", set.horizon())?;
    writeln!(w, "subsystems {}", set.subsystems())?;
    writeln!(w, "epsilon {:?}", set.epsilon())?;
    writeln!(w, "fingerprint {}", set.fingerprint())?;
    for l in set.level_stats() {
        writeln!(
            w,
            "level {} {} {} {}",
            l.level,
            l.generated,
            l.kept,
            if l.pruned { "pruned" } else { "full" }
        )?;
    }
    match set.parent_indices() {
        Some(idx) => writeln!(w, "parent {}", join(idx))?,
        None => writeln!(w, "parent -")?,
    }
    writeln!(w, "matrices {}", set.len())?;
    for m in set.matrices() {
        let row_major: Vec<String> = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| format!("{:?}", m[(i, j)]))
            .collect();
        writeln!(w, "{}", row_major.join(" "))?;
    }
    Ok(())
}

fn join(idx: &[usize]) -> String {
    idx.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn new(r: R) -> Self {
        Lines {
            inner: r.lines(),
            line: 0,
        }
    }

    fn err(&self, reason: impl Into<String>) -> AdpError {
        AdpError::Format {
            line: self.line,
            reason: reason.into(),
        }
    }

    fn next_line(&mut self) -> Result<String> {
        loop {
            self.line += 1;
            match self.inner.next() {
                Some(Ok(l)) if l.trim().is_empty() || l.trim_start().starts_with('#') => continue,
                Some(Ok(l)) => return Ok(l),
                Some(Err(e)) => return Err(self.err(e.to_string())),
                None => return Err(self.err("unexpected end of file")),
            }
        }
    }

    /// Next line, split after checking its leading keyword.
    fn keyed(&mut self, key: &str) -> Result<Vec<String>> {
        let l = self.next_line()?;
        let mut parts = l.split_whitespace();
        match parts.next() {
            Some(k) if k == key => Ok(parts.map(str::to_owned).collect()),
            other => Err(self.err(format!("expected `{key}`, found {other:?}"))),
        }
    }

    fn single<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let parts = self.keyed(key)?;
        if parts.len() != 1 {
            return Err(self.err(format!("`{key}` takes one value")));
        }
        parts[0].parse().map_err(|_| self.err(format!("bad value for `{key}`")))
    }

    fn numbers<T: std::str::FromStr>(&self, parts: &[String]) -> Result<Vec<T>> {
        parts
            .iter()
            .map(|p| p.parse().map_err(|_| self.err(format!("bad number {p:?}"))))
            .collect()
    }
}

pub fn read_riccati_set<R: BufRead>(r: R) -> Result<RiccatiSet> {
    let mut lines = Lines::new(r);
    let header = lines.keyed(SET_MAGIC)?;
    if header != [VERSION.to_string()] {
        return Err(lines.err(format!("unsupported version {header:?}")));
    }
    let dim: usize = lines.single("dim")?;
    let horizon: usize = lines.single("horizon")?;
    let subsystems: usize = lines.single("subsystems")?;
    let epsilon: f64 = lines.single("epsilon")?;
    let fingerprint: String = lines.single("fingerprint")?;
    let mut levels = Vec::new();
    let parent_indices = loop {
        let l = lines.next_line()?;
        let parts: Vec<String> = l.split_whitespace().map(str::to_owned).collect();
        match parts.first().map(String::as_str) {
            Some("level") if parts.len() == 5 => {
                let v: Vec<usize> = lines.numbers(&parts[1..4])?;
                levels.push(LevelStats {
                    level: v[0],
                    generated: v[1],
                    kept: v[2],
                    pruned: match parts[4].as_str() {
                        "pruned" => true,
                        "full" => false,
                        other => return Err(lines.err(format!("bad level flag {other:?}"))),
                    },
                });
            }
            Some("parent") if parts.get(1).map(String::as_str) == Some("-") => break None,
            Some("parent") => break Some(lines.numbers(&parts[1..])?),
            _ => return Err(lines.err(format!("unexpected line {l:?}"))),
        }
    };
    let count: usize = lines.single("matrices")?;
    let mut matrices = Vec::with_capacity(count);
    for _ in 0..count {
        let l = lines.next_line()?;
        let vals: Vec<f64> = lines.numbers(&l.split_whitespace().map(str::to_owned).collect::<Vec<_>>())?;
        if vals.len() != dim * dim {
            return Err(lines.err(format!("expected {} values, found {}", dim * dim, vals.len())));
        }
        matrices.push(DMatrix::from_row_slice(dim, dim, &vals));
    }
    validate_matrices(&matrices)?;
    if let Some(idx) = &parent_indices {
        if idx.len() != count {
            return Err(lines.err("parent index list length differs from matrix count"));
        }
    }
    Ok(RiccatiSet {
        matrices,
        epsilon,
        horizon,
        subsystems,
        levels,
        fingerprint,
        parent_indices,
    })
}

pub fn write_region_map<W: Write>(map: &RegionRiccatiMap, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{REGION_MAGIC} {VERSION}")?;
    writeln!(w, "dim {}", map.regions()[0].dim())?;
    writeln!(w, "fingerprint {}", map.parent().fingerprint())?;
    writeln!(w, "domain {}", join(map.domain().parent_indices().unwrap_or_default()))?;
    for (region, set) in map.regions().iter().zip(map.sets()) {
        writeln!(w, "region {}", region.num_halfspaces())?;
        for (h, b) in region.halfspaces() {
            let coeffs: Vec<String> = h.iter().chain(std::iter::once(&b)).map(|v| format!("{v:?}")).collect();
            writeln!(w, "h {}", coeffs.join(" "))?;
        }
        writeln!(w, "indices {}", join(set.parent_indices().unwrap_or_default()))?;
    }
    Ok(())
}

/// Reads a region map; indices refer to `parent`, which must carry the
/// fingerprint recorded in the file.
pub fn read_region_map<R: BufRead>(r: R, parent: &RiccatiSet) -> Result<RegionRiccatiMap> {
    let mut lines = Lines::new(r);
    let header = lines.keyed(REGION_MAGIC)?;
    if header != [VERSION.to_string()] {
        return Err(lines.err(format!("unsupported version {header:?}")));
    }
    let dim: usize = lines.single("dim")?;
    let fingerprint: String = lines.single("fingerprint")?;
    if fingerprint != parent.fingerprint() {
        return Err(AdpError::FingerprintMismatch {
            expected: parent.fingerprint().to_owned(),
            found: fingerprint,
        });
    }
    let subset = |lines: &Lines<R>, idx: Vec<usize>| -> Result<RiccatiSet> {
        if idx.is_empty() || idx.iter().any(|&i| i >= parent.len()) {
            return Err(lines.err("region index list is empty or out of range"));
        }
        Ok(RiccatiSet {
            matrices: idx.iter().map(|&i| parent.matrices()[i].clone()).collect(),
            epsilon: parent.epsilon(),
            horizon: parent.horizon(),
            subsystems: parent.subsystems(),
            levels: parent.level_stats().to_vec(),
            fingerprint: parent.fingerprint().to_owned(),
            parent_indices: Some(idx),
        })
    };
    let parts = lines.keyed("domain")?;
    let domain_idx = lines.numbers(&parts)?;
    let domain = subset(&lines, domain_idx)?;
    let mut regions = Vec::new();
    let mut sets = Vec::new();
    loop {
        let l = match lines.next_line() {
            Ok(l) => l,
            Err(_) if !regions.is_empty() => break,
            Err(e) => return Err(e),
        };
        let parts: Vec<String> = l.split_whitespace().map(str::to_owned).collect();
        if parts.first().map(String::as_str) != Some("region") || parts.len() != 2 {
            return Err(lines.err(format!("expected `region`, found {l:?}")));
        }
        let count: usize = parts[1].parse().map_err(|_| lines.err("bad half-space count"))?;
        let mut normals = Vec::with_capacity(count);
        let mut offsets = Vec::with_capacity(count);
        for _ in 0..count {
            let parts = lines.keyed("h")?;
            let vals: Vec<f64> = lines.numbers(&parts)?;
            if vals.len() != dim + 1 {
                return Err(lines.err("half-space has the wrong number of coefficients"));
            }
            normals.push(vals[..dim].to_vec());
            offsets.push(vals[dim]);
        }
        regions.push(Polytope::new(normals, offsets)?);
        let parts = lines.keyed("indices")?;
        let idx = lines.numbers(&parts)?;
        sets.push(subset(&lines, idx)?);
    }
    RegionRiccatiMap::from_parts(regions, sets, domain, parent.clone())
}
