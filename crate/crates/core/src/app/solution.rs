//! Plain-text nodal solution files: `#` header lines with grid metadata,
//! then one value per unknown.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Grid, ScalarField};

pub const SOLUTION_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct SolutionFile {
    pub dimension: usize,
    pub grid_spacing: f64,
    pub unknowns: usize,
    pub grid_hash: String,
    pub values: Vec<f64>,
}

impl SolutionFile {
    pub fn from_field(grid: &Grid, u: &ScalarField) -> SolutionFile {
        SolutionFile {
            dimension: grid.dim(),
            grid_spacing: grid.spacing(),
            unknowns: grid.len(),
            grid_hash: grid.fingerprint(),
            values: u.values().to_vec(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(26 * self.values.len() + 256);
        let _ = writeln!(s, "# radial-bump solution {SOLUTION_VERSION}");
        let _ = writeln!(s, "# dimension {}", self.dimension);
        let _ = writeln!(s, "# grid_spacing {:.17e}", self.grid_spacing);
        let _ = writeln!(s, "# unknowns {}", self.unknowns);
        let _ = writeln!(s, "# grid_hash {}", self.grid_hash);
        for v in &self.values {
            let _ = writeln!(s, "{v:.17e}");
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn parse(text: &str) -> Result<SolutionFile> {
        let bad = |m: String| Error::SolutionFile(m);
        let (mut dimension, mut spacing, mut unknowns, mut hash, mut version) = (None, None, None, None, None);
        let mut values = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut parts = rest.split_whitespace();
                let key = parts.next().unwrap_or("");
                let val = parts.last().unwrap_or("");
                let num = |what: &str| bad(format!("line {}: bad {what} {val:?}", ln + 1));
                match key {
                    "radial-bump" => version = Some(val.parse::<u32>().map_err(|_| num("version"))?),
                    "dimension" => dimension = Some(val.parse::<usize>().map_err(|_| num("dimension"))?),
                    "grid_spacing" => spacing = Some(val.parse::<f64>().map_err(|_| num("grid_spacing"))?),
                    "unknowns" => unknowns = Some(val.parse::<usize>().map_err(|_| num("unknowns"))?),
                    "grid_hash" => hash = Some(val.to_string()),
                    _ => {}
                }
                continue;
            }
            values.push(line.parse::<f64>().map_err(|_| bad(format!("line {}: bad value {line:?}", ln + 1)))?);
        }
        if version != Some(SOLUTION_VERSION) {
            return Err(bad(format!("unsupported or missing version {version:?}")));
        }
        let missing = |k: &str| bad(format!("missing header {k}"));
        let f = SolutionFile {
            dimension: dimension.ok_or_else(|| missing("dimension"))?,
            grid_spacing: spacing.ok_or_else(|| missing("grid_spacing"))?,
            unknowns: unknowns.ok_or_else(|| missing("unknowns"))?,
            grid_hash: hash.ok_or_else(|| missing("grid_hash"))?,
            values,
        };
        if f.values.len() != f.unknowns {
            return Err(bad(format!("header declares {} unknowns, found {} values", f.unknowns, f.values.len())));
        }
        Ok(f)
    }

    pub fn read(path: &Path) -> Result<SolutionFile> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Errors unless the file was written for exactly this grid.
    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        if self.dimension != grid.dim()
            || self.grid_spacing != grid.spacing()
            || self.unknowns != grid.len()
            || self.grid_hash != grid.fingerprint()
        {
            return Err(Error::SolutionFile(format!(
                "grid mismatch: file has n = {}, h = {}, {} unknowns; config grid has n = {}, h = {}, {} unknowns",
                self.dimension,
                self.grid_spacing,
                self.unknowns,
                grid.dim(),
                grid.spacing(),
                grid.len()
            )));
        }
        Ok(())
    }
}
