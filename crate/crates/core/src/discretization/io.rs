use std::fmt::Write as _;

use nalgebra::Vector3;

use super::DiscreteField;
use crate::error::{Error, Result};

/// Nodal data read back from the text format.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldText {
    pub nodes: [usize; 3],
    pub lengths: [f64; 2],
    pub positions: Vec<Vector3<f64>>,
    pub values: Vec<Vector3<f64>>,
}

impl DiscreteField {
    /// Header `N1,N2,N3,Lx,Ly`, then one `x y z vx vy vz` line per node.
    pub fn to_text(&self) -> String {
        let g = &self.grid;
        let mut out = format!(
            "{},{},{},{},{}\n",
            g.nodes[0], g.nodes[1], g.nodes[2], g.lengths[0], g.lengths[1]
        );
        for (idx, v) in self.values.iter().enumerate() {
            let x = g.position(idx);
            writeln!(out, "{:e} {:e} {:e} {:e} {:e} {:e}", x.x, x.y, x.z, v.x, v.y, v.z).unwrap();
        }
        out
    }
}

pub fn parse_field_text(text: &str) -> Result<FieldText> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Parse("empty field file".into()))?;
    let parts: Vec<&str> = header.split(',').map(str::trim).collect();
    if parts.len() != 5 {
        return Err(Error::Parse(format!("field header must be N1,N2,N3,Lx,Ly, got {header:?}")));
    }
    let int = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
    let real = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
    let nodes = [int(parts[0])?, int(parts[1])?, int(parts[2])?];
    let lengths = [real(parts[3])?, real(parts[4])?];
    let mut positions = Vec::new();
    let mut values = Vec::new();
    for (row, line) in lines.enumerate() {
        let nums: Vec<f64> = line.split_whitespace().map(real).collect::<Result<_>>()?;
        if nums.len() != 6 {
            return Err(Error::Parse(format!("node line {} has {} entries, expected 6", row + 1, nums.len())));
        }
        positions.push(Vector3::new(nums[0], nums[1], nums[2]));
        values.push(Vector3::new(nums[3], nums[4], nums[5]));
    }
    if values.len() != nodes.iter().product::<usize>() {
        return Err(Error::Parse(format!("{} node lines for a {:?} grid", values.len(), nodes)));
    }
    Ok(FieldText { nodes, lengths, positions, values })
}
