//! Minimal writer for `.npy` arrays of little-endian `f64`.

use std::io::Write;
use std::path::Path;

use crate::error::Result;

/// Serializes a C-ordered `f64` array with the given shape.
pub fn to_npy_bytes(shape: &[usize], data: &[f64]) -> Vec<u8> {
    debug_assert_eq!(shape.iter().product::<usize>(), data.len());
    let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
    let shape_txt = if dims.len() == 1 { format!("({},)", dims[0]) } else { format!("({})", dims.join(", ")) };
    let mut header = format!("{{'descr': '<f8', 'fortran_order': False, 'shape': {shape_txt}, }}");
    let unpadded = 10 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');
    let mut out = Vec::with_capacity(10 + header.len() + 8 * data.len());
    out.extend_from_slice(b"\x93NUMPY\x01\x00");
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn write_npy(path: &Path, shape: &[usize], data: &[f64]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&to_npy_bytes(shape, data))?;
    Ok(())
}
