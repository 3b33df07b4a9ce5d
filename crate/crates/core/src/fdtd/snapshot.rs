//! Raw dump of one field component on one lattice plane.
//!
//! Layout (all little-endian):
//!
//! ```text
//! i64 component   0..=2 -> Ex, Ey, Ez; 3..=5 -> Hx, Hy, Hz
//! i64 axis        plane normal, 0..=2
//! i64 index       node index of the plane along `axis`
//! i64 nx          samples along the first tangential axis ((axis+1) % 3)
//! i64 ny          samples along the second tangential axis ((axis+2) % 3)
//! f64 * nx*ny     values, first tangential axis outermost
//! ```

use std::io::{self, Read, Write};

use super::kernel::FieldLattice;
use super::monitor::tangential;
use super::GridSpec;

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub component: usize,
    pub axis: usize,
    pub index: usize,
    pub dims: [usize; 2],
    pub values: Vec<f64>,
}

impl Snapshot {
    pub fn capture(grid: &GridSpec, lattice: &FieldLattice, component: usize, axis: usize, index: usize) -> Self {
        assert!(component < 6 && axis < 3 && index < grid.extents[axis]);
        let (b, c) = tangential(axis);
        let dims = [grid.extents[b], grid.extents[c]];
        let data = if component < 3 { lattice.e(component) } else { lattice.h(component - 3) };
        let mut values = Vec::with_capacity(dims[0] * dims[1]);
        for ib in 0..dims[0] {
            for ic in 0..dims[1] {
                let mut n = [0usize; 3];
                n[axis] = index;
                n[b] = ib;
                n[c] = ic;
                values.push(data[grid.index(n[0], n[1], n[2])] as f64);
            }
        }
        Self { component, axis, index, dims, values }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        for v in [self.component, self.axis, self.index, self.dims[0], self.dims[1]] {
            w.write_all(&(v as i64).to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> io::Result<Self> {
        let mut header = [0i64; 5];
        let mut buf = [0u8; 8];
        for h in header.iter_mut() {
            r.read_exact(&mut buf)?;
            *h = i64::from_le_bytes(buf);
        }
        if header.iter().any(|&h| h < 0) || header[0] > 5 || header[1] > 2 {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "bad snapshot header"));
        }
        let dims = [header[3] as usize, header[4] as usize];
        let mut values = vec![0.0; dims[0] * dims[1]];
        for v in values.iter_mut() {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        Ok(Self { component: header[0] as usize, axis: header[1] as usize, index: header[2] as usize, dims, values })
    }
}
