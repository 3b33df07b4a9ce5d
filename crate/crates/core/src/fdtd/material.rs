use super::{FdtdError, GridSpec};

/// Relative permittivity sampled at every E-field edge of the Yee lattice.
///
/// Each edge stores a one-byte id into a small table of distinct
/// permittivities, which keeps the field update bandwidth-bound on the fields
/// rather than on per-cell coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct MaterialMap {
    extents: [usize; 3],
    table: Vec<f64>,
    ids: [Vec<u8>; 3],
}

impl MaterialMap {
    pub fn vacuum(grid: &GridSpec) -> Self {
        let n = grid.len();
        Self { extents: grid.extents, table: vec![1.0], ids: [vec![0; n], vec![0; n], vec![0; n]] }
    }

    /// Staircase voxelization: `eps_at` is evaluated at the midpoint of each E
    /// edge (x, y, z in nm, grid frame).
    pub fn from_fn<F>(grid: &GridSpec, eps_at: F) -> Result<Self, FdtdError>
    where
        F: Fn([f64; 3]) -> f64,
    {
        let [nx, ny, nz] = grid.extents;
        let dx = grid.cell_size_nm;
        let mut table: Vec<f64> = Vec::new();
        let mut ids = [vec![0u8; grid.len()], vec![0u8; grid.len()], vec![0u8; grid.len()]];
        for (comp, id_arr) in ids.iter_mut().enumerate() {
            for i in 0..nx {
                for j in 0..ny {
                    for k in 0..nz {
                        let mut p = [i as f64 * dx, j as f64 * dx, k as f64 * dx];
                        p[comp] += 0.5 * dx;
                        let eps = eps_at(p);
                        if !(eps >= 1.0 && eps.is_finite()) {
                            return Err(FdtdError::InvalidMaterial(format!(
                                "permittivity {eps} at {p:?} is below 1 or not finite"
                            )));
                        }
                        let id = match table.iter().position(|&e| e == eps) {
                            Some(id) => id,
                            None => {
                                if table.len() == u8::MAX as usize + 1 {
                                    return Err(FdtdError::InvalidMaterial(
                                        "more than 256 distinct permittivities".into(),
                                    ));
                                }
                                table.push(eps);
                                table.len() - 1
                            }
                        };
                        id_arr[grid.index(i, j, k)] = id as u8;
                    }
                }
            }
        }
        Ok(Self { extents: grid.extents, table, ids })
    }

    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub(crate) fn ids(&self, comp: usize) -> &[u8] {
        &self.ids[comp]
    }

    /// Permittivity seen by E component `comp` at node index `idx`.
    pub fn eps(&self, comp: usize, idx: usize) -> f64 {
        self.table[self.ids[comp][idx] as usize]
    }
}
