use super::grid::GridSpec;

/// Recursive-convolution coefficients along one axis.
///
/// `e_*` are sampled at integer node positions (where E-field derivatives
/// along this axis are taken), `h_*` at half-integer positions `n + 1/2`.
#[derive(Clone, Debug)]
pub(crate) struct AxisProfile {
    pub e_b: Vec<f32>,
    pub e_c: Vec<f32>,
    pub h_b: Vec<f32>,
    pub h_c: Vec<f32>,
    /// Node indices that may carry non-zero auxiliary fields.
    pub slab: Vec<usize>,
}

impl AxisProfile {
    pub(crate) fn new(grid: &GridSpec, axis: usize) -> Option<Self> {
        let p = grid.pml_on(axis);
        if p == 0 {
            return None;
        }
        let n = grid.extents[axis];
        let dx = grid.cell_size_nm;
        let dt = grid.dt();
        let thickness = p as f64 * dx;
        let hi_start = (n - 1 - p) as f64 * dx;
        let order = grid.pml.order;
        let sigma_max = grid.pml.sigma_factor * 0.8 * (order + 1.0) / dx;
        let alpha_max = grid.pml.alpha_max;

        let depth = |x: f64| -> f64 {
            if x < thickness {
                (thickness - x) / thickness
            } else if x > hi_start {
                (x - hi_start) / thickness
            } else {
                0.0
            }
        };
        let coeffs = |x: f64| -> (f32, f32) {
            let rho = depth(x);
            if rho <= 0.0 {
                return (1.0, 0.0);
            }
            let sigma = sigma_max * rho.powf(order);
            let alpha = alpha_max * (1.0 - rho);
            let b = (-(sigma + alpha) * dt).exp();
            let c = if sigma + alpha > 0.0 { sigma / (sigma + alpha) * (b - 1.0) } else { 0.0 };
            (b as f32, c as f32)
        };

        let mut prof = Self {
            e_b: vec![1.0; n],
            e_c: vec![0.0; n],
            h_b: vec![1.0; n],
            h_c: vec![0.0; n],
            slab: (0..=p).chain(n - 1 - p..n).collect(),
        };
        for m in 0..n {
            let (b, c) = coeffs(m as f64 * dx);
            prof.e_b[m] = b;
            prof.e_c[m] = c;
            let (b, c) = coeffs((m as f64 + 0.5) * dx);
            prof.h_b[m] = b;
            prof.h_c[m] = c;
        }
        Some(prof)
    }

    pub(crate) fn in_slab(&self, m: usize) -> bool {
        let p = (self.slab.len() / 2) - 1;
        let n = self.e_b.len();
        m <= p || m >= n - 1 - p
    }
}

/// Auxiliary convolution fields. Arrays for an axis without PML are empty.
#[derive(Clone, Debug, Default)]
pub(crate) struct PsiFields {
    // E-side: psi_<component><derivative axis>
    pub eyx: Vec<f32>,
    pub ezx: Vec<f32>,
    pub exy: Vec<f32>,
    pub ezy: Vec<f32>,
    pub exz: Vec<f32>,
    pub eyz: Vec<f32>,
    // H-side
    pub hyx: Vec<f32>,
    pub hzx: Vec<f32>,
    pub hxy: Vec<f32>,
    pub hzy: Vec<f32>,
    pub hxz: Vec<f32>,
    pub hyz: Vec<f32>,
}

impl PsiFields {
    pub(crate) fn new(grid: &GridSpec) -> Self {
        let n = grid.len();
        let alloc = |axis: usize| if grid.pml_on(axis) > 0 { vec![0.0f32; n] } else { Vec::new() };
        Self {
            eyx: alloc(0),
            ezx: alloc(0),
            hyx: alloc(0),
            hzx: alloc(0),
            exy: alloc(1),
            ezy: alloc(1),
            hxy: alloc(1),
            hzy: alloc(1),
            exz: alloc(2),
            eyz: alloc(2),
            hxz: alloc(2),
            hyz: alloc(2),
        }
    }
}
