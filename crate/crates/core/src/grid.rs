//! Lattice discretization of the domain.
//!
//! The bounding box of the shape is covered by a square lattice of spacing
//! `h`. A lattice point is an *interior cell* when it lies strictly inside
//! the shape; every other point carries the homogeneous Dirichlet value 0.
//! Interior cells are numbered row by row (increasing `y`, then `x`), which
//! keeps the five-point operator banded with half-bandwidth at most one
//! lattice row.

use std::collections::VecDeque;
use std::fmt;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};

const NONE: u32 = u32::MAX;

/// Neighbor slots in the order `[+x, -x, +y, -y]`.
pub const EAST: usize = 0;
pub const WEST: usize = 1;
pub const NORTH: usize = 2;
pub const SOUTH: usize = 3;

/// Geometric description of the domain.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// `[0, width] x [0, height]`.
    Rectangle { width: f64, height: f64 },
    /// Disk of the given radius centered at the origin.
    Disk { radius: f64 },
    /// Bitmap covering `[0, width] x [0, height]`; `cells` is row-major with
    /// row 0 at `y = 0`. A lattice point is inside when the bitmap cell that
    /// contains it is set.
    Mask {
        width: f64,
        height: f64,
        cols: usize,
        rows: usize,
        cells: Vec<bool>,
    },
}

impl Shape {
    pub fn rectangle(width: f64, height: f64) -> Self {
        Shape::Rectangle { width, height }
    }

    pub fn unit_square() -> Self {
        Shape::Rectangle {
            width: 1.0,
            height: 1.0,
        }
    }

    pub fn disk(radius: f64) -> Self {
        Shape::Disk { radius }
    }

    fn bounding_box(&self) -> Result<(f64, f64, f64, f64)> {
        let check = |name: &str, v: f64| {
            if !v.is_finite() || v < 0.0 {
                Err(Error::InvalidShape(format!(
                    "{name} must be a finite non-negative number, got {v}"
                )))
            } else {
                Ok(())
            }
        };
        match self {
            Shape::Rectangle { width, height } => {
                check("width", *width)?;
                check("height", *height)?;
                Ok((0.0, 0.0, *width, *height))
            }
            Shape::Disk { radius } => {
                check("radius", *radius)?;
                Ok((-radius, -radius, *radius, *radius))
            }
            Shape::Mask {
                width,
                height,
                cols,
                rows,
                cells,
            } => {
                check("width", *width)?;
                check("height", *height)?;
                if cells.len() != cols * rows {
                    return Err(Error::InvalidShape(format!(
                        "mask has {} cells, expected {cols} x {rows}",
                        cells.len()
                    )));
                }
                Ok((0.0, 0.0, *width, *height))
            }
        }
    }

    /// Strict membership test; `slack` shrinks the shape by that distance so
    /// that points exactly on the boundary are excluded despite rounding.
    fn contains(&self, x: f64, y: f64, slack: f64) -> bool {
        match self {
            Shape::Rectangle { width, height } => x > slack && x < width - slack && y > slack && y < height - slack,
            Shape::Disk { radius } => {
                let r = radius - slack;
                r > 0.0 && x * x + y * y < r * r
            }
            Shape::Mask {
                width,
                height,
                cols,
                rows,
                cells,
            } => {
                if !(x > slack && x < width - slack && y > slack && y < height - slack) {
                    return false;
                }
                let c = ((x / width) * *cols as f64).floor() as usize;
                let r = ((y / height) * *rows as f64).floor() as usize;
                cells[r.min(rows - 1) * cols + c.min(cols - 1)]
            }
        }
    }

    fn fingerprint_into(&self, hash: &mut Fnv) {
        match self {
            Shape::Rectangle { width, height } => {
                hash.write(&[1]);
                hash.write(&width.to_bits().to_le_bytes());
                hash.write(&height.to_bits().to_le_bytes());
            }
            Shape::Disk { radius } => {
                hash.write(&[2]);
                hash.write(&radius.to_bits().to_le_bytes());
            }
            Shape::Mask {
                width,
                height,
                cols,
                rows,
                cells,
            } => {
                hash.write(&[3]);
                hash.write(&width.to_bits().to_le_bytes());
                hash.write(&height.to_bits().to_le_bytes());
                hash.write(&(*cols as u64).to_le_bytes());
                hash.write(&(*rows as u64).to_le_bytes());
                for c in cells {
                    hash.write(&[*c as u8]);
                }
            }
        }
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= *b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
}

/// Discretized bounded domain with homogeneous Dirichlet boundary.
pub struct GridDomain {
    shape: Shape,
    resolution: usize,
    nx: usize,
    ny: usize,
    h: f64,
    origin: (f64, f64),
    interior: Vec<(usize, usize)>,
    lookup: Vec<u32>,
    neighbors: Vec<[u32; 4]>,
    fingerprint: u64,
    pub(crate) dirichlet: OnceLock<f64>,
}

impl fmt::Debug for GridDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GridDomain")
            .field("shape", &self.shape)
            .field("resolution", &self.resolution)
            .field("h", &self.h)
            .field("interior_cells", &self.interior.len())
            .finish()
    }
}

/// Builds the lattice for `shape`. The spacing is the longest side of the
/// bounding box divided by `resolution`.
pub fn build_grid(shape: Shape, resolution: usize) -> Result<Arc<GridDomain>> {
    if resolution < 2 {
        return Err(Error::InvalidArgument(format!(
            "resolution must be at least 2, got {resolution}"
        )));
    }
    let (x0, y0, x1, y1) = shape.bounding_box()?;
    let longest = (x1 - x0).max(y1 - y0);
    if longest <= 0.0 {
        return Err(Error::EmptyInterior);
    }
    let h = longest / resolution as f64;
    let nx = ((x1 - x0) / h - 1e-9).ceil().max(0.0) as usize;
    let ny = ((y1 - y0) / h - 1e-9).ceil().max(0.0) as usize;
    let slack = 1e-9 * h;

    let mut lookup = vec![NONE; (nx + 1) * (ny + 1)];
    let mut interior = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            let (x, y) = (x0 + i as f64 * h, y0 + j as f64 * h);
            if shape.contains(x, y, slack) {
                lookup[j * (nx + 1) + i] = interior.len() as u32;
                interior.push((i, j));
            }
        }
    }
    if interior.is_empty() {
        return Err(Error::EmptyInterior);
    }

    let at = |i: isize, j: isize| -> u32 {
        if i < 0 || j < 0 || i as usize > nx || j as usize > ny {
            NONE
        } else {
            lookup[j as usize * (nx + 1) + i as usize]
        }
    };
    let neighbors: Vec<[u32; 4]> = interior
        .iter()
        .map(|&(i, j)| {
            let (i, j) = (i as isize, j as isize);
            [at(i + 1, j), at(i - 1, j), at(i, j + 1), at(i, j - 1)]
        })
        .collect();

    let components = count_components(&neighbors);
    if components != 1 {
        return Err(Error::Disconnected { components });
    }

    let mut hash = Fnv::new();
    shape.fingerprint_into(&mut hash);
    hash.write(&(resolution as u64).to_le_bytes());

    Ok(Arc::new(GridDomain {
        shape,
        resolution,
        nx,
        ny,
        h,
        origin: (x0, y0),
        interior,
        lookup,
        neighbors,
        fingerprint: hash.0,
        dirichlet: OnceLock::new(),
    }))
}

fn count_components(neighbors: &[[u32; 4]]) -> usize {
    let mut seen = vec![false; neighbors.len()];
    let mut components = 0;
    let mut queue = VecDeque::new();
    for start in 0..neighbors.len() {
        if seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        queue.push_back(start);
        while let Some(c) = queue.pop_front() {
            for &n in &neighbors[c] {
                if n != NONE && !seen[n as usize] {
                    seen[n as usize] = true;
                    queue.push_back(n as usize);
                }
            }
        }
    }
    components
}

impl GridDomain {
    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Lattice spacing.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn cell_area(&self) -> f64 {
        self.h * self.h
    }

    /// Number of lattice intervals along x (points are `0..=nx`).
    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    /// Coordinates of lattice point `(0, 0)`.
    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.interior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interior.is_empty()
    }

    /// Discrete measure `h^2 * #interior`.
    pub fn measure(&self) -> f64 {
        self.cell_area() * self.len() as f64
    }

    /// Lattice coordinates `(i, j)` of every interior cell, in storage order.
    pub fn interior(&self) -> &[(usize, usize)] {
        &self.interior
    }

    pub fn lattice_coords(&self, cell: usize) -> (usize, usize) {
        self.interior[cell]
    }

    pub fn position(&self, cell: usize) -> (f64, f64) {
        let (i, j) = self.interior[cell];
        self.lattice_position(i, j)
    }

    pub fn lattice_position(&self, i: usize, j: usize) -> (f64, f64) {
        (self.origin.0 + i as f64 * self.h, self.origin.1 + j as f64 * self.h)
    }

    /// Storage index of lattice point `(i, j)` if it is interior.
    pub fn index_of(&self, i: usize, j: usize) -> Option<usize> {
        if i > self.nx || j > self.ny {
            return None;
        }
        match self.lookup[j * (self.nx + 1) + i] {
            NONE => None,
            k => Some(k as usize),
        }
    }

    /// Interior neighbors in the order `[+x, -x, +y, -y]`.
    pub fn neighbors(&self, cell: usize) -> [Option<usize>; 4] {
        self.neighbors[cell].map(|n| if n == NONE { None } else { Some(n as usize) })
    }

    /// Which of the four neighbors lie outside the domain.
    pub fn boundary_adjacency(&self, cell: usize) -> [bool; 4] {
        self.neighbors[cell].map(|n| n == NONE)
    }

    pub fn touches_boundary(&self, cell: usize) -> bool {
        self.neighbors[cell].contains(&NONE)
    }

    /// Bilinear interpolation of cell values at `(x, y)`, with every
    /// non-interior lattice point carrying 0. Points outside the bounding box
    /// are clamped onto it.
    pub fn interpolate(&self, values: &[f64], x: f64, y: f64) -> f64 {
        let at = |i: usize, j: usize| self.index_of(i, j).map_or(0.0, |c| values[c]);
        let fx = ((x - self.origin.0) / self.h).clamp(0.0, self.nx as f64);
        let fy = ((y - self.origin.1) / self.h).clamp(0.0, self.ny as f64);
        let i0 = (fx.floor() as usize).min(self.nx.saturating_sub(1));
        let j0 = (fy.floor() as usize).min(self.ny.saturating_sub(1));
        let (tx, ty) = (fx - i0 as f64, fy - j0 as f64);
        (1.0 - ty) * ((1.0 - tx) * at(i0, j0) + tx * at(i0 + 1, j0))
            + ty * ((1.0 - tx) * at(i0, j0 + 1) + tx * at(i0 + 1, j0 + 1))
    }

    pub(crate) fn raw_neighbors(&self) -> &[[u32; 4]] {
        &self.neighbors
    }

    /// Largest index gap between a cell and one of its neighbors.
    pub fn half_bandwidth(&self) -> usize {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(c, ns)| {
                ns.iter()
                    .filter(|&&n| n != NONE)
                    .map(move |&n| (c as isize - n as isize).unsigned_abs())
            })
            .max()
            .unwrap_or(0)
    }

    /// Identity used for grid-compatibility checks.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn same_as(&self, other: &GridDomain) -> bool {
        std::ptr::eq(self, other)
            || (self.fingerprint == other.fingerprint && self.len() == other.len() && self.h == other.h)
    }

    pub(crate) fn ensure_same(&self, other: &GridDomain) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

/// Real values on the interior cells of a grid.
#[derive(Clone)]
pub struct ScalarField {
    grid: Arc<GridDomain>,
    values: Vec<f64>,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("cells", &self.values.len())
            .finish()
    }
}

impl ScalarField {
    pub fn new(grid: &Arc<GridDomain>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidField(format!(
                "{} values for {} interior cells",
                values.len(),
                grid.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!("non-finite value at cell {k}")));
        }
        Ok(ScalarField {
            grid: Arc::clone(grid),
            values,
        })
    }

    pub(crate) fn from_vec_unchecked(grid: &Arc<GridDomain>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        ScalarField {
            grid: Arc::clone(grid),
            values,
        }
    }

    pub fn zeros(grid: &Arc<GridDomain>) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Arc<GridDomain>, c: f64) -> Self {
        Self::from_vec_unchecked(grid, vec![c; grid.len()])
    }

    /// Samples `f(x, y)` at every interior cell.
    pub fn from_fn(grid: &Arc<GridDomain>, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let values = (0..grid.len())
            .map(|c| {
                let (x, y) = grid.position(c);
                f(x, y)
            })
            .collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Arc<GridDomain> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// A field with `0 <= V <= 1` and `h^2 * sum V = V0`.
#[derive(Clone, Debug)]
pub struct Potential {
    field: ScalarField,
    target_mass: f64,
}

impl Potential {
    pub fn new(field: ScalarField, target_mass: f64) -> Result<Self> {
        let grid = field.grid();
        let measure = grid.measure();
        if !(target_mass > 0.0 && target_mass < measure) {
            return Err(Error::MassOutOfRange {
                mass: target_mass,
                domain_measure: measure,
            });
        }
        if let Some((k, v)) = field
            .values()
            .iter()
            .enumerate()
            .find(|(_, &v)| !(0.0..=1.0).contains(&v))
        {
            return Err(Error::NotAdmissible(format!("value {v} at cell {k} outside [0, 1]")));
        }
        let mass = grid.cell_area() * field.values().iter().sum::<f64>();
        if (mass - target_mass).abs() > mass_tolerance(grid) {
            return Err(Error::NotAdmissible(format!(
                "mass {mass} differs from target {target_mass}"
            )));
        }
        Ok(Potential { field, target_mass })
    }

    pub fn from_values(grid: &Arc<GridDomain>, values: Vec<f64>, target_mass: f64) -> Result<Self> {
        Self::new(ScalarField::new(grid, values)?, target_mass)
    }

    /// `V = V0 / |Omega|` everywhere.
    pub fn uniform(grid: &Arc<GridDomain>, target_mass: f64) -> Result<Self> {
        Self::new(ScalarField::constant(grid, target_mass / grid.measure()), target_mass)
    }

    pub fn field(&self) -> &ScalarField {
        &self.field
    }

    pub fn values(&self) -> &[f64] {
        self.field.values()
    }

    pub fn grid(&self) -> &Arc<GridDomain> {
        self.field.grid()
    }

    pub fn target_mass(&self) -> f64 {
        self.target_mass
    }

    pub fn mass(&self) -> f64 {
        integrate_values(self.grid(), self.values())
    }

    /// True when every value is 0 or 1 except for cells on at most one
    /// intermediate level.
    pub fn is_bang_bang(&self) -> bool {
        let mut level: Option<f64> = None;
        for &v in self.values() {
            if v == 0.0 || v == 1.0 {
                continue;
            }
            match level {
                None => level = Some(v),
                Some(l) if l == v => {}
                Some(_) => return false,
            }
        }
        true
    }

    /// Indicator obtained by rounding every value at 1/2.
    pub fn rounded(&self) -> Vec<f64> {
        self.values()
            .iter()
            .map(|&v| if v >= 0.5 { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Absolute mass tolerance `1e-12 * |Omega|`.
pub fn mass_tolerance(grid: &GridDomain) -> f64 {
    1e-12 * grid.measure()
}

/// `(-Delta_h u)(i) = (4 u(i) - sum of interior neighbors) / h^2`.
pub fn laplacian_apply(grid: &GridDomain, u: &ScalarField) -> Result<ScalarField> {
    grid.ensure_same(u.grid())?;
    let mut out = vec![0.0; grid.len()];
    neg_laplacian_into(grid, u.values(), &mut out);
    Ok(ScalarField::from_vec_unchecked(u.grid(), out))
}

pub(crate) fn neg_laplacian_into(grid: &GridDomain, u: &[f64], out: &mut [f64]) {
    let inv_h2 = 1.0 / grid.cell_area();
    for (c, ns) in grid.raw_neighbors().iter().enumerate() {
        let mut s = 4.0 * u[c];
        for &n in ns {
            if n != NONE {
                s -= u[n as usize];
            }
        }
        out[c] = s * inv_h2;
    }
}

/// Midpoint quadrature `h^2 * sum u`.
pub fn integrate(grid: &GridDomain, u: &ScalarField) -> Result<f64> {
    grid.ensure_same(u.grid())?;
    Ok(integrate_values(grid, u.values()))
}

pub(crate) fn integrate_values(grid: &GridDomain, u: &[f64]) -> f64 {
    grid.cell_area() * u.iter().sum::<f64>()
}

/// `h^2 * sum |a - b|`.
pub fn l1_distance(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    a.grid().ensure_same(b.grid())?;
    Ok(l1_values(a.grid(), a.values(), b.values()))
}

pub(crate) fn l1_values(grid: &GridDomain, a: &[f64], b: &[f64]) -> f64 {
    grid.cell_area() * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// `h^2`-weighted inner product.
pub fn inner(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    a.grid().ensure_same(b.grid())?;
    Ok(inner_values(a.grid(), a.values(), b.values()))
}

pub(crate) fn inner_values(grid: &GridDomain, a: &[f64], b: &[f64]) -> f64 {
    grid.cell_area() * dot(a, b)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
