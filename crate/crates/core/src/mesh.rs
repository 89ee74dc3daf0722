//! Uniform Cartesian control-volume mesh with an obstacle mask.
//!
//! Cells are addressed by `(i, j)` with `i` along x and `j` along y; flat
//! indices are row-major (`j * nx + i`). A cell is solid iff its center lies
//! inside one of the obstacle regions. Unknowns of the finite-volume solvers
//! live on fluid cells only and use the compact numbering returned by
//! [`Mesh::fluid_index`].
//!
//! Boundary tags follow the channel layout: Γ₁ bottom wall, Γ₂ outlet (right),
//! Γ₃ top wall, Γ₄ inlet (left), Γ₅, Γ₆, ... one tag per obstacle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("grid needs at least 2 cells per axis, got {nx}x{ny}")]
    TooFewCells { nx: usize, ny: usize },
    #[error("domain extents must be positive and finite, got {lx}x{ly}")]
    BadExtent { lx: f64, ly: f64 },
    #[error("obstacle {index} is not contained in the domain")]
    ObstacleOutside { index: usize },
    #[error("obstacle {index} is degenerate")]
    DegenerateObstacle { index: usize },
    #[error("cell ({i}, {j}) is outside the {nx}x{ny} grid")]
    OutOfRange { i: usize, j: usize, nx: usize, ny: usize },
    #[error("cell ({i}, {j}) is solid")]
    SolidCell { i: usize, j: usize },
}

/// Solid region inside the domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Obstacle {
    Rect { x0: f64, x1: f64, y0: f64, y1: f64 },
    Circle { cx: f64, cy: f64, r: f64 },
}

impl Obstacle {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Obstacle::Rect { x0, x1, y0, y1 } => x >= x0 && x <= x1 && y >= y0 && y <= y1,
            Obstacle::Circle { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
        }
    }

    fn bounding_box(&self) -> [f64; 4] {
        match *self {
            Obstacle::Rect { x0, x1, y0, y1 } => [x0, x1, y0, y1],
            Obstacle::Circle { cx, cy, r } => [cx - r, cx + r, cy - r, cy + r],
        }
    }

    fn is_degenerate(&self) -> bool {
        match *self {
            Obstacle::Rect { x0, x1, y0, y1 } => !(x1 > x0 && y1 > y0),
            Obstacle::Circle { r, .. } => !(r > 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    #[serde(default)]
    pub origin: [f64; 2],
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
}

impl GridSpec {
    pub fn unit_square(n: usize) -> Self {
        Self::rectangle(n, n, 1.0, 1.0)
    }

    pub fn rectangle(nx: usize, ny: usize, lx: f64, ly: f64) -> Self {
        Self { nx, ny, lx, ly, origin: [0.0, 0.0], obstacles: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellIndex {
    pub i: usize,
    pub j: usize,
}

impl CellIndex {
    pub fn new(i: usize, j: usize) -> Self {
        Self { i, j }
    }
}

/// Where a boundary face sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    /// Γ₁, y = y_min.
    Bottom,
    /// Γ₂, x = x_max.
    Outlet,
    /// Γ₃, y = y_max.
    Top,
    /// Γ₄, x = x_min.
    Inlet,
    /// Γ₅ for the first obstacle, Γ₆ for the second, and so on.
    Obstacle(usize),
}

impl BoundaryTag {
    /// 1-based Γ label.
    pub fn gamma(&self) -> usize {
        match *self {
            BoundaryTag::Bottom => 1,
            BoundaryTag::Outlet => 2,
            BoundaryTag::Top => 3,
            BoundaryTag::Inlet => 4,
            BoundaryTag::Obstacle(k) => 5 + k,
        }
    }

    pub fn is_obstacle(&self) -> bool {
        matches!(self, BoundaryTag::Obstacle(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Neighbor {
    Cell(CellIndex),
    Boundary(BoundaryTag),
}

/// Oriented control-volume interface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    pub owner: CellIndex,
    pub neighbor: Neighbor,
    /// |σ_{K,L}|
    pub measure: f64,
    /// d_{K,L}; center-to-face distance for boundary faces.
    pub distance: f64,
    /// Unit normal pointing out of `owner`.
    pub normal: [f64; 2],
}

impl Face {
    /// Transmissibility |σ|/d.
    pub fn trans(&self) -> f64 {
        self.measure / self.distance
    }
}

/// The four axis directions, in the fixed order used by every stencil loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dir {
    West,
    East,
    South,
    North,
}

pub const DIRS: [Dir; 4] = [Dir::West, Dir::East, Dir::South, Dir::North];

impl Dir {
    pub fn normal(self) -> [f64; 2] {
        match self {
            Dir::West => [-1.0, 0.0],
            Dir::East => [1.0, 0.0],
            Dir::South => [0.0, -1.0],
            Dir::North => [0.0, 1.0],
        }
    }
}

/// Immutable mesh. Safe to share between threads.
#[derive(Debug, Clone)]
pub struct Mesh {
    spec: GridSpec,
    dx: f64,
    dy: f64,
    /// Obstacle id per cell, `None` for fluid.
    solid: Vec<Option<usize>>,
    fluid_index: Vec<Option<usize>>,
    fluid_cells: Vec<CellIndex>,
    interior_faces: Vec<Face>,
    boundary_faces: Vec<Face>,
}

pub fn build_grid(spec: GridSpec) -> Result<Mesh, MeshError> {
    Mesh::new(spec)
}

impl Mesh {
    pub fn new(spec: GridSpec) -> Result<Self, MeshError> {
        let (nx, ny) = (spec.nx, spec.ny);
        if nx < 2 || ny < 2 {
            return Err(MeshError::TooFewCells { nx, ny });
        }
        if !(spec.lx > 0.0 && spec.ly > 0.0 && spec.lx.is_finite() && spec.ly.is_finite()) {
            return Err(MeshError::BadExtent { lx: spec.lx, ly: spec.ly });
        }
        let [ox, oy] = spec.origin;
        for (index, ob) in spec.obstacles.iter().enumerate() {
            if ob.is_degenerate() {
                return Err(MeshError::DegenerateObstacle { index });
            }
            let [x0, x1, y0, y1] = ob.bounding_box();
            if x0 < ox || y0 < oy || x1 > ox + spec.lx || y1 > oy + spec.ly {
                return Err(MeshError::ObstacleOutside { index });
            }
        }
        let dx = spec.lx / nx as f64;
        let dy = spec.ly / ny as f64;

        let mut solid = vec![None; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let x = ox + (i as f64 + 0.5) * dx;
                let y = oy + (j as f64 + 0.5) * dy;
                solid[j * nx + i] = spec.obstacles.iter().position(|o| o.contains(x, y));
            }
        }

        let mut fluid_index = vec![None; nx * ny];
        let mut fluid_cells = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                if solid[j * nx + i].is_none() {
                    fluid_index[j * nx + i] = Some(fluid_cells.len());
                    fluid_cells.push(CellIndex::new(i, j));
                }
            }
        }

        let mut mesh = Mesh {
            spec,
            dx,
            dy,
            solid,
            fluid_index,
            fluid_cells,
            interior_faces: Vec::new(),
            boundary_faces: Vec::new(),
        };
        let (mut interior, mut boundary) = (Vec::new(), Vec::new());
        for &k in &mesh.fluid_cells {
            for dir in DIRS {
                let face = mesh.face_towards(k, dir);
                match face.neighbor {
                    // each interior pair once: owned by the west/south cell
                    Neighbor::Cell(_) if matches!(dir, Dir::East | Dir::North) => interior.push(face),
                    Neighbor::Cell(_) => {}
                    Neighbor::Boundary(_) => boundary.push(face),
                }
            }
        }
        mesh.interior_faces = interior;
        mesh.boundary_faces = boundary;
        Ok(mesh)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }
    pub fn nx(&self) -> usize {
        self.spec.nx
    }
    pub fn ny(&self) -> usize {
        self.spec.ny
    }
    pub fn dx(&self) -> f64 {
        self.dx
    }
    pub fn dy(&self) -> f64 {
        self.dy
    }
    pub fn cell_volume(&self) -> f64 {
        self.dx * self.dy
    }
    pub fn n_cells(&self) -> usize {
        self.spec.nx * self.spec.ny
    }
    pub fn n_fluid(&self) -> usize {
        self.fluid_cells.len()
    }
    pub fn fluid_cells(&self) -> &[CellIndex] {
        &self.fluid_cells
    }
    pub fn interior_faces(&self) -> &[Face] {
        &self.interior_faces
    }
    pub fn boundary_faces(&self) -> &[Face] {
        &self.boundary_faces
    }

    pub fn flat(&self, c: CellIndex) -> usize {
        c.j * self.spec.nx + c.i
    }

    pub fn in_range(&self, c: CellIndex) -> bool {
        c.i < self.spec.nx && c.j < self.spec.ny
    }

    pub fn is_solid(&self, c: CellIndex) -> bool {
        self.solid[self.flat(c)].is_some()
    }

    /// Obstacle id owning a solid cell.
    pub fn obstacle_of(&self, c: CellIndex) -> Option<usize> {
        self.solid[self.flat(c)]
    }

    /// Compact unknown number of a fluid cell.
    pub fn fluid_index(&self, c: CellIndex) -> Option<usize> {
        self.fluid_index[self.flat(c)]
    }

    pub fn center(&self, c: CellIndex) -> [f64; 2] {
        [
            self.spec.origin[0] + (c.i as f64 + 0.5) * self.dx,
            self.spec.origin[1] + (c.j as f64 + 0.5) * self.dy,
        ]
    }

    /// Cell adjacent to `c` across `dir`, if it exists on the grid.
    pub fn step(&self, c: CellIndex, dir: Dir) -> Option<CellIndex> {
        let (nx, ny) = (self.spec.nx, self.spec.ny);
        match dir {
            Dir::West if c.i > 0 => Some(CellIndex::new(c.i - 1, c.j)),
            Dir::East if c.i + 1 < nx => Some(CellIndex::new(c.i + 1, c.j)),
            Dir::South if c.j > 0 => Some(CellIndex::new(c.i, c.j - 1)),
            Dir::North if c.j + 1 < ny => Some(CellIndex::new(c.i, c.j + 1)),
            _ => None,
        }
    }

    /// Face of fluid cell `c` in direction `dir`.
    pub fn face_towards(&self, c: CellIndex, dir: Dir) -> Face {
        let (measure, full) = match dir {
            Dir::West | Dir::East => (self.dy, self.dx),
            Dir::South | Dir::North => (self.dx, self.dy),
        };
        let neighbor = match self.step(c, dir) {
            Some(l) => match self.obstacle_of(l) {
                Some(k) => Neighbor::Boundary(BoundaryTag::Obstacle(k)),
                None => Neighbor::Cell(l),
            },
            None => Neighbor::Boundary(match dir {
                Dir::West => BoundaryTag::Inlet,
                Dir::East => BoundaryTag::Outlet,
                Dir::South => BoundaryTag::Bottom,
                Dir::North => BoundaryTag::Top,
            }),
        };
        let distance = match neighbor {
            Neighbor::Cell(_) => full,
            Neighbor::Boundary(_) => 0.5 * full,
        };
        Face { owner: c, neighbor, measure, distance, normal: dir.normal() }
    }

    /// Faces of fluid cell `k`: fluid neighbors plus boundary faces, in
    /// West, East, South, North order.
    pub fn neighbors(&self, k: CellIndex) -> Result<Vec<(Neighbor, Face)>, MeshError> {
        if !self.in_range(k) {
            return Err(MeshError::OutOfRange { i: k.i, j: k.j, nx: self.spec.nx, ny: self.spec.ny });
        }
        if self.is_solid(k) {
            return Err(MeshError::SolidCell { i: k.i, j: k.j });
        }
        Ok(DIRS
            .iter()
            .map(|&d| {
                let f = self.face_towards(k, d);
                (f.neighbor, f)
            })
            .collect())
    }

    /// Scatter fluid-cell values into a full `nx*ny` row-major field.
    pub fn to_full_field(&self, values: &[f64], fill: f64) -> Vec<f64> {
        let mut out = vec![fill; self.n_cells()];
        for (k, c) in self.fluid_cells.iter().enumerate() {
            out[self.flat(*c)] = values[k];
        }
        out
    }

    /// Evaluate `f` at every fluid cell center.
    pub fn sample<F: Fn(f64, f64) -> f64>(&self, f: F) -> Vec<f64> {
        self.fluid_cells
            .iter()
            .map(|&c| {
                let [x, y] = self.center(c);
                f(x, y)
            })
            .collect()
    }

    /// Cell averages of `f` by 3x3 Gauss-Legendre quadrature.
    pub fn cell_averages<F: Fn(f64, f64) -> f64>(&self, f: F) -> Vec<f64> {
        let a = (0.6f64).sqrt() * 0.5;
        let nodes = [-a, 0.0, a];
        let weights = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];
        self.fluid_cells
            .iter()
            .map(|&c| {
                let [x, y] = self.center(c);
                let mut s = 0.0;
                for (wy, ny) in weights.iter().zip(nodes) {
                    for (wx, nx) in weights.iter().zip(nodes) {
                        s += wx * wy * f(x + nx * self.dx, y + ny * self.dy);
                    }
                }
                s
            })
            .collect()
    }
}

/// Face-normal velocities on the staggered faces of a mesh: `u` on x-faces
/// (`(nx + 1) * ny`, index `j * (nx + 1) + i` for the face at x = i·dx) and
/// `v` on y-faces (`nx * (ny + 1)`, index `j * nx + i` for the face at y = j·dy).
#[derive(Debug, Clone, PartialEq)]
pub struct FaceVelocity {
    pub nx: usize,
    pub ny: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FaceVelocity {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        Self { nx, ny, u: vec![0.0; (nx + 1) * ny], v: vec![0.0; nx * (ny + 1)] }
    }

    pub fn u_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn v_index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// Velocity through the `dir` face of cell `c`, positive when leaving `c`.
    pub fn outward(&self, c: CellIndex, dir: Dir) -> f64 {
        match dir {
            Dir::West => -self.u[self.u_index(c.i, c.j)],
            Dir::East => self.u[self.u_index(c.i + 1, c.j)],
            Dir::South => -self.v[self.v_index(c.i, c.j)],
            Dir::North => self.v[self.v_index(c.i, c.j + 1)],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn channel() -> GridSpec {
        GridSpec {
            nx: 40,
            ny: 16,
            lx: 10.0,
            ly: 4.0,
            origin: [0.0, 0.0],
            obstacles: vec![
                Obstacle::Rect { x0: 2.0, x1: 3.0, y0: 1.0, y1: 2.0 },
                Obstacle::Rect { x0: 5.0, x1: 6.0, y0: 2.0, y1: 3.0 },
            ],
        }
    }

    #[test]
    fn smallest_grid_counts() {
        let m = build_grid(GridSpec::unit_square(2)).unwrap();
        assert_eq!(m.n_cells(), 4);
        assert_eq!(m.interior_faces().len(), 4);
        assert_eq!(m.boundary_faces().len(), 8);
    }

    #[test]
    fn paper_resolution_cell_volume() {
        let m = build_grid(GridSpec::unit_square(256)).unwrap();
        assert_eq!(m.n_cells(), 65536);
        assert_eq!(m.cell_volume(), (1.0f64 / 256.0).powi(2));
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(matches!(build_grid(GridSpec::unit_square(0)), Err(MeshError::TooFewCells { .. })));
        let mut s = GridSpec::unit_square(4);
        s.obstacles.push(Obstacle::Rect { x0: 0.5, x1: 1.5, y0: 0.1, y1: 0.2 });
        assert_eq!(build_grid(s).unwrap_err(), MeshError::ObstacleOutside { index: 0 });
        let mut s = GridSpec::unit_square(4);
        s.obstacles.push(Obstacle::Circle { cx: 0.5, cy: 0.5, r: 0.0 });
        assert_eq!(build_grid(s).unwrap_err(), MeshError::DegenerateObstacle { index: 0 });
    }

    #[test]
    fn solid_count_matches_point_scan() {
        let spec = channel();
        let m = build_grid(spec.clone()).unwrap();
        let (dx, dy) = (spec.lx / spec.nx as f64, spec.ly / spec.ny as f64);
        let mut count = 0;
        for j in 0..spec.ny {
            for i in 0..spec.nx {
                let (x, y) = ((i as f64 + 0.5) * dx, (j as f64 + 0.5) * dy);
                let inside = (2.0..=3.0).contains(&x) && (1.0..=2.0).contains(&y)
                    || (5.0..=6.0).contains(&x) && (2.0..=3.0).contains(&y);
                count += inside as usize;
            }
        }
        assert_eq!(m.n_cells() - m.n_fluid(), count);
    }

    #[test]
    fn stencil_shapes() {
        let m = build_grid(GridSpec::unit_square(4)).unwrap();
        let nb = m.neighbors(CellIndex::new(1, 2)).unwrap();
        assert!(nb.iter().all(|(n, _)| matches!(n, Neighbor::Cell(_))));
        let nb = m.neighbors(CellIndex::new(0, 0)).unwrap();
        let cells = nb.iter().filter(|(n, _)| matches!(n, Neighbor::Cell(_))).count();
        assert_eq!(cells, 2);
        assert_eq!(nb.len() - cells, 2);
        assert!(matches!(m.neighbors(CellIndex::new(4, 0)), Err(MeshError::OutOfRange { .. })));
    }

    #[test]
    fn obstacle_side_is_tagged() {
        let m = build_grid(channel()).unwrap();
        // cell (7, 6) has center (1.875, 1.625); its east neighbor (8, 6) is inside obstacle 0
        let c = CellIndex::new(7, 6);
        assert!(m.is_solid(CellIndex::new(8, 6)));
        let nb = m.neighbors(c).unwrap();
        assert_eq!(nb[1].0, Neighbor::Boundary(BoundaryTag::Obstacle(0)));
        assert_eq!(BoundaryTag::Obstacle(0).gamma(), 5);
        assert_eq!(BoundaryTag::Obstacle(1).gamma(), 6);
        assert!(matches!(m.neighbors(CellIndex::new(8, 6)), Err(MeshError::SolidCell { .. })));
    }

    #[test]
    fn area_and_perimeter() {
        let spec = channel();
        let m = build_grid(spec).unwrap();
        let area: f64 = m.fluid_cells().iter().map(|_| m.cell_volume()).sum();
        let expect = 40.0 - 2.0;
        assert!((area - expect).abs() <= 1e-12 * expect);
        let perim: f64 = m.boundary_faces().iter().map(|f| f.measure).sum();
        let expect = 2.0 * (10.0 + 4.0) + 2.0 * 4.0;
        assert!((perim - expect).abs() <= 1e-12 * expect);
        let mut tags: Vec<usize> = m
            .boundary_faces()
            .iter()
            .map(|f| match f.neighbor {
                Neighbor::Boundary(t) => t.gamma(),
                Neighbor::Cell(_) => unreachable!(),
            })
            .collect();
        tags.sort();
        tags.dedup();
        assert_eq!(tags, vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn face_symmetry() {
        let m = build_grid(channel()).unwrap();
        for f in m.interior_faces() {
            let Neighbor::Cell(l) = f.neighbor else { unreachable!() };
            let back = m
                .neighbors(l)
                .unwrap()
                .into_iter()
                .find(|(n, _)| *n == Neighbor::Cell(f.owner))
                .expect("symmetric neighbor")
                .1;
            assert_eq!(back.normal, [-f.normal[0], -f.normal[1]]);
            assert_eq!(back.distance, f.distance);
            assert_eq!(back.measure, f.measure);
        }
    }
}
