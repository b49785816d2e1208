//! Solid voxelization: surface rasterization by separating-axis
//! triangle/box tests, then interior fill as the complement of the
//! 6-connected exterior.

use super::{TriangleMesh, VoxelGrid};
use crate::error::{Error, Result};

type V3 = [f64; 3];

fn sub(a: V3, b: V3) -> V3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: V3, b: V3) -> V3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Closed triangle/axis-aligned-box overlap (touching counts).
pub fn triangle_box_overlap(center: V3, half: V3, tri: [V3; 3]) -> bool {
    let v = [sub(tri[0], center), sub(tri[1], center), sub(tri[2], center)];
    let edges = [sub(v[1], v[0]), sub(v[2], v[1]), sub(v[0], v[2])];

    let separated = |axis: V3| {
        let p = [dot(v[0], axis), dot(v[1], axis), dot(v[2], axis)];
        let r = half[0] * axis[0].abs() + half[1] * axis[1].abs() + half[2] * axis[2].abs();
        let lo = p[0].min(p[1]).min(p[2]);
        let hi = p[0].max(p[1]).max(p[2]);
        lo > r || hi < -r
    };

    for e in edges {
        for a in 0..3 {
            let mut unit = [0.0; 3];
            unit[a] = 1.0;
            let axis = cross(unit, e);
            if axis != [0.0; 3] && separated(axis) {
                return false;
            }
        }
    }
    for a in 0..3 {
        let lo = v[0][a].min(v[1][a]).min(v[2][a]);
        let hi = v[0][a].max(v[1][a]).max(v[2][a]);
        if lo > half[a] || hi < -half[a] {
            return false;
        }
    }
    let normal = cross(edges[0], edges[1]);
    !(normal != [0.0; 3] && separated(normal))
}

/// Isotropic transform mapping the mesh bounding box into the grid: the
/// box is centered and its longest (relative to the grid) axis spans the
/// grid exactly.
pub fn normalize_to_grid(mesh: &TriangleMesh, dims: [usize; 3]) -> Result<TriangleMesh> {
    if mesh.faces.is_empty() {
        return Err(Error::Geometry("mesh has no faces".into()));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::shape(format!("grid dims must be positive, got {dims:?}")));
    }
    let (lo, hi) = mesh
        .bounds()
        .ok_or_else(|| Error::Geometry("mesh has no vertices".into()))?;
    let mut scale = f64::INFINITY;
    for a in 0..3 {
        let extent = hi[a] - lo[a];
        if !extent.is_finite() {
            return Err(Error::Geometry("non-finite vertex coordinates".into()));
        }
        if extent > 0.0 {
            scale = scale.min(dims[a] as f64 / extent);
        }
    }
    if !scale.is_finite() {
        return Err(Error::Geometry("degenerate bounding box (zero extent)".into()));
    }
    let center = [
        (lo[0] + hi[0]) / 2.0,
        (lo[1] + hi[1]) / 2.0,
        (lo[2] + hi[2]) / 2.0,
    ];
    Ok(mesh.map_vertices(|p| {
        let mut q = [0.0; 3];
        for a in 0..3 {
            q[a] = (p[a] - center[a]) * scale + dims[a] as f64 / 2.0;
        }
        q
    }))
}

/// Cells intersecting the surface of a mesh already in grid coordinates.
pub fn rasterize_surface(grid_mesh: &TriangleMesh, dims: [usize; 3]) -> Result<VoxelGrid> {
    let mut grid = VoxelGrid::empty(dims)?;
    for f in 0..grid_mesh.faces.len() {
        let tri = grid_mesh.triangle(f);
        let mut range = [(0usize, 0usize); 3];
        let mut outside = false;
        for a in 0..3 {
            let lo = tri[0][a].min(tri[1][a]).min(tri[2][a]);
            let hi = tri[0][a].max(tri[1][a]).max(tri[2][a]);
            if hi < 0.0 || lo > dims[a] as f64 {
                outside = true;
                break;
            }
            // a face on a cell boundary touches the cells on both sides
            let first = (lo.floor() - 1.0).max(0.0) as usize;
            let last = (hi.floor() as usize).min(dims[a] - 1);
            range[a] = (first, last);
        }
        if outside {
            continue;
        }
        for z in range[2].0..=range[2].1 {
            for y in range[1].0..=range[1].1 {
                for x in range[0].0..=range[0].1 {
                    if grid.get(x, y, z) {
                        continue;
                    }
                    let c = [x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5];
                    if triangle_box_overlap(c, [0.5; 3], tri) {
                        grid.set(x, y, z, true);
                    }
                }
            }
        }
    }
    Ok(grid)
}

/// Marks every cell not reachable from the grid boundary through empty
/// cells (6-connectivity) as occupied.
pub fn fill_interior(surface: &VoxelGrid) -> VoxelGrid {
    let [dx, dy, dz] = surface.dims();
    let mut exterior = vec![false; surface.len()];
    let mut stack = Vec::new();
    let seed = |x: usize, y: usize, z: usize, stack: &mut Vec<[usize; 3]>, ext: &mut Vec<bool>| {
        let i = surface.index(x, y, z);
        if !surface.cells()[i] && !ext[i] {
            ext[i] = true;
            stack.push([x, y, z]);
        }
    };
    for z in 0..dz {
        for y in 0..dy {
            for x in 0..dx {
                if x == 0 || y == 0 || z == 0 || x == dx - 1 || y == dy - 1 || z == dz - 1 {
                    seed(x, y, z, &mut stack, &mut exterior);
                }
            }
        }
    }
    while let Some([x, y, z]) = stack.pop() {
        let mut visit = |nx: usize, ny: usize, nz: usize| seed(nx, ny, nz, &mut stack, &mut exterior);
        if x > 0 {
            visit(x - 1, y, z);
        }
        if x + 1 < dx {
            visit(x + 1, y, z);
        }
        if y > 0 {
            visit(x, y - 1, z);
        }
        if y + 1 < dy {
            visit(x, y + 1, z);
        }
        if z > 0 {
            visit(x, y, z - 1);
        }
        if z + 1 < dz {
            visit(x, y, z + 1);
        }
    }
    let cells = exterior.into_iter().map(|e| !e).collect();
    VoxelGrid::from_cells(surface.dims(), cells).expect("same dims as surface")
}

/// Solid voxelization of a mesh into a grid of the given dims.
pub fn voxelize(mesh: &TriangleMesh, dims: [usize; 3]) -> Result<VoxelGrid> {
    let normalized = normalize_to_grid(mesh, dims)?;
    let surface = rasterize_surface(&normalized, dims)?;
    Ok(fill_interior(&surface))
}

/// Surface cells only, after the same normalization as [`voxelize`].
pub fn voxelize_surface(mesh: &TriangleMesh, dims: [usize; 3]) -> Result<VoxelGrid> {
    let normalized = normalize_to_grid(mesh, dims)?;
    rasterize_surface(&normalized, dims)
}
