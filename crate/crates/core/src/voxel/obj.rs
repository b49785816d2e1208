//! Wavefront OBJ export of occupied cells as unit cubes, with shared
//! vertices merged and faces between two occupied cells dropped.

use std::collections::HashMap;
use std::io::Write;

use super::VoxelGrid;
use crate::error::Result;

/// Triangulated boundary of the occupied cells: vertex positions in cell
/// units and 0-based triangle indices.
pub fn grid_to_mesh(grid: &VoxelGrid) -> (Vec<[usize; 3]>, Vec<[usize; 3]>) {
    let [dx, dy, dz] = grid.dims();
    let occupied = |x: isize, y: isize, z: isize| {
        x >= 0
            && y >= 0
            && z >= 0
            && (x as usize) < dx
            && (y as usize) < dy
            && (z as usize) < dz
            && grid.get(x as usize, y as usize, z as usize)
    };
    let mut index: HashMap<[usize; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut vid = |p: [usize; 3], vertices: &mut Vec<[usize; 3]>| {
        *index.entry(p).or_insert_with(|| {
            vertices.push(p);
            vertices.len() - 1
        })
    };
    // (neighbour offset, four corners counter-clockwise seen from outside)
    const SIDES: [([isize; 3], [[usize; 3]; 4]); 6] = [
        ([-1, 0, 0], [[0, 0, 0], [0, 0, 1], [0, 1, 1], [0, 1, 0]]),
        ([1, 0, 0], [[1, 0, 0], [1, 1, 0], [1, 1, 1], [1, 0, 1]]),
        ([0, -1, 0], [[0, 0, 0], [1, 0, 0], [1, 0, 1], [0, 0, 1]]),
        ([0, 1, 0], [[0, 1, 0], [0, 1, 1], [1, 1, 1], [1, 1, 0]]),
        ([0, 0, -1], [[0, 0, 0], [0, 1, 0], [1, 1, 0], [1, 0, 0]]),
        ([0, 0, 1], [[0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]]),
    ];
    for [x, y, z] in grid.occupied() {
        for (off, corners) in SIDES {
            if occupied(x as isize + off[0], y as isize + off[1], z as isize + off[2]) {
                continue;
            }
            let q = corners.map(|c| vid([x + c[0], y + c[1], z + c[2]], &mut vertices));
            faces.push([q[0], q[1], q[2]]);
            faces.push([q[0], q[2], q[3]]);
        }
    }
    (vertices, faces)
}

pub fn write_obj<W: Write>(grid: &VoxelGrid, mut sink: W) -> Result<()> {
    let (vertices, faces) = grid_to_mesh(grid);
    writeln!(sink, "# {} vertices, {} triangles", vertices.len(), faces.len())?;
    for v in &vertices {
        writeln!(sink, "v {} {} {}", v[0], v[1], v[2])?;
    }
    for f in &faces {
        writeln!(sink, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    sink.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_counts() {
        let mut g = VoxelGrid::cube(3).unwrap();
        g.set(1, 1, 1, true);
        let (v, f) = grid_to_mesh(&g);
        assert_eq!((v.len(), f.len()), (8, 12));
        g.set(2, 1, 1, true);
        let (v, f) = grid_to_mesh(&g);
        assert_eq!((v.len(), f.len()), (12, 20));
        let (v, f) = grid_to_mesh(&VoxelGrid::cube(3).unwrap());
        assert!(v.is_empty() && f.is_empty());
    }

    #[test]
    fn closed_surface_with_outward_normals() {
        let mut g = VoxelGrid::cube(4).unwrap();
        for (x, y, z) in [(1, 1, 1), (2, 1, 1), (2, 2, 1), (2, 2, 2)] {
            g.set(x, y, z, true);
        }
        let (v, f) = grid_to_mesh(&g);
        // every edge is shared by exactly two triangles, in opposite directions
        let mut edges = HashMap::new();
        for t in &f {
            for k in 0..3 {
                *edges.entry((t[k], t[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        for (&(a, b), &n) in &edges {
            assert_eq!(n, 1);
            assert_eq!(edges.get(&(b, a)), Some(&1));
        }
        // divergence theorem: signed volume equals the cell count
        let vol: f64 = f
            .iter()
            .map(|t| {
                let p = t.map(|i| v[i].map(|c| c as f64));
                let c = [
                    p[1][1] * p[2][2] - p[1][2] * p[2][1],
                    p[1][2] * p[2][0] - p[1][0] * p[2][2],
                    p[1][0] * p[2][1] - p[1][1] * p[2][0],
                ];
                (p[0][0] * c[0] + p[0][1] * c[1] + p[0][2] * c[2]) / 6.0
            })
            .sum();
        assert!((vol - 4.0).abs() < 1e-12, "{vol}");
    }

    #[test]
    fn obj_text() {
        let mut g = VoxelGrid::cube(2).unwrap();
        g.set(0, 0, 0, true);
        let mut buf = Vec::new();
        write_obj(&g, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().filter(|l| l.starts_with("v ")).count(), 8);
        assert_eq!(s.lines().filter(|l| l.starts_with("f ")).count(), 12);
        let mut empty = Vec::new();
        write_obj(&VoxelGrid::cube(2).unwrap(), &mut empty).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap().lines().count(), 1);
    }
}
