//! Procedural closed meshes in ten categories, plus a simple depth-shaded
//! renderer. Used for smoke runs and desk-scale experiments when no
//! external shape corpus is at hand.

use std::f64::consts::PI;

use rand::Rng;

use super::{ImageSample, TriangleMesh, VoxelGrid};

pub fn box_mesh(lo: [f64; 3], hi: [f64; 3]) -> TriangleMesh {
    let v = |x: bool, y: bool, z: bool| {
        [
            if x { hi[0] } else { lo[0] },
            if y { hi[1] } else { lo[1] },
            if z { hi[2] } else { lo[2] },
        ]
    };
    let vertices = vec![
        v(false, false, false),
        v(true, false, false),
        v(true, true, false),
        v(false, true, false),
        v(false, false, true),
        v(true, false, true),
        v(true, true, true),
        v(false, true, true),
    ];
    let quads = [
        [0, 3, 2, 1],
        [4, 5, 6, 7],
        [0, 1, 5, 4],
        [2, 3, 7, 6],
        [1, 2, 6, 5],
        [0, 4, 7, 3],
    ];
    let faces = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    TriangleMesh { vertices, faces }
}

/// Closed surface of revolution around the z axis through `center`;
/// `profile` lists (radius, z) pairs from bottom to top, where a radius of
/// zero collapses to a pole.
fn revolve(center: [f64; 3], profile: &[(f64, f64)], segments: usize) -> TriangleMesh {
    let mut vertices = Vec::new();
    let mut rings: Vec<Vec<usize>> = Vec::new();
    for &(r, z) in profile {
        if r == 0.0 {
            vertices.push([center[0], center[1], center[2] + z]);
            rings.push(vec![vertices.len() - 1; segments]);
        } else {
            let start = vertices.len();
            for s in 0..segments {
                let a = 2.0 * PI * s as f64 / segments as f64;
                vertices.push([center[0] + r * a.cos(), center[1] + r * a.sin(), center[2] + z]);
            }
            rings.push((start..start + segments).collect());
        }
    }
    let mut faces = Vec::new();
    for w in rings.windows(2) {
        let (lo, hi) = (&w[0], &w[1]);
        for s in 0..segments {
            let t = (s + 1) % segments;
            let quad = [lo[s], lo[t], hi[t], hi[s]];
            for tri in [[quad[0], quad[1], quad[2]], [quad[0], quad[2], quad[3]]] {
                if tri[0] != tri[1] && tri[1] != tri[2] && tri[0] != tri[2] {
                    faces.push(tri);
                }
            }
        }
    }
    // cap open ends with a center vertex
    for (ring, z) in [(&rings[0], profile[0].1), (&rings[rings.len() - 1], profile[profile.len() - 1].1)] {
        if ring[0] != ring[1] {
            vertices.push([center[0], center[1], center[2] + z]);
            let c = vertices.len() - 1;
            for s in 0..segments {
                faces.push([c, ring[s], ring[(s + 1) % segments]]);
            }
        }
    }
    TriangleMesh { vertices, faces }
}

pub fn ellipsoid(center: [f64; 3], radii: [f64; 3], segments: usize) -> TriangleMesh {
    let stacks = segments / 2;
    let profile: Vec<(f64, f64)> = (0..=stacks)
        .map(|i| {
            let phi = PI * i as f64 / stacks as f64;
            let r = if i == 0 || i == stacks { 0.0 } else { phi.sin() };
            (r, -phi.cos() * radii[2])
        })
        .collect();
    let unit = revolve([0.0; 3], &profile, segments);
    unit.map_vertices(|p| {
        [
            center[0] + p[0] * radii[0],
            center[1] + p[1] * radii[1],
            center[2] + p[2],
        ]
    })
}

pub fn cylinder(center: [f64; 3], radius: f64, half_height: f64, segments: usize) -> TriangleMesh {
    revolve(center, &[(radius, -half_height), (radius, half_height)], segments)
}

pub fn cone(center: [f64; 3], radius: f64, height: f64, segments: usize) -> TriangleMesh {
    revolve(center, &[(radius, -height / 2.0), (0.0, height / 2.0)], segments)
}

pub fn torus(center: [f64; 3], major: f64, minor: f64, segments: usize) -> TriangleMesh {
    let mut vertices = Vec::new();
    let tube = segments / 2;
    for i in 0..segments {
        let u = 2.0 * PI * i as f64 / segments as f64;
        for j in 0..tube {
            let v = 2.0 * PI * j as f64 / tube as f64;
            let r = major + minor * v.cos();
            vertices.push([
                center[0] + r * u.cos(),
                center[1] + r * u.sin(),
                center[2] + minor * v.sin(),
            ]);
        }
    }
    let mut faces = Vec::new();
    for i in 0..segments {
        for j in 0..tube {
            let a = i * tube + j;
            let b = ((i + 1) % segments) * tube + j;
            let c = ((i + 1) % segments) * tube + (j + 1) % tube;
            let d = i * tube + (j + 1) % tube;
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    TriangleMesh { vertices, faces }
}

pub fn rotate_z(mesh: &TriangleMesh, angle: f64) -> TriangleMesh {
    let (s, c) = angle.sin_cos();
    mesh.map_vertices(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]])
}

/// Ten procedural shape categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShapeClass {
    Block,
    Ball,
    Cylinder,
    Cone,
    Ring,
    Table,
    Chair,
    Cross,
    Ell,
    Dumbbell,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 10] = [
        ShapeClass::Block,
        ShapeClass::Ball,
        ShapeClass::Cylinder,
        ShapeClass::Cone,
        ShapeClass::Ring,
        ShapeClass::Table,
        ShapeClass::Chair,
        ShapeClass::Cross,
        ShapeClass::Ell,
        ShapeClass::Dumbbell,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Block => "block",
            ShapeClass::Ball => "ball",
            ShapeClass::Cylinder => "cylinder",
            ShapeClass::Cone => "cone",
            ShapeClass::Ring => "ring",
            ShapeClass::Table => "table",
            ShapeClass::Chair => "chair",
            ShapeClass::Cross => "cross",
            ShapeClass::Ell => "ell",
            ShapeClass::Dumbbell => "dumbbell",
        }
    }

    /// A random instance: proportions jittered and a small rotation about z.
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> TriangleMesh {
        let mut j = |lo: f64, hi: f64| rng.gen_range(lo..hi);
        const SEG: usize = 24;
        let mesh = match self {
            ShapeClass::Block => {
                let (a, b, c) = (j(0.6, 1.0), j(0.4, 0.8), j(0.3, 0.6));
                box_mesh([-a, -b, -c], [a, b, c])
            }
            ShapeClass::Ball => {
                let r = j(0.85, 1.0);
                ellipsoid([0.0; 3], [1.0, r, j(0.85, 1.0)], SEG)
            }
            ShapeClass::Cylinder => cylinder([0.0; 3], j(0.3, 0.5), j(0.8, 1.0), SEG),
            ShapeClass::Cone => cone([0.0; 3], j(0.6, 0.9), j(1.6, 2.0), SEG),
            ShapeClass::Ring => torus([0.0; 3], 1.0, j(0.2, 0.35), SEG),
            ShapeClass::Table => {
                let (w, d, h) = (j(0.8, 1.0), j(0.5, 0.8), j(0.5, 0.8));
                let t = j(0.08, 0.14);
                let l = j(0.08, 0.14);
                let mut parts = vec![box_mesh([-w, -d, h - t], [w, d, h])];
                for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
                    let cx = sx * (w - l);
                    let cy = sy * (d - l);
                    parts.push(box_mesh([cx - l, cy - l, -h], [cx + l, cy + l, h - t]));
                }
                TriangleMesh::merge(&parts)
            }
            ShapeClass::Chair => {
                let s = j(0.45, 0.6);
                let h = j(0.4, 0.6);
                let back = j(0.7, 1.0);
                let t = 0.1;
                let l = 0.08;
                let mut parts = vec![
                    box_mesh([-s, -s, 0.0], [s, s, t]),
                    box_mesh([-s, s - t, t], [s, s, t + back]),
                ];
                for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
                    let cx = sx * (s - l);
                    let cy = sy * (s - l);
                    parts.push(box_mesh([cx - l, cy - l, -h], [cx + l, cy + l, 0.0]));
                }
                TriangleMesh::merge(&parts)
            }
            ShapeClass::Cross => {
                let a = j(0.15, 0.25);
                let lx = j(0.8, 1.0);
                let ly = j(0.8, 1.0);
                let lz = j(0.8, 1.0);
                TriangleMesh::merge(&[
                    box_mesh([-lx, -a, -a], [lx, a, a]),
                    box_mesh([-a, -ly, -a], [a, ly, a]),
                    box_mesh([-a, -a, -lz], [a, a, lz]),
                ])
            }
            ShapeClass::Ell => {
                let t = j(0.25, 0.4);
                let len = j(0.8, 1.0);
                let hgt = j(0.8, 1.0);
                let depth = j(0.3, 0.5);
                TriangleMesh::merge(&[
                    box_mesh([-len, -depth, -hgt], [len, depth, -hgt + t]),
                    box_mesh([-len, -depth, -hgt + t], [-len + t, depth, hgt]),
                ])
            }
            ShapeClass::Dumbbell => {
                let r = j(0.3, 0.45);
                let bar = j(0.08, 0.15);
                let len = 1.0;
                TriangleMesh::merge(&[
                    ellipsoid([-len + r, 0.0, 0.0], [r; 3], SEG),
                    ellipsoid([len - r, 0.0, 0.0], [r; 3], SEG),
                    box_mesh([-len + r, -bar, -bar], [len - r, bar, bar]),
                ])
            }
        };
        rotate_z(&mesh, j(-0.25, 0.25))
    }
}

/// Orthographic view along −y with depth shading: nearer occupied cells
/// are brighter, background is black. Each color channel is tinted so the
/// image is not grey.
pub fn render_depth(grid: &VoxelGrid, side: usize, category: &str) -> ImageSample {
    let [dx, dy, dz] = grid.dims();
    let mut pixels = vec![0.0f32; side * side * 3];
    for py in 0..side {
        for px in 0..side {
            let x = px * dx / side;
            let z = dz - 1 - py * dz / side;
            if let Some(y) = (0..dy).find(|&y| grid.get(x, y, z)) {
                let shade = 1.0 - 0.7 * y as f32 / dy as f32;
                let o = (py * side + px) * 3;
                pixels[o] = shade;
                pixels[o + 1] = 0.8 * shade;
                pixels[o + 2] = 0.6 * shade;
            }
        }
    }
    ImageSample::new(side, pixels, category).expect("pixels sized and in range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel::voxelize;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn every_class_voxelizes_to_a_nonempty_solid() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for class in ShapeClass::ALL {
            let m = class.sample(&mut rng);
            assert!(m.faces.iter().all(|f| f.iter().all(|&i| i < m.vertices.len())));
            let g = voxelize(&m, [16; 3]).unwrap();
            let n = g.count();
            assert!(n > 16 && n < 16 * 16 * 16, "{}: {n}", class.name());
        }
    }

    #[test]
    fn ball_is_filled() {
        let g = voxelize(&ellipsoid([0.0; 3], [1.0; 3], 32), [20; 3]).unwrap();
        assert!(g.get(10, 10, 10));
    }

    #[test]
    fn render_shape() {
        let mut g = VoxelGrid::cube(10).unwrap();
        g.set(5, 3, 5, true);
        let img = render_depth(&g, 20, "dot");
        assert_eq!(img.pixels.len(), 1200);
        assert!(img.pixels.iter().any(|&v| v > 0.0));
    }
}
