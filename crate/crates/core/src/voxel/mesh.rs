use std::io::BufRead;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
            return Err(Error::Geometry(format!(
                "face {f:?} references a vertex beyond {n}"
            )));
        }
        Ok(TriangleMesh { vertices, faces })
    }

    pub fn triangle(&self, f: usize) -> [[f64; 3]; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Axis-aligned bounds `(min, max)`, or `None` for a vertex-less mesh.
    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(mut lo, mut hi), v| {
            for a in 0..3 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
            (lo, hi)
        }))
    }

    pub fn map_vertices(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        TriangleMesh {
            vertices: self.vertices.iter().map(|&v| f(v)).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Concatenates meshes, re-indexing faces.
    pub fn merge(parts: &[TriangleMesh]) -> Self {
        let mut out = TriangleMesh {
            vertices: Vec::new(),
            faces: Vec::new(),
        };
        for p in parts {
            let off = out.vertices.len();
            out.vertices.extend_from_slice(&p.vertices);
            out.faces
                .extend(p.faces.iter().map(|f| [f[0] + off, f[1] + off, f[2] + off]));
        }
        out
    }
}

/// Whitespace tokens with their 1-based line numbers, comments stripped.
struct Tokens {
    items: Vec<(usize, String)>,
    pos: usize,
    last_line: usize,
}

impl Tokens {
    fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut items = Vec::new();
        let mut last_line = 0;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            last_line = i + 1;
            let content = line.split('#').next().unwrap_or("");
            items.extend(content.split_whitespace().map(|t| (i + 1, t.to_string())));
        }
        Ok(Tokens {
            items,
            pos: 0,
            last_line,
        })
    }

    fn next(&mut self, what: &str) -> Result<(usize, &str)> {
        match self.items.get(self.pos) {
            Some((line, tok)) => {
                self.pos += 1;
                Ok((*line, tok.as_str()))
            }
            None => Err(Error::Parse {
                line: self.last_line,
                message: format!("truncated stream: expected {what}"),
            }),
        }
    }

    fn parse<T: std::str::FromStr>(&mut self, what: &str) -> Result<(usize, T)> {
        let (line, tok) = self.next(what)?;
        tok.parse().map(|v| (line, v)).map_err(|_| Error::Parse {
            line,
            message: format!("expected {what}, found {tok:?}"),
        })
    }

    /// Skips the remaining tokens of `line` (e.g. per-face colors).
    fn skip_line(&mut self, line: usize) {
        while self.items.get(self.pos).is_some_and(|(l, _)| *l == line) {
            self.pos += 1;
        }
    }
}

/// Parses an OFF mesh. Polygons with more than three vertices are
/// fan-triangulated around their first vertex.
pub fn parse_off<R: BufRead>(reader: R) -> Result<TriangleMesh> {
    let mut t = Tokens::read(reader)?;
    let (line, head) = t.next("OFF header")?;
    // some exporters glue the counts onto the header: "OFF8 6 0"
    let rest = match head.strip_prefix("OFF") {
        Some(r) => r.to_string(),
        None => {
            return Err(Error::Parse {
                line,
                message: format!("missing OFF header, found {head:?}"),
            })
        }
    };
    let n_vertices: usize = if rest.is_empty() {
        t.parse("vertex count")?.1
    } else {
        rest.parse().map_err(|_| Error::Parse {
            line,
            message: format!("malformed header {head:?}"),
        })?
    };
    let (_, n_faces): (usize, usize) = t.parse("face count")?;
    let (count_line, _edges): (usize, usize) = t.parse("edge count")?;
    t.skip_line(count_line);

    let mut vertices = Vec::with_capacity(n_vertices);
    for _ in 0..n_vertices {
        let (l, x) = t.parse::<f64>("vertex x")?;
        let (_, y) = t.parse::<f64>("vertex y")?;
        let (_, z) = t.parse::<f64>("vertex z")?;
        t.skip_line(l);
        vertices.push([x, y, z]);
    }

    let mut faces = Vec::with_capacity(n_faces);
    for _ in 0..n_faces {
        let (l, k): (usize, usize) = t.parse("face vertex count")?;
        if k < 3 {
            return Err(Error::Parse {
                line: l,
                message: format!("face with {k} vertices"),
            });
        }
        let mut idx = Vec::with_capacity(k);
        for _ in 0..k {
            let (il, i): (usize, usize) = t.parse("face index")?;
            if i >= n_vertices {
                return Err(Error::Parse {
                    line: il,
                    message: format!("vertex index {i} out of range (0..{n_vertices})"),
                });
            }
            idx.push(i);
        }
        t.skip_line(l);
        for j in 1..k - 1 {
            faces.push([idx[0], idx[j], idx[j + 1]]);
        }
    }
    TriangleMesh::new(vertices, faces)
}

/// Writes triangles as OFF.
pub fn write_off<W: std::io::Write>(mesh: &TriangleMesh, mut w: W) -> std::io::Result<()> {
    writeln!(w, "OFF")?;
    writeln!(w, "{} {} 0", mesh.vertices.len(), mesh.faces.len())?;
    for v in &mesh.vertices {
        writeln!(w, "{} {} {}", v[0], v[1], v[2])?;
    }
    for f in &mesh.faces {
        writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const CUBE: &str = "OFF
# unit cube
8 6 12
0 0 0
1 0 0
1 1 0
0 1 0
0 0 1
1 0 1
1 1 1
0 1 1
4 0 3 2 1
4 4 5 6 7
4 0 1 5 4
4 2 3 7 6
4 1 2 6 5
4 0 4 7 3
";

    #[test]
    fn cube_quads_are_fan_triangulated() {
        let m = parse_off(CUBE.as_bytes()).unwrap();
        assert_eq!(m.vertices.len(), 8);
        assert_eq!(m.faces.len(), 12);
        assert_eq!(m.faces[0], [0, 3, 2]);
        assert_eq!(m.faces[1], [0, 2, 1]);
    }

    #[test]
    fn single_triangle() {
        let m = parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n".as_bytes()).unwrap();
        assert_eq!(m.vertices.len(), 3);
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn glued_header_and_face_colors() {
        let m = parse_off("OFF3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2 255 0 0\n".as_bytes()).unwrap();
        assert_eq!(m.faces.len(), 1);
    }

    #[test]
    fn truncated_vertex_list() {
        let text = CUBE.replace("8 6 12", "10 6 12");
        let err = parse_off(text.as_bytes()).unwrap_err();
        match err {
            Error::Parse { message, .. } => assert!(message.contains("truncated") || message.contains("expected")),
            e => panic!("unexpected {e}"),
        }
        let short = "OFF\n10 1 0\n0 0 0\n1 0 0\n0 1 0\n1 1 1\n0 0 1\n1 0 1\n1 1 0\n0 1 1\n";
        match parse_off(short.as_bytes()).unwrap_err() {
            Error::Parse { message, .. } => assert!(message.contains("truncated"), "{message}"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn bad_header_and_bad_index_name_lines() {
        match parse_off("PLY\n".as_bytes()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            e => panic!("unexpected {e}"),
        }
        match parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n".as_bytes()).unwrap_err() {
            Error::Parse { line, message } => {
                assert_eq!(line, 6);
                assert!(message.contains("out of range"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn write_then_parse() {
        let m = parse_off(CUBE.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_off(&m, &mut buf).unwrap();
        assert_eq!(parse_off(buf.as_slice()).unwrap(), m);
    }
}
