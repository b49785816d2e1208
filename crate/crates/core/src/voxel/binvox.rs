//! binvox reader/writer. binvox stores voxels run-length encoded as
//! (value, count) byte pairs with y varying fastest, then z, then x.

use std::io::{BufRead, Write};

use super::VoxelGrid;
use crate::error::{Error, Result};

pub fn read_binvox<R: BufRead>(mut source: R) -> Result<VoxelGrid> {
    let mut line_no = 0;
    let mut next_line = |src: &mut R| -> Result<(usize, String)> {
        let mut s = String::new();
        line_no += 1;
        if src.read_line(&mut s)? == 0 {
            return Err(Error::Parse {
                line: line_no,
                message: "truncated binvox header".into(),
            });
        }
        Ok((line_no, s.trim().to_string()))
    };
    let (l, magic) = next_line(&mut source)?;
    if !magic.starts_with("#binvox") {
        return Err(Error::Parse {
            line: l,
            message: format!("missing #binvox header, found {magic:?}"),
        });
    }
    let mut dims: Option<[usize; 3]> = None;
    loop {
        let (l, line) = next_line(&mut source)?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("dim") => {
                let v: Vec<usize> = parts.filter_map(|p| p.parse().ok()).collect();
                if v.len() != 3 || v.contains(&0) {
                    return Err(Error::Parse {
                        line: l,
                        message: format!("malformed dim line {line:?}"),
                    });
                }
                dims = Some([v[0], v[1], v[2]]);
            }
            Some("data") => break,
            Some("translate") | Some("scale") | None => {}
            Some(other) => {
                return Err(Error::Parse {
                    line: l,
                    message: format!("unknown binvox header key {other:?}"),
                })
            }
        }
    }
    let [d0, d1, d2] = dims.ok_or_else(|| Error::Format("binvox header lacks dim".into()))?;
    let total = d0 * d1 * d2;
    let mut raw = Vec::new();
    source.read_to_end(&mut raw)?;
    let mut values = Vec::with_capacity(total);
    for pair in raw.chunks(2) {
        if pair.len() != 2 {
            return Err(Error::Format("odd-length binvox run data".into()));
        }
        values.extend(std::iter::repeat(pair[0] != 0).take(pair[1] as usize));
        if values.len() > total {
            return Err(Error::Format("binvox runs exceed the grid size".into()));
        }
    }
    if values.len() != total {
        return Err(Error::Format(format!(
            "binvox payload has {} voxels, expected {total}",
            values.len()
        )));
    }
    // binvox index = x·(d1·d2) + z·d1 + y; our x/y/z axes are binvox's.
    let mut grid = VoxelGrid::empty([d0, d1, d2])?;
    for x in 0..d0 {
        for z in 0..d2 {
            for y in 0..d1 {
                if values[x * d1 * d2 + z * d1 + y] {
                    grid.set(x, y, z, true);
                }
            }
        }
    }
    Ok(grid)
}

pub fn write_binvox<W: Write>(grid: &VoxelGrid, mut sink: W) -> Result<()> {
    let [d0, d1, d2] = grid.dims();
    write!(
        sink,
        "#binvox 1\ndim {d0} {d1} {d2}\ntranslate 0 0 0\nscale 1\ndata\n"
    )?;
    let mut runs: Vec<u8> = Vec::new();
    let mut current: Option<(bool, u8)> = None;
    for x in 0..d0 {
        for z in 0..d2 {
            for y in 0..d1 {
                let v = grid.get(x, y, z);
                current = match current {
                    Some((cv, n)) if cv == v && n < 255 => Some((cv, n + 1)),
                    Some((cv, n)) => {
                        runs.extend_from_slice(&[cv as u8, n]);
                        Some((v, 1))
                    }
                    None => Some((v, 1)),
                };
            }
        }
    }
    if let Some((cv, n)) = current {
        runs.extend_from_slice(&[cv as u8, n]);
    }
    sink.write_all(&runs)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_axis_order() {
        let mut g = VoxelGrid::empty([4, 3, 2]).unwrap();
        g.set(3, 0, 1, true);
        g.set(0, 2, 0, true);
        let mut buf = Vec::new();
        write_binvox(&g, &mut buf).unwrap();
        assert_eq!(read_binvox(buf.as_slice()).unwrap(), g);
    }

    #[test]
    fn long_runs_split_at_255() {
        let mut g = VoxelGrid::cube(8).unwrap();
        g.cells_mut().iter_mut().for_each(|c| *c = true);
        let mut buf = Vec::new();
        write_binvox(&g, &mut buf).unwrap();
        assert_eq!(read_binvox(buf.as_slice()).unwrap(), g);
    }

    #[test]
    fn handwritten_file() {
        // 2×2×2, first voxel (x=0,z=0,y=0) set, then seven empty
        let mut data = b"#binvox 1\ndim 2 2 2\ntranslate 0 0 0\nscale 1\ndata\n".to_vec();
        data.extend_from_slice(&[1, 1, 0, 7]);
        let g = read_binvox(data.as_slice()).unwrap();
        assert_eq!(g.count(), 1);
        assert!(g.get(0, 0, 0));
    }

    #[test]
    fn short_payload_is_rejected() {
        let mut data = b"#binvox 1\ndim 2 2 2\ndata\n".to_vec();
        data.extend_from_slice(&[1, 3]);
        assert!(read_binvox(data.as_slice()).is_err());
        assert!(read_binvox(&b"#notbinvox\n"[..]).is_err());
    }
}
