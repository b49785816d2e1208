//! VSLV voxel files: `"VSLV"`, version byte 1, three little-endian u32
//! dims, then ⌈dx·dy·dz/8⌉ payload bytes, bit-packed x-fastest with the
//! most significant bit first.

use std::io::{Read, Write};

use super::VoxelGrid;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VSLV";
pub const VERSION: u8 = 1;

pub fn payload_len(dims: [usize; 3]) -> usize {
    dims.iter().product::<usize>().div_ceil(8)
}

pub fn write_voxel<W: Write>(grid: &VoxelGrid, mut sink: W) -> Result<()> {
    let dims = grid.dims();
    let mut header = Vec::with_capacity(17);
    header.extend_from_slice(MAGIC);
    header.push(VERSION);
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dim {d} exceeds u32")))?;
        header.extend_from_slice(&d.to_le_bytes());
    }
    let mut payload = vec![0u8; payload_len(dims)];
    for (i, _) in grid.cells().iter().enumerate().filter(|(_, &c)| c) {
        payload[i / 8] |= 0x80 >> (i % 8);
    }
    sink.write_all(&header)?;
    sink.write_all(&payload)?;
    Ok(())
}

pub fn read_voxel<R: Read>(mut source: R) -> Result<VoxelGrid> {
    let mut header = [0u8; 17];
    source
        .read_exact(&mut header)
        .map_err(|_| Error::Format("stream shorter than the VSLV header".into()))?;
    if &header[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &header[..4])));
    }
    if header[4] != VERSION {
        return Err(Error::Format(format!(
            "unsupported VSLV version {} (expected {VERSION})",
            header[4]
        )));
    }
    let mut dims = [0usize; 3];
    for (a, d) in dims.iter_mut().enumerate() {
        let b: [u8; 4] = header[5 + 4 * a..9 + 4 * a].try_into().expect("4 bytes");
        *d = u32::from_le_bytes(b) as usize;
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::Format(format!("zero dimension in {dims:?}")));
    }
    let want = payload_len(dims);
    let mut payload = Vec::with_capacity(want);
    source.take(want as u64 + 1).read_to_end(&mut payload)?;
    if payload.len() != want {
        return Err(Error::Format(format!(
            "payload length mismatch: expected {want} bytes, found {}{}",
            payload.len().min(want),
            if payload.len() > want { "+" } else { "" }
        )));
    }
    let n: usize = dims.iter().product();
    let cells = (0..n).map(|i| payload[i / 8] & (0x80 >> (i % 8)) != 0).collect();
    VoxelGrid::from_cells(dims, cells)
}

pub fn save_voxel(grid: &VoxelGrid, path: &std::path::Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_voxel(grid, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_voxel(path: &std::path::Path) -> Result<VoxelGrid> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_voxel(std::io::BufReader::new(f))
}
