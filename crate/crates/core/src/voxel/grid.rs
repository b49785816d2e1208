use crate::error::{Error, Result};

/// Binary occupancy grid, cells ordered x-fastest, then y, then z.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct VoxelGrid {
    dims: [usize; 3],
    cells: Vec<bool>,
}

impl VoxelGrid {
    pub fn empty(dims: [usize; 3]) -> Result<Self> {
        check_dims(dims)?;
        Ok(VoxelGrid {
            dims,
            cells: vec![false; dims.iter().product()],
        })
    }

    pub fn cube(side: usize) -> Result<Self> {
        Self::empty([side; 3])
    }

    pub fn from_cells(dims: [usize; 3], cells: Vec<bool>) -> Result<Self> {
        check_dims(dims)?;
        if cells.len() != dims.iter().product::<usize>() {
            return Err(Error::shape(format!(
                "{} cells do not fill a {dims:?} grid",
                cells.len()
            )));
        }
        Ok(VoxelGrid { dims, cells })
    }

    /// Thresholds occupancy probabilities: a cell is set iff `p >= threshold`.
    pub fn from_probabilities(dims: [usize; 3], probs: &[f32], threshold: f32) -> Result<Self> {
        Self::from_cells(dims, probs.iter().map(|&p| p >= threshold).collect())
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.cells[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.index(x, y, z);
        self.cells[i] = value;
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn cells_mut(&mut self) -> &mut [bool] {
        &mut self.cells
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Occupancy as 0/1 floats in file order (the network input layout).
    pub fn to_f32(&self) -> Vec<f32> {
        self.cells.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect()
    }

    pub fn occupied(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let [dx, dy, _] = self.dims;
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| c)
            .map(move |(i, _)| [i % dx, (i / dx) % dy, i / (dx * dy)])
    }
}

fn check_dims(dims: [usize; 3]) -> Result<()> {
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::shape(format!("grid dims must be positive, got {dims:?}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn x_fastest_indexing() {
        let mut g = VoxelGrid::empty([3, 4, 5]).unwrap();
        g.set(1, 2, 3, true);
        assert_eq!(g.index(1, 2, 3), 1 + 3 * (2 + 4 * 3));
        assert_eq!(g.occupied().collect::<Vec<_>>(), vec![[1, 2, 3]]);
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(VoxelGrid::empty([0, 3, 3]).is_err());
        assert!(VoxelGrid::from_cells([2, 2, 2], vec![false; 7]).is_err());
    }
}
