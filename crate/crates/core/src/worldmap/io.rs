use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{MapError, OccupancyGrid};

const MAGIC: &[u8; 8] = b"VTMAP01\0";

/// Sparse voxel list: the exchange format for maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapFile {
    pub origin: [f64; 3],
    pub resolution: f64,
    pub dims: [usize; 3],
    /// Linear indices (x fastest) of occupied voxels, ascending.
    pub occupied: Vec<u64>,
}

impl MapFile {
    pub fn from_grid(grid: &OccupancyGrid) -> Self {
        let o = grid.origin();
        Self {
            origin: [o.x, o.y, o.z],
            resolution: grid.resolution(),
            dims: grid.dims(),
            occupied: grid.occupied_indices(),
        }
    }

    pub fn to_grid(&self) -> Result<OccupancyGrid, MapError> {
        let mut g = OccupancyGrid::new(Vector3::from(self.origin), self.resolution, self.dims)?;
        let total = (self.dims[0] * self.dims[1] * self.dims[2]) as u64;
        for &li in &self.occupied {
            if li >= total {
                return Err(MapError::Format(format!("voxel index {li} out of range")));
            }
            g.set_occupied(g.unravel(li as usize), true);
        }
        Ok(g)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("map file serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, MapError> {
        serde_json::from_str(text).map_err(|e| MapError::Format(e.to_string()))
    }

    /// Little-endian layout: magic, origin (3 f64), resolution (f64),
    /// dims (3 u64), count (u64), indices (u64 each).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * (8 + self.occupied.len()));
        out.extend_from_slice(MAGIC);
        for v in self.origin {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.resolution.to_le_bytes());
        for d in self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&(self.occupied.len() as u64).to_le_bytes());
        for &i in &self.occupied {
            out.extend_from_slice(&i.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MapError> {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(MapError::Format("bad magic".into()));
        }
        let mut words = bytes[8..].chunks_exact(8);
        if !words.remainder().is_empty() {
            return Err(MapError::Format("truncated payload".into()));
        }
        let mut next = || -> Result<[u8; 8], MapError> {
            words
                .next()
                .map(|w| w.try_into().expect("chunk of eight"))
                .ok_or_else(|| MapError::Format("truncated payload".into()))
        };
        let mut origin = [0.0; 3];
        for v in &mut origin {
            *v = f64::from_le_bytes(next()?);
        }
        let resolution = f64::from_le_bytes(next()?);
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = u64::from_le_bytes(next()?) as usize;
        }
        let count = u64::from_le_bytes(next()?) as usize;
        let mut occupied = Vec::with_capacity(count.min(1 << 24));
        for _ in 0..count {
            occupied.push(u64::from_le_bytes(next()?));
        }
        if next().is_ok() {
            return Err(MapError::Format("trailing bytes".into()));
        }
        Ok(Self {
            origin,
            resolution,
            dims,
            occupied,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldmap::{generate_map, MapKind, MapSpec};

    #[test]
    fn json_and_binary_round_trip() {
        let g = generate_map(&MapSpec::new(MapKind::Forest, 4, [10.0, 10.0, 5.0], 0.05)).unwrap();
        let f = MapFile::from_grid(&g);
        assert_eq!(
            MapFile::from_json(&f.to_json()).unwrap().to_grid().unwrap(),
            g
        );
        assert_eq!(
            MapFile::from_bytes(&f.to_bytes())
                .unwrap()
                .to_grid()
                .unwrap(),
            g
        );
    }

    #[test]
    fn rejects_garbage() {
        assert!(MapFile::from_bytes(b"nope").is_err());
        let mut bytes =
            MapFile::from_grid(&OccupancyGrid::new(Vector3::zeros(), 0.1, [2, 2, 2]).unwrap())
                .to_bytes();
        bytes.extend_from_slice(&[0; 8]);
        assert!(MapFile::from_bytes(&bytes).is_err());
        let bad = MapFile {
            origin: [0.0; 3],
            resolution: 0.1,
            dims: [2, 2, 2],
            occupied: vec![8],
        };
        assert!(bad.to_grid().is_err());
        assert!(MapFile::from_json(
            "{\"origin\":[0,0,0],\"resolution\":0.1,\"dims\":[1,1,1],\"occupied\":[],\"x\":1}"
        )
        .is_err());
    }
}
