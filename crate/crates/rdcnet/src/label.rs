//! Integer instance maps: 0 = background, `UNDEFINED` marks regions of
//! ambiguous ownership that are excluded from losses and metrics.

pub const UNDEFINED: u16 = u16::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    h: usize,
    w: usize,
    data: Vec<u16>,
}

impl LabelMap {
    pub fn new(h: usize, w: usize) -> Self {
        LabelMap {
            h,
            w,
            data: vec![0; h * w],
        }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<u16>) -> Self {
        assert_eq!(data.len(), h * w);
        LabelMap { h, w, data }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u16] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> u16 {
        self.data[i * self.w + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: u16) {
        self.data[i * self.w + j] = v;
    }

    /// Sorted distinct instance ids (background and undefined excluded).
    pub fn instance_ids(&self) -> Vec<u16> {
        let mut ids: Vec<u16> = self
            .data
            .iter()
            .copied()
            .filter(|&v| v != 0 && v != UNDEFINED)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Pixel count per instance id.
    pub fn instance_sizes(&self) -> Vec<(u16, usize)> {
        let ids = self.instance_ids();
        ids.iter()
            .map(|&id| (id, self.data.iter().filter(|&&v| v == id).count()))
            .collect()
    }
}
