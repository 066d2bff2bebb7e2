//! Structured rectangular element grids with an extended (padded) filter domain.
//!
//! The physical domain holds `nx * ny` square elements of edge length `h`.
//! Free sides are padded with void elements so that the homogeneous Neumann
//! boundary conditions of the density filter do not influence the design.
//! All fields, assembly and filtering live on the extended grid; the physical
//! sub-rectangle is recovered through the index maps below.

use serde::{Deserialize, Serialize};

/// Padding width in elements for each side of the physical domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Padding {
    pub left: usize,
    pub right: usize,
    pub bottom: usize,
    pub top: usize,
}

impl Padding {
    pub fn none() -> Self {
        Padding {
            left: 0,
            right: 0,
            bottom: 0,
            top: 0,
        }
    }

    pub fn uniform(p: usize) -> Self {
        Padding {
            left: p,
            right: p,
            bottom: p,
            top: p,
        }
    }
}

/// Structured grid of square bilinear elements.
///
/// Element `(ix, iy)` covers `[ix*h, (ix+1)*h] x [iy*h, (iy+1)*h]` in extended
/// coordinates, with `iy = 0` at the bottom. The physical domain occupies
/// `ix in pad.left .. pad.left + nx`, `iy in pad.bottom .. pad.bottom + ny`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub pad: Padding,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, h: f64, pad: Padding) -> Self {
        assert!(nx >= 1 && ny >= 1, "grid must have at least one element");
        assert!(h > 0.0, "element size must be positive");
        Grid { nx, ny, h, pad }
    }

    pub fn without_padding(nx: usize, ny: usize, h: f64) -> Self {
        Grid::new(nx, ny, h, Padding::none())
    }

    /// Extended element counts.
    pub fn nx_ext(&self) -> usize {
        self.nx + self.pad.left + self.pad.right
    }

    pub fn ny_ext(&self) -> usize {
        self.ny + self.pad.bottom + self.pad.top
    }

    pub fn num_elements(&self) -> usize {
        self.nx_ext() * self.ny_ext()
    }

    pub fn num_nodes(&self) -> usize {
        (self.nx_ext() + 1) * (self.ny_ext() + 1)
    }

    pub fn num_dofs(&self) -> usize {
        2 * self.num_nodes()
    }

    /// Element (ix, iy) -> linear index, row-major from the bottom row.
    pub fn eidx(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix < self.nx_ext() && iy < self.ny_ext());
        iy * self.nx_ext() + ix
    }

    pub fn ecoord(&self, e: usize) -> (usize, usize) {
        (e % self.nx_ext(), e / self.nx_ext())
    }

    /// Node (ix, iy) -> linear index; nodes run 0..=nx_ext in x.
    pub fn nidx(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix <= self.nx_ext() && iy <= self.ny_ext());
        iy * (self.nx_ext() + 1) + ix
    }

    pub fn ncoord(&self, n: usize) -> (usize, usize) {
        (n % (self.nx_ext() + 1), n / (self.nx_ext() + 1))
    }

    /// Counter-clockwise corner nodes of element (ix, iy), starting bottom-left.
    pub fn element_nodes(&self, ix: usize, iy: usize) -> [usize; 4] {
        [
            self.nidx(ix, iy),
            self.nidx(ix + 1, iy),
            self.nidx(ix + 1, iy + 1),
            self.nidx(ix, iy + 1),
        ]
    }

    /// True if extended element (ix, iy) lies in the physical domain.
    pub fn in_physical(&self, ix: usize, iy: usize) -> bool {
        ix >= self.pad.left
            && ix < self.pad.left + self.nx
            && iy >= self.pad.bottom
            && iy < self.pad.bottom + self.ny
    }

    /// Physical element (px, py) -> extended coordinates.
    pub fn phys_to_ext(&self, px: usize, py: usize) -> (usize, usize) {
        debug_assert!(px < self.nx && py < self.ny);
        (px + self.pad.left, py + self.pad.bottom)
    }

    /// Extended element coordinates -> physical, if inside.
    pub fn ext_to_phys(&self, ix: usize, iy: usize) -> Option<(usize, usize)> {
        if self.in_physical(ix, iy) {
            Some((ix - self.pad.left, iy - self.pad.bottom))
        } else {
            None
        }
    }

    /// Center of extended element (ix, iy) in extended coordinates.
    pub fn element_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        ((ix as f64 + 0.5) * self.h, (iy as f64 + 0.5) * self.h)
    }

    /// Area of one element.
    pub fn element_area(&self) -> f64 {
        self.h * self.h
    }

    /// Area of the physical domain.
    pub fn physical_area(&self) -> f64 {
        self.nx as f64 * self.ny as f64 * self.h * self.h
    }

    /// Iterate linear indices of physical elements.
    pub fn physical_elements(&self) -> impl Iterator<Item = usize> + '_ {
        let nxe = self.nx_ext();
        (0..self.ny).flat_map(move |py| {
            (0..self.nx).map(move |px| (py + self.pad.bottom) * nxe + px + self.pad.left)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_roundtrip() {
        let g = Grid::new(5, 3, 0.5, Padding::uniform(2));
        assert_eq!(g.nx_ext(), 9);
        assert_eq!(g.ny_ext(), 7);
        for e in 0..g.num_elements() {
            let (ix, iy) = g.ecoord(e);
            assert_eq!(g.eidx(ix, iy), e);
        }
        for n in 0..g.num_nodes() {
            let (ix, iy) = g.ncoord(n);
            assert_eq!(g.nidx(ix, iy), n);
        }
    }

    #[test]
    fn physical_mapping() {
        let g = Grid::new(4, 2, 1.0, Padding { left: 0, right: 3, bottom: 1, top: 2 });
        assert_eq!(g.phys_to_ext(0, 0), (0, 1));
        assert_eq!(g.ext_to_phys(0, 0), None);
        assert_eq!(g.ext_to_phys(3, 2), Some((3, 1)));
        assert_eq!(g.physical_elements().count(), 8);
        assert!(g.physical_elements().all(|e| {
            let (ix, iy) = g.ecoord(e);
            g.in_physical(ix, iy)
        }));
    }
}
