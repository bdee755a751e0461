//! Placement of SiteOs on the global grid.
//!
//! SiteMs are laid out row-major, 16 per grid row, so SiteM `s` covers
//! global rows `4*(s/16)..+4` and columns `4*(s%16)..+4`. A global row
//! therefore spans every SiteM of its grid row: ids 0..3, 16..19 and 32..35
//! share row 0 on a three-SiteM fabric. The last grid row may be partial.
//!
//! Hop links continue past the grid edge: the right link of the last SiteO
//! in a row returns to column 0 and the down link of the last SiteO in a
//! column returns to row 0, so every destination is reachable.

use crate::isa::SiteAddress;

pub const SITEMS_PER_GRID_ROW: u16 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Right,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    sitems: u16,
}

impl Geometry {
    pub fn new(sitems: u16) -> Self {
        Self { sitems }
    }

    pub fn sitems(&self) -> u16 {
        self.sitems
    }

    pub fn siteos(&self) -> u16 {
        self.sitems * 16
    }

    pub fn rows(&self) -> u16 {
        self.sitems.div_ceil(SITEMS_PER_GRID_ROW) * 4
    }

    /// Number of columns present in global row `row`.
    pub fn row_width(&self, row: u16) -> u16 {
        let grid_row = row / 4;
        let before = grid_row * SITEMS_PER_GRID_ROW;
        if before >= self.sitems {
            return 0;
        }
        (self.sitems - before).min(SITEMS_PER_GRID_ROW) * 4
    }

    pub fn is_site(&self, addr: SiteAddress) -> bool {
        addr.raw() < self.siteos()
    }

    pub fn coords(&self, addr: SiteAddress) -> (u16, u16) {
        let s = addr.sitem_index();
        let row = (s / SITEMS_PER_GRID_ROW) * 4 + addr.local_row() as u16;
        let col = (s % SITEMS_PER_GRID_ROW) * 4 + addr.local_col() as u16;
        (row, col)
    }

    pub fn at(&self, row: u16, col: u16) -> Option<SiteAddress> {
        if col >= self.row_width(row) {
            return None;
        }
        let s = (row / 4) * SITEMS_PER_GRID_ROW + col / 4;
        SiteAddress::from_parts(s, (row % 4) as u8, (col % 4) as u8).ok()
    }

    pub fn right_link(&self, addr: SiteAddress) -> SiteAddress {
        let (r, c) = self.coords(addr);
        self.at(r, c + 1).unwrap_or_else(|| self.at(r, 0).unwrap())
    }

    pub fn down_link(&self, addr: SiteAddress) -> SiteAddress {
        let (r, c) = self.coords(addr);
        self.at(r + 1, c).unwrap_or_else(|| self.at(0, c).unwrap())
    }

    /// Physical neighbours without the wrap-around links.
    pub fn neighbors(&self, addr: SiteAddress) -> Neighbors {
        let (r, c) = self.coords(addr);
        Neighbors {
            left: c.checked_sub(1).and_then(|c| self.at(r, c)),
            right: self.at(r, c + 1),
            up: r.checked_sub(1).and_then(|r| self.at(r, c)),
            down: self.at(r + 1, c),
        }
    }

    /// Hop direction for a message at `here` bound for SiteO `dest`
    /// (`dest != here`). Same row streams right; otherwise down, unless the
    /// current column does not exist in the destination row, in which case
    /// the message keeps moving right until it wraps to column 0.
    pub fn hop_direction(&self, here: SiteAddress, dest: SiteAddress) -> Direction {
        let (r, c) = self.coords(here);
        let (rd, _) = self.coords(dest);
        if r == rd || c >= self.row_width(rd) {
            Direction::Right
        } else {
            Direction::Down
        }
    }

    pub fn same_row(&self, a: SiteAddress, b: SiteAddress) -> bool {
        self.coords(a).0 == self.coords(b).0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize)]
pub struct Neighbors {
    pub left: Option<SiteAddress>,
    pub right: Option<SiteAddress>,
    pub up: Option<SiteAddress>,
    pub down: Option<SiteAddress>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn a(raw: u16) -> SiteAddress {
        SiteAddress::new(raw).unwrap()
    }

    #[test]
    fn three_sitems_share_rows() {
        let g = Geometry::new(3);
        assert_eq!(g.rows(), 4);
        assert_eq!(g.row_width(0), 12);
        assert_eq!(g.coords(a(0)), (0, 0));
        assert_eq!(g.coords(a(19)), (0, 7));
        assert_eq!(g.coords(a(33)), (0, 9));
        assert_eq!(g.coords(a(47)), (3, 11));
        for raw in 0..48 {
            let (r, c) = g.coords(a(raw));
            assert_eq!(g.at(r, c), Some(a(raw)));
        }
    }

    #[test]
    fn links_wrap_at_edges() {
        let g = Geometry::new(3);
        assert_eq!(g.right_link(a(0)), a(1));
        assert_eq!(g.right_link(a(3)), a(16));
        assert_eq!(g.right_link(a(35)), a(0));
        assert_eq!(g.down_link(a(1)), a(5));
        assert_eq!(g.down_link(a(13)), a(1));
        assert_eq!(g.neighbors(a(35)).right, None);
        assert_eq!(g.neighbors(a(16)).left, Some(a(3)));
    }

    #[test]
    fn partial_grid_row() {
        let g = Geometry::new(17);
        assert_eq!(g.rows(), 8);
        assert_eq!(g.row_width(4), 4);
        assert_eq!(g.at(4, 4), None);
        // column 5 does not exist in row 4: keep moving right until wrap.
        assert_eq!(g.hop_direction(a(16 + 1), a(256)), Direction::Right);
        assert_eq!(g.hop_direction(a(0), a(256)), Direction::Down);
        assert_eq!(g.down_link(a(16 + 12)), a(16));
    }

    #[test]
    fn full_fabric() {
        let g = Geometry::new(256);
        assert_eq!(g.rows(), 64);
        assert_eq!(g.row_width(63), 64);
        assert_eq!(g.coords(a(4095)), (63, 63));
    }
}
