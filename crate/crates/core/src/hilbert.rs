//! Hilbert curve indexing over power-of-two grids.
//!
//! The order-1 traversal is fixed to `(0,0) → (0,1) → (1,1) → (1,0)`; higher
//! orders follow the usual quadrant rotate/reflect recursion, evaluated here
//! one bit-plane at a time.
//!
//! Workspaces that are not a full `2^p × 2^p` square (or that contain
//! obstacles) are embedded in the smallest enclosing square; inactive cells
//! are skipped and the surviving cells are re-ranked `0..A` in curve order.

use crate::cell::{Action, Cell};
use crate::error::{domain, Result};

/// Largest supported order; `4^31` still fits in a `u64`.
pub const MAX_ORDER: u32 = 31;

fn check_order(order: u32) -> Result<()> {
    if order == 0 || order > MAX_ORDER {
        return domain(format!("hilbert order {order} outside 1..={MAX_ORDER}"));
    }
    Ok(())
}

/// Curve index of cell `(x, y)` on the order-`order` curve.
pub fn xy_to_index(x: u32, y: u32, order: u32) -> Result<u64> {
    check_order(order)?;
    let side = 1u64 << order;
    if u64::from(x) >= side || u64::from(y) >= side {
        return domain(format!("cell ({x}, {y}) outside {side}x{side} grid"));
    }
    let (mut x, mut y) = (u64::from(x), u64::from(y));
    let mut d = 0u64;
    let mut s = side >> 1;
    while s > 0 {
        let rx = u64::from(x & s != 0);
        let ry = u64::from(y & s != 0);
        d += s * s * ((3 * rx) ^ ry);
        // Rotate the sub-square so the next bit-plane sees the canonical orientation.
        if ry == 0 {
            if rx == 1 {
                x = side - 1 - x;
                y = side - 1 - y;
            }
            std::mem::swap(&mut x, &mut y);
        }
        s >>= 1;
    }
    Ok(d)
}

/// Cell at curve index `d` on the order-`order` curve.
pub fn d_to_xy(d: u64, order: u32) -> Result<(u32, u32)> {
    check_order(order)?;
    let side = 1u64 << order;
    if d >= side * side {
        return domain(format!("index {d} outside [0, {})", side * side));
    }
    let (mut x, mut y) = (0u64, 0u64);
    let mut t = d;
    let mut s = 1u64;
    while s < side {
        let rx = 1 & (t / 2);
        let ry = 1 & (t ^ rx);
        if ry == 0 {
            if rx == 1 {
                x = s - 1 - x;
                y = s - 1 - y;
            }
            std::mem::swap(&mut x, &mut y);
        }
        x += s * rx;
        y += s * ry;
        t /= 4;
        s <<= 1;
    }
    Ok((x as u32, y as u32))
}

/// Smallest order whose square contains a `width × height` workspace.
pub fn enclosing_order(width: usize, height: usize) -> u32 {
    let side = width.max(height).max(2);
    side.next_power_of_two().trailing_zeros()
}

/// Rank-compacted Hilbert ordering of the active cells of a workspace.
#[derive(Debug, Clone)]
pub struct HilbertMap {
    order: u32,
    side: usize,
    width: usize,
    height: usize,
    active: Vec<bool>,
    rank_of_cell: Vec<Option<u32>>,
    cell_of_rank: Vec<Cell>,
}

impl HilbertMap {
    /// Every cell of the `2^order` square is active.
    pub fn full(order: u32) -> Result<Self> {
        check_order(order)?;
        if order > 15 {
            return domain("full maps are limited to order 15");
        }
        let side = 1usize << order;
        Self::build(order, side, side, |_| true)
    }

    /// Workspace of `width × height` cells; `is_active` marks traversable cells.
    pub fn for_workspace(
        width: usize,
        height: usize,
        is_active: impl Fn(Cell) -> bool,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return domain("workspace must be non-empty");
        }
        let order = enclosing_order(width, height);
        Self::build(order, width, height, is_active)
    }

    fn build(
        order: u32,
        width: usize,
        height: usize,
        is_active: impl Fn(Cell) -> bool,
    ) -> Result<Self> {
        let side = 1usize << order;
        let mut active = vec![false; side * side];
        for y in 0..height {
            for x in 0..width {
                active[y * side + x] = is_active(Cell::new(x as i32, y as i32));
            }
        }
        let mut rank_of_cell = vec![None; side * side];
        let mut cell_of_rank = Vec::new();
        for d in 0..(side * side) as u64 {
            let (x, y) = d_to_xy(d, order)?;
            let idx = y as usize * side + x as usize;
            if active[idx] {
                rank_of_cell[idx] = Some(cell_of_rank.len() as u32);
                cell_of_rank.push(Cell::new(x as i32, y as i32));
            }
        }
        Ok(Self {
            order,
            side,
            width,
            height,
            active,
            rank_of_cell,
            cell_of_rank,
        })
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of active cells `A`.
    pub fn active_count(&self) -> usize {
        self.cell_of_rank.len()
    }

    fn slot(&self, cell: Cell) -> Option<usize> {
        if cell.x < 0 || cell.y < 0 {
            return None;
        }
        let (x, y) = (cell.x as usize, cell.y as usize);
        (x < self.width && y < self.height).then_some(y * self.side + x)
    }

    pub fn is_active(&self, cell: Cell) -> bool {
        self.slot(cell).is_some_and(|i| self.active[i])
    }

    pub fn rank(&self, cell: Cell) -> Option<usize> {
        self.slot(cell)
            .and_then(|i| self.rank_of_cell[i])
            .map(|r| r as usize)
    }

    pub fn cell(&self, rank: usize) -> Option<Cell> {
        self.cell_of_rank.get(rank).copied()
    }

    /// Active cells in curve order.
    pub fn cells(&self) -> &[Cell] {
        &self.cell_of_rank
    }

    /// `rank / (A - 1)`, so the first active cell maps to 0 and the last to 1.
    pub fn normalized_index(&self, cell: Cell) -> Result<f64> {
        let a = self.active_count();
        if a < 2 {
            return domain(format!(
                "normalization needs at least 2 active cells, have {a}"
            ));
        }
        match self.rank(cell) {
            Some(r) => Ok(r as f64 / (a - 1) as f64),
            None => domain(format!("cell {cell} is not active")),
        }
    }

    /// Active cell following `cell` on the curve, if any.
    pub fn successor(&self, cell: Cell) -> Option<Cell> {
        self.rank(cell).and_then(|r| self.cell(r + 1))
    }

    /// Single-step action that advances `cell` toward its curve successor.
    ///
    /// Adjacent successors are reached directly. A non-adjacent successor
    /// (left by compaction) is approached by the first move in N, E, S, W
    /// order that reduces the Manhattan distance. The last cell yields `Stay`.
    pub fn curve_action(&self, cell: Cell) -> Result<Action> {
        if !self.is_active(cell) {
            return domain(format!("cell {cell} is not active"));
        }
        let Some(next) = self.successor(cell) else {
            return Ok(Action::Stay);
        };
        let dist = cell.manhattan(next);
        let action = Action::MOVES_BY_PRIORITY
            .into_iter()
            .find(|&a| cell.step(a).manhattan(next) < dist)
            .expect("a distinct successor always admits a reducing move");
        Ok(action)
    }
}
