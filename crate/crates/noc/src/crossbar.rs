//! 7x7 crossbar with a small pool of spare links.
//!
//! A transfer over a link whose base wire is flagged faulty borrows a spare
//! for that cycle; the borrow is released when the cycle ends. Diagnosis can
//! instead bind a spare to one (input, output) pair, which removes it from
//! the per-cycle pool until released. When every spare is bound or borrowed,
//! faulty-pair transfers wait.

use crate::coord::PORT_COUNT;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum XbarPath {
    /// Healthy base link; planted corruption (if any) applies.
    Base,
    /// Spare link; bypasses the base wire entirely.
    Spare,
    /// Base faulty and no spare available this cycle.
    Blocked,
}

pub struct Crossbar {
    marked: [[bool; PORT_COUNT]; PORT_COUNT],
    sticky: Vec<Option<(usize, usize)>>,
    borrowed: usize,
}

impl Crossbar {
    pub fn new(spares: usize) -> Crossbar {
        Crossbar {
            marked: [[false; PORT_COUNT]; PORT_COUNT],
            sticky: vec![None; spares],
            borrowed: 0,
        }
    }

    /// Start of cycle: per-cycle borrows return to the pool.
    pub fn begin_cycle(&mut self) {
        self.borrowed = 0;
    }

    pub fn mark(&mut self, input: usize, output: usize) {
        self.marked[input][output] = true;
    }

    pub fn is_marked(&self, input: usize, output: usize) -> bool {
        self.marked[input][output]
    }

    pub fn bound_to(&self, input: usize, output: usize) -> bool {
        self.sticky.iter().any(|s| *s == Some((input, output)))
    }

    fn free_spares(&self) -> usize {
        self.sticky.iter().filter(|s| s.is_none()).count() - self.borrowed
    }

    /// Bind a spare permanently to the pair. False when all spares are bound.
    pub fn bind(&mut self, input: usize, output: usize) -> bool {
        if self.bound_to(input, output) {
            return true;
        }
        if let Some(slot) = self.sticky.iter_mut().find(|s| s.is_none()) {
            *slot = Some((input, output));
            // A bind consumes the pool position even mid-cycle; clamp the
            // borrow count so free_spares never underflows.
            self.borrowed = self.borrowed.min(self.sticky.iter().filter(|s| s.is_none()).count());
            true
        } else {
            false
        }
    }

    pub fn release(&mut self, input: usize, output: usize) {
        for s in &mut self.sticky {
            if *s == Some((input, output)) {
                *s = None;
            }
        }
    }

    /// Resolve the path a granted (input, output) transfer takes this cycle.
    /// A Spare answer from the pool consumes one borrow.
    pub fn route(&mut self, input: usize, output: usize) -> XbarPath {
        if self.bound_to(input, output) {
            return XbarPath::Spare;
        }
        if self.marked[input][output] {
            if self.free_spares() > 0 {
                self.borrowed += 1;
                XbarPath::Spare
            } else {
                XbarPath::Blocked
            }
        } else {
            XbarPath::Base
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn healthy_link_uses_base() {
        let mut x = Crossbar::new(2);
        assert_eq!(x.route(1, 0), XbarPath::Base);
    }

    #[test]
    fn faulty_link_borrows_spare_per_cycle() {
        let mut x = Crossbar::new(1);
        x.mark(1, 0);
        assert_eq!(x.route(1, 0), XbarPath::Spare);
        x.mark(3, 2);
        assert_eq!(x.route(3, 2), XbarPath::Blocked, "pool exhausted this cycle");
        x.begin_cycle();
        assert_eq!(x.route(3, 2), XbarPath::Spare, "borrow returned");
    }

    #[test]
    fn demand_beyond_pool_blocks_last_pair() {
        let mut x = Crossbar::new(2);
        for i in 0..3 {
            x.mark(i, i);
        }
        x.begin_cycle();
        assert_eq!(x.route(0, 0), XbarPath::Spare);
        assert_eq!(x.route(1, 1), XbarPath::Spare);
        assert_eq!(x.route(2, 2), XbarPath::Blocked);
    }

    #[test]
    fn sticky_bind_survives_cycles_and_shrinks_pool() {
        let mut x = Crossbar::new(2);
        x.mark(4, 6);
        assert!(x.bind(4, 6));
        x.begin_cycle();
        assert_eq!(x.route(4, 6), XbarPath::Spare);
        x.mark(1, 2);
        assert_eq!(x.route(1, 2), XbarPath::Spare, "one spare still free");
        x.mark(3, 5);
        assert_eq!(x.route(3, 5), XbarPath::Blocked);
        x.release(4, 6);
        x.begin_cycle();
        assert_eq!(x.route(3, 5), XbarPath::Spare);
    }

    #[test]
    fn bind_fails_when_all_bound() {
        let mut x = Crossbar::new(1);
        assert!(x.bind(0, 1));
        assert!(!x.bind(2, 3));
        assert!(x.bind(0, 1), "rebinding the same pair is a no-op");
    }
}
