use crate::error::{Error, Result};

/// States collected since the last clip-window reset.
///
/// Frame-pair index `t` resets the window whenever `t mod L = 0`, so after
/// the update for `t` the window holds `(t mod L) + 1` states.
#[derive(Clone, Debug)]
pub struct StateWindow<S> {
    states: Vec<S>,
    capacity: usize,
    next_t: u64,
}

impl<S> StateWindow<S> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("window length must be at least 1"));
        }
        Ok(StateWindow {
            states: Vec::with_capacity(capacity),
            capacity,
            next_t: 0,
        })
    }

    fn advance(&mut self, t: u64) -> Result<()> {
        if t != self.next_t {
            return Err(Error::OutOfOrder {
                got: t,
                expected: self.next_t,
            });
        }
        if t % self.capacity as u64 == 0 {
            self.states.clear();
        }
        self.next_t = t + 1;
        Ok(())
    }

    pub fn update(&mut self, t: u64, state: S) -> Result<()> {
        self.advance(t)?;
        self.states.push(state);
        Ok(())
    }

    /// Consumes index `t` without a state (skipped frame pair).
    pub fn skip(&mut self, t: u64) -> Result<()> {
        self.advance(t)
    }

    pub fn states(&self) -> &[S] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn next_t(&self) -> u64 {
        self.next_t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lengths_follow_reset_rule() {
        let mut w = StateWindow::new(5).unwrap();
        let lens: Vec<usize> = (0..12)
            .map(|t| {
                w.update(t, t).unwrap();
                w.len()
            })
            .collect();
        assert_eq!(lens, vec![1, 2, 3, 4, 5, 1, 2, 3, 4, 5, 1, 2]);
        assert_eq!(w.states(), &[10, 11]);
    }

    #[test]
    fn singleton_windows_and_order_errors() {
        let mut w = StateWindow::new(1).unwrap();
        for t in 0..4 {
            w.update(t, t).unwrap();
            assert_eq!(w.states(), &[t]);
        }
        assert!(matches!(
            w.update(7, 7),
            Err(Error::OutOfOrder { got: 7, expected: 4 })
        ));
        assert!(StateWindow::<u8>::new(0).is_err());
    }

    #[test]
    fn skip_keeps_the_index_law() {
        let mut w = StateWindow::new(3).unwrap();
        w.update(0, 'a').unwrap();
        w.skip(1).unwrap();
        w.update(2, 'c').unwrap();
        assert_eq!(w.states(), &['a', 'c']);
        w.skip(3).unwrap();
        assert!(w.is_empty());
    }
}
