use super::config::MIN_IMPROVEMENT;

/// Patience-based stopping rule over a monitored quantity (lower is better).
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            stale: 0,
        }
    }

    /// Feeds the value observed after `epoch`. Returns `true` when training
    /// should stop.
    pub fn observe(&mut self, epoch: usize, value: f64) -> bool {
        if self.best_epoch.is_none() || value < self.best - MIN_IMPROVEMENT {
            self.best = value;
            self.best_epoch = Some(epoch);
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(trace: &[f64], patience: usize) -> (usize, Option<usize>) {
        let mut es = EarlyStopping::new(patience);
        for (i, &v) in trace.iter().enumerate() {
            if es.observe(i + 1, v) {
                return (i + 1, es.best_epoch());
            }
        }
        (trace.len(), es.best_epoch())
    }

    #[test]
    fn scripted_trace_stops_after_three_stale_epochs() {
        assert_eq!(run(&[5.0, 4.0, 4.5, 4.6, 4.7], 3), (5, Some(2)));
    }

    #[test]
    fn never_stops_before_patience_elapses() {
        let trace = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(run(&trace, 5), (6, Some(1)));
        assert_eq!(run(&trace, 10), (6, Some(1)));
    }

    #[test]
    fn tiny_drops_do_not_count() {
        assert_eq!(run(&[1.0, 1.0 - 1e-7, 1.0 - 2e-7], 2), (3, Some(1)));
        assert_eq!(run(&[1.0, 0.9, 0.8, 0.7], 1), (4, Some(4)));
    }
}
