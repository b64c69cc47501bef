/// One row of a training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogRow {
    pub iteration: u64,
    /// Mean loss since the previous row.
    pub loss: f64,
    /// Held-out accuracy (classification stages) or margin satisfaction (metric stage).
    pub accuracy: f64,
}
