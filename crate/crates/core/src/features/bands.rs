//! The 14 frequency bands used for power and coherence features.

/// Ordered list of (low, high) band edges in Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct BandTable {
    pub bands: Vec<(f64, f64)>,
}

impl BandTable {
    /// The standard 14 bands covering delta through high beta.
    pub fn standard() -> BandTable {
        BandTable {
            bands: vec![
                (0.5, 2.0),
                (1.0, 3.0),
                (2.0, 4.0),
                (3.0, 6.0),
                (4.0, 8.0),
                (6.0, 10.0),
                (8.0, 13.0),
                (10.0, 15.0),
                (13.0, 18.0),
                (15.0, 21.0),
                (18.0, 24.0),
                (21.0, 27.0),
                (24.0, 30.0),
                (27.0, 40.0),
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }
}
