use serde::{Deserialize, Serialize};

use super::MultiplierLUT;

/// Per-multiplier replacement table for unsigned weight bytes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightMap {
    pub mapping: Vec<u8>,
}

impl WeightMap {
    pub fn identity() -> Self {
        WeightMap {
            mapping: (0..=255).collect(),
        }
    }

    #[inline]
    pub fn apply(&self, w: u8) -> u8 {
        self.mapping[usize::from(w)]
    }

    pub fn is_identity(&self) -> bool {
        self.mapping.iter().enumerate().all(|(i, &m)| usize::from(m) == i)
    }

    /// `self` followed by `other`, as a table.
    pub fn then(&self, other: &WeightMap) -> WeightMap {
        WeightMap {
            mapping: self.mapping.iter().map(|&m| other.apply(m)).collect(),
        }
    }
}

/// For every weight `w`, the `w'` minimizing `Σ_a |P[a, w'] − a·w|` over a
/// uniform activation distribution. Ties go to the smaller `|w' − w|`, then
/// the smaller `w'`.
pub fn weight_map(lut: &MultiplierLUT) -> WeightMap {
    let mut mapping = Vec::with_capacity(256);
    for w in 0..256i64 {
        let mut best = (i64::MAX, i64::MAX, 0i64);
        for cand in 0..256i64 {
            let row = lut.weight_row(cand as u8);
            let mut cost = 0i64;
            for (a, &p) in row.iter().enumerate() {
                cost += (i64::from(p) - a as i64 * w).abs();
                if cost > best.0 {
                    break;
                }
            }
            let key = (cost, (cand - w).abs(), cand);
            if key < best {
                best = key;
            }
        }
        mapping.push(best.2 as u8);
    }
    WeightMap { mapping }
}

/// Same criterion with the activation distribution `density` (256 non-negative weights).
pub fn weight_map_weighted(lut: &MultiplierLUT, density: &[f64]) -> WeightMap {
    assert_eq!(density.len(), 256, "density covers all 256 activation codes");
    let mut mapping = Vec::with_capacity(256);
    for w in 0..256i64 {
        let mut best: Option<(f64, i64, i64)> = None;
        for cand in 0..256i64 {
            let row = lut.weight_row(cand as u8);
            let cost: f64 = row
                .iter()
                .zip(density)
                .enumerate()
                .map(|(a, (&p, &d))| d * (i64::from(p) - a as i64 * w).abs() as f64)
                .sum();
            let key = (cost, (cand - w).abs(), cand);
            let better = match best {
                None => true,
                Some(b) => key.0 < b.0 || (key.0 == b.0 && (key.1, key.2) < (b.1, b.2)),
            };
            if better {
                best = Some(key);
            }
        }
        mapping.push(best.expect("256 candidates").2 as u8);
    }
    WeightMap { mapping }
}
