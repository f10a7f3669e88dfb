use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;

use super::{weight_map, MultiplierLUT, WeightMap};
use crate::error::{Error, Result};

/// A LUT with everything the executor derives from it.
#[derive(Debug)]
pub struct PreparedMultiplier {
    pub lut: MultiplierLUT,
    pub weight_map: WeightMap,
    /// `table[((neg·256 + |w|)·256) + a + 128]` = signed product for activation `a`.
    pub signed: Vec<i32>,
}

impl PreparedMultiplier {
    pub fn new(lut: MultiplierLUT) -> Self {
        let map = weight_map(&lut);
        let mut signed = vec![0i32; 2 * 256 * 256];
        for neg in 0..2usize {
            for mag in 0..256usize {
                let row = lut.weight_row(mag as u8);
                let base = (neg * 256 + mag) * 256;
                for a in -127i32..=127 {
                    let p = i32::from(row[a.unsigned_abs() as usize]);
                    let negative = (a < 0) != (neg == 1);
                    signed[base + (a + 128) as usize] = if negative { -p } else { p };
                }
            }
        }
        PreparedMultiplier {
            lut,
            weight_map: map,
            signed,
        }
    }
}

/// Named multipliers ordered by ascending MAE, the first one exact.
#[derive(Clone, Debug)]
pub struct MultiplierLibrary {
    ladder: Vec<Arc<PreparedMultiplier>>,
    by_name: BTreeMap<String, usize>,
}

impl MultiplierLibrary {
    pub fn new(luts: Vec<MultiplierLUT>) -> Result<Self> {
        if luts.is_empty() {
            return Err(Error::config("multipliers", "ladder is empty"));
        }
        if !luts[0].is_exact() {
            return Err(Error::config("multipliers", format!("ladder[0] `{}` is not exact", luts[0].name())));
        }
        let mut by_name = BTreeMap::new();
        for (i, l) in luts.iter().enumerate() {
            if by_name.insert(l.name().to_string(), i).is_some() {
                return Err(Error::config("multipliers", format!("duplicate name `{}`", l.name())));
            }
        }
        let ladder = luts.into_par_iter().map(|l| Arc::new(PreparedMultiplier::new(l))).collect();
        Ok(MultiplierLibrary { ladder, by_name })
    }

    pub fn fixtures(p_mac: f64) -> Result<Self> {
        Self::new(super::fixture_ladder(p_mac)?)
    }

    pub fn len(&self) -> usize {
        self.ladder.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ladder.is_empty()
    }

    pub fn exact(&self) -> &PreparedMultiplier {
        &self.ladder[0]
    }

    pub fn get(&self, name: &str) -> Result<&PreparedMultiplier> {
        self.by_name
            .get(name)
            .map(|&i| self.ladder[i].as_ref())
            .ok_or_else(|| Error::UnknownMultiplier(name.to_string()))
    }

    pub fn at(&self, index: usize) -> &PreparedMultiplier {
        &self.ladder[index]
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.by_name.get(name).copied().ok_or_else(|| Error::UnknownMultiplier(name.to_string()))
    }

    pub fn names(&self) -> Vec<String> {
        self.ladder.iter().map(|p| p.lut.name().to_string()).collect()
    }

    pub fn luts(&self) -> impl Iterator<Item = &MultiplierLUT> {
        self.ladder.iter().map(|p| &p.lut)
    }
}
