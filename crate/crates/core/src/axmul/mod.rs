//! Behavioral 8x8-bit multipliers as 65,536-entry product tables.
//!
//! Tables are indexed `a * 256 + b` for unsigned operands. Signed operands are
//! handled sign-magnitude around the unsigned table, with -128 excluded.
//! By convention the first operand is the activation and the second the weight.

mod library;
mod weight_map;

pub use library::{MultiplierLibrary, PreparedMultiplier};
pub use weight_map::{weight_map, weight_map_weighted, WeightMap};

use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::write_atomic;

pub const LUT_ENTRIES: usize = 256 * 256;
pub const LUT_BYTES: usize = 2 * LUT_ENTRIES;
/// Largest exact product of two unsigned 8-bit operands.
pub const MAX_EXACT_PRODUCT: f64 = 255.0 * 255.0;
/// Default power of one accurate MAC unit (W): roughly 0.25 pJ per 8-bit MAC at 1 GHz.
pub const DEFAULT_P_MAC_WATTS: f64 = 0.25e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct MultiplierLUT {
    name: String,
    products: Vec<u16>,
    /// Transposed copy, `[b][a]`, so a fixed weight reads one contiguous row.
    by_weight: Vec<u16>,
    declared_mae_pct: f64,
    power_xmac: f64,
    exact: bool,
}

/// Sidecar metadata stored next to a LUT dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LutSidecar {
    pub name: String,
    pub declared_mae_pct: f64,
    pub power_xmac_watts: f64,
}

/// Declared and recomputed MAE disagree by more than 5 % (relative).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaeDrift {
    pub name: String,
    pub declared_mae_pct: f64,
    pub computed_mae_pct: f64,
}

impl MultiplierLUT {
    pub fn new(name: impl Into<String>, products: Vec<u16>, declared_mae_pct: f64, power_xmac: f64) -> Result<Self> {
        if products.len() != LUT_ENTRIES {
            return Err(Error::InvalidArgument(format!(
                "product table has {} entries, expected {LUT_ENTRIES}",
                products.len()
            )));
        }
        if !(declared_mae_pct >= 0.0 && declared_mae_pct.is_finite()) {
            return Err(Error::config("declared_mae_pct", "must be finite and >= 0"));
        }
        if !(power_xmac > 0.0 && power_xmac.is_finite()) {
            return Err(Error::config("power_xmac_watts", "must be finite and > 0"));
        }
        let mut by_weight = vec![0u16; LUT_ENTRIES];
        let mut exact = true;
        for a in 0..256 {
            for b in 0..256 {
                let p = products[a * 256 + b];
                by_weight[b * 256 + a] = p;
                exact &= usize::from(p) == a * b;
            }
        }
        Ok(MultiplierLUT {
            name: name.into(),
            products,
            by_weight,
            declared_mae_pct,
            power_xmac,
            exact,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn declared_mae_pct(&self) -> f64 {
        self.declared_mae_pct
    }

    pub fn power_xmac(&self) -> f64 {
        self.power_xmac
    }

    pub fn products(&self) -> &[u16] {
        &self.products
    }

    pub fn is_exact(&self) -> bool {
        self.exact
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_power(mut self, power_xmac: f64) -> Result<Self> {
        if !(power_xmac > 0.0 && power_xmac.is_finite()) {
            return Err(Error::config("power_xmac_watts", "must be finite and > 0"));
        }
        self.power_xmac = power_xmac;
        Ok(self)
    }

    #[inline]
    pub fn product(&self, a: u8, b: u8) -> u16 {
        self.products[usize::from(a) * 256 + usize::from(b)]
    }

    /// Row of products for a fixed second operand, indexed by the first.
    #[inline]
    pub fn weight_row(&self, b: u8) -> &[u16] {
        let b = usize::from(b);
        &self.by_weight[b * 256..(b + 1) * 256]
    }

    /// `sign(a)·sign(b)·products[|a|, |b|]` for operands in `[-127, 127]`.
    pub fn multiply_signed(&self, a: i32, b: i32) -> Result<i32> {
        for v in [a, b] {
            if !(-127..=127).contains(&v) {
                return Err(Error::OperandRange(v));
            }
        }
        let p = i32::from(self.product(a.unsigned_abs() as u8, b.unsigned_abs() as u8));
        Ok(if (a < 0) != (b < 0) { -p } else { p })
    }

    /// Mean absolute product error over all unsigned pairs, as a percentage of 255·255.
    pub fn mae_pct(&self) -> f64 {
        mae(self)
    }

    /// Writes the 131,072-byte table and a `<stem>.json` sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(LUT_BYTES);
        for p in &self.products {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
        write_atomic(path, &bytes)?;
        let sidecar = LutSidecar {
            name: self.name.clone(),
            declared_mae_pct: self.declared_mae_pct,
            power_xmac_watts: self.power_xmac,
        };
        write_atomic(&sidecar_path(path), serde_json::to_string_pretty(&sidecar)?.as_bytes())?;
        Ok(())
    }

    /// Loads a table dump. A declared-vs-computed MAE drift above 5 % is
    /// returned (and logged) rather than treated as an error.
    pub fn load(path: &Path) -> Result<(Self, Option<MaeDrift>)> {
        let bytes = fs::read(path)?;
        if bytes.len() != LUT_BYTES {
            return Err(Error::LutSize {
                path: path.to_path_buf(),
                found: bytes.len(),
                expected: LUT_BYTES,
            });
        }
        let side = sidecar_path(path);
        if !side.exists() {
            return Err(Error::MissingSidecar(side));
        }
        let meta: LutSidecar = serde_json::from_str(&fs::read_to_string(&side)?)?;
        let products = bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
        let lut = MultiplierLUT::new(meta.name, products, meta.declared_mae_pct, meta.power_xmac_watts)?;
        let computed = lut.mae_pct();
        let declared = lut.declared_mae_pct;
        let drifted = if declared == 0.0 {
            computed > 0.0
        } else {
            ((computed - declared) / declared).abs() > 0.05
        };
        let drift = drifted.then(|| {
            warn!("{}: declared MAE {declared}% but computed {computed}%", lut.name);
            MaeDrift {
                name: lut.name.clone(),
                declared_mae_pct: declared,
                computed_mae_pct: computed,
            }
        });
        Ok((lut, drift))
    }
}

pub fn sidecar_path(lut_path: &Path) -> PathBuf {
    lut_path.with_extension("json")
}

pub fn mae(lut: &MultiplierLUT) -> f64 {
    let mut total: u64 = 0;
    for a in 0..256u32 {
        for b in 0..256u32 {
            let p = i64::from(lut.products[(a * 256 + b) as usize]);
            total += (p - i64::from(a * b)).unsigned_abs();
        }
    }
    total as f64 / LUT_ENTRIES as f64 / MAX_EXACT_PRODUCT * 100.0
}

/// Exact multiplier with the default accurate-MAC power.
pub fn make_exact() -> MultiplierLUT {
    make_exact_with_power(DEFAULT_P_MAC_WATTS)
}

pub fn make_exact_with_power(power: f64) -> MultiplierLUT {
    let products = (0..LUT_ENTRIES).map(|i| ((i / 256) * (i % 256)) as u16).collect();
    MultiplierLUT::new("M1", products, 0.0, power).expect("valid exact table")
}

/// Both operands have their `drop_bits` least significant bits zeroed.
pub fn synth_truncated(drop_bits: u32) -> Result<MultiplierLUT> {
    if drop_bits > 7 {
        return Err(Error::config("drop_bits", format!("{drop_bits} outside 0..=7")));
    }
    let mask = !((1u32 << drop_bits) - 1) & 0xff;
    let products = (0..LUT_ENTRIES as u32)
        .map(|i| (((i / 256) & mask) * ((i % 256) & mask)) as u16)
        .collect();
    let mut lut = MultiplierLUT::new(format!("trunc{drop_bits}"), products, 0.0, DEFAULT_P_MAC_WATTS)?;
    lut.declared_mae_pct = lut.mae_pct();
    Ok(lut)
}

/// Broken-array multiplier: partial products `a_i·b_j·2^(i+j)` in columns
/// `i + j < columns` are omitted, plus `extra` more partial products from
/// column `columns` (lowest `i` first).
pub fn synth_column_truncated(columns: u32, extra: u32) -> Result<MultiplierLUT> {
    if columns > 14 {
        return Err(Error::config("columns", format!("{columns} outside 0..=14")));
    }
    let in_column: Vec<(u32, u32)> = (0..8u32)
        .filter_map(|i| columns.checked_sub(i).filter(|j| *j < 8).map(|j| (i, j)))
        .collect();
    if extra as usize > in_column.len() {
        return Err(Error::config(
            "extra",
            format!("column {columns} has only {} partial products", in_column.len()),
        ));
    }
    let dropped = &in_column[..extra as usize];
    let products = (0..LUT_ENTRIES as u32)
        .map(|idx| {
            let (a, b) = (idx / 256, idx % 256);
            let mut p = 0u32;
            for i in 0..8 {
                for j in 0..8 {
                    if i + j < columns || dropped.contains(&(i, j)) {
                        continue;
                    }
                    p += ((a >> i) & 1) * ((b >> j) & 1) << (i + j);
                }
            }
            p as u16
        })
        .collect();
    let mut lut = MultiplierLUT::new(format!("bam_c{columns}_e{extra}"), products, 0.0, DEFAULT_P_MAC_WATTS)?;
    lut.declared_mae_pct = lut.mae_pct();
    Ok(lut)
}

/// Searches the broken-array family for the design whose exhaustively
/// computed MAE is closest to `target_pct`.
pub fn calibrate_to_mae(target_pct: f64) -> Result<MultiplierLUT> {
    if !(target_pct >= 0.0 && target_pct.is_finite()) {
        return Err(Error::config("target_pct", "must be finite and >= 0"));
    }
    // Each partial product a_i·b_j contributes 2^(i+j)/4 to the mean error,
    // so the closed form ranks candidates; the winner is built and verified.
    let mut best: Option<(f64, u32, u32)> = None;
    for columns in 0..=14u32 {
        let base: f64 = (0..columns).map(|c| column_bits(c) as f64 * f64::from(1u32 << c) / 4.0).sum();
        for extra in 0..=column_bits(columns) {
            let mean_err = base + f64::from(extra) * f64::from(1u32 << columns) / 4.0;
            let pct = mean_err / MAX_EXACT_PRODUCT * 100.0;
            let gap = (pct - target_pct).abs();
            if best.is_none_or(|(g, _, _)| gap < g) {
                best = Some((gap, columns, extra));
            }
        }
    }
    let (_, columns, extra) = best.expect("non-empty search space");
    synth_column_truncated(columns, extra)
}

fn column_bits(column: u32) -> u32 {
    (0..8u32).filter(|&i| column >= i && column - i < 8).count() as u32
}

/// MAE ladder (%) of the six approximate designs used as M2..M7 fixtures.
pub const LADDER_MAE_PCT: [f64; 6] = [0.0018, 0.0064, 0.051, 0.081, 0.23, 0.52];

/// EvoApprox8b designs the fixtures stand in for.
pub const LADDER_REFERENCE: [&str; 6] = ["KV8", "KV9", "KVP", "L2J", "L2L", "L2N"];

/// Seven-step ladder `M1` (exact) .. `M7`, ordered by ascending MAE.
///
/// Approximate designs are broken-array multipliers calibrated to the MAE
/// ladder. Power defaults to `p_mac · (1 − rank/7)` for rank 0..6.
pub fn fixture_ladder(p_mac: f64) -> Result<Vec<MultiplierLUT>> {
    let k = LADDER_MAE_PCT.len() + 1;
    let mut out = vec![make_exact_with_power(p_mac)];
    for (rank, target) in LADDER_MAE_PCT.iter().enumerate() {
        let rank = rank + 1;
        let power = p_mac * (1.0 - rank as f64 / k as f64);
        out.push(calibrate_to_mae(*target)?.with_name(format!("M{}", rank + 1)).with_power(power)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_products() {
        let lut = make_exact();
        assert_eq!(lut.product(3, 5), 15);
        assert_eq!(lut.product(255, 255), 65025);
        assert_eq!(lut.mae_pct(), 0.0);
        assert!(lut.is_exact());
    }

    #[test]
    fn signed_multiply_exhaustive_on_exact() {
        let lut = make_exact();
        for a in -127..=127 {
            for b in -127..=127 {
                assert_eq!(lut.multiply_signed(a, b).unwrap(), a * b);
            }
        }
        assert_eq!(lut.multiply_signed(-3, 5).unwrap(), -15);
        assert!(matches!(lut.multiply_signed(-128, 1), Err(Error::OperandRange(-128))));
    }

    #[test]
    fn signed_multiply_is_sign_symmetric() {
        for lut in [synth_truncated(3).unwrap(), synth_column_truncated(6, 2).unwrap()] {
            for a in 0..=127 {
                for b in 0..=127 {
                    let f = lut.multiply_signed(a, b).unwrap();
                    assert_eq!(lut.multiply_signed(-a, b).unwrap(), -f);
                    assert_eq!(lut.multiply_signed(a, -b).unwrap(), -f);
                    assert_eq!(lut.multiply_signed(-a, -b).unwrap(), f);
                }
            }
        }
    }

    #[test]
    fn truncation_rules() {
        assert_eq!(synth_truncated(0).unwrap().products(), make_exact().products());
        assert_eq!(synth_truncated(1).unwrap().product(3, 3), 4);
        assert!(synth_truncated(8).is_err());
        let maes: Vec<f64> = (0..=7).map(|k| synth_truncated(k).unwrap().mae_pct()).collect();
        assert_eq!(maes[0], 0.0);
        assert!(maes.windows(2).all(|w| w[1] > w[0]), "{maes:?}");
    }

    #[test]
    fn all_zero_lut_mae_is_closed_form() {
        let zero = MultiplierLUT::new("zero", vec![0; LUT_ENTRIES], 25.0, 1e-3).unwrap();
        // mean of a·b over uniform pairs is (Σa)² / 65536
        let sum_a: f64 = (0..256).map(f64::from).sum();
        let expected = sum_a * sum_a / 65536.0 / 65025.0 * 100.0;
        assert!((zero.mae_pct() - expected).abs() < 1e-12);
        assert!((expected - 25.0).abs() < 1e-12);
    }

    #[test]
    fn column_truncation_matches_closed_form() {
        for (columns, extra) in [(0, 0), (2, 0), (3, 0), (5, 3), (6, 4), (7, 5)] {
            let lut = synth_column_truncated(columns, extra).unwrap();
            let base: f64 = (0..columns).map(|c| column_bits(c) as f64 * 2f64.powi(c as i32) / 4.0).sum();
            let want = (base + f64::from(extra) * 2f64.powi(columns as i32) / 4.0) / 65025.0 * 100.0;
            assert!((lut.mae_pct() - want).abs() < 1e-12, "c{columns} e{extra}");
        }
    }

    #[test]
    fn fixture_ladder_tracks_targets_within_twenty_percent() {
        let ladder = fixture_ladder(DEFAULT_P_MAC_WATTS).unwrap();
        assert_eq!(ladder.len(), 7);
        assert!(ladder[0].is_exact());
        for (lut, target) in ladder[1..].iter().zip(LADDER_MAE_PCT) {
            let rel = (lut.mae_pct() - target).abs() / target;
            assert!(rel <= 0.2, "{} mae {} vs {target}", lut.name(), lut.mae_pct());
        }
        let powers: Vec<f64> = ladder.iter().map(|l| l.power_xmac()).collect();
        assert!(powers.windows(2).all(|w| w[1] < w[0]));
        let maes: Vec<f64> = ladder.iter().map(|l| l.mae_pct()).collect();
        assert!(maes.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn dump_round_trips_and_checks_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exact.lut");
        let lut = make_exact();
        lut.save(&path).unwrap();
        let (back, drift) = MultiplierLUT::load(&path).unwrap();
        assert_eq!(back, lut);
        assert!(drift.is_none());

        let t3 = synth_truncated(3).unwrap();
        let p3 = dir.path().join("t3.lut");
        t3.save(&p3).unwrap();
        let (back, drift) = MultiplierLUT::load(&p3).unwrap();
        assert_eq!(back.mae_pct(), t3.declared_mae_pct());
        assert!(drift.is_none());

        let short = dir.path().join("short.lut");
        fs::write(&short, vec![0u8; LUT_BYTES - 1]).unwrap();
        assert!(matches!(MultiplierLUT::load(&short), Err(Error::LutSize { found: 131071, .. })));

        let lonely = dir.path().join("lonely.lut");
        fs::write(&lonely, vec![0u8; LUT_BYTES]).unwrap();
        assert!(matches!(MultiplierLUT::load(&lonely), Err(Error::MissingSidecar(_))));
    }

    #[test]
    fn declared_mae_drift_is_a_warning() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("liar.lut");
        let lut = MultiplierLUT::new("liar", synth_truncated(2).unwrap().products().to_vec(), 0.001, 1e-4).unwrap();
        lut.save(&path).unwrap();
        let (_, drift) = MultiplierLUT::load(&path).unwrap();
        let drift = drift.expect("drift reported");
        assert_eq!(drift.declared_mae_pct, 0.001);
    }
}
