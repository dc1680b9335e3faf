//! Chip layout: extents, qubit sites and the fiducial polygon.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One qubit island on the chip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitSite {
    pub name: String,
    /// Island centre [mm].
    pub x: f64,
    pub y: f64,
    /// Whether the qubit is read out in the analysis (slow-recovery qubits).
    pub sensitive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChipGeometry {
    /// Chip extents [mm]; the chip spans [0, width] × [0, height].
    pub width: f64,
    pub height: f64,
    pub sites: Vec<QubitSite>,
    /// Fiducial region as a simple polygon, vertices in order [mm].
    pub fiducial: Vec<(f64, f64)>,
}

const ROW_X: [f64; 5] = [0.6, 1.55, 2.5, 3.45, 4.4];
const ROW_Y: [f64; 2] = [1.25, 3.75];
const SENSITIVE: [&str; 5] = ["Q1", "Q2", "Q4", "Q5", "Q8"];

/// Default site of a qubit named `Q1` … `Q10` on the 2×5 layout: Q1–Q5 along
/// the lower row left to right, Q6–Q10 along the upper row.
pub fn default_site(name: &str) -> Option<(f64, f64)> {
    let index: usize = name.strip_prefix('Q')?.parse().ok()?;
    if !(1..=10).contains(&index) {
        return None;
    }
    let i = index - 1;
    Some((ROW_X[i % 5], ROW_Y[i / 5]))
}

impl Default for ChipGeometry {
    /// 5×5 mm chip with ten qubits in two rows; the fiducial polygon keeps the
    /// region enclosed by the five sensitive qubits with a 0.5 mm margin and
    /// drops the chip edges.
    fn default() -> Self {
        let sites = (1..=10)
            .map(|i| {
                let name = format!("Q{i}");
                let (x, y) = default_site(&name).expect("index within layout");
                QubitSite {
                    sensitive: SENSITIVE.contains(&name.as_str()),
                    name,
                    x,
                    y,
                }
            })
            .collect();
        Self {
            width: 5.0,
            height: 5.0,
            sites,
            fiducial: vec![
                (0.5, 0.6),
                (4.5, 0.6),
                (4.5, 1.75),
                (3.3, 4.3),
                (1.7, 4.3),
                (0.5, 1.75),
            ],
        }
    }
}

impl ChipGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(Error::Config(format!(
                "chip extents must be positive, got {} × {}",
                self.width, self.height
            )));
        }
        for s in &self.sites {
            if !self.contains(s.x, s.y) {
                return Err(Error::Config(format!(
                    "qubit {} at ({}, {}) lies outside the chip",
                    s.name, s.x, s.y
                )));
            }
        }
        if self.fiducial.len() < 3 {
            return Err(Error::Config("fiducial polygon needs at least 3 vertices".into()));
        }
        Ok(())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (0.0..=self.width).contains(&x) && (0.0..=self.height).contains(&y)
    }

    pub fn site(&self, name: &str) -> Option<&QubitSite> {
        self.sites.iter().find(|s| s.name == name)
    }

    pub fn sensitive_sites(&self) -> impl Iterator<Item = &QubitSite> {
        self.sites.iter().filter(|s| s.sensitive)
    }

    /// Even-odd point-in-polygon test against the fiducial polygon.
    pub fn in_fiducial(&self, x: f64, y: f64) -> bool {
        let poly = &self.fiducial;
        let mut inside = false;
        let mut j = poly.len() - 1;
        for i in 0..poly.len() {
            let (xi, yi) = poly[i];
            let (xj, yj) = poly[j];
            if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    /// Shoelace area of the fiducial polygon [mm²].
    pub fn fiducial_area(&self) -> f64 {
        let poly = &self.fiducial;
        let n = poly.len();
        let twice: f64 = (0..n)
            .map(|i| {
                let (x0, y0) = poly[i];
                let (x1, y1) = poly[(i + 1) % n];
                x0 * y1 - x1 * y0
            })
            .sum();
        0.5 * twice.abs()
    }

    pub fn fiducial_fraction(&self) -> f64 {
        self.fiducial_area() / (self.width * self.height)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_layout_is_valid() {
        let g = ChipGeometry::default();
        g.validate().unwrap();
        assert_eq!(g.sites.len(), 10);
        assert_eq!(g.sensitive_sites().count(), 5);
        assert_eq!(default_site("Q8"), Some((2.5, 3.75)));
        assert_eq!(default_site("Q11"), None);
        assert_eq!(default_site("X1"), None);
    }

    #[test]
    fn centre_passes_corner_fails() {
        let g = ChipGeometry::default();
        assert!(g.in_fiducial(2.5, 2.5));
        assert!(!g.in_fiducial(0.1, 0.1));
        assert!(!g.in_fiducial(4.9, 4.9));
    }

    #[test]
    fn area_fraction_near_half() {
        let g = ChipGeometry::default();
        assert!((g.fiducial_area() - 11.74).abs() < 1e-12);
        let f = g.fiducial_fraction();
        assert!((0.45..=0.50).contains(&f), "{f}");
    }

    #[test]
    fn monte_carlo_area_matches_shoelace() {
        let g = ChipGeometry::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let hits = (0..n)
            .filter(|_| g.in_fiducial(rng.random::<f64>() * 5.0, rng.random::<f64>() * 5.0))
            .count();
        let mc = hits as f64 / n as f64;
        let rel = (mc - g.fiducial_fraction()).abs() / g.fiducial_fraction();
        assert!(rel < 0.005, "{mc} vs {}", g.fiducial_fraction());
    }

    #[test]
    fn site_outside_chip_is_rejected() {
        let mut g = ChipGeometry::default();
        g.sites[0].x = 5.5;
        assert!(matches!(g.validate(), Err(Error::Config(_))));
    }
}
