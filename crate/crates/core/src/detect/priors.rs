//! Prior (default) boxes tiled over feature maps.

use serde::{Deserialize, Serialize};

use super::boxes::BBox;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorMap {
    /// Grid (rows, cols).
    pub grid: (usize, usize),
    pub scale: f64,
    pub aspect_ratios: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorLayout {
    pub maps: Vec<PriorMap>,
    /// Adds a square prior at `√(s_k · s_{k+1})` to every cell.
    pub extra_square: bool,
}

impl PriorLayout {
    /// Scales spread linearly from `s_min` to `s_max` across the maps.
    pub fn linear(grids: &[(usize, usize)], s_min: f64, s_max: f64, aspect_ratios: &[f64]) -> Self {
        let m = grids.len();
        let maps = grids
            .iter()
            .enumerate()
            .map(|(k, &grid)| PriorMap {
                grid,
                scale: if m > 1 {
                    s_min + (s_max - s_min) * k as f64 / (m - 1) as f64
                } else {
                    s_min
                },
                aspect_ratios: aspect_ratios.to_vec(),
            })
            .collect();
        Self {
            maps,
            extra_square: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (k, m) in self.maps.iter().enumerate() {
            if m.grid.0 == 0 || m.grid.1 == 0 {
                return Err(Error::Input(format!("prior map {k} has an empty grid")));
            }
            if !(m.scale > 0.0 && m.scale <= 1.0) {
                return Err(Error::Input(format!("prior map {k} scale {} not in (0, 1]", m.scale)));
            }
            if m.aspect_ratios.is_empty() || m.aspect_ratios.iter().any(|&a| !(a > 0.0)) {
                return Err(Error::Input(format!("prior map {k} needs positive aspect ratios")));
            }
        }
        if self.maps.windows(2).any(|w| w[0].scale >= w[1].scale) {
            return Err(Error::Input("prior scales must increase across maps".into()));
        }
        Ok(())
    }

    /// Priors per cell of map `k`.
    pub fn per_cell(&self, k: usize) -> usize {
        self.maps[k].aspect_ratios.len() + usize::from(self.extra_square)
    }

    pub fn count(&self) -> usize {
        (0..self.maps.len())
            .map(|k| self.maps[k].grid.0 * self.maps[k].grid.1 * self.per_cell(k))
            .sum()
    }

    /// Scale used for the extra square prior of map `k`. The last map extends
    /// the spacing of the previous two (capped at 1); a single map uses 1.
    pub fn next_scale(&self, k: usize) -> f64 {
        match (self.maps.get(k + 1), k.checked_sub(1).and_then(|p| self.maps.get(p))) {
            (Some(next), _) => next.scale,
            (None, Some(prev)) => (2.0 * self.maps[k].scale - prev.scale).min(1.0),
            (None, None) => 1.0,
        }
    }
}

/// All priors, clipped to [0, 1], ordered by (map, row, col, ratio) with the
/// extra square prior last in each cell.
pub fn generate_priors(layout: &PriorLayout) -> Result<Vec<BBox>> {
    layout.validate()?;
    let mut out = Vec::with_capacity(layout.count());
    for (k, m) in layout.maps.iter().enumerate() {
        let (rows, cols) = m.grid;
        let extra = (m.scale * layout.next_scale(k)).sqrt();
        for i in 0..rows {
            for j in 0..cols {
                let cx = (j as f64 + 0.5) / cols as f64;
                let cy = (i as f64 + 0.5) / rows as f64;
                for &a in &m.aspect_ratios {
                    let r = a.sqrt();
                    out.push(BBox::from_center(cx, cy, m.scale * r, m.scale / r).clipped());
                }
                if layout.extra_square {
                    out.push(BBox::from_center(cx, cy, extra, extra).clipped());
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centred_square() {
        let layout = PriorLayout {
            maps: vec![PriorMap {
                grid: (1, 1),
                scale: 0.5,
                aspect_ratios: vec![1.0],
            }],
            extra_square: false,
        };
        assert_eq!(
            generate_priors(&layout).unwrap(),
            vec![BBox::new(0.25, 0.25, 0.75, 0.75)]
        );
    }

    #[test]
    fn counts_and_order() {
        let layout = PriorLayout::linear(&[(2, 2)], 0.2, 0.9, &[1.0, 2.0, 0.5]);
        let priors = generate_priors(&layout).unwrap();
        assert_eq!(priors.len(), 4 * (3 + 1));
        assert_eq!(layout.count(), priors.len());
        // Cell (0,1) starts at index 4 and is centred at (0.75, 0.25).
        let (cx, cy) = priors[4].center();
        assert!((cx - 0.75).abs() < 1e-12 && (cy - 0.25).abs() < 1e-12);
        // Extra square at √(0.2·1).
        assert!((priors[3].width() - 0.2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn aspect_ratio_geometry() {
        let layout = PriorLayout {
            maps: vec![PriorMap {
                grid: (1, 1),
                scale: 0.2,
                aspect_ratios: vec![2.0],
            }],
            extra_square: false,
        };
        let p = generate_priors(&layout).unwrap()[0];
        assert!((p.width() - 0.2 * 2f64.sqrt()).abs() < 1e-12);
        assert!((p.height() - 0.2 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn clipping_and_scale_rules() {
        let layout = PriorLayout::linear(&[(4, 4), (2, 2)], 0.3, 0.9, &[1.0, 3.0]);
        assert!((layout.next_scale(0) - 0.9).abs() < 1e-12);
        assert!((layout.next_scale(1) - 1.0).abs() < 1e-12);
        for p in generate_priors(&layout).unwrap() {
            for v in p.to_array() {
                assert!((0.0..=1.0).contains(&v));
            }
        }
        let bad = PriorLayout::linear(&[(2, 2), (1, 1)], 0.9, 0.3, &[1.0]);
        assert!(generate_priors(&bad).is_err());
    }
}
