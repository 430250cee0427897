//! Piecewise-constant terrain profiles with smoothed transitions.
//!
//! Environments are height profiles along x (constant across y). Transitions
//! between cells are blended over a short smoothstep window so the ground
//! clearance constraint has a gradient at cell edges; outside a window the
//! height is exactly the cell height.

/// Half-plane terrain: heights per x-interval, blended at each edge.
#[derive(Debug, Clone)]
pub struct Terrain {
    /// Edge positions, ascending. `heights[i]` applies on
    /// `[edges[i-1], edges[i])`, with `heights[0]` before the first edge.
    edges: Vec<f64>,
    heights: Vec<f64>,
    /// Blend window width in meters.
    blend: f64,
}

impl Terrain {
    pub fn flat(height: f64) -> Self {
        Terrain {
            edges: Vec::new(),
            heights: vec![height],
            blend: 0.02,
        }
    }

    /// Build from `(edge_x, height_after_edge)` pairs over a base height.
    pub fn from_profile(base: f64, steps: &[(f64, f64)], blend: f64) -> Self {
        let mut edges = Vec::with_capacity(steps.len());
        let mut heights = vec![base];
        for &(x, h) in steps {
            edges.push(x);
            heights.push(h);
        }
        Terrain {
            edges,
            heights,
            blend,
        }
    }

    pub fn blend_width(&self) -> f64 {
        self.blend
    }

    /// Height of the unsmoothed cell containing `x`.
    pub fn cell_height(&self, x: f64) -> f64 {
        let mut h = self.heights[0];
        for (i, &e) in self.edges.iter().enumerate() {
            if x >= e {
                h = self.heights[i + 1];
            } else {
                break;
            }
        }
        h
    }

    /// Smoothed height at `(x, y)`.
    pub fn height(&self, x: f64, _y: f64) -> f64 {
        let mut h = self.heights[0];
        for (i, &e) in self.edges.iter().enumerate() {
            let s = smoothstep((x - (e - 0.5 * self.blend)) / self.blend);
            h += (self.heights[i + 1] - h) * s;
        }
        h
    }

    /// Gradient of the smoothed height with respect to `(x, y)`.
    pub fn gradient(&self, x: f64, _y: f64) -> (f64, f64) {
        let mut h = self.heights[0];
        let mut dh = 0.0;
        for (i, &e) in self.edges.iter().enumerate() {
            let arg = (x - (e - 0.5 * self.blend)) / self.blend;
            let s = smoothstep(arg);
            let ds = smoothstep_derivative(arg) / self.blend;
            dh = dh * (1.0 - s) + (self.heights[i + 1] - h) * ds;
            h += (self.heights[i + 1] - h) * s;
        }
        (dh, 0.0)
    }

    /// Distance from `x` to the nearest height discontinuity; `None` when
    /// the terrain is flat.
    pub fn distance_to_edge(&self, x: f64) -> Option<f64> {
        self.edges
            .iter()
            .map(|&e| (x - e).abs())
            .min_by(|a, b| a.partial_cmp(b).unwrap())
    }
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn smoothstep_derivative(t: f64) -> f64 {
    if !(0.0..=1.0).contains(&t) {
        0.0
    } else {
        6.0 * t * (1.0 - t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_terrain_is_flat() {
        let t = Terrain::flat(0.0);
        assert_eq!(t.height(-3.0, 0.0), 0.0);
        assert_eq!(t.height(7.0, 2.0), 0.0);
        assert_eq!(t.gradient(1.0, 0.0), (0.0, 0.0));
        assert!(t.distance_to_edge(0.0).is_none());
    }

    #[test]
    fn step_heights_are_exact_outside_blend() {
        let t = Terrain::from_profile(0.0, &[(1.0, 0.2)], 0.02);
        assert_eq!(t.height(0.5, 0.0), 0.0);
        assert_eq!(t.height(1.5, 0.0), 0.2);
        // Midpoint of the blend window.
        let mid = t.height(1.0 - 0.0, 0.0);
        assert!(mid > 0.0 && mid < 0.2);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let t = Terrain::from_profile(0.0, &[(1.0, 0.2), (1.5, -0.4), (1.9, 0.0)], 0.02);
        let h = 1e-7;
        for i in 0..400 {
            let x = 0.8 + i as f64 * 0.004;
            let fd = (t.height(x + h, 0.0) - t.height(x - h, 0.0)) / (2.0 * h);
            let (g, _) = t.gradient(x, 0.0);
            assert!(
                (fd - g).abs() < 1e-4 * (1.0 + fd.abs()),
                "x={x}: fd {fd} vs {g}"
            );
        }
    }
}
