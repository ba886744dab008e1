use serde::{Deserialize, Serialize};

use super::GeometryError;

pub type Point = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excision {
    pub center: Point,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainKind {
    /// Flat cube `[0, period)³` with periodic identification.
    Torus { period: f64 },
    /// Ball of the given radius centred at the origin.
    Ball { radius: f64 },
}

/// Geometric description of a sampled domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDomain {
    pub kind: DomainKind,
    pub spacing: f64,
    #[serde(default)]
    pub excised: Vec<Excision>,
}

impl GridDomain {
    pub fn torus(period: f64, points_per_axis: usize) -> Self {
        GridDomain { kind: DomainKind::Torus { period }, spacing: period / points_per_axis as f64, excised: Vec::new() }
    }

    pub fn ball(radius: f64, spacing: f64) -> Self {
        GridDomain { kind: DomainKind::Ball { radius }, spacing, excised: Vec::new() }
    }

    pub fn with_excision(mut self, center: Point, radius: f64) -> Self {
        self.excised.push(Excision { center, radius });
        self
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let h = self.spacing;
        if !(h > 0.0 && h.is_finite()) {
            return Err(GeometryError::InvalidDomain(format!("spacing must be positive, got {h}")));
        }
        match self.kind {
            DomainKind::Torus { period } => {
                let n = period / h;
                if (n - n.round()).abs() > 1e-9 || n.round() < 8.0 {
                    return Err(GeometryError::InvalidDomain(format!(
                        "torus period {period} must be an integer multiple (>= 8) of spacing {h}"
                    )));
                }
            }
            DomainKind::Ball { radius } => {
                if radius < 4.0 * h {
                    return Err(GeometryError::InvalidDomain(format!("ball radius {radius} must be at least 4h")));
                }
                for e in &self.excised {
                    let d = norm(e.center);
                    if d + e.radius > radius - 4.0 * h {
                        return Err(GeometryError::InvalidDomain(format!(
                            "excision at {:?} must sit inside the ball with margin 4h",
                            e.center
                        )));
                    }
                }
            }
        }
        for e in &self.excised {
            if e.radius < 2.0 * h {
                return Err(GeometryError::InvalidDomain(format!(
                    "excision radius {} must be at least 2h = {}",
                    e.radius,
                    2.0 * h
                )));
            }
        }
        Ok(())
    }

    /// Builds the sampled grid.
    pub fn build(&self) -> Result<Grid, GeometryError> {
        self.validate()?;
        let h = self.spacing;
        let (n, origin, periodic) = match self.kind {
            DomainKind::Torus { period } => {
                let n = (period / h).round() as usize;
                ([n; 3], [0.0; 3], Some(period))
            }
            DomainKind::Ball { radius } => {
                let half = (radius / h).ceil() as usize + 1;
                let n = 2 * half + 1;
                let o = -(half as f64) * h;
                ([n; 3], [o; 3], None)
            }
        };
        let mut grid = Grid { n, h, origin, period: periodic, active: Vec::new(), domain: self.clone() };
        let total = n[0] * n[1] * n[2];
        let mut active = vec![true; total];
        for (idx, a) in active.iter_mut().enumerate() {
            let x = grid.point(idx);
            if let DomainKind::Ball { radius } = self.kind {
                if norm(x) > radius + 1e-12 {
                    *a = false;
                    continue;
                }
            }
            for e in &self.excised {
                if grid.distance(x, e.center) < e.radius {
                    *a = false;
                    break;
                }
            }
        }
        grid.active = active;
        Ok(grid)
    }
}

/// A uniform Cartesian sampling with an activity mask.
#[derive(Debug, Clone)]
pub struct Grid {
    pub n: [usize; 3],
    pub h: f64,
    pub origin: Point,
    /// `Some(L)` for a periodic cube of side `L`.
    pub period: Option<f64>,
    pub active: Vec<bool>,
    pub domain: GridDomain,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn cell_volume(&self) -> f64 {
        self.h * self.h * self.h
    }

    pub fn index(&self, i: [usize; 3]) -> usize {
        i[0] + self.n[0] * (i[1] + self.n[1] * i[2])
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.n[0];
        let r = idx / self.n[0];
        [i, r % self.n[1], r / self.n[1]]
    }

    pub fn point(&self, idx: usize) -> Point {
        let c = self.coords(idx);
        [
            self.origin[0] + c[0] as f64 * self.h,
            self.origin[1] + c[1] as f64 * self.h,
            self.origin[2] + c[2] as f64 * self.h,
        ]
    }

    /// Displacement `x − y`, taking the shortest periodic image on a torus.
    pub fn displacement(&self, x: Point, y: Point) -> Point {
        let mut d = [x[0] - y[0], x[1] - y[1], x[2] - y[2]];
        if let Some(l) = self.period {
            for v in d.iter_mut() {
                *v -= l * (*v / l).round();
            }
        }
        d
    }

    pub fn distance(&self, x: Point, y: Point) -> f64 {
        norm(self.displacement(x, y))
    }

    /// Neighbour `step` cells along `axis`, or `None` if it leaves the grid or is inactive.
    pub fn neighbor(&self, idx: usize, axis: usize, step: isize) -> Option<usize> {
        let mut c = self.coords(idx);
        let n = self.n[axis] as isize;
        let mut v = c[axis] as isize + step;
        if self.period.is_some() {
            v = v.rem_euclid(n);
        } else if v < 0 || v >= n {
            return None;
        }
        c[axis] = v as usize;
        let j = self.index(c);
        self.active[j].then_some(j)
    }

    /// Active points whose six axial neighbours are also active.
    pub fn interior_mask(&self) -> Vec<bool> {
        (0..self.len())
            .map(|i| {
                self.active[i]
                    && (0..3).all(|a| self.neighbor(i, a, 1).is_some() && self.neighbor(i, a, -1).is_some())
            })
            .collect()
    }

    /// Nearest grid node to `x` (wrapping on a torus).
    pub fn nearest_index(&self, x: Point) -> usize {
        let mut c = [0usize; 3];
        for a in 0..3 {
            let mut v = ((x[a] - self.origin[a]) / self.h).round() as isize;
            let n = self.n[a] as isize;
            if self.period.is_some() {
                v = v.rem_euclid(n);
            } else {
                v = v.clamp(0, n - 1);
            }
            c[a] = v as usize;
        }
        self.index(c)
    }

    /// Derivative stencil along `axis` at `idx`: central where possible, otherwise
    /// second-order one-sided. Returns the number of taps written.
    pub fn taps(&self, idx: usize, axis: usize, out: &mut [(usize, f64); 3]) -> usize {
        if !self.active[idx] {
            return 0;
        }
        let inv = 0.5 / self.h;
        let p = self.neighbor(idx, axis, 1);
        let m = self.neighbor(idx, axis, -1);
        if let (Some(p), Some(m)) = (p, m) {
            out[0] = (m, -inv);
            out[1] = (p, inv);
            return 2;
        }
        if let Some(p1) = p {
            if let Some(p2) = self.neighbor(idx, axis, 2) {
                out[0] = (idx, -3.0 * inv);
                out[1] = (p1, 4.0 * inv);
                out[2] = (p2, -inv);
                return 3;
            }
        }
        if let Some(m1) = m {
            if let Some(m2) = self.neighbor(idx, axis, -2) {
                out[0] = (idx, 3.0 * inv);
                out[1] = (m1, -4.0 * inv);
                out[2] = (m2, inv);
                return 3;
            }
        }
        0
    }

    /// Stencil of the transpose of the derivative along `axis`, gathered at `idx`.
    pub fn transpose_taps(&self, idx: usize, axis: usize, out: &mut [(usize, f64); 5]) -> usize {
        let mut count = 0;
        let mut buf = [(0usize, 0.0f64); 3];
        let mut seen = [usize::MAX; 5];
        for (s, step) in (-2isize..=2).enumerate() {
            let cand = if step == 0 {
                if self.active[idx] {
                    Some(idx)
                } else {
                    None
                }
            } else {
                self.neighbor_any(idx, axis, step)
            };
            let Some(i) = cand else { continue };
            if !self.active[i] || seen[..s].contains(&i) {
                continue;
            }
            seen[s] = i;
            let k = self.taps(i, axis, &mut buf);
            for &(j, c) in &buf[..k] {
                if j == idx {
                    out[count] = (i, c);
                    count += 1;
                }
            }
        }
        count
    }

    fn neighbor_any(&self, idx: usize, axis: usize, step: isize) -> Option<usize> {
        let mut c = self.coords(idx);
        let n = self.n[axis] as isize;
        let mut v = c[axis] as isize + step;
        if self.period.is_some() {
            v = v.rem_euclid(n);
        } else if v < 0 || v >= n {
            return None;
        }
        c[axis] = v as usize;
        Some(self.index(c))
    }

    /// Unit length used by weight functions: period/8 or radius/3.
    pub fn unit_length(&self) -> f64 {
        match self.domain.kind {
            DomainKind::Torus { period } => period / 8.0,
            DomainKind::Ball { radius } => radius / 3.0,
        }
    }
}

pub fn norm(x: Point) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}
