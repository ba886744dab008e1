use serde::{Deserialize, Serialize};

use super::grid::{norm, Grid, Point};
use super::GeometryError;
use crate::ramp::plateau;

pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Constant curvature tensor `R_{abcd}` with the algebraic symmetries of a
/// Riemann tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Riemann(pub [[[[f64; 3]; 3]; 3]; 3]);

impl Riemann {
    /// In three dimensions the Riemann tensor is fixed by the Ricci tensor:
    /// `R_abcd = δ_ac P_bd + δ_bd P_ac − δ_ad P_bc − δ_bc P_ad` with
    /// `P = Ric − (s/4) δ`.
    pub fn from_ricci(ricci: Mat3) -> Self {
        let s = ricci[0][0] + ricci[1][1] + ricci[2][2];
        let mut p = ricci;
        for (i, row) in p.iter_mut().enumerate() {
            row[i] -= s / 4.0;
        }
        let d = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
        let mut r = [[[[0.0; 3]; 3]; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    for e in 0..3 {
                        r[a][b][c][e] = d(a, c) * p[b][e] + d(b, e) * p[a][c] - d(a, e) * p[b][c] - d(b, c) * p[a][e];
                    }
                }
            }
        }
        Riemann(r)
    }

    /// Space form of sectional curvature `kappa`.
    pub fn constant(kappa: f64) -> Self {
        Self::from_ricci([[2.0 * kappa, 0.0, 0.0], [0.0, 2.0 * kappa, 0.0], [0.0, 0.0, 2.0 * kappa]])
    }

    /// `R_mn = Σ_k R_kmkn`.
    pub fn ricci(&self) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (m, row) in out.iter_mut().enumerate() {
            for (n, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[k][m][k][n]).sum();
            }
        }
        out
    }

    pub fn check_symmetries(&self, tol: f64) -> Result<(), GeometryError> {
        let r = &self.0;
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    for d in 0..3 {
                        let v = r[a][b][c][d];
                        let bad = (v + r[b][a][c][d]).abs() > tol
                            || (v + r[a][b][d][c]).abs() > tol
                            || (v - r[c][d][a][b]).abs() > tol
                            || (v + r[a][c][d][b] + r[a][d][b][c]).abs() > tol;
                        if bad {
                            return Err(GeometryError::InvalidMetric(format!(
                                "curvature tensor breaks algebraic symmetries at ({a},{b},{c},{d})"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().flatten().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricModel {
    Flat,
    /// Second-order normal-coordinate model about the origin,
    /// `g_kl = δ_kl − ⅓ R_kmln x_m x_n`, blended to flat between
    /// `support_radius` and `4/3·support_radius`.
    NormalCoords { riemann: Riemann, support_radius: f64 },
}

impl MetricModel {
    pub fn normal_coords(riemann: Riemann, support_radius: f64) -> Self {
        MetricModel::NormalCoords { riemann, support_radius }
    }

    pub fn is_flat(&self) -> bool {
        matches!(self, MetricModel::Flat)
    }

    /// Unblended quadratic correction `H_kl(x) = −⅓ R_kmln x_m x_n`.
    pub fn quadratic_part(riemann: &Riemann, x: Point) -> Mat3 {
        let mut h = [[0.0; 3]; 3];
        for (k, row) in h.iter_mut().enumerate() {
            for (l, v) in row.iter_mut().enumerate() {
                let mut s = 0.0;
                for m in 0..3 {
                    for n in 0..3 {
                        s += riemann.0[k][m][l][n] * x[m] * x[n];
                    }
                }
                *v = -s / 3.0;
            }
        }
        h
    }

    pub fn blend(&self, x: Point) -> f64 {
        match self {
            MetricModel::Flat => 0.0,
            MetricModel::NormalCoords { support_radius, .. } => {
                plateau(norm(x), *support_radius, support_radius * 4.0 / 3.0)
            }
        }
    }

    /// `g_kl(x)`.
    pub fn metric_at(&self, x: Point) -> Mat3 {
        match self {
            MetricModel::Flat => IDENTITY,
            MetricModel::NormalCoords { riemann, .. } => {
                let s = self.blend(x);
                let h = Self::quadratic_part(riemann, x);
                let mut g = IDENTITY;
                for k in 0..3 {
                    for l in 0..3 {
                        g[k][l] += s * h[k][l];
                    }
                }
                g
            }
        }
    }

    /// Ricci tensor of the model, used as the constant Ricci term.
    pub fn ricci(&self) -> Mat3 {
        match self {
            MetricModel::Flat => [[0.0; 3]; 3],
            MetricModel::NormalCoords { riemann, .. } => riemann.ricci(),
        }
    }

    pub fn sup_ricci(&self) -> f64 {
        self.ricci().iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Scales lengths by `c`: the model for `c²g` expressed in rescaled coordinates.
    pub fn rescaled(&self, c: f64) -> MetricModel {
        match self {
            MetricModel::Flat => MetricModel::Flat,
            MetricModel::NormalCoords { riemann, support_radius } => {
                let mut r = riemann.clone();
                for v in r.0.iter_mut().flatten().flatten().flatten() {
                    *v /= c * c;
                }
                MetricModel::NormalCoords { riemann: r, support_radius: support_radius * c }
            }
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if let MetricModel::NormalCoords { riemann, support_radius } = self {
            riemann.check_symmetries(1e-9)?;
            if !(*support_radius > 0.0) {
                return Err(GeometryError::InvalidMetric("support radius must be positive".into()));
            }
        }
        Ok(())
    }
}

pub fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

pub fn inv3(m: &Mat3) -> Option<Mat3> {
    let d = det3(m);
    if d == 0.0 || !d.is_finite() {
        return None;
    }
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (a, b) = ((j + 1) % 3, (j + 2) % 3);
            let (c, e) = ((i + 1) % 3, (i + 2) % 3);
            r[i][j] = (m[a][c] * m[b][e] - m[a][e] * m[b][c]) / d;
        }
    }
    Some(r)
}

pub fn matvec(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Per-point metric data for a grid: `g`, `g⁻¹` and `√det g`.
#[derive(Debug, Clone)]
pub struct MetricField {
    pub model: MetricModel,
    data: Option<Vec<PointMetric>>,
}

#[derive(Debug, Clone, Copy)]
pub struct PointMetric {
    pub g: Mat3,
    pub ginv: Mat3,
    pub vol: f64,
}

impl PointMetric {
    pub const FLAT: PointMetric = PointMetric { g: IDENTITY, ginv: IDENTITY, vol: 1.0 };

    pub fn from_metric(g: Mat3) -> Result<Self, GeometryError> {
        let d = det3(&g);
        if !(d > 0.0) {
            return Err(GeometryError::MetricSingular { det: d });
        }
        let ginv = inv3(&g).ok_or(GeometryError::MetricSingular { det: d })?;
        Ok(PointMetric { g, ginv, vol: d.sqrt() })
    }
}

impl MetricField {
    pub fn flat() -> Self {
        MetricField { model: MetricModel::Flat, data: None }
    }

    pub fn sample(model: &MetricModel, grid: &Grid) -> Result<Self, GeometryError> {
        model.validate()?;
        if model.is_flat() {
            return Ok(Self::flat());
        }
        let data = (0..grid.len())
            .map(|i| PointMetric::from_metric(model.metric_at(grid.point(i))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(MetricField { model: model.clone(), data: Some(data) })
    }

    pub fn is_flat(&self) -> bool {
        self.data.is_none()
    }

    #[inline]
    pub fn at(&self, idx: usize) -> PointMetric {
        match &self.data {
            None => PointMetric::FLAT,
            Some(d) => d[idx],
        }
    }

    #[inline]
    pub fn vol(&self, idx: usize) -> f64 {
        match &self.data {
            None => 1.0,
            Some(d) => d[idx].vol,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_ricci_has_symmetries_and_trace() {
        let ric = [[0.3, 0.1, 0.0], [0.1, -0.2, 0.05], [0.0, 0.05, 0.4]];
        let r = Riemann::from_ricci(ric);
        r.check_symmetries(1e-12).unwrap();
        let back = r.ricci();
        for i in 0..3 {
            for j in 0..3 {
                assert!((back[i][j] - ric[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn metric_is_identity_at_origin_and_flat_outside() {
        let m = MetricModel::normal_coords(Riemann::constant(0.5), 1.0);
        assert_eq!(m.metric_at([0.0; 3]), IDENTITY);
        assert_eq!(m.metric_at([1.5, 0.0, 0.0]), IDENTITY);
        let g = m.metric_at([0.0, 0.5, 0.0]);
        assert!((g[0][0] - (1.0 - 0.5 * 0.25 / 3.0)).abs() < 1e-12);
        assert!((g[1][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn volume_matches_series() {
        let ric = [[0.3, 0.1, 0.0], [0.1, -0.2, 0.05], [0.0, 0.05, 0.4]];
        let m = MetricModel::normal_coords(Riemann::from_ricci(ric), 10.0);
        for &s in &[0.2, 0.1, 0.05] {
            let x = [0.6 * s, -0.3 * s, 0.7 * s];
            let vol = det3(&m.metric_at(x)).sqrt();
            let mut q = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    q += ric[a][b] * x[a] * x[b];
                }
            }
            let series = 1.0 - q / 6.0;
            assert!((vol - series).abs() < 0.2 * s.powi(4), "s={s} vol={vol} series={series}");
        }
    }

    #[test]
    fn inverse_roundtrip() {
        let g = [[2.0, 0.3, 0.1], [0.3, 1.5, -0.2], [0.1, -0.2, 1.1]];
        let gi = inv3(&g).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|k| g[i][k] * gi[k][j]).sum();
                assert!((s - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }
}
