//! su(2) and u(1) arithmetic.
//!
//! An element of su(2) is stored as its coefficient vector in the basis
//! `e_i = σ_i / 2`. In that basis the Lie bracket is the cross product and the
//! ad-invariant inner product is the Euclidean dot product, so `|n·σ| = 1` for
//! a unit vector `n`.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgebraError {
    #[error("Higgs field magnitude {magnitude:e} is at or below tolerance {tol:e}; longitudinal split undefined")]
    DegenerateHiggs { magnitude: f64, tol: f64 },
}

/// Coefficients of an su(2) element in the `σ_i / 2` basis.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Su2(pub [f64; 3]);

impl Su2 {
    pub const ZERO: Su2 = Su2([0.0; 3]);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Su2([x, y, z])
    }

    /// Basis element `e_i`.
    pub fn basis(i: usize) -> Self {
        let mut c = [0.0; 3];
        c[i] = 1.0;
        Su2(c)
    }

    /// Embeds a u(1) value along the third axis, preserving magnitude.
    pub fn from_u1(phi: f64) -> Self {
        Su2([0.0, 0.0, phi])
    }

    pub fn bracket(self, other: Su2) -> Su2 {
        let [a1, a2, a3] = self.0;
        let [b1, b2, b3] = other.0;
        Su2([a2 * b3 - a3 * b2, a3 * b1 - a1 * b3, a1 * b2 - a2 * b1])
    }

    pub fn inner(self, other: Su2) -> f64 {
        self.0[0] * other.0[0] + self.0[1] * other.0[1] + self.0[2] * other.0[2]
    }

    pub fn norm_sq(self) -> f64 {
        self.inner(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `[Φ, [Φ, X]]` with `self = Φ`.
    pub fn ad2(self, x: Su2) -> Su2 {
        self.bracket(self.bracket(x))
    }

    pub fn scale(self, s: f64) -> Su2 {
        Su2([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }

    /// Splits `self` into components parallel and orthogonal to `higgs`.
    pub fn split(self, higgs: Su2, tol: f64) -> Result<(Su2, Su2), AlgebraError> {
        let m = higgs.norm();
        if m <= tol {
            return Err(AlgebraError::DegenerateHiggs { magnitude: m, tol });
        }
        let unit = higgs.scale(1.0 / m);
        let long = unit.scale(self.inner(unit));
        Ok((long, self - long))
    }

    /// Rotation by `angle` about the unit axis `axis` (Rodrigues).
    pub fn rotate(self, axis: Su2, angle: f64) -> Su2 {
        let (s, c) = angle.sin_cos();
        self.scale(c) + axis.bracket(self).scale(s) + axis.scale(axis.inner(self) * (1.0 - c))
    }
}

/// Free-function form of the bracket.
pub fn bracket(x: Su2, y: Su2) -> Su2 {
    x.bracket(y)
}

/// Free-function form of the inner product.
pub fn inner(x: Su2, y: Su2) -> f64 {
    x.inner(y)
}

/// `[Φ, [Φ, X]]`.
pub fn ad2(higgs: Su2, x: Su2) -> Su2 {
    higgs.ad2(x)
}

/// Returns `(X_L, X_T)`.
pub fn split_longitudinal_transverse(x: Su2, higgs: Su2, tol: f64) -> Result<(Su2, Su2), AlgebraError> {
    x.split(higgs, tol)
}

/// Default split tolerance relative to a field's sup-norm.
pub fn default_split_tol(sup_norm: f64) -> f64 {
    1e-10 * sup_norm
}

impl Add for Su2 {
    type Output = Su2;
    fn add(self, o: Su2) -> Su2 {
        Su2([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl Sub for Su2 {
    type Output = Su2;
    fn sub(self, o: Su2) -> Su2 {
        Su2([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl Neg for Su2 {
    type Output = Su2;
    fn neg(self) -> Su2 {
        self.scale(-1.0)
    }
}

impl Mul<f64> for Su2 {
    type Output = Su2;
    fn mul(self, s: f64) -> Su2 {
        self.scale(s)
    }
}

impl Mul<Su2> for f64 {
    type Output = Su2;
    fn mul(self, v: Su2) -> Su2 {
        v.scale(self)
    }
}

impl AddAssign for Su2 {
    fn add_assign(&mut self, o: Su2) {
        *self = *self + o;
    }
}

impl SubAssign for Su2 {
    fn sub_assign(&mut self, o: Su2) {
        *self = *self - o;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type C = (f64, f64);
    type M2 = [[C; 2]; 2];

    fn cmul(a: C, b: C) -> C {
        (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
    }

    fn mmul(a: &M2, b: &M2) -> M2 {
        let mut out = [[(0.0, 0.0); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let p = cmul(a[i][k], b[k][j]);
                    out[i][j].0 += p.0;
                    out[i][j].1 += p.1;
                }
            }
        }
        out
    }

    // Anti-hermitian Pauli-type generators; e_i = sigma_i / 2 closes under
    // [e_1, e_2] = e_3.
    fn sigma(i: usize) -> M2 {
        match i {
            0 => [[(0.0, 0.0), (0.0, -1.0)], [(0.0, -1.0), (0.0, 0.0)]],
            1 => [[(0.0, 0.0), (-1.0, 0.0)], [(1.0, 0.0), (0.0, 0.0)]],
            _ => [[(0.0, -1.0), (0.0, 0.0)], [(0.0, 0.0), (0.0, 1.0)]],
        }
    }

    fn to_matrix(x: Su2) -> M2 {
        let mut out = [[(0.0, 0.0); 2]; 2];
        for (i, c) in x.0.iter().enumerate() {
            let s = sigma(i);
            for r in 0..2 {
                for k in 0..2 {
                    out[r][k].0 += 0.5 * c * s[r][k].0;
                    out[r][k].1 += 0.5 * c * s[r][k].1;
                }
            }
        }
        out
    }

    fn from_matrix(m: &M2) -> Su2 {
        // Coefficient of sigma_i/2 via trace pairing: tr(s_i s_j) = -2 delta_ij.
        let mut c = [0.0; 3];
        for (i, ci) in c.iter_mut().enumerate() {
            let p = mmul(m, &sigma(i));
            let tr = (p[0][0].0 + p[1][1].0, p[0][0].1 + p[1][1].1);
            *ci = -tr.0;
        }
        Su2(c)
    }

    fn commutator(a: Su2, b: Su2) -> Su2 {
        let (ma, mb) = (to_matrix(a), to_matrix(b));
        let ab = mmul(&ma, &mb);
        let ba = mmul(&mb, &ma);
        let mut d = [[(0.0, 0.0); 2]; 2];
        for r in 0..2 {
            for k in 0..2 {
                d[r][k] = (ab[r][k].0 - ba[r][k].0, ab[r][k].1 - ba[r][k].1);
            }
        }
        from_matrix(&d)
    }

    #[test]
    fn bracket_examples() {
        let x = Su2::new(1.0, 2.0, 3.0);
        assert_eq!(x.bracket(x), Su2::ZERO);
        assert_eq!(Su2::new(1.0, 0.0, 0.0).bracket(Su2::new(0.0, 1.0, 0.0)), Su2::new(0.0, 0.0, 1.0));
        let s1 = Su2::new(2.0, 0.0, 0.0);
        let s2 = Su2::new(0.0, 2.0, 0.0);
        let oracle = commutator(s1, s2);
        let got = s1.bracket(s2);
        for i in 0..3 {
            assert!((oracle.0[i] - got.0[i]).abs() < 1e-14);
        }
        assert_eq!(got, Su2::new(0.0, 0.0, 4.0));
    }

    #[test]
    fn bracket_matches_matrix_commutator_on_random_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let a = Su2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let b = Su2::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let d = commutator(a, b) - a.bracket(b);
            assert!(d.norm() < 1e-12);
        }
    }

    #[test]
    fn inner_examples() {
        assert_eq!(inner(Su2::basis(0), Su2::basis(0)), 1.0);
        assert_eq!(Su2::new(0.0, 0.0, 2.0).norm(), 2.0);
        assert_eq!(inner(Su2::new(1.0, 2.0, 3.0), Su2::ZERO), 0.0);
    }

    #[test]
    fn ad2_examples() {
        assert_eq!(ad2(Su2::new(0.0, 0.0, 1.0), Su2::new(1.0, 0.0, 0.0)), Su2::new(-1.0, 0.0, 0.0));
        let p = Su2::new(0.3, -1.2, 0.7);
        assert!(ad2(p, p).norm() < 1e-15);
        assert_eq!(ad2(Su2::new(0.0, 0.0, 2.0), Su2::new(1.0, 0.0, 0.0)), Su2::new(-4.0, 0.0, 0.0));
    }

    #[test]
    fn split_examples() {
        let (l, t) = split_longitudinal_transverse(Su2::new(1.0, 0.0, 1.0), Su2::new(0.0, 0.0, 5.0), 1e-12).unwrap();
        assert_eq!(l, Su2::new(0.0, 0.0, 1.0));
        assert_eq!(t, Su2::new(1.0, 0.0, 0.0));
        let p = Su2::new(0.0, 3.0, 4.0);
        let (l, t) = p.split(p, 1e-12).unwrap();
        assert!((l - p).norm() < 1e-15 && t.norm() < 1e-15);
        let x = Su2::new(1.0, 0.0, 0.0);
        let (l, t) = x.split(p, 1e-12).unwrap();
        assert!(l.norm() < 1e-15 && (t - x).norm() < 1e-15);
        assert!(matches!(x.split(Su2::ZERO, 1e-12), Err(AlgebraError::DegenerateHiggs { .. })));
    }

    #[test]
    fn u1_embedding_preserves_norm() {
        assert_eq!(Su2::from_u1(-2.5).norm(), 2.5);
    }
}
