//! Riemannian data of an elliptic diffusion.
//!
//! The driving fields `A_1..A_d` are declared orthonormal, which fixes the
//! metric `g = (σσᵀ)⁻¹` where `σ` has the fields as columns. Everything else
//! (structure constants, Levi-Civita connection, the covariant derivative used
//! by the CMT scheme, the Laplacian form of the drift, basic horizontal fields)
//! is derived from the fields and their Jacobians at a point.
//!
//! Conventions, fixed once here:
//! - `K^i_{jk}`: `[A_j, A_k] = K^i_{jk} A_i` with `[X, Y] = X ▷ Y − Y ▷ X`,
//!   where `X ▷ Y = (DY) X` is the plain directional derivative.
//! - Frame-indexed connection: `∇_{A_p} A_q = Γ^l_{pq} A_l`, obtained as
//!   `Γ^l_{pq} = ½(K^l_{pq} + K^p_{lq} + K^q_{lp})`. It is not symmetric in
//!   `(p, q)`: torsion-freeness reads `Γ^l_{pq} − Γ^l_{qp} = K^l_{pq}`.
//! - Coordinate Christoffels `Γ^a_{bc}` are symmetric and are recovered from
//!   the frame-indexed ones through `Γ(A_p, A_q) = Γ^l_{pq} A_l − A_p ▷ A_q`.
//! - Cometric `g^{ab} = (σσᵀ)^{ab}`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{fd_jacobian, invert_frame, Tensor3};
use crate::scalar::{lit, Real};

/// Driving vector fields `A_0` (drift) and `A_1..A_d` of the Itô SDE
/// `dX = A_0(X) dt + A_i(X) dB^i`.
///
/// Jacobians default to central differences; presets override them with
/// analytic expressions.
pub trait VectorFieldSystem<T: Real>: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn drift(&self, x: &DVector<T>) -> DVector<T>;

    /// Field `A_{i+1}` for `i` in `0..dim`.
    fn field(&self, i: usize, x: &DVector<T>) -> DVector<T>;

    /// `J[a][b] = ∂_b A_0^a`.
    fn drift_jacobian(&self, x: &DVector<T>) -> DMatrix<T> {
        fd_jacobian(|y| self.drift(y), x)
    }

    /// `J[a][b] = ∂_b A_{i+1}^a`.
    fn field_jacobian(&self, i: usize, x: &DVector<T>) -> DMatrix<T> {
        fd_jacobian(|y| self.field(i, y), x)
    }

    /// True when the induced metric is Euclidean in these coordinates.
    fn is_flat(&self) -> bool {
        false
    }

    /// `σ(x)`: the fields as columns.
    fn frame(&self, x: &DVector<T>) -> DMatrix<T> {
        let d = self.dim();
        let cols: Vec<_> = (0..d).map(|i| self.field(i, x)).collect();
        DMatrix::from_columns(&cols)
    }
}

/// A base point with a frame; column `j` of `e` is the `j`-th frame vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePoint<T: Real> {
    pub x: DVector<T>,
    pub e: DMatrix<T>,
}

impl<T: Real> FramePoint<T> {
    pub fn new(x: DVector<T>, e: DMatrix<T>) -> Self {
        FramePoint { x, e }
    }

    /// The frame `σ(x)` itself, which is orthonormal for the induced metric.
    pub fn orthonormal_at<S: VectorFieldSystem<T> + ?Sized>(sys: &S, x: DVector<T>) -> Self {
        let e = sys.frame(&x);
        FramePoint { x, e }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// Flat coordinates `(x, vec(e))`, `e` column-major.
    pub fn to_state(&self) -> DVector<T> {
        let d = self.dim();
        DVector::from_iterator(d + d * d, self.x.iter().chain(self.e.iter()).copied())
    }

    pub fn from_state(y: &DVector<T>, d: usize) -> Self {
        FramePoint {
            x: DVector::from_column_slice(&y.as_slice()[..d]),
            e: DMatrix::from_column_slice(d, d, &y.as_slice()[d..d + d * d]),
        }
    }

    /// `eᵀ g e − I` in max norm, with `g` the metric at `x`.
    pub fn orthonormality_defect<S: VectorFieldSystem<T> + ?Sized>(&self, sys: &S) -> Result<T> {
        let sigma = sys.frame(&self.x);
        let inv = invert_frame(&sigma, &self.x)?;
        Ok(crate::linalg::orthogonality_defect(&(inv * &self.e)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnectionIndexing {
    /// Indices refer to the frame `A_1..A_d`.
    Frame,
    /// Indices refer to coordinate directions.
    Coordinate,
}

/// Connection coefficients `gamma[l][p][q]` at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectionEval<T: Real> {
    pub gamma: Tensor3<T>,
    pub point: DVector<T>,
    pub indexing: ConnectionIndexing,
}

impl<T: Real> ConnectionEval<T> {
    /// `max |Γ^l_{pq} − Γ^l_{qp}|`.
    pub fn symmetry_defect(&self) -> T {
        let n = self.gamma.dim();
        let mut m = T::zero();
        for l in 0..n {
            for p in 0..n {
                for q in 0..n {
                    m = m.max((self.gamma.get(l, p, q) - self.gamma.get(l, q, p)).abs());
                }
            }
        }
        m
    }
}

/// Frame-indexed Levi-Civita coefficients from structure constants.
pub fn frame_christoffel<T: Real>(k: &Tensor3<T>) -> Tensor3<T> {
    let half = lit::<T>(0.5);
    Tensor3::from_fn(k.dim(), |l, p, q| {
        half * (k.get(l, p, q) + k.get(p, l, q) + k.get(q, l, p))
    })
}

/// Everything the schemes need about the geometry at one point.
#[derive(Debug, Clone)]
pub struct LocalGeometry<T: Real> {
    pub point: DVector<T>,
    /// `σ(x)`.
    pub frame: DMatrix<T>,
    pub frame_inv: DMatrix<T>,
    /// Jacobians of `A_1..A_d`.
    pub jacobians: Vec<DMatrix<T>>,
    /// `K^i_{jk}` stored as `[i][j][k]`.
    pub structure: Tensor3<T>,
    pub frame_gamma: Tensor3<T>,
    pub coord_gamma: Tensor3<T>,
}

impl<T: Real> LocalGeometry<T> {
    pub fn at<S: VectorFieldSystem<T> + ?Sized>(sys: &S, x: &DVector<T>) -> Result<Self> {
        let d = sys.dim();
        if x.len() != d {
            return Err(Error::Dimension {
                expected: d,
                found: x.len(),
            });
        }
        let frame = sys.frame(x);
        let frame_inv = invert_frame(&frame, x)?;
        let jacobians: Vec<_> = (0..d).map(|i| sys.field_jacobian(i, x)).collect();

        // dir[(p·d + q)·d + a] = (A_p ▷ A_q)^a
        let mut dir = vec![T::zero(); d * d * d];
        for p in 0..d {
            for q in 0..d {
                for a in 0..d {
                    let mut s = T::zero();
                    for m in 0..d {
                        s += jacobians[q][(a, m)] * frame[(m, p)];
                    }
                    dir[(p * d + q) * d + a] = s;
                }
            }
        }

        let mut structure = Tensor3::zeros(d);
        for j in 0..d {
            for k in 0..d {
                for i in 0..d {
                    let mut s = T::zero();
                    for a in 0..d {
                        s += frame_inv[(i, a)] * (dir[(j * d + k) * d + a] - dir[(k * d + j) * d + a]);
                    }
                    structure.set(i, j, k, s);
                }
            }
        }
        let frame_gamma = frame_christoffel(&structure);

        // c[(p·d + q)·d + a] = Γ(A_p, A_q)^a, then pulled back through σ⁻¹
        let mut c = vec![T::zero(); d * d * d];
        for p in 0..d {
            for q in 0..d {
                for a in 0..d {
                    let mut s = -dir[(p * d + q) * d + a];
                    for l in 0..d {
                        s += frame[(a, l)] * frame_gamma.get(l, p, q);
                    }
                    c[(p * d + q) * d + a] = s;
                }
            }
        }
        // half[(p·d + cc)·d + a] = Σ_q c[p][q][a] σ⁻¹[q][cc]
        let mut half_pulled = vec![T::zero(); d * d * d];
        for p in 0..d {
            for cc in 0..d {
                for a in 0..d {
                    let mut s = T::zero();
                    for q in 0..d {
                        s += c[(p * d + q) * d + a] * frame_inv[(q, cc)];
                    }
                    half_pulled[(p * d + cc) * d + a] = s;
                }
            }
        }
        let mut coord_gamma = Tensor3::zeros(d);
        for a in 0..d {
            for b in 0..d {
                for cc in 0..d {
                    let mut s = T::zero();
                    for p in 0..d {
                        s += half_pulled[(p * d + cc) * d + a] * frame_inv[(p, b)];
                    }
                    coord_gamma.set(a, b, cc, s);
                }
            }
        }
        // exact symmetry in exact arithmetic; remove rounding asymmetry
        let half = lit::<T>(0.5);
        for a in 0..d {
            for b in 0..d {
                for cc in (b + 1)..d {
                    let s = half * (coord_gamma.get(a, b, cc) + coord_gamma.get(a, cc, b));
                    coord_gamma.set(a, b, cc, s);
                    coord_gamma.set(a, cc, b, s);
                }
            }
        }

        Ok(LocalGeometry {
            point: x.clone(),
            frame,
            frame_inv,
            jacobians,
            structure,
            frame_gamma,
            coord_gamma,
        })
    }

    pub fn dim(&self) -> usize {
        self.point.len()
    }

    pub fn field(&self, i: usize) -> DVector<T> {
        self.frame.column(i).into_owned()
    }

    /// `A_i ▷ A_j = (DA_j) A_i`.
    pub fn directional(&self, i: usize, j: usize) -> DVector<T> {
        &self.jacobians[j] * self.frame.column(i)
    }

    /// `A_i ▶ A_j = A_i ▷ A_j − Γ^k_{ij} A_k`: the rate of change of the
    /// parallel transport of `A_j(x)` along `A_i`, i.e. `−Γ(A_i, A_j)`.
    pub fn covariant(&self, i: usize, j: usize) -> DVector<T> {
        let mut v = self.directional(i, j);
        for k in 0..self.dim() {
            v -= self.frame.column(k) * self.frame_gamma.get(k, i, j);
        }
        v
    }

    /// Coordinate Christoffel contraction `Γ^a_{bc} u^b v^c`.
    pub fn christoffel(&self, u: &DVector<T>, v: &DVector<T>) -> DVector<T> {
        self.coord_gamma.contract(u, v)
    }

    /// `g^{ab} = (σσᵀ)^{ab}`.
    pub fn cometric(&self) -> DMatrix<T> {
        &self.frame * self.frame.transpose()
    }

    /// `½ g^{ab} Γ^k_{ab}`: what separates the Itô generator from `½Δ_M`.
    pub fn laplacian_drift_shift(&self) -> DVector<T> {
        let d = self.dim();
        let half = lit::<T>(0.5);
        DVector::from_fn(d, |k, _| {
            let mut s = T::zero();
            for b in 0..d {
                for c in 0..d {
                    let mut g = T::zero();
                    for i in 0..d {
                        g += self.frame[(b, i)] * self.frame[(c, i)];
                    }
                    s += self.coord_gamma.get(k, b, c) * g;
                }
            }
            half * s
        })
    }

    pub fn coordinate_connection(&self) -> ConnectionEval<T> {
        ConnectionEval {
            gamma: self.coord_gamma.clone(),
            point: self.point.clone(),
            indexing: ConnectionIndexing::Coordinate,
        }
    }

    pub fn frame_connection(&self) -> ConnectionEval<T> {
        ConnectionEval {
            gamma: self.frame_gamma.clone(),
            point: self.point.clone(),
            indexing: ConnectionIndexing::Frame,
        }
    }
}

/// `K^i_{jk}(x)` with `[A_j, A_k] = K^i_{jk} A_i`.
pub fn structure_constants<T: Real, S: VectorFieldSystem<T> + ?Sized>(sys: &S, x: &DVector<T>) -> Result<Tensor3<T>> {
    Ok(LocalGeometry::at(sys, x)?.structure)
}

/// Frame-indexed connection coefficients built from structure constants.
pub fn christoffel_from_structure<T: Real>(k: &Tensor3<T>, point: DVector<T>) -> ConnectionEval<T> {
    ConnectionEval {
        gamma: frame_christoffel(k),
        point,
        indexing: ConnectionIndexing::Frame,
    }
}

/// Coordinate Christoffel symbols derived through the structure constants.
pub fn coordinate_christoffel<T: Real, S: VectorFieldSystem<T> + ?Sized>(
    sys: &S,
    x: &DVector<T>,
) -> Result<ConnectionEval<T>> {
    Ok(LocalGeometry::at(sys, x)?.coordinate_connection())
}

/// Levi-Civita Christoffel symbols of `g = (σσᵀ)⁻¹` by central differences of
/// the metric: `Γ^k_{ij} = ½ g^{kl}(∂_i g_{jl} + ∂_j g_{il} − ∂_l g_{ij})`.
pub fn christoffel_from_metric<T: Real, S: VectorFieldSystem<T> + ?Sized>(
    sys: &S,
    x: &DVector<T>,
    fd_step: T,
) -> Result<ConnectionEval<T>> {
    if !(fd_step > T::zero()) {
        return Err(Error::InvalidParameter("fd_step must be positive".into()));
    }
    let d = sys.dim();
    let metric = |y: &DVector<T>| -> Result<DMatrix<T>> {
        let sigma = sys.frame(y);
        let inv = invert_frame(&sigma, y)?;
        Ok(inv.transpose() * inv)
    };
    let g_inv = {
        let sigma = sys.frame(x);
        invert_frame(&sigma, x)?;
        &sigma * sigma.transpose()
    };
    // dg[c] = ∂_c g
    let mut dg = Vec::with_capacity(d);
    let two = lit::<T>(2.0);
    for c in 0..d {
        let mut xp = x.clone();
        xp[c] += fd_step;
        let mut xm = x.clone();
        xm[c] -= fd_step;
        dg.push((metric(&xp)? - metric(&xm)?) / (two * fd_step));
    }
    let half = lit::<T>(0.5);
    let gamma = Tensor3::from_fn(d, |k, i, j| {
        let mut s = T::zero();
        for l in 0..d {
            s += g_inv[(k, l)] * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
        }
        half * s
    });
    Ok(ConnectionEval {
        gamma,
        point: x.clone(),
        indexing: ConnectionIndexing::Coordinate,
    })
}

/// `(A_i ▶ A_j)(x)`.
pub fn covariant_derivative<T: Real, S: VectorFieldSystem<T> + ?Sized>(
    sys: &S,
    x: &DVector<T>,
    i: usize,
    j: usize,
) -> Result<DVector<T>> {
    Ok(LocalGeometry::at(sys, x)?.covariant(i, j))
}

/// First-order coefficient `b̃` in `L = ½Δ_M + b̃` for the Itô generator
/// `L = ½ g^{ab}∂_a∂_b + A_0`: `b̃ = A_0 + ½ g^{ab} Γ^k_{ab} ∂_k`.
pub fn drift_correction<T: Real, S: VectorFieldSystem<T> + ?Sized>(sys: &S, x: &DVector<T>) -> Result<DVector<T>> {
    let geom = LocalGeometry::at(sys, x)?;
    Ok(sys.drift(x) + geom.laplacian_drift_shift())
}

/// Horizontal lift of the tangent vector `v` at the frame point: base part `v`,
/// frame part `−Γ(v, e_p)` for every frame column `p`.
pub fn horizontal_lift<T: Real>(geom: &LocalGeometry<T>, e: &DMatrix<T>, v: &DVector<T>) -> (DVector<T>, DMatrix<T>) {
    let d = geom.dim();
    let mut packed = vec![T::zero(); d + d * d];
    horizontal_lift_into(geom, e, v.as_slice(), &mut packed);
    (v.clone(), DMatrix::from_column_slice(d, d, &packed[d..]))
}

/// [`horizontal_lift`] written as `(v, vec(frame part))` into `out`.
pub fn horizontal_lift_into<T: Real>(geom: &LocalGeometry<T>, e: &DMatrix<T>, v: &[T], out: &mut [T]) {
    let d = geom.dim();
    out[..d].copy_from_slice(v);
    let g = &geom.coord_gamma;
    for a in 0..d {
        for b in 0..d {
            if v[b] == T::zero() {
                continue;
            }
            // Γ^a_{b·} v^b
            for p in 0..d {
                let mut s = T::zero();
                for c in 0..d {
                    s += g.get(a, b, c) * e[(c, p)];
                }
                out[d + p * d + a] -= s * v[b];
            }
        }
    }
}

/// Coordinate components of the basic horizontal field `B(ξ)` at `fp`:
/// base part `e ξ`, frame part `−Γ^q_{kl} X^l_p X^k_j ξ^j`.
pub fn basic_horizontal_field<T: Real, S: VectorFieldSystem<T> + ?Sized>(
    sys: &S,
    fp: &FramePoint<T>,
    xi: &DVector<T>,
) -> Result<(DVector<T>, DMatrix<T>)> {
    let geom = LocalGeometry::at(sys, &fp.x)?;
    let base = &fp.e * xi;
    Ok(horizontal_lift(&geom, &fp.e, &base))
}
