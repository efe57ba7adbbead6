//! Two-qubit collective spin operators.
//!
//! Single-ion basis order is `(g, e)` with `σ_z|e⟩ = +|e⟩`; the two-ion basis
//! is `(gg, ge, eg, ee)`, first letter for ion 1.

use nalgebra::Matrix4;
use num_complex::Complex64;

pub type SpinMatrix = Matrix4<Complex64>;

pub const GG: usize = 0;
pub const GE: usize = 1;
pub const EG: usize = 2;
pub const EE: usize = 3;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

fn pauli(axis: char) -> [[Complex64; 2]; 2] {
    match axis {
        'x' => [[ZERO, ONE], [ONE, ZERO]],
        'y' => [[ZERO, I], [-I, ZERO]],
        'z' => [[-ONE, ZERO], [ZERO, ONE]],
        _ => [[ONE, ZERO], [ZERO, ONE]],
    }
}

fn kron(a: [[Complex64; 2]; 2], b: [[Complex64; 2]; 2]) -> SpinMatrix {
    SpinMatrix::from_fn(|r, c| a[r / 2][c / 2] * b[r % 2][c % 2])
}

fn collective(axis: char) -> SpinMatrix {
    let p = pauli(axis);
    let id = pauli('1');
    (kron(p, id) + kron(id, p)) * Complex64::new(0.5, 0.0)
}

pub fn s_x() -> SpinMatrix {
    collective('x')
}

pub fn s_y() -> SpinMatrix {
    collective('y')
}

pub fn s_z() -> SpinMatrix {
    collective('z')
}

/// `S_φ = S_y cos φ + S_x sin φ`.
pub fn s_phi(phi: f64) -> SpinMatrix {
    s_y() * Complex64::new(phi.cos(), 0.0) + s_x() * Complex64::new(phi.sin(), 0.0)
}

/// Eigenvalues of `S_z` in basis order.
pub const S_Z_DIAG: [f64; 4] = [-1.0, 0.0, 0.0, 1.0];

/// `exp(-i θ S_φ²)`, the target Mølmer-Sørensen unitary.
pub fn ideal_ms_unitary(theta: f64, phi: f64) -> SpinMatrix {
    let s = s_phi(phi);
    let gen = (s * s) * Complex64::new(0.0, -theta);
    gen.exp()
}

/// Collective z rotation `exp(-i a S_z)`, diagonal.
pub fn z_kick(a: f64) -> [Complex64; 4] {
    S_Z_DIAG.map(|m| Complex64::from_polar(1.0, -a * m))
}
