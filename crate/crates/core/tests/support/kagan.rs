//! Frame-composition Kagan oracle built directly from strike/dip/rake, with
//! no eigen-decomposition and no quaternions.
#![allow(dead_code)]

pub type M3 = [[f64; 3]; 3];

/// Fault normal and slip vector (NED) from the Aki–Richards conventions.
pub fn normal_and_slip(strike: f64, dip: f64, rake: f64) -> ([f64; 3], [f64; 3]) {
    let (ss, cs) = strike.to_radians().sin_cos();
    let (sd, cd) = dip.to_radians().sin_cos();
    let (sr, cr) = rake.to_radians().sin_cos();
    let n = [-sd * ss, sd * cs, -cd];
    let u = [cr * cs + cd * sr * ss, cr * ss - cd * sr * cs, -sr * sd];
    (n, u)
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Columns T, B, P.
pub fn frame(strike: f64, dip: f64, rake: f64) -> M3 {
    let (n, u) = normal_and_slip(strike, dip, rake);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let t = [s * (n[0] + u[0]), s * (n[1] + u[1]), s * (n[2] + u[2])];
    let p = [s * (n[0] - u[0]), s * (n[1] - u[1]), s * (n[2] - u[2])];
    let b = cross(t, p);
    let mut f = [[0.0; 3]; 3];
    for i in 0..3 {
        f[i] = [t[i], b[i], p[i]];
    }
    f
}

fn mul(a: &M3, b: &M3) -> M3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn transpose(a: &M3) -> M3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = a[j][i];
        }
    }
    t
}

/// Minimum rotation angle over the four symmetry-composed candidates
/// `Fb · S · Faᵀ`, S ∈ {I, diag(1,-1,-1), diag(-1,1,-1), diag(-1,-1,1)}.
pub fn oracle(a: (f64, f64, f64), b: (f64, f64, f64)) -> f64 {
    let fa = frame(a.0, a.1, a.2);
    let fb = frame(b.0, b.1, b.2);
    let sym = [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]];
    sym.iter()
        .map(|d| {
            let mut s = [[0.0; 3]; 3];
            for i in 0..3 {
                s[i][i] = d[i];
            }
            let r = mul(&mul(&fb, &s), &transpose(&fa));
            let tr = r[0][0] + r[1][1] + r[2][2];
            ((tr - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees()
        })
        .fold(f64::INFINITY, f64::min)
}
