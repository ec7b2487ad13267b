//! Exact linear algebra: fraction-free (Bareiss) elimination over big integers.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

pub type Rational = BigRational;

pub fn int_matrix<T: Copy + Into<i64>>(rows: &[Vec<T>]) -> Vec<Vec<BigInt>> {
    rows.iter().map(|r| r.iter().map(|&x| BigInt::from(x.into())).collect()).collect()
}

/// Forward Bareiss elimination over the first `pivot_cols` columns.
/// Returns the rank and the number of row swaps.
fn eliminate(m: &mut [Vec<BigInt>], pivot_cols: usize) -> (usize, usize) {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    let mut prev = BigInt::one();
    let mut r = 0;
    let mut swaps = 0;
    for c in 0..pivot_cols {
        if r == rows {
            break;
        }
        let Some(p) = (r..rows).find(|&i| !m[i][c].is_zero()) else { continue };
        if p != r {
            m.swap(p, r);
            swaps += 1;
        }
        let (top, rest) = m.split_at_mut(r + 1);
        let pivot_row = &top[r];
        for row in rest.iter_mut() {
            let factor = row[c].clone();
            for j in c + 1..cols {
                let v = &pivot_row[c] * &row[j] - &factor * &pivot_row[j];
                row[j] = v / &prev;
            }
            row[c] = BigInt::zero();
        }
        prev = m[r][c].clone();
        r += 1;
    }
    (r, swaps)
}

pub fn rank(m: &[Vec<BigInt>]) -> usize {
    let mut work = m.to_vec();
    let cols = work.first().map_or(0, Vec::len);
    eliminate(&mut work, cols).0
}

pub fn determinant(m: &[Vec<BigInt>]) -> BigInt {
    let n = m.len();
    if n == 0 {
        return BigInt::one();
    }
    let mut work = m.to_vec();
    let (r, swaps) = eliminate(&mut work, n);
    if r < n {
        return BigInt::zero();
    }
    let d = work[n - 1][n - 1].clone();
    if swaps % 2 == 1 {
        -d
    } else {
        d
    }
}

/// Solves `A X = B` for square `A`; `None` when `A` is singular.
pub fn solve(a: &[Vec<BigInt>], b: &[Vec<BigInt>]) -> Option<Vec<Vec<Rational>>> {
    let n = a.len();
    assert!(a.iter().all(|r| r.len() == n), "solve needs a square matrix");
    assert_eq!(b.len(), n);
    let k = b.first().map_or(0, Vec::len);
    let mut aug: Vec<Vec<BigInt>> =
        a.iter().zip(b).map(|(ra, rb)| ra.iter().chain(rb).cloned().collect()).collect();
    let (r, _) = eliminate(&mut aug, n);
    if r < n {
        return None;
    }
    let mut x = vec![vec![Rational::zero(); k]; n];
    for col in 0..k {
        for i in (0..n).rev() {
            let mut acc = Rational::from_integer(aug[i][n + col].clone());
            for j in i + 1..n {
                if !aug[i][j].is_zero() {
                    acc -= Rational::from_integer(aug[i][j].clone()) * &x[j][col];
                }
            }
            x[i][col] = acc / Rational::from_integer(aug[i][i].clone());
        }
    }
    Some(x)
}

/// Solves `A x = b` with a rational right-hand side by clearing denominators.
pub fn solve_vector(a: &[Vec<BigInt>], b: &[Rational]) -> Option<Vec<Rational>> {
    let scale = b.iter().fold(BigInt::one(), |acc, q| acc.lcm(q.denom()));
    let rhs: Vec<Vec<BigInt>> =
        b.iter().map(|q| vec![q.numer() * (&scale / q.denom())]).collect();
    let x = solve(a, &rhs)?;
    let scale = Rational::from_integer(scale);
    Some(x.into_iter().map(|row| &row[0] / &scale).collect())
}

pub fn to_f64(q: &Rational) -> f64 {
    use num_traits::ToPrimitive;
    q.to_f64().unwrap_or(f64::NAN)
}

pub fn abs(q: &Rational) -> Rational {
    q.abs()
}

/// `p/q` text, or `p` for integers.
pub fn format(q: &Rational) -> String {
    if q.denom().is_one() {
        q.numer().to_string()
    } else {
        format!("{}/{}", q.numer(), q.denom())
    }
}

pub fn parse(text: &str) -> Option<Rational> {
    let text = text.trim();
    match text.split_once('/') {
        Some((p, q)) => {
            let p: BigInt = p.trim().parse().ok()?;
            let q: BigInt = q.trim().parse().ok()?;
            (!q.is_zero()).then(|| Rational::new(p, q))
        }
        None => text.parse::<BigInt>().ok().map(Rational::from_integer),
    }
}
