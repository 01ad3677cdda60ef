//! Cantor pairing and the rows `ω^[n] = { ⟨x, n⟩ }` used to separate witness pools.

use crate::universe::Element;

/// `⟨x, y⟩ = (x + y)(x + y + 1)/2 + y`.
///
/// Panics if the code does not fit in an [`Element`].
pub fn pair(x: u64, y: u64) -> Element {
    let t = x as u128 + y as u128;
    Element::try_from(t * (t + 1) / 2 + y as u128).expect("pair overflows u64")
}

/// Inverse of [`pair`].
pub fn unpair(z: Element) -> (u64, u64) {
    // Largest t with t(t+1)/2 <= z; u128 so the whole u64 range is safe.
    let tri = |t: u128| t * (t + 1) / 2;
    let z = z as u128;
    let mut t = (((8.0 * z as f64 + 1.0).sqrt() - 1.0) / 2.0) as u128;
    while tri(t) > z {
        t -= 1;
    }
    while tri(t + 1) <= z {
        t += 1;
    }
    let y = z - tri(t);
    ((t - y) as u64, y as u64)
}

/// Row index of `z`, i.e. the `n` with `z ∈ ω^[n]`.
pub fn row_of(z: Element) -> u64 {
    unpair(z).1
}

/// The least element of row `n` strictly greater than `bound`.
pub fn least_in_row_above(n: u64, bound: Element) -> Element {
    // Row elements are increasing in the first coordinate.
    let (mut lo, mut hi) = (0u64, 1u64);
    while pair(hi, n) <= bound {
        lo = hi;
        hi *= 2;
    }
    if pair(lo, n) > bound {
        return pair(lo, n);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if pair(mid, n) > bound {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    pair(hi, n)
}
