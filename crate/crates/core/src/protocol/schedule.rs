//! When a camera shares its query features.

/// Whether frame `t` shares a query, given initialisation window `init_window`, acquisition
/// rate `rate` and sharing rate `share_rate` (which must divide `rate`).
///
/// With `u = max(t - L, -1)`, a frame shares iff `u - ⌊u·f/r⌋·(r/f) = 0` and `u ≥ 0`:
/// nothing is shared inside the initialisation window, then every `r/f`-th frame is.
pub fn should_share(t: u32, init_window: u32, rate: u32, share_rate: u32) -> bool {
    assert!(
        share_rate > 0 && share_rate <= rate && rate.is_multiple_of(share_rate),
        "share_rate must divide rate"
    );
    let u = (t as i64 - init_window as i64).max(-1);
    if u < 0 {
        return false;
    }
    let (r, f) = (rate as i64, share_rate as i64);
    u - (u * f).div_euclid(r) * (r / f) == 0
}
