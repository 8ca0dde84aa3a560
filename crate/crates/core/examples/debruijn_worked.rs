//! Localize and reassemble a two-symbol density on three sites.
//!
//! `g` puts mass `p` on (0,0,1) and `1-p` on (1,0,0). Its pattern
//! marginals are reproduced exactly by `g~`, which is V-factorizable while
//! `g` is not.

use cpa::debruijn::{alpha_w, beta_w, is_v_factorizable, PatternGeometry};
use cpa::densities::{decode_symbols, Interval, SparseDensity};

fn show(label: &str, d: &SparseDensity) {
    println!("{label}");
    for (code, p) in d.iter() {
        println!("  {:?}  {p:.4}", decode_symbols(d.base(), d.window().len(), code));
    }
}

fn main() -> cpa::Result<()> {
    let p = 0.3;
    let geom = PatternGeometry::new(Interval::new(0, 1)?, Interval::new(0, 1)?)?;
    let g = SparseDensity::from_weights(Interval::new(0, 2)?, 2, [(0b001, p), (0b100, 1.0 - p)])?;
    show("g on sites 0..2", &g);

    let beta = beta_w(&g, &geom)?;
    for (site, d) in geom.w.sites().zip(beta.densities()) {
        show(&format!("beta_W(g) at site {site}, pattern window {:?}", d.window()), d);
    }

    let g_tilde = alpha_w(&beta, &geom)?;
    show("alpha_W(beta_W(g))", &g_tilde);
    println!("g factorizable: {}", is_v_factorizable(&g, &geom)?);
    println!("alpha_W(beta_W(g)) factorizable: {}", is_v_factorizable(&g_tilde, &geom)?);
    println!("roundtrip error: {:.1e}", beta_w(&g_tilde, &geom)?.max_l1_distance(&beta)?);
    Ok(())
}
