//! Finite-difference verification of the hand-written backward pass on a
//! small network, layer by layer.
//!
//! Run with: cargo run --example gradient_check

use zernet::net::gradcheck;
use zernet::Result;

fn main() -> Result<()> {
    let report = gradcheck::run(0, false)?;
    println!("{report}");

    // The same seed must reproduce the exact same numbers; backprop and the
    // toy problem are both deterministic.
    let again = gradcheck::run(0, false)?;
    let same = report
        .layers
        .iter()
        .zip(&again.layers)
        .all(|(a, b)| a.max_rel_err.to_bits() == b.max_rel_err.to_bits());
    println!("repeat run bit-identical: {same}");
    Ok(())
}
