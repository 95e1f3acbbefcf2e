//! Finite-difference gradient checks for every differentiable op, in f64.
//!
//! `cargo run --release --example gradient_check -- [seeds]`

use planret::autodiff::{grad_check, LayerKind};

fn main() {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let mut worst_overall = 0.0f64;
    for kind in LayerKind::ALL {
        let worst = (0..seeds)
            .map(|s| grad_check(kind, s).expect("gradient check runs"))
            .fold(0.0, f64::max);
        worst_overall = worst_overall.max(worst);
        println!("{:<20} max rel err {worst:.2e}", format!("{kind:?}"));
    }
    println!("worst {worst_overall:.2e} over {seeds} seeds");
}
