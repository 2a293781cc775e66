//! SVMC-TF reverse-anneal success versus s_inv for N = 16 and 32.
//!
//! Exploratory: prints one line per (N, s_inv) so the size dependence can be
//! eyeballed. `cargo run --release --example svmc_size`

use openanneal::model::{Protocol, Schedule};
use openanneal::svmc::{run_reverse_anneal, SvmcConfig, Variant};

fn main() -> openanneal::Result<()> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    println!("n,s_inv,total,two_sigma");
    for n in [16usize, 32] {
        let mut bits = vec![0u8; n];
        bits[n - 1] = 1;
        for k in 0..=10 {
            let s_inv = 0.4 + 0.05 * k as f64;
            let cfg = SvmcConfig {
                n,
                p: 2,
                schedule: Schedule::bundled(),
                protocol: Protocol::ira_experimental(1e3, s_inv, 0.0),
                temperature: 1.57,
                variant: Variant::SvmcTf,
                initial_bits: bits.clone(),
                samples: 2000,
                master: 16,
                workers,
                random_order: false,
            };
            let r = run_reverse_anneal(&cfg)?;
            println!("{n},{s_inv:.2},{:.4},{:.4}", r.total.p, r.total.two_sigma);
        }
    }
    Ok(())
}
