//! Solves one seeded drop and prints the per-UE spectral efficiency.
//!
//! cargo run --release --example solve_drop -- [seed] [antennas] [ues]

use mcast_core::channel::{generate_channels, ScenarioConfig};
use mcast_core::mmf::{mmf_solve, MmfConfig};

fn main() -> mcast_core::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let seed = args.first().copied().unwrap_or(0);
    let n = args.get(1).copied().unwrap_or(16) as usize;
    let k = args.get(2).copied().unwrap_or(8) as usize;

    let channels = generate_channels(seed, &ScenarioConfig::with_size(n, k))?;
    let result = mmf_solve(&channels, &MmfConfig::default())?;
    for (ue, se) in result.per_ue_se.iter().enumerate() {
        println!("ue {ue:>2}  se {se:.4} bit/s/Hz");
    }
    println!("min se      {:.4}", result.min_se());
    println!("bound se    {:.4}", result.sdr_upper_bound_se);
    println!("rounds      {}", result.elimination_rounds);
    println!("wall time   {:.3} s", result.wall_time);
    Ok(())
}
