//! Two-shot saving versus plain retry on an n-link path: closed forms and
//! Monte Carlo.

use gsdist::graphs::rng;
use gsdist::recovery::{simulate_cycles, two_shot_cycle_stats};

fn main() -> gsdist::Result<()> {
    let n = 2;
    let mut r = rng(1);
    println!("   p   save(formula) retry(formula)  save(mc)  retry(mc)");
    for i in 1..=9 {
        let p = i as f64 / 10.0;
        let s = two_shot_cycle_stats(n, p)?;
        let mc = simulate_cycles(n, p, 20_000, &mut r)?;
        println!("{p:>4.1} {:>14.3} {:>14.3} {:>9.3} {:>10.3}", s.expected_total, s.baseline, mc.save_memory, mc.retry_memory);
    }
    println!("threshold for n={n}: p = {:.4}", two_shot_cycle_stats(n, 0.5)?.p_th);
    Ok(())
}
