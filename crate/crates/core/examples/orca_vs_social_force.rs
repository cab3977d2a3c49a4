//! Runs the classical controllers and a random one on the same seeded
//! crowds and prints their navigation metrics side by side.

use msa3c::harness::{run_evaluation, Agent};
use msa3c::ExperimentConfig;

fn main() -> msa3c::Result<()> {
    let cfg = ExperimentConfig::default();
    let episodes = 30;
    println!("{:<8} {:>7} {:>7} {:>7} {:>7} {:>7}", "policy", "CSR%", "CR", "APL", "NTC", "CIR%");
    for (name, agent) in [
        ("orca", Agent::Orca(&cfg.orca)),
        ("sf", Agent::SocialForce(&cfg.world.social_force)),
        ("random", Agent::Random),
    ] {
        let r = run_evaluation(&cfg, agent, name, episodes)?.report;
        let apl = r.apl.map_or("-".to_string(), |a| format!("{a:.2}"));
        println!("{name:<8} {:>7.1} {:>7.1} {apl:>7} {:>7.1} {:>7.2}", r.csr, r.cr, r.ntc, r.cir);
    }
    Ok(())
}
