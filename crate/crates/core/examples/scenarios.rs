//! Run every experiment scenario and print its criteria. Pass a scenario
//! name to run just that one.

use rpcacc::harness::{run_scenario, SCENARIOS};

fn main() {
    let only = std::env::args().nth(1);
    let mut ok = true;
    for name in SCENARIOS
        .iter()
        .filter(|n| only.as_deref().is_none_or(|o| o == **n))
    {
        let r = run_scenario(name, 42).unwrap();
        for line in r.lines() {
            println!("{line}");
        }
        ok &= r.passed();
    }
    std::process::exit(if ok { 0 } else { 1 });
}
