//! Generate a synthetic workload and push it through the full request path
//! with each serializer, on two link profiles.

use rpcacc::harness::{generate_workload, run_pipeline, WorkloadSpec};
use rpcacc::link::LinkConfig;
use rpcacc::platform::PlatformConfig;
use rpcacc::ser::Strategy;

fn main() {
    let spec = WorkloadSpec {
        requests: 50,
        depth_min: 2,
        depth_max: 6,
        acc_fraction: 0.25,
        ..Default::default()
    };
    let w = generate_workload(&spec, 1).unwrap();
    println!(
        "{} requests, mean depth {:.2}, mean field {:.0} B",
        w.stats.messages, w.stats.mean_depth, w.stats.mean_field_size
    );
    for (name, link) in [("pcie", LinkConfig::pcie()), ("upi", LinkConfig::upi())] {
        for s in Strategy::ALL {
            let r = run_pipeline(&w, &PlatformConfig::with_link(link), s, 1).unwrap();
            let a = &r.aggregate;
            println!(
                "{name:<5} {:<16} mean {:>8.0} ns  {:>9.0} req/s  {:>6} link events  passed {}",
                s.name(),
                a.mean_elapsed_ns,
                a.throughput_rps,
                a.link_events,
                r.passed()
            );
        }
    }
}
