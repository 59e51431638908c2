//! Regenerates `networks/fourway.net` from the built-in generator.
//!
//! cargo run -p mixflow-core --example write_fourway -- networks/fourway.net

use mixflow_core::topology::{builtin_fourway, fourway_demand, serialize_config};

fn main() {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "networks/fourway.net".to_string());
    let net = builtin_fourway(1);
    let demand = fourway_demand(&net, 1000.0, 0.6, 0.2, 0.0);
    std::fs::write(&path, serialize_config(&net, Some(&demand))).expect("write network file");
}
